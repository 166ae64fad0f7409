#include "bexp/nn.hpp"

#include "bexp/error.hpp"
#include "bexp/util.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

namespace bexp {

void GradientBuffer::zero() { std::fill(values_.begin(), values_.end(), 0.0); }

void GradientBuffer::scale(double factor) {
    for (double& v : values_) v *= factor;
}

GradientBuffer& GradientBuffer::operator+=(const GradientBuffer& other) {
    if (other.size() != size()) throw ShapeError("gradient buffer size mismatch");
    for (std::size_t i = 0; i < values_.size(); ++i) values_[i] += other.values_[i];
    return *this;
}

std::size_t MlpModel::parameter_count_for(std::span<const std::size_t> layer_dims) {
    std::size_t n = 0;
    for (std::size_t l = 0; l + 1 < layer_dims.size(); ++l) {
        n += layer_dims[l + 1] * layer_dims[l] + layer_dims[l + 1];
    }
    return n;
}

MlpModel::MlpModel(std::vector<std::size_t> layer_dims) : dims_(std::move(layer_dims)) {
    if (dims_.size() < 2) throw ConfigError("MlpModel needs at least input and output dims");
    for (std::size_t d : dims_) {
        if (d == 0) throw ConfigError("MlpModel layer dims must be positive");
    }
    std::size_t offset = 0;
    for (std::size_t l = 0; l + 1 < dims_.size(); ++l) {
        offsets_.push_back(offset);
        offset += dims_[l + 1] * dims_[l] + dims_[l + 1];
    }
    params_.assign(offset, 0.0);
}

MlpModel::MlpModel(std::vector<std::size_t> layer_dims, std::uint64_t seed)
    : MlpModel(std::move(layer_dims)) {
    std::mt19937_64 engine(seed);
    for (std::size_t l = 0; l < layer_count(); ++l) {
        const double limit = 1.0 / std::sqrt(static_cast<double>(dims_[l]));
        std::uniform_real_distribution<double> dist(-limit, limit);
        const std::size_t n = dims_[l + 1] * dims_[l];
        for (std::size_t i = 0; i < n; ++i) params_[offsets_[l] + i] = dist(engine);
    }
}

MlpModel MlpModel::zeros(std::vector<std::size_t> layer_dims) { return MlpModel(std::move(layer_dims)); }

std::size_t MlpModel::bias_offset(std::size_t layer) const {
    return offsets_[layer] + dims_[layer + 1] * dims_[layer];
}

double& MlpModel::weight(std::size_t layer, std::size_t row, std::size_t col) {
    return params_[offsets_[layer] + row * dims_[layer] + col];
}
double MlpModel::weight(std::size_t layer, std::size_t row, std::size_t col) const {
    return params_[offsets_[layer] + row * dims_[layer] + col];
}
double& MlpModel::bias(std::size_t layer, std::size_t row) { return params_[bias_offset(layer) + row]; }
double MlpModel::bias(std::size_t layer, std::size_t row) const { return params_[bias_offset(layer) + row]; }

void MlpModel::check_finite() const {
    for (double p : params_) {
        if (!std::isfinite(p)) throw NumericError("MlpModel has a non-finite parameter");
    }
}

std::vector<double> MlpModel::forward(std::span<const double> features) const {
    ForwardCache scratch;
    return forward(features, scratch);
}

std::vector<double> MlpModel::forward(std::span<const double> features, ForwardCache& cache) const {
    if (features.size() != input_dim()) {
        throw ShapeError("forward: expected " + std::to_string(input_dim()) + " features, got " +
                         std::to_string(features.size()));
    }
    check_finite();
    cache.inputs.resize(layer_count());
    cache.preactivations.resize(layer_count());

    std::vector<double> activation(features.begin(), features.end());
    for (std::size_t l = 0; l < layer_count(); ++l) {
        const std::size_t in = dims_[l];
        const std::size_t out = dims_[l + 1];
        const double* w = params_.data() + offsets_[l];
        const double* b = w + out * in;
        std::vector<double> z(out);
        for (std::size_t r = 0; r < out; ++r) {
            double acc = b[r];
            const double* row = w + r * in;
            for (std::size_t c = 0; c < in; ++c) acc += row[c] * activation[c];
            z[r] = acc;
        }
        cache.inputs[l] = std::move(activation);
        cache.preactivations[l] = z;
        if (l + 1 < layer_count()) {
            for (double& v : z) v = v > 0.0 ? v : 0.0;
        }
        activation = std::move(z);
    }
    return activation;
}

GradientBuffer MlpModel::backward(const ForwardCache& cache, std::span<const double> upstream_grad) const {
    GradientBuffer grads(parameter_count());
    accumulate_backward(cache, upstream_grad, grads);
    return grads;
}

void MlpModel::accumulate_backward(const ForwardCache& cache, std::span<const double> upstream_grad,
                                   GradientBuffer& into) const {
    if (!cache.valid() || cache.inputs.size() != layer_count() ||
        cache.inputs.front().size() != input_dim()) {
        throw ProtocolError("backward called without a matching forward cache");
    }
    if (upstream_grad.size() != output_dim()) throw ShapeError("backward: upstream gradient length mismatch");
    if (into.size() != parameter_count()) throw ShapeError("backward: gradient buffer size mismatch");

    std::vector<double> delta(upstream_grad.begin(), upstream_grad.end());
    for (std::size_t l = layer_count(); l-- > 0;) {
        const std::size_t in = dims_[l];
        const std::size_t out = dims_[l + 1];
        const std::vector<double>& input = cache.inputs[l];
        double* gw = into.values().data() + offsets_[l];
        double* gb = gw + out * in;
        for (std::size_t r = 0; r < out; ++r) {
            const double d = delta[r];
            if (d == 0.0) continue;
            double* row = gw + r * in;
            for (std::size_t c = 0; c < in; ++c) row[c] += d * input[c];
            gb[r] += d;
        }
        if (l == 0) break;
        const double* w = params_.data() + offsets_[l];
        const std::vector<double>& below = cache.preactivations[l - 1];
        std::vector<double> prev(in, 0.0);
        for (std::size_t r = 0; r < out; ++r) {
            const double d = delta[r];
            if (d == 0.0) continue;
            const double* row = w + r * in;
            for (std::size_t c = 0; c < in; ++c) prev[c] += row[c] * d;
        }
        for (std::size_t c = 0; c < in; ++c) {
            if (below[c] <= 0.0) prev[c] = 0.0;
        }
        delta = std::move(prev);
    }
}

std::uint64_t MlpModel::fingerprint() const {
    Fnv1a h;
    h.update_span(std::span<const std::size_t>(dims_));
    h.update_span(std::span<const double>(params_));
    return h.digest();
}

OptimizerState::OptimizerState(std::size_t parameter_count, AdamWConfig config)
    : config_(config), m_(parameter_count, 0.0), v_(parameter_count, 0.0) {
    if (!(config_.learning_rate > 0.0)) throw ConfigError("AdamW learning_rate must be positive");
    if (config_.weight_decay < 0.0) throw ConfigError("AdamW weight_decay must be nonnegative");
    if (!(config_.beta1 > 0.0 && config_.beta1 < 1.0) || !(config_.beta2 > 0.0 && config_.beta2 < 1.0)) {
        throw ConfigError("AdamW moment decay rates must lie in (0, 1)");
    }
}

void optimizer_step(MlpModel& model, const GradientBuffer& grads, OptimizerState& state) {
    const std::size_t n = model.parameter_count();
    if (grads.size() != n || state.m_.size() != n) {
        throw ConfigError("optimizer_step: parameter, gradient and moment shapes differ");
    }
    const AdamWConfig& cfg = state.config_;
    ++state.step_;
    const double t = static_cast<double>(state.step_);
    const double correction1 = 1.0 - std::pow(cfg.beta1, t);
    const double correction2 = 1.0 - std::pow(cfg.beta2, t);
    const double decay = 1.0 - cfg.learning_rate * cfg.weight_decay;

    std::span<double> params = model.parameters();
    for (std::size_t i = 0; i < n; ++i) {
        const double g = grads[i];
        state.m_[i] = cfg.beta1 * state.m_[i] + (1.0 - cfg.beta1) * g;
        state.v_[i] = cfg.beta2 * state.v_[i] + (1.0 - cfg.beta2) * g * g;
        const double m_hat = state.m_[i] / correction1;
        const double v_hat = state.v_[i] / correction2;
        params[i] = params[i] * decay - cfg.learning_rate * m_hat / (std::sqrt(v_hat) + cfg.epsilon);
    }
}

std::vector<double> numeric_gradient(const MlpModel& model, std::span<const double> features,
                                     const LogitLoss& loss_fn, double step) {
    MlpModel probe = model;
    std::vector<double> grad(model.parameter_count());
    std::span<double> params = probe.parameters();
    for (std::size_t i = 0; i < params.size(); ++i) {
        const double saved = params[i];
        params[i] = saved + step;
        const double up = loss_fn(probe.forward(features)).loss;
        params[i] = saved - step;
        const double down = loss_fn(probe.forward(features)).loss;
        params[i] = saved;
        grad[i] = (up - down) / (2.0 * step);
    }
    return grad;
}

double max_relative_error(std::span<const double> analytic, std::span<const double> numeric) {
    if (analytic.size() != numeric.size()) throw ShapeError("max_relative_error: length mismatch");
    double worst = 0.0;
    for (std::size_t i = 0; i < analytic.size(); ++i) {
        const double denom = std::max({std::abs(analytic[i]), std::abs(numeric[i]), 1e-8});
        worst = std::max(worst, std::abs(analytic[i] - numeric[i]) / denom);
    }
    return worst;
}

double finite_difference_check(const MlpModel& model, std::span<const double> features,
                               const LogitLoss& loss_fn, double step) {
    ForwardCache cache;
    const std::vector<double> logits = model.forward(features, cache);
    const LossAndGrad lg = loss_fn(logits);
    const GradientBuffer analytic = model.backward(cache, lg.grad);
    const std::vector<double> numeric = numeric_gradient(model, features, loss_fn, step);
    return max_relative_error(analytic.values(), numeric);
}

double finite_difference_check(const std::function<double(std::span<const double>)>& fn,
                               std::span<const double> at, std::span<const double> analytic,
                               double step) {
    std::vector<double> x(at.begin(), at.end());
    std::vector<double> numeric(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double saved = x[i];
        x[i] = saved + step;
        const double up = fn(x);
        x[i] = saved - step;
        const double down = fn(x);
        x[i] = saved;
        numeric[i] = (up - down) / (2.0 * step);
    }
    return max_relative_error(analytic, numeric);
}

} // namespace bexp
