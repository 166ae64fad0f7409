#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

namespace bexp {

// Per-parameter tensors laid out exactly like MlpModel::parameters().
class GradientBuffer {
public:
    GradientBuffer() = default;
    explicit GradientBuffer(std::size_t parameter_count) : values_(parameter_count, 0.0) {}

    std::size_t size() const noexcept { return values_.size(); }
    std::span<double> values() noexcept { return values_; }
    std::span<const double> values() const noexcept { return values_; }
    double& operator[](std::size_t i) { return values_[i]; }
    double operator[](std::size_t i) const { return values_[i]; }

    void zero();
    void scale(double factor);
    GradientBuffer& operator+=(const GradientBuffer& other);

private:
    std::vector<double> values_;
};

// Activations recorded by a forward pass; consumed by backward().
struct ForwardCache {
    std::vector<std::vector<double>> inputs;       // input of each layer
    std::vector<std::vector<double>> preactivations;
    bool valid() const noexcept { return !inputs.empty(); }
    void clear() { inputs.clear(); preactivations.clear(); }
};

// Dense feed-forward classifier with rectifier hidden layers and raw logit
// outputs. Parameters live in one flat buffer: for each layer, the
// row-major (out x in) weight matrix followed by the bias vector.
class MlpModel {
public:
    // Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases.
    MlpModel(std::vector<std::size_t> layer_dims, std::uint64_t seed);

    static MlpModel zeros(std::vector<std::size_t> layer_dims);

    std::span<const std::size_t> layer_dims() const noexcept { return dims_; }
    std::size_t input_dim() const noexcept { return dims_.front(); }
    std::size_t output_dim() const noexcept { return dims_.back(); }
    std::size_t layer_count() const noexcept { return dims_.size() - 1; }
    std::size_t parameter_count() const noexcept { return params_.size(); }

    std::span<double> parameters() noexcept { return params_; }
    std::span<const double> parameters() const noexcept { return params_; }

    double& weight(std::size_t layer, std::size_t row, std::size_t col);
    double weight(std::size_t layer, std::size_t row, std::size_t col) const;
    double& bias(std::size_t layer, std::size_t row);
    double bias(std::size_t layer, std::size_t row) const;
    std::size_t weight_offset(std::size_t layer) const { return offsets_[layer]; }
    std::size_t bias_offset(std::size_t layer) const;

    std::vector<double> forward(std::span<const double> features) const;
    std::vector<double> forward(std::span<const double> features, ForwardCache& cache) const;

    // Gradients of dot(logits, upstream_grad) w.r.t. every parameter.
    GradientBuffer backward(const ForwardCache& cache, std::span<const double> upstream_grad) const;
    // Same as backward() but adds into an existing buffer.
    void accumulate_backward(const ForwardCache& cache, std::span<const double> upstream_grad,
                             GradientBuffer& into) const;

    // Stable 64-bit hash of the architecture and parameter bits.
    std::uint64_t fingerprint() const;

    static std::size_t parameter_count_for(std::span<const std::size_t> layer_dims);

private:
    explicit MlpModel(std::vector<std::size_t> layer_dims);
    void check_finite() const;

    std::vector<std::size_t> dims_;
    std::vector<std::size_t> offsets_;
    std::vector<double> params_;
};

struct AdamWConfig {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    double weight_decay = 0.01;
};

// Moment accumulators for one model; owned by exactly one training run.
class OptimizerState {
public:
    OptimizerState(std::size_t parameter_count, AdamWConfig config);

    const AdamWConfig& config() const noexcept { return config_; }
    std::uint64_t step_count() const noexcept { return step_; }
    std::span<const double> first_moment() const noexcept { return m_; }
    std::span<const double> second_moment() const noexcept { return v_; }

private:
    friend void optimizer_step(MlpModel&, const GradientBuffer&, OptimizerState&);

    AdamWConfig config_;
    std::vector<double> m_;
    std::vector<double> v_;
    std::uint64_t step_ = 0;
};

// One AdamW update with decoupled weight decay (decay applied to the
// parameter before the moment-normalized step, as in the reference
// PyTorch implementation).
void optimizer_step(MlpModel& model, const GradientBuffer& grads, OptimizerState& state);

struct LossAndGrad {
    double loss = 0.0;
    std::vector<double> grad;
};

using LogitLoss = std::function<LossAndGrad(std::span<const double> logits)>;

// Central-difference gradient of loss(forward(features)) w.r.t. every parameter.
std::vector<double> numeric_gradient(const MlpModel& model, std::span<const double> features,
                                     const LogitLoss& loss_fn, double step = 1e-5);

// max_i |a_i - n_i| / max(|a_i|, |n_i|, 1e-8)
double max_relative_error(std::span<const double> analytic, std::span<const double> numeric);

// Compares backward() against numeric_gradient(); returns the max relative error.
double finite_difference_check(const MlpModel& model, std::span<const double> features,
                               const LogitLoss& loss_fn, double step = 1e-5);

// Generic check for a scalar function of a vector with a known gradient.
double finite_difference_check(const std::function<double(std::span<const double>)>& fn,
                               std::span<const double> at, std::span<const double> analytic,
                               double step = 1e-5);

} // namespace bexp
