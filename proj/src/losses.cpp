#include "bexp/losses.hpp"

#include "bexp/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace bexp {

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

std::vector<double> log_softmax(std::span<const double> logits) {
    const double peak = *std::max_element(logits.begin(), logits.end());
    double sum = 0.0;
    for (double z : logits) sum += std::exp(z - peak);
    const double lse = peak + std::log(sum);
    std::vector<double> out(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - lse;
    return out;
}

std::vector<double> softmax(std::span<const double> logits) {
    std::vector<double> out = log_softmax(logits);
    for (double& v : out) v = std::exp(v);
    return out;
}

namespace {

void require_finite(std::span<const double> values, const char* what) {
    for (double v : values) {
        if (!std::isfinite(v)) throw NumericError(std::string(what) + ": non-finite input");
    }
}

} // namespace

LossAndGrad softmax_ce(std::span<const double> logits, std::size_t y) {
    if (y >= logits.size()) throw LabelError("softmax_ce: label out of range");
    require_finite(logits, "softmax_ce");
    const std::vector<double> logp = log_softmax(logits);
    LossAndGrad out;
    out.loss = -logp[y];
    out.grad.resize(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i) out.grad[i] = std::exp(logp[i]);
    out.grad[y] -= 1.0;
    return out;
}

ScalarLoss sigmoid_bce(double logit, int label, double weight) {
    if (!std::isfinite(logit)) throw NumericError("sigmoid_bce: non-finite logit");
    if (label != 0 && label != 1) throw LabelError("sigmoid_bce: label must be 0 or 1");
    if (weight == 0.0) return {};
    // -log s(z) = softplus(-z), -log(1 - s(z)) = softplus(z)
    const double nll = label == 1 ? softplus(-logit) : softplus(logit);
    return {weight * nll, weight * (sigmoid(logit) - static_cast<double>(label))};
}

AmplifyParams AmplifyParams::for_classes(std::size_t k, double alpha) {
    const double kd = static_cast<double>(k);
    return {alpha, (kd - 1.0) / kd, 1.0 / kd};
}

void AmplifyParams::validate() const {
    if (!(alpha >= 0.0)) throw ConfigError("alpha must be nonnegative");
    if (!(lambda1 > 0.0) || !(lambda2 > 0.0)) throw ConfigError("lambda1 and lambda2 must be positive");
}

ConfidenceTable::ConfidenceTable(std::size_t n) : q_(n, std::numeric_limits<double>::quiet_NaN()) {}

ConfidenceTable::ConfidenceTable(std::vector<double> values) : q_(std::move(values)) {
    for (double v : q_) {
        if (!std::isnan(v) && !(v >= 0.0 && v <= 1.0)) throw ConfidenceTableError("q values must lie in [0, 1]");
    }
}

bool ConfidenceTable::has(std::size_t id) const noexcept { return id < q_.size() && !std::isnan(q_[id]); }

double ConfidenceTable::at(std::size_t id) const {
    if (!has(id)) throw ConfidenceTableError("no confidence entry for example " + std::to_string(id));
    return q_[id];
}

void ConfidenceTable::set(std::size_t id, double q) {
    if (id >= q_.size()) throw ConfidenceTableError("confidence id out of range");
    if (!(q >= 0.0 && q <= 1.0)) throw ConfidenceTableError("q values must lie in [0, 1]");
    q_[id] = q;
}

double amplification_weight(double q, double alpha, bool positive) {
    // std::pow(0, 0) == 1, which is the convention we want at alpha == 0.
    return std::pow(positive ? q : 1.0 - q, alpha);
}

namespace {

void check_logit_span(const BinaryView& view, std::span<const double> logits, const char* what) {
    if (logits.size() != view.size()) {
        throw ShapeError(std::string(what) + ": expected one logit per source example");
    }
}

LossAndGrad side_loss(const BinaryView& view, std::span<const double> logits, const ConfidenceTable& q,
                      const AmplifyParams& params, bool positive_side) {
    params.validate();
    check_logit_span(view, logits, positive_side ? "target_loss" : "non_target_loss");
    const std::size_t count = positive_side ? view.active_positives() : view.active_negatives();
    LossAndGrad out;
    out.grad.assign(view.size(), 0.0);
    if (count == 0) return out;
    const double norm = 1.0 / static_cast<double>(count);
    for (std::size_t id : view.active_indices()) {
        if (view.is_positive(id) != positive_side) continue;
        const double w = amplification_weight(q.at(id), params.alpha, positive_side) * norm;
        const ScalarLoss term = sigmoid_bce(logits[id], positive_side ? 1 : 0, w);
        out.loss += term.loss;
        out.grad[id] += term.grad;
    }
    return out;
}

} // namespace

LossAndGrad target_loss(const BinaryView& view, std::span<const double> logits, const ConfidenceTable& q,
                        const AmplifyParams& params) {
    return side_loss(view, logits, q, params, true);
}

LossAndGrad non_target_loss(const BinaryView& view, std::span<const double> logits,
                            const ConfidenceTable& q, const AmplifyParams& params) {
    return side_loss(view, logits, q, params, false);
}

ExpertLoss expert_loss(std::span<const BinaryView> views, std::span<const std::vector<double>> logits,
                       const ConfidenceTable& q, const AmplifyParams& params) {
    if (views.empty()) throw ConfigError("expert_loss: no views");
    if (logits.size() != views.size()) throw ShapeError("expert_loss: one logit vector per view required");
    const double inv_k = 1.0 / static_cast<double>(views.size());
    ExpertLoss out;
    out.grads.reserve(views.size());
    for (std::size_t i = 0; i < views.size(); ++i) {
        const LossAndGrad t = target_loss(views[i], logits[i], q, params);
        const LossAndGrad n = non_target_loss(views[i], logits[i], q, params);
        out.loss += inv_k * (params.lambda1 * t.loss + params.lambda2 * n.loss);
        std::vector<double> g(views[i].size());
        for (std::size_t j = 0; j < g.size(); ++j) {
            g[j] = inv_k * (params.lambda1 * t.grad[j] + params.lambda2 * n.grad[j]);
        }
        out.grads.push_back(std::move(g));
    }
    return out;
}

ScalarLoss view_example_loss(const BinaryView& view, std::size_t id, double logit, double q, double alpha) {
    const bool positive = view.is_positive(id);
    const std::size_t count = positive ? view.active_positives() : view.active_negatives();
    if (count == 0) return {};
    const double w = view.sample_weight(id) * amplification_weight(q, alpha, positive) /
                     static_cast<double>(count);
    return sigmoid_bce(logit, positive ? 1 : 0, w);
}

LossAndGrad view_objective(const BinaryView& view, std::span<const double> logits, const ConfidenceTable& q,
                           double alpha) {
    check_logit_span(view, logits, "view_objective");
    LossAndGrad out;
    out.grad.assign(view.size(), 0.0);
    for (std::size_t id : view.active_indices()) {
        const ScalarLoss term = view_example_loss(view, id, logits[id], q.at(id), alpha);
        out.loss += term.loss;
        out.grad[id] += term.grad;
    }
    return out;
}

PoeLoss poe_loss(std::span<const double> main_logits, std::span<const double> p_b, std::size_t y) {
    if (p_b.size() != main_logits.size()) throw ShapeError("poe_loss: p_b length differs from logits");
    if (y >= main_logits.size()) throw LabelError("poe_loss: label out of range");
    require_finite(main_logits, "poe_loss");
    double total = 0.0;
    for (double p : p_b) {
        if (!(p >= 0.0) || !std::isfinite(p)) throw DistributionError("poe_loss: p_b has a negative or non-finite entry");
        total += p;
    }
    if (std::abs(total - 1.0) > 1e-9) throw DistributionError("poe_loss: p_b does not sum to 1");

    PoeLoss out;
    const std::vector<double> log_pd = log_softmax(main_logits);
    std::vector<double> combined(main_logits.size());
    for (std::size_t i = 0; i < combined.size(); ++i) {
        double p = p_b[i];
        if (p < kProbabilityFloor) {
            p = kProbabilityFloor;
            out.clamped = true;
        }
        combined[i] = log_pd[i] + std::log(p);
    }
    const std::vector<double> log_post = log_softmax(combined);
    out.loss = -log_post[y];
    // d/dz of -log softmax(log_softmax(z) + c)[y] reduces to softmax(z + c) - onehot(y).
    out.grad.resize(combined.size());
    for (std::size_t i = 0; i < combined.size(); ++i) out.grad[i] = std::exp(log_post[i]);
    out.grad[y] -= 1.0;
    return out;
}

LossAndGrad main_loss(std::span<const double> main_logits, std::span<const double> p_b, std::size_t y,
                      double ce_coeff, double poe_coeff) {
    if (!(ce_coeff >= 0.0) || !(poe_coeff >= 0.0)) throw ConfigError("main_loss coefficients must be nonnegative");
    LossAndGrad out;
    out.grad.assign(main_logits.size(), 0.0);
    if (ce_coeff > 0.0) {
        const LossAndGrad ce = softmax_ce(main_logits, y);
        out.loss += ce_coeff * ce.loss;
        for (std::size_t i = 0; i < out.grad.size(); ++i) out.grad[i] += ce_coeff * ce.grad[i];
    }
    if (poe_coeff > 0.0) {
        const PoeLoss poe = poe_loss(main_logits, p_b, y);
        out.loss += poe_coeff * poe.loss;
        for (std::size_t i = 0; i < out.grad.size(); ++i) out.grad[i] += poe_coeff * poe.grad[i];
    }
    return out;
}

} // namespace bexp
