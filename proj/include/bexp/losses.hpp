#pragma once

#include "bexp/nn.hpp"
#include "bexp/ovr.hpp"

#include <cstddef>
#include <span>
#include <vector>

namespace bexp {

inline constexpr double kProbabilityFloor = 1e-12;

// Numerically stable log(1 + exp(x)).
double softplus(double x);
double sigmoid(double x);
std::vector<double> log_softmax(std::span<const double> logits);
std::vector<double> softmax(std::span<const double> logits);

// -log softmax(logits)[y]; gradient softmax(logits) - onehot(y).
LossAndGrad softmax_ce(std::span<const double> logits, std::size_t y);

struct ScalarLoss {
    double loss = 0.0;
    double grad = 0.0;
};

// -weight * [label log s(z) + (1 - label) log(1 - s(z))], evaluated through
// softplus so that large |z| never overflows.
ScalarLoss sigmoid_bce(double logit, int label, double weight = 1.0);

struct AmplifyParams {
    double alpha = 0.0;
    double lambda1 = 1.0;
    double lambda2 = 1.0;

    // lambda1 = (k-1)/k, lambda2 = 1/k
    static AmplifyParams for_classes(std::size_t k, double alpha);
    void validate() const;
};

// Auxiliary-model probability of the true class, per training example id.
class ConfidenceTable {
public:
    ConfidenceTable() = default;
    explicit ConfidenceTable(std::size_t n);
    explicit ConfidenceTable(std::vector<double> values);

    std::size_t size() const noexcept { return q_.size(); }
    bool has(std::size_t id) const noexcept;
    double at(std::size_t id) const;
    void set(std::size_t id, double q);
    std::span<const double> values() const noexcept { return q_; }

private:
    std::vector<double> q_;  // NaN marks a missing entry
};

// q^alpha for positives, (1 - q)^alpha for negatives; 0^0 == 1.
double amplification_weight(double q, double alpha, bool positive);

// The per-view objectives take logits indexed by source example id (one
// logit per example of view.source()) and return a gradient of the same
// length. Sums run over view.active_indices().

// -(1/|P|) sum_{positives} q^alpha log s(f)
LossAndGrad target_loss(const BinaryView& view, std::span<const double> logits, const ConfidenceTable& q,
                        const AmplifyParams& params);

// -(1/|N|) sum_{negatives} (1 - q)^alpha log(1 - s(f))
LossAndGrad non_target_loss(const BinaryView& view, std::span<const double> logits,
                            const ConfidenceTable& q, const AmplifyParams& params);

struct ExpertLoss {
    double loss = 0.0;
    std::vector<std::vector<double>> grads;  // one per view
};

// (1/k) sum_i (lambda1 * target_i + lambda2 * non_target_i)
ExpertLoss expert_loss(std::span<const BinaryView> views, std::span<const std::vector<double>> logits,
                       const ConfidenceTable& q, const AmplifyParams& params);

// Training objective of one expert: the balance weights of the view stand in
// for lambda1/lambda2. For a reweighted view this equals
// lambda1 * target_loss + lambda2 * non_target_loss with the default lambdas.
ScalarLoss view_example_loss(const BinaryView& view, std::size_t id, double logit, double q, double alpha);
LossAndGrad view_objective(const BinaryView& view, std::span<const double> logits, const ConfidenceTable& q,
                           double alpha);

struct PoeLoss {
    double loss = 0.0;
    std::vector<double> grad;  // w.r.t. main logits only
    bool clamped = false;      // p_b had entries below kProbabilityFloor
};

// -log softmax(log softmax(main_logits) + log p_b)[y]. p_b is constant.
PoeLoss poe_loss(std::span<const double> main_logits, std::span<const double> p_b, std::size_t y);

// ce_coeff * softmax_ce + poe_coeff * poe_loss
LossAndGrad main_loss(std::span<const double> main_logits, std::span<const double> p_b, std::size_t y,
                      double ce_coeff = 0.3, double poe_coeff = 1.0);

} // namespace bexp
