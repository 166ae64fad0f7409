#pragma once

#include "bexp/datagen.hpp"
#include "bexp/losses.hpp"
#include "bexp/nn.hpp"
#include "bexp/ovr.hpp"

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace bexp {

enum class MergeRule { softmax, softplus };

std::string to_string(MergeRule rule);
MergeRule parse_merge(const std::string& name);

// Exactly one stopping rule: whole epochs, or a fixed number of optimizer steps.
struct StopRule {
    enum class Kind { epochs, steps };
    Kind kind = Kind::epochs;
    std::size_t value = 3;

    static StopRule epochs(std::size_t n) { return {Kind::epochs, n}; }
    static StopRule steps(std::size_t n) { return {Kind::steps, n}; }
    bool operator==(const StopRule&) const = default;
};

struct TrainPlan {
    std::vector<std::size_t> hidden{16};
    StopRule stop{};
    std::size_t batch_size = 32;
    AdamWConfig optimizer{3e-3, 0.9, 0.999, 1e-8, 0.01};
    double alpha = 0.2;
    BalanceStrategy balance = BalanceStrategy::reweight;
    MergeRule merge = MergeRule::softmax;
    bool dynamic_q = false;
    bool parallel = false;  // train the k experts on separate threads
    std::uint64_t seed = 0;

    void validate() const;
};

struct TrajectoryRecord {
    std::size_t epoch = 0;
    std::size_t step = 0;
    std::optional<double> conf_biased;
    std::optional<double> conf_conflicting;
    std::optional<double> acc_biased;
    std::optional<double> acc_conflicting;
};

using TrajectoryLog = std::vector<TrajectoryRecord>;

// Anything that yields a k-class bias distribution p_b for a feature vector.
class BiasScorer {
public:
    virtual ~BiasScorer() = default;
    virtual std::size_t k() const = 0;
    virtual std::vector<double> distribution(std::span<const double> features) const = 0;
};

// softmax: p_i = softmax(z)_i; softplus: p_i = softplus(z_i) / sum_j softplus(z_j).
// The result is floored at kProbabilityFloor and renormalized.
std::vector<double> merge_logits(std::span<const double> expert_logits, MergeRule rule);

// k frozen single-logit experts; expert i scores "class i vs rest".
class ExpertEnsemble final : public BiasScorer {
public:
    ExpertEnsemble(std::vector<MlpModel> experts, MergeRule rule);

    std::size_t k() const override { return experts_.size(); }
    MergeRule merge_rule() const noexcept { return rule_; }
    const MlpModel& expert(std::size_t i) const { return experts_.at(i); }
    std::vector<double> expert_logits(std::span<const double> features) const;
    std::vector<double> distribution(std::span<const double> features) const override;
    std::uint64_t fingerprint() const;

private:
    std::vector<MlpModel> experts_;
    MergeRule rule_;
};

std::vector<double> merge_experts(const ExpertEnsemble& ensemble, std::span<const double> features);

// Averaged softmax of several multi-class models (the no-OvR ablation).
class MulticlassEnsemble final : public BiasScorer {
public:
    explicit MulticlassEnsemble(std::vector<MlpModel> members);

    std::size_t k() const override { return members_.front().output_dim(); }
    std::size_t size() const noexcept { return members_.size(); }
    const MlpModel& member(std::size_t i) const { return members_.at(i); }
    std::vector<double> distribution(std::span<const double> features) const override;
    std::uint64_t fingerprint() const;

private:
    std::vector<MlpModel> members_;
};

// Softmax of a multi-class model; borrows the model.
class ModelScorer final : public BiasScorer {
public:
    explicit ModelScorer(const MlpModel& model) : model_(&model) {}
    std::size_t k() const override { return model_->output_dim(); }
    std::vector<double> distribution(std::span<const double> features) const override;

private:
    const MlpModel* model_;
};

class UniformScorer final : public BiasScorer {
public:
    explicit UniformScorer(std::size_t k) : k_(k) {}
    std::size_t k() const override { return k_; }
    std::vector<double> distribution(std::span<const double>) const override {
        return std::vector<double>(k_, 1.0 / static_cast<double>(k_));
    }

private:
    std::size_t k_;
};

struct AuxiliaryResult {
    MlpModel model;
    ConfidenceTable q;
    TrajectoryLog log;
    std::size_t steps = 0;
};

// softmax probability of each example's true class under `model`.
ConfidenceTable confidence_table(const MlpModel& model, const Dataset& ds);

// Multi-class CE training of the intentionally biased auxiliary model.
AuxiliaryResult train_auxiliary(const Dataset& ds, const TrainPlan& plan);

struct ExpertResult {
    ExpertEnsemble ensemble;
    std::vector<TrajectoryLog> logs;  // one per class
    std::vector<std::size_t> steps;
};

// One binary expert per class, trained on its balanced OvR view with the
// amplified target / non-target objective. q is read-only; with
// plan.dynamic_q it is replaced by a co-trained auxiliary's table that is
// refreshed at the start of each epoch.
ExpertResult train_bias_experts(const Dataset& ds, const ConfidenceTable& q, const TrainPlan& plan);

struct MainResult {
    MlpModel model;
    TrajectoryLog log;
    std::size_t steps = 0;
    std::size_t clamped_examples = 0;  // p_b entries floored during training
};

// Minimizes ce_coeff * CE + poe_coeff * PoE against a frozen bias scorer.
MainResult train_main(const Dataset& ds, const BiasScorer& bias, const TrainPlan& plan, double ce_coeff = 0.3,
                      double poe_coeff = 1.0);

// Plain cross-entropy training of the main model.
MainResult train_erm(const Dataset& ds, const TrainPlan& plan);

// `members` multi-class models trained with CE. When q is given each example's
// loss is scaled by q^alpha, the multi-class counterpart of amplification.
MulticlassEnsemble train_multiclass_auxiliary_ensemble(const Dataset& ds, const TrainPlan& plan,
                                                       std::size_t members,
                                                       const ConfidenceTable* q = nullptr);

// Group-wise confidence/accuracy of a k-class scorer on the training data.
TrajectoryRecord multiclass_record(const BiasScorer& scorer, const Dataset& ds, std::size_t epoch,
                                   std::size_t step);

// Per-class expert view of the same quantities: confidence is s(f_i(x)) over
// the positives of class i, accuracy is binary accuracy over all examples.
TrajectoryRecord expert_record(const MlpModel& expert, const BinaryView& view, std::size_t epoch,
                               std::size_t step);

} // namespace bexp
