#include "bexp/training.hpp"

#include "bexp/error.hpp"
#include "bexp/util.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <future>
#include <random>

namespace bexp {

namespace {

// Stream tags for derive_seed; one per stage so stages never share engines.
constexpr std::uint32_t kAuxInit = 0x61757801;
constexpr std::uint32_t kAuxShuffle = 0x61757802;
constexpr std::uint32_t kExpertInit = 0x65787001;
constexpr std::uint32_t kExpertShuffle = 0x65787002;
constexpr std::uint32_t kExpertBalance = 0x65787003;
constexpr std::uint32_t kMainInit = 0x6d616901;
constexpr std::uint32_t kMainShuffle = 0x6d616902;
constexpr std::uint32_t kEnsembleInit = 0x656e7301;
constexpr std::uint32_t kEnsembleShuffle = 0x656e7302;

std::vector<std::size_t> model_dims(std::size_t input, std::span<const std::size_t> hidden, std::size_t output) {
    std::vector<std::size_t> dims{input};
    dims.insert(dims.end(), hidden.begin(), hidden.end());
    dims.push_back(output);
    return dims;
}

std::size_t total_steps(const TrainPlan& plan, std::size_t active) {
    if (plan.stop.kind == StopRule::Kind::steps) return plan.stop.value;
    return plan.stop.value * ((active + plan.batch_size - 1) / plan.batch_size);
}

// Drives shuffled mini-batches over `active` until the plan's stopping rule
// is met. Returns the number of optimizer steps taken.
std::size_t run_schedule(std::span<const std::size_t> active, const TrainPlan& plan, std::mt19937_64& shuffle,
                         const std::function<void(std::size_t epoch)>& on_epoch_begin,
                         const std::function<void(std::span<const std::size_t>)>& on_batch,
                         const std::function<void(std::size_t epoch, std::size_t step)>& on_epoch_end) {
    if (active.empty()) throw ConfigError("training on an empty dataset");
    const std::size_t total = total_steps(plan, active.size());
    std::vector<std::size_t> order(active.begin(), active.end());
    std::size_t step = 0;
    std::size_t epoch = 0;
    while (step < total) {
        on_epoch_begin(epoch);
        std::shuffle(order.begin(), order.end(), shuffle);
        for (std::size_t start = 0; start < order.size() && step < total; start += plan.batch_size) {
            const std::size_t len = std::min(plan.batch_size, order.size() - start);
            on_batch(std::span<const std::size_t>(order).subspan(start, len));
            ++step;
        }
        ++epoch;
        on_epoch_end(epoch, step);
    }
    return step;
}

std::vector<std::size_t> all_indices(std::size_t n) {
    std::vector<std::size_t> ids(n);
    for (std::size_t i = 0; i < n; ++i) ids[i] = i;
    return ids;
}

void check_finite_loss(double loss, const char* stage) {
    if (!std::isfinite(loss)) throw NumericError(std::string(stage) + ": loss became non-finite");
}

// One CE step on the multi-class model over `batch`. `weights` (optional)
// scales each example's loss.
void multiclass_step(MlpModel& model, OptimizerState& opt, const Dataset& ds, std::span<const std::size_t> batch,
                     const std::function<double(std::size_t)>& weight, const char* stage) {
    GradientBuffer grads(model.parameter_count());
    ForwardCache cache;
    const double inv_b = 1.0 / static_cast<double>(batch.size());
    double loss = 0.0;
    for (std::size_t id : batch) {
        const double w = weight ? weight(id) : 1.0;
        if (w == 0.0) continue;
        const std::vector<double> logits = model.forward(ds.features(id), cache);
        LossAndGrad lg = softmax_ce(logits, ds.label(id));
        loss += w * lg.loss;
        for (double& g : lg.grad) g *= w * inv_b;
        model.accumulate_backward(cache, lg.grad, grads);
    }
    check_finite_loss(loss, stage);
    optimizer_step(model, grads, opt);
}

std::optional<double> mean_of(double sum, std::size_t n) {
    if (n == 0) return std::nullopt;
    return sum / static_cast<double>(n);
}

} // namespace

std::string to_string(MergeRule rule) { return rule == MergeRule::softmax ? "softmax" : "softplus"; }

MergeRule parse_merge(const std::string& name) {
    if (name == "softmax") return MergeRule::softmax;
    if (name == "softplus") return MergeRule::softplus;
    throw ConfigError("unknown merge rule '" + name + "'");
}

void TrainPlan::validate() const {
    if (batch_size == 0) throw ConfigError("batch_size must be positive");
    for (std::size_t h : hidden) {
        if (h == 0) throw ConfigError("hidden widths must be positive");
    }
    if (!(alpha >= 0.0)) throw ConfigError("alpha must be nonnegative");
    if (!(optimizer.learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
    if (optimizer.weight_decay < 0.0) throw ConfigError("weight_decay must be nonnegative");
}

std::vector<double> merge_logits(std::span<const double> expert_logits, MergeRule rule) {
    if (expert_logits.empty()) throw ShapeError("merge_logits: no expert outputs");
    std::vector<double> p;
    if (rule == MergeRule::softmax) {
        p = softmax(expert_logits);
    } else {
        p.resize(expert_logits.size());
        double total = 0.0;
        for (std::size_t i = 0; i < p.size(); ++i) total += p[i] = softplus(expert_logits[i]);
        for (double& v : p) v /= total;
    }
    bool floored = false;
    for (double& v : p) {
        if (!(v >= kProbabilityFloor)) {
            v = kProbabilityFloor;
            floored = true;
        }
    }
    if (floored) {
        double total = 0.0;
        for (double v : p) total += v;
        for (double& v : p) v /= total;
    }
    return p;
}

ExpertEnsemble::ExpertEnsemble(std::vector<MlpModel> experts, MergeRule rule)
    : experts_(std::move(experts)), rule_(rule) {
    if (experts_.size() < 2) throw ConfigError("ExpertEnsemble needs one expert per class (k >= 2)");
    for (const MlpModel& e : experts_) {
        if (e.output_dim() != 1) throw ConfigError("bias experts must emit a single logit");
        if (e.input_dim() != experts_.front().input_dim()) throw ConfigError("bias experts disagree on input dim");
    }
}

std::vector<double> ExpertEnsemble::expert_logits(std::span<const double> features) const {
    std::vector<double> z(experts_.size());
    for (std::size_t i = 0; i < experts_.size(); ++i) z[i] = experts_[i].forward(features)[0];
    return z;
}

std::vector<double> ExpertEnsemble::distribution(std::span<const double> features) const {
    return merge_logits(expert_logits(features), rule_);
}

std::uint64_t ExpertEnsemble::fingerprint() const {
    Fnv1a h;
    for (const MlpModel& e : experts_) h.update_value(e.fingerprint());
    h.update_value(static_cast<int>(rule_));
    return h.digest();
}

std::vector<double> merge_experts(const ExpertEnsemble& ensemble, std::span<const double> features) {
    return ensemble.distribution(features);
}

MulticlassEnsemble::MulticlassEnsemble(std::vector<MlpModel> members) : members_(std::move(members)) {
    if (members_.empty()) throw ConfigError("MulticlassEnsemble needs at least one member");
    for (const MlpModel& m : members_) {
        if (m.output_dim() != members_.front().output_dim() || m.input_dim() != members_.front().input_dim()) {
            throw ConfigError("MulticlassEnsemble members disagree on shape");
        }
    }
}

std::vector<double> MulticlassEnsemble::distribution(std::span<const double> features) const {
    std::vector<double> avg(k(), 0.0);
    for (const MlpModel& m : members_) {
        const std::vector<double> p = softmax(m.forward(features));
        for (std::size_t c = 0; c < avg.size(); ++c) avg[c] += p[c];
    }
    for (double& v : avg) v /= static_cast<double>(members_.size());
    return avg;
}

std::uint64_t MulticlassEnsemble::fingerprint() const {
    Fnv1a h;
    for (const MlpModel& m : members_) h.update_value(m.fingerprint());
    return h.digest();
}

std::vector<double> ModelScorer::distribution(std::span<const double> features) const {
    return softmax(model_->forward(features));
}

ConfidenceTable confidence_table(const MlpModel& model, const Dataset& ds) {
    ConfidenceTable q(ds.size());
    for (std::size_t i = 0; i < ds.size(); ++i) {
        const std::vector<double> p = softmax(model.forward(ds.features(i)));
        q.set(i, std::clamp(p[ds.label(i)], 0.0, 1.0));
    }
    return q;
}

TrajectoryRecord multiclass_record(const BiasScorer& scorer, const Dataset& ds, std::size_t epoch,
                                   std::size_t step) {
    TrajectoryRecord rec{epoch, step, {}, {}, {}, {}};
    if (!ds.has_alignment_flags()) return rec;
    const GroupPartition groups = group_partition(ds);
    auto summarize = [&](const std::vector<std::size_t>& ids, std::optional<double>& conf,
                         std::optional<double>& acc) {
        double conf_sum = 0.0;
        std::size_t correct = 0;
        for (std::size_t id : ids) {
            const std::vector<double> p = scorer.distribution(ds.features(id));
            conf_sum += p[ds.label(id)];
            const auto best = static_cast<std::size_t>(std::max_element(p.begin(), p.end()) - p.begin());
            correct += best == ds.label(id) ? 1 : 0;
        }
        conf = mean_of(conf_sum, ids.size());
        acc = mean_of(100.0 * static_cast<double>(correct), ids.size());
    };
    summarize(groups.biased, rec.conf_biased, rec.acc_biased);
    summarize(groups.bias_conflicting, rec.conf_conflicting, rec.acc_conflicting);
    return rec;
}

TrajectoryRecord expert_record(const MlpModel& expert, const BinaryView& view, std::size_t epoch,
                               std::size_t step) {
    TrajectoryRecord rec{epoch, step, {}, {}, {}, {}};
    const Dataset& ds = view.source();
    if (!ds.has_alignment_flags()) return rec;
    const GroupPartition groups = group_partition(ds);
    auto summarize = [&](const std::vector<std::size_t>& ids, std::optional<double>& conf,
                         std::optional<double>& acc) {
        double conf_sum = 0.0;
        std::size_t positives = 0;
        std::size_t correct = 0;
        for (std::size_t id : ids) {
            const double s = sigmoid(expert.forward(ds.features(id))[0]);
            if (view.is_positive(id)) {
                conf_sum += s;
                ++positives;
            }
            correct += (s >= 0.5) == view.is_positive(id) ? 1 : 0;
        }
        conf = mean_of(conf_sum, positives);
        acc = mean_of(100.0 * static_cast<double>(correct), ids.size());
    };
    summarize(groups.biased, rec.conf_biased, rec.acc_biased);
    summarize(groups.bias_conflicting, rec.conf_conflicting, rec.acc_conflicting);
    return rec;
}

AuxiliaryResult train_auxiliary(const Dataset& ds, const TrainPlan& plan) {
    plan.validate();
    if (ds.empty()) throw ConfigError("train_auxiliary: empty dataset");
    MlpModel model(model_dims(ds.feature_dim(), plan.hidden, ds.k()), derive_seed(plan.seed, {kAuxInit}));
    OptimizerState opt(model.parameter_count(), plan.optimizer);
    std::mt19937_64 shuffle = make_engine(plan.seed, {kAuxShuffle});
    const ModelScorer scorer(model);

    TrajectoryLog log{multiclass_record(scorer, ds, 0, 0)};
    const std::vector<std::size_t> ids = all_indices(ds.size());
    const std::size_t steps = run_schedule(
        ids, plan, shuffle, [](std::size_t) {},
        [&](std::span<const std::size_t> batch) { multiclass_step(model, opt, ds, batch, {}, "auxiliary"); },
        [&](std::size_t epoch, std::size_t step) { log.push_back(multiclass_record(scorer, ds, epoch, step)); });

    ConfidenceTable q = confidence_table(model, ds);
    return AuxiliaryResult{std::move(model), std::move(q), std::move(log), steps};
}

namespace {

struct SingleExpert {
    MlpModel model;
    TrajectoryLog log;
    std::size_t steps = 0;
};

SingleExpert train_one_expert(const Dataset& ds, const BinaryView& view, const ConfidenceTable& static_q,
                              const TrainPlan& plan) {
    const std::size_t cls = view.target_class();
    MlpModel expert(model_dims(ds.feature_dim(), plan.hidden, 1),
                    derive_seed(plan.seed, {kExpertInit, static_cast<std::uint32_t>(cls)}));
    OptimizerState opt(expert.parameter_count(), plan.optimizer);
    // Same stream for every expert: with reweighting all views share one batch order.
    std::mt19937_64 shuffle = make_engine(plan.seed, {kExpertShuffle});

    // dynamic_q: a CE-trained auxiliary advanced one step per expert step.
    std::optional<MlpModel> aux;
    std::optional<OptimizerState> aux_opt;
    ConfidenceTable dynamic_q;
    if (plan.dynamic_q) {
        aux.emplace(model_dims(ds.feature_dim(), plan.hidden, ds.k()), derive_seed(plan.seed, {kAuxInit}));
        aux_opt.emplace(aux->parameter_count(), plan.optimizer);
    }
    const ConfidenceTable* q = &static_q;

    const std::vector<std::size_t>& active = view.active_indices();
    // Each batch is an unbiased estimate of the full view objective.
    const double scale = static_cast<double>(active.size());

    SingleExpert out{std::move(expert), {}, 0};
    out.log.push_back(expert_record(out.model, view, 0, 0));
    ForwardCache cache;
    out.steps = run_schedule(
        active, plan, shuffle,
        [&](std::size_t) {
            if (aux) {
                dynamic_q = confidence_table(*aux, ds);
                q = &dynamic_q;
            }
        },
        [&](std::span<const std::size_t> batch) {
            GradientBuffer grads(out.model.parameter_count());
            const double factor = scale / static_cast<double>(batch.size());
            double loss = 0.0;
            for (std::size_t id : batch) {
                const double logit = out.model.forward(ds.features(id), cache)[0];
                const ScalarLoss term = view_example_loss(view, id, logit, q->at(id), plan.alpha);
                loss += term.loss;
                const double upstream = term.grad * factor;
                out.model.accumulate_backward(cache, std::span<const double>(&upstream, 1), grads);
            }
            check_finite_loss(loss, "bias expert");
            optimizer_step(out.model, grads, opt);
            if (aux) multiclass_step(*aux, *aux_opt, ds, batch, {}, "dynamic auxiliary");
        },
        [&](std::size_t epoch, std::size_t step) { out.log.push_back(expert_record(out.model, view, epoch, step)); });
    return out;
}

} // namespace

ExpertResult train_bias_experts(const Dataset& ds, const ConfidenceTable& q, const TrainPlan& plan) {
    plan.validate();
    if (ds.empty()) throw ConfigError("train_bias_experts: empty dataset");
    if (q.size() != ds.size() && !plan.dynamic_q) {
        throw ConfidenceTableError("confidence table does not cover the dataset");
    }
    const std::vector<std::size_t> counts = ds.class_counts();
    for (std::size_t c = 0; c < counts.size(); ++c) {
        if (counts[c] == 0) throw DegenerateClassError("class " + std::to_string(c) + " has no examples");
    }

    std::vector<BinaryView> views;
    for (const BinaryView& raw : split_ovr(ds)) {
        views.push_back(apply_balance(raw, BalanceConfig{plan.balance, derive_seed(plan.seed, {kExpertBalance})}));
    }

    std::vector<SingleExpert> trained;
    trained.reserve(views.size());
    if (plan.parallel) {
        std::vector<std::future<SingleExpert>> jobs;
        for (const BinaryView& view : views) {
            jobs.push_back(std::async(std::launch::async, train_one_expert, std::cref(ds), std::cref(view),
                                      std::cref(q), std::cref(plan)));
        }
        for (auto& job : jobs) trained.push_back(job.get());
    } else {
        for (const BinaryView& view : views) trained.push_back(train_one_expert(ds, view, q, plan));
    }

    std::vector<MlpModel> experts;
    std::vector<TrajectoryLog> logs;
    std::vector<std::size_t> steps;
    for (SingleExpert& e : trained) {
        experts.push_back(std::move(e.model));
        logs.push_back(std::move(e.log));
        steps.push_back(e.steps);
    }
    return ExpertResult{ExpertEnsemble(std::move(experts), plan.merge), std::move(logs), std::move(steps)};
}

MainResult train_main(const Dataset& ds, const BiasScorer& bias, const TrainPlan& plan, double ce_coeff,
                      double poe_coeff) {
    plan.validate();
    if (ds.empty()) throw ConfigError("train_main: empty dataset");
    if (bias.k() != ds.k()) throw ConfigError("train_main: bias scorer and dataset disagree on k");
    if (!(ce_coeff >= 0.0) || !(poe_coeff >= 0.0)) throw ConfigError("main loss coefficients must be nonnegative");

    // p_b is a constant of the main-model objective; compute it once.
    std::vector<std::vector<double>> p_b(ds.size());
    if (poe_coeff > 0.0) {
        for (std::size_t i = 0; i < ds.size(); ++i) p_b[i] = bias.distribution(ds.features(i));
    }

    MlpModel model(model_dims(ds.feature_dim(), plan.hidden, ds.k()), derive_seed(plan.seed, {kMainInit}));
    OptimizerState opt(model.parameter_count(), plan.optimizer);
    std::mt19937_64 shuffle = make_engine(plan.seed, {kMainShuffle});
    const ModelScorer scorer(model);

    MainResult out{MlpModel::zeros({1, 1}), {multiclass_record(scorer, ds, 0, 0)}, 0, 0};
    std::vector<std::uint8_t> clamped(ds.size(), 0);
    ForwardCache cache;
    const std::vector<std::size_t> ids = all_indices(ds.size());
    out.steps = run_schedule(
        ids, plan, shuffle, [](std::size_t) {},
        [&](std::span<const std::size_t> batch) {
            GradientBuffer grads(model.parameter_count());
            const double inv_b = 1.0 / static_cast<double>(batch.size());
            double loss = 0.0;
            for (std::size_t id : batch) {
                const std::vector<double> logits = model.forward(ds.features(id), cache);
                LossAndGrad lg;
                if (poe_coeff > 0.0) {
                    const PoeLoss poe = poe_loss(logits, p_b[id], ds.label(id));
                    if (poe.clamped) clamped[id] = 1;
                    lg.loss = poe_coeff * poe.loss;
                    lg.grad = poe.grad;
                    for (double& g : lg.grad) g *= poe_coeff;
                } else {
                    lg.grad.assign(logits.size(), 0.0);
                }
                if (ce_coeff > 0.0) {
                    const LossAndGrad ce = softmax_ce(logits, ds.label(id));
                    lg.loss += ce_coeff * ce.loss;
                    for (std::size_t c = 0; c < lg.grad.size(); ++c) lg.grad[c] += ce_coeff * ce.grad[c];
                }
                loss += lg.loss;
                for (double& g : lg.grad) g *= inv_b;
                model.accumulate_backward(cache, lg.grad, grads);
            }
            check_finite_loss(loss, "main model");
            optimizer_step(model, grads, opt);
        },
        [&](std::size_t epoch, std::size_t step) { out.log.push_back(multiclass_record(scorer, ds, epoch, step)); });

    for (std::uint8_t c : clamped) out.clamped_examples += c;
    out.model = std::move(model);
    return out;
}

MainResult train_erm(const Dataset& ds, const TrainPlan& plan) {
    return train_main(ds, UniformScorer(ds.k()), plan, 1.0, 0.0);
}

MulticlassEnsemble train_multiclass_auxiliary_ensemble(const Dataset& ds, const TrainPlan& plan,
                                                       std::size_t members, const ConfidenceTable* q) {
    plan.validate();
    if (ds.empty()) throw ConfigError("train_multiclass_auxiliary_ensemble: empty dataset");
    if (members == 0) throw ConfigError("ensemble needs at least one member");
    if (q && q->size() != ds.size()) throw ConfidenceTableError("confidence table does not cover the dataset");

    std::function<double(std::size_t)> weight;
    if (q && plan.alpha != 0.0) {
        weight = [q, alpha = plan.alpha](std::size_t id) { return amplification_weight(q->at(id), alpha, true); };
    }
    std::vector<MlpModel> models;
    const std::vector<std::size_t> ids = all_indices(ds.size());
    for (std::size_t m = 0; m < members; ++m) {
        const auto tag = static_cast<std::uint32_t>(m);
        // Member 0 starts from the auxiliary's initialization and batch order.
        MlpModel model(model_dims(ds.feature_dim(), plan.hidden, ds.k()),
                       m == 0 ? derive_seed(plan.seed, {kAuxInit}) : derive_seed(plan.seed, {kEnsembleInit, tag}));
        OptimizerState opt(model.parameter_count(), plan.optimizer);
        std::mt19937_64 shuffle =
            m == 0 ? make_engine(plan.seed, {kAuxShuffle}) : make_engine(plan.seed, {kEnsembleShuffle, tag});
        run_schedule(
            ids, plan, shuffle, [](std::size_t) {},
            [&](std::span<const std::size_t> batch) {
                multiclass_step(model, opt, ds, batch, weight, "multi-class ensemble");
            },
            [](std::size_t, std::size_t) {});
        models.push_back(std::move(model));
    }
    return MulticlassEnsemble(std::move(models));
}

} // namespace bexp
