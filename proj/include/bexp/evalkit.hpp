#pragma once

#include "bexp/datagen.hpp"
#include "bexp/training.hpp"

#include <json.hpp>

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace bexp {

inline constexpr std::size_t kHistogramBins = 20;
using Histogram = std::array<std::size_t, kHistogramBins>;

// 20 equal bins over [0, 1]; 1.0 lands in the last bin.
Histogram confidence_histogram(std::span<const double> confidences);

// 100 * correct / total, argmax prediction. Throws UndefinedMetricError on an empty split.
double evaluate(const BiasScorer& scorer, const Dataset& ds);

struct GroupMetrics {
    std::size_t n_biased = 0;
    std::size_t n_conflicting = 0;
    // Absent (not zero) when the group is empty.
    std::optional<double> acc_biased;
    std::optional<double> acc_conflicting;
    std::optional<double> conf_biased;
    std::optional<double> conf_conflicting;
    Histogram hist_biased{};
    Histogram hist_conflicting{};
};

// Confidence is the scorer's probability of the true class.
GroupMetrics group_metrics(const BiasScorer& scorer, const Dataset& ds);

struct SplitMetrics {
    std::size_t n = 0;
    double accuracy = 0.0;
    GroupMetrics groups;
};

SplitMetrics split_metrics(const BiasScorer& scorer, const Dataset& ds);

// Everything one pipeline run needs besides the data.
struct PipelinePlan {
    TrainPlan auxiliary;
    TrainPlan experts;
    TrainPlan main;
    double ce_coeff = 0.3;
    double poe_coeff = 1.0;
    std::size_t ensemble_members = 0;  // no-OvR ensemble size; 0 means k
};

// full: OvR experts with amplification; wo_amp: alpha = 0;
// wo_ovr: multi-class ensemble with q^alpha weighting; wo_both: plain
// multi-class ensemble; erm: main model trained with CE only.
enum class Arm { full, wo_amp, wo_ovr, wo_both, erm };

std::string to_string(Arm arm);
Arm parse_arm(const std::string& name);

struct RunReport {
    std::string run_id;
    std::string arm = "full";
    std::uint64_t seed = 0;
    nlohmann::ordered_json config;
    std::string config_fingerprint;
    std::string dataset_fingerprint;

    double alpha = 0.0;
    std::string merge_rule;
    std::string balance;
    bool dynamic_q = false;
    std::optional<std::size_t> T;

    SplitMetrics train;
    SplitMetrics id_test;
    SplitMetrics ood_test;
    double id_ood_gap = 0.0;

    // Bias model (experts, no-OvR ensemble, or none for ERM) on the training split.
    std::optional<GroupMetrics> bias_model;
    TrajectoryLog auxiliary_log;
    std::vector<TrajectoryLog> expert_logs;
    TrajectoryLog main_log;

    std::string status = "ok";
    std::string error;
    double seconds = 0.0;
};

// Stable key order; `seconds` is the only wall-clock field.
nlohmann::ordered_json to_json(const RunReport& report);
nlohmann::ordered_json to_json(const TrajectoryRecord& rec);

inline constexpr std::array<const char*, 15> kRunCsvColumns{
    "run_id", "seed", "alpha", "merge_rule", "balance", "dynamic_q", "T", "acc_id", "acc_ood", "gap",
    "acc_biased", "acc_conflicting", "conf_biased", "conf_conflicting", "seconds"};

std::string run_csv_header();
// acc_/conf_ group columns are the main model's on the out-of-distribution split.
std::string run_csv_row(const RunReport& report);

inline constexpr std::array<const char*, 5> kTrajectoryCsvColumns{"epoch", "conf_biased", "conf_conflicting",
                                                                  "acc_biased", "acc_conflicting"};
std::string trajectory_csv(const TrajectoryLog& log);

struct Aggregate {
    std::size_t runs = 0;
    // column name -> (mean, sample standard deviation)
    std::vector<std::pair<std::string, std::pair<double, double>>> columns;
};

Aggregate aggregate(std::span<const RunReport> reports);
std::string aggregate_csv_row(const std::string& run_id, const Aggregate& agg);
nlohmann::ordered_json to_json(const Aggregate& agg);

// Runs one arm end to end on `data`. `shared_aux` lets several arms reuse one
// auxiliary model; it must have been trained with plan.auxiliary on data.train.
RunReport run_arm(const DatasetBundle& data, const PipelinePlan& plan, Arm arm,
                  const AuxiliaryResult* shared_aux = nullptr);

// {full, wo_amp, wo_ovr, wo_both}, sharing one dataset and auxiliary model.
std::vector<RunReport> ablation_suite(const DatasetBundle& data, const PipelinePlan& plan);

} // namespace bexp
