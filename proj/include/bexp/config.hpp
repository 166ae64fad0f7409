#pragma once

#include "bexp/datagen.hpp"
#include "bexp/evalkit.hpp"
#include "bexp/ovr.hpp"
#include "bexp/training.hpp"

#include <json.hpp>

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace bexp {

// Full experiment configuration. Every field has a default; the run seed
// drives both data generation and all training streams.
struct RunConfig {
    std::string preset = "default";

    SyntheticSpec dataset;
    std::optional<std::string> dataset_csv_dir;

    std::vector<std::size_t> auxiliary_hidden{8};
    std::vector<std::size_t> expert_hidden{8};
    std::vector<std::size_t> main_hidden{64};

    std::size_t epochs = 3;
    std::optional<std::size_t> max_steps;  // expert step budget T
    std::size_t batch_size = 32;
    double learning_rate = 3e-3;
    std::optional<double> auxiliary_learning_rate;
    std::optional<double> expert_learning_rate;
    double weight_decay = 0.01;
    double alpha = 0.2;
    MergeRule merge = MergeRule::softmax;
    BalanceStrategy balance = BalanceStrategy::reweight;
    bool dynamic_q = false;
    double ce_coeff = 0.3;
    double poe_coeff = 1.0;
    std::size_t ensemble_members = 0;
    bool parallel_experts = false;

    std::uint64_t seed = 0;
    std::size_t n_seeds = 1;
    std::size_t jobs = 1;
    std::string out_dir = "out";
    bool dump_data = false;

    bool operator==(const RunConfig&) const = default;

    std::vector<std::uint64_t> seeds() const;
    SyntheticSpec spec_for_seed(std::uint64_t run_seed) const;
    PipelinePlan plan_for_seed(std::uint64_t run_seed) const;
};

const std::vector<std::string>& preset_names();

// Field overrides a preset applies on top of the defaults.
nlohmann::json preset_patch(const std::string& name);

nlohmann::ordered_json to_json(const RunConfig& cfg);

// Strict parse: unknown fields and type errors raise ConfigError naming the
// offending path, e.g. "config.train.alpha: expected a number".
RunConfig config_from_json(const nlohmann::json& j);

// Precedence flags > file > preset > defaults. The preset is taken from the
// flags, then the file, then "default".
RunConfig resolve_config(const nlohmann::json& file_patch, const nlohmann::json& flag_patch);

// Semantic checks beyond parsing (positive sizes, ranges).
void validate(const RunConfig& cfg);

} // namespace bexp
