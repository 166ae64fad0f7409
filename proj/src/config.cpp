#include "bexp/config.hpp"

#include "bexp/error.hpp"

#include <algorithm>
#include <set>

namespace bexp {

using nlohmann::json;
using nlohmann::ordered_json;

std::vector<std::uint64_t> RunConfig::seeds() const {
    std::vector<std::uint64_t> out;
    for (std::size_t i = 0; i < n_seeds; ++i) out.push_back(seed + i);
    return out;
}

SyntheticSpec RunConfig::spec_for_seed(std::uint64_t run_seed) const {
    SyntheticSpec spec = dataset;
    spec.seed = run_seed;
    return spec;
}

PipelinePlan RunConfig::plan_for_seed(std::uint64_t run_seed) const {
    TrainPlan base;
    base.stop = StopRule::epochs(epochs);
    base.batch_size = batch_size;
    base.optimizer.learning_rate = learning_rate;
    base.optimizer.weight_decay = weight_decay;
    base.alpha = alpha;
    base.balance = balance;
    base.merge = merge;
    base.dynamic_q = dynamic_q;
    base.seed = run_seed;

    PipelinePlan plan;
    plan.auxiliary = base;
    plan.auxiliary.hidden = auxiliary_hidden;
    plan.auxiliary.optimizer.learning_rate = auxiliary_learning_rate.value_or(learning_rate);

    plan.experts = base;
    plan.experts.hidden = expert_hidden;
    plan.experts.optimizer.learning_rate = expert_learning_rate.value_or(learning_rate);
    plan.experts.parallel = parallel_experts;
    if (max_steps) plan.experts.stop = StopRule::steps(*max_steps);

    plan.main = base;
    plan.main.hidden = main_hidden;

    plan.ce_coeff = ce_coeff;
    plan.poe_coeff = poe_coeff;
    plan.ensemble_members = ensemble_members;
    return plan;
}

const std::vector<std::string>& preset_names() {
    static const std::vector<std::string> names{"default", "mnli-like", "fever-like", "qqp-like"};
    return names;
}

json preset_patch(const std::string& name) {
    // lrs keep a 3:2 ratio between presets
    if (name == "default") return json::object();
    if (name == "mnli-like") return {{"dataset", {{"k", 3}}}, {"train", {{"alpha", 0.2}, {"learning_rate", 3e-3}}}};
    if (name == "fever-like") return {{"dataset", {{"k", 3}}}, {"train", {{"alpha", 0.01}, {"learning_rate", 2e-3}}}};
    if (name == "qqp-like") return {{"dataset", {{"k", 2}}}, {"train", {{"alpha", 0.3}, {"learning_rate", 2e-3}}}};
    throw ConfigError("config.preset: unknown preset '" + name + "'");
}

ordered_json to_json(const RunConfig& c) {
    ordered_json j;
    j["preset"] = c.preset;
    const SyntheticSpec& d = c.dataset;
    j["dataset"] = {{"n_train", d.n_train},           {"n_id_test", d.n_id_test},
                    {"n_ood_test", d.n_ood_test},     {"k", d.k},
                    {"d_target", d.d_target},         {"d_bias", d.d_bias},
                    {"d_noise", d.d_noise},           {"bias_alignment", d.bias_alignment},
                    {"target_snr", d.target_snr},     {"bias_snr", d.bias_snr}};
    j["dataset_csv_dir"] = c.dataset_csv_dir ? ordered_json(*c.dataset_csv_dir) : ordered_json(nullptr);
    j["model"] = {{"auxiliary_hidden", c.auxiliary_hidden},
                  {"expert_hidden", c.expert_hidden},
                  {"main_hidden", c.main_hidden}};
    ordered_json t;
    t["epochs"] = c.epochs;
    t["max_steps"] = c.max_steps ? ordered_json(*c.max_steps) : ordered_json(nullptr);
    t["batch_size"] = c.batch_size;
    t["learning_rate"] = c.learning_rate;
    t["auxiliary_learning_rate"] =
        c.auxiliary_learning_rate ? ordered_json(*c.auxiliary_learning_rate) : ordered_json(nullptr);
    t["expert_learning_rate"] = c.expert_learning_rate ? ordered_json(*c.expert_learning_rate) : ordered_json(nullptr);
    t["weight_decay"] = c.weight_decay;
    t["alpha"] = c.alpha;
    t["merge"] = to_string(c.merge);
    t["balance"] = to_string(c.balance);
    t["dynamic_q"] = c.dynamic_q;
    t["ce_coeff"] = c.ce_coeff;
    t["poe_coeff"] = c.poe_coeff;
    t["ensemble_members"] = c.ensemble_members;
    t["parallel_experts"] = c.parallel_experts;
    j["train"] = t;
    j["seed"] = c.seed;
    j["n_seeds"] = c.n_seeds;
    j["jobs"] = c.jobs;
    j["out_dir"] = c.out_dir;
    j["dump_data"] = c.dump_data;
    return j;
}

namespace {

// Walks one JSON object, consuming known keys and rejecting the rest.
class ObjectReader {
public:
    ObjectReader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) fail(path_, "expected an object");
    }

    [[noreturn]] static void fail(const std::string& path, const std::string& what) {
        throw ConfigError(path + ": " + what);
    }

    const json* find(const std::string& key) {
        seen_.insert(key);
        auto it = j_.find(key);
        return it == j_.end() ? nullptr : &*it;
    }

    std::string at(const std::string& key) const { return path_ + "." + key; }

    void read(const std::string& key, std::size_t& out) {
        if (const json* v = find(key)) out = as_size(*v, at(key));
    }
    void read(const std::string& key, std::uint64_t& out, int) {
        if (const json* v = find(key)) out = as_size(*v, at(key));
    }
    void read(const std::string& key, double& out) {
        if (const json* v = find(key)) out = as_double(*v, at(key));
    }
    void read(const std::string& key, bool& out) {
        if (const json* v = find(key)) {
            if (!v->is_boolean()) fail(at(key), "expected true or false");
            out = v->get<bool>();
        }
    }
    void read(const std::string& key, std::string& out) {
        if (const json* v = find(key)) {
            if (!v->is_string()) fail(at(key), "expected a string");
            out = v->get<std::string>();
        }
    }
    void read(const std::string& key, std::optional<std::size_t>& out) {
        if (const json* v = find(key)) out = v->is_null() ? std::nullopt : std::optional(as_size(*v, at(key)));
    }
    void read(const std::string& key, std::optional<double>& out) {
        if (const json* v = find(key)) out = v->is_null() ? std::nullopt : std::optional(as_double(*v, at(key)));
    }
    void read(const std::string& key, std::optional<std::string>& out) {
        if (const json* v = find(key)) {
            if (v->is_null()) {
                out.reset();
            } else if (v->is_string()) {
                out = v->get<std::string>();
            } else {
                fail(at(key), "expected a string or null");
            }
        }
    }
    void read(const std::string& key, std::vector<std::size_t>& out) {
        if (const json* v = find(key)) {
            if (!v->is_array()) fail(at(key), "expected an array of positive integers");
            out.clear();
            for (std::size_t i = 0; i < v->size(); ++i) {
                out.push_back(as_size((*v)[i], at(key) + "[" + std::to_string(i) + "]"));
            }
        }
    }

    void finish() const {
        for (const auto& [key, _] : j_.items()) {
            if (!seen_.count(key)) fail(at(key), "unknown field");
        }
    }

private:
    static std::size_t as_size(const json& v, const std::string& path) {
        if (!v.is_number_integer() || (v.is_number_integer() && v.get<long long>() < 0 && !v.is_number_unsigned())) {
            fail(path, "expected a nonnegative integer");
        }
        return v.get<std::size_t>();
    }
    static double as_double(const json& v, const std::string& path) {
        if (!v.is_number()) fail(path, "expected a number");
        return v.get<double>();
    }

    const json& j_;
    std::string path_;
    std::set<std::string> seen_;
};

} // namespace

RunConfig config_from_json(const json& j) {
    RunConfig c;
    ObjectReader root(j, "config");
    root.read("preset", c.preset);
    if (const json* d = root.find("dataset")) {
        ObjectReader r(*d, "config.dataset");
        r.read("n_train", c.dataset.n_train);
        r.read("n_id_test", c.dataset.n_id_test);
        r.read("n_ood_test", c.dataset.n_ood_test);
        r.read("k", c.dataset.k);
        r.read("d_target", c.dataset.d_target);
        r.read("d_bias", c.dataset.d_bias);
        r.read("d_noise", c.dataset.d_noise);
        r.read("bias_alignment", c.dataset.bias_alignment);
        r.read("target_snr", c.dataset.target_snr);
        r.read("bias_snr", c.dataset.bias_snr);
        r.finish();
    }
    root.read("dataset_csv_dir", c.dataset_csv_dir);
    if (const json* m = root.find("model")) {
        ObjectReader r(*m, "config.model");
        r.read("auxiliary_hidden", c.auxiliary_hidden);
        r.read("expert_hidden", c.expert_hidden);
        r.read("main_hidden", c.main_hidden);
        r.finish();
    }
    if (const json* t = root.find("train")) {
        ObjectReader r(*t, "config.train");
        r.read("epochs", c.epochs);
        r.read("max_steps", c.max_steps);
        r.read("batch_size", c.batch_size);
        r.read("learning_rate", c.learning_rate);
        r.read("auxiliary_learning_rate", c.auxiliary_learning_rate);
        r.read("expert_learning_rate", c.expert_learning_rate);
        r.read("weight_decay", c.weight_decay);
        r.read("alpha", c.alpha);
        std::string merge = to_string(c.merge);
        r.read("merge", merge);
        std::string balance = to_string(c.balance);
        r.read("balance", balance);
        try {
            c.merge = parse_merge(merge);
        } catch (const ConfigError& e) {
            ObjectReader::fail("config.train.merge", e.what());
        }
        try {
            c.balance = parse_balance(balance);
        } catch (const ConfigError& e) {
            ObjectReader::fail("config.train.balance", e.what());
        }
        r.read("dynamic_q", c.dynamic_q);
        r.read("ce_coeff", c.ce_coeff);
        r.read("poe_coeff", c.poe_coeff);
        r.read("ensemble_members", c.ensemble_members);
        r.read("parallel_experts", c.parallel_experts);
        r.finish();
    }
    root.read("seed", c.seed, 0);
    root.read("n_seeds", c.n_seeds);
    root.read("jobs", c.jobs);
    root.read("out_dir", c.out_dir);
    root.read("dump_data", c.dump_data);
    root.finish();
    validate(c);
    return c;
}

void validate(const RunConfig& c) {
    auto fail = [](const std::string& path, const std::string& what) { throw ConfigError(path + ": " + what); };
    const auto& names = preset_names();
    if (std::find(names.begin(), names.end(), c.preset) == names.end()) fail("config.preset", "unknown preset");
    try {
        SyntheticSpec spec = c.dataset;
        spec.validate();
    } catch (const ConfigError& e) {
        fail("config.dataset", e.what());
    }
    auto check_widths = [&](const std::vector<std::size_t>& w, const char* path) {
        for (std::size_t v : w) {
            if (v == 0) fail(path, "hidden widths must be positive");
        }
    };
    check_widths(c.auxiliary_hidden, "config.model.auxiliary_hidden");
    check_widths(c.expert_hidden, "config.model.expert_hidden");
    check_widths(c.main_hidden, "config.model.main_hidden");
    if (c.epochs == 0) fail("config.train.epochs", "must be positive");
    if (c.max_steps && *c.max_steps == 0) fail("config.train.max_steps", "must be positive");
    if (c.batch_size == 0) fail("config.train.batch_size", "must be positive");
    if (!(c.learning_rate > 0.0)) fail("config.train.learning_rate", "must be positive");
    if (c.auxiliary_learning_rate && !(*c.auxiliary_learning_rate > 0.0)) {
        fail("config.train.auxiliary_learning_rate", "must be positive");
    }
    if (c.expert_learning_rate && !(*c.expert_learning_rate > 0.0)) {
        fail("config.train.expert_learning_rate", "must be positive");
    }
    if (!(c.weight_decay >= 0.0)) fail("config.train.weight_decay", "must be nonnegative");
    if (!(c.alpha >= 0.0)) fail("config.train.alpha", "must be nonnegative");
    if (!(c.ce_coeff >= 0.0)) fail("config.train.ce_coeff", "must be nonnegative");
    if (!(c.poe_coeff >= 0.0)) fail("config.train.poe_coeff", "must be nonnegative");
    if (c.n_seeds == 0) fail("config.n_seeds", "must be positive");
    if (c.jobs == 0) fail("config.jobs", "must be positive");
    if (c.out_dir.empty()) fail("config.out_dir", "must not be empty");
}

RunConfig resolve_config(const json& file_patch, const json& flag_patch) {
    if (!file_patch.is_null() && !file_patch.is_object()) throw ConfigError("config: expected a JSON object");
    std::string preset = "default";
    if (file_patch.is_object() && file_patch.contains("preset") && file_patch["preset"].is_string()) {
        preset = file_patch["preset"].get<std::string>();
    }
    if (flag_patch.is_object() && flag_patch.contains("preset")) preset = flag_patch["preset"].get<std::string>();

    json merged = json(to_json(RunConfig{}));
    merged.merge_patch(preset_patch(preset));
    if (file_patch.is_object()) merged.merge_patch(file_patch);
    if (flag_patch.is_object()) merged.merge_patch(flag_patch);
    merged["preset"] = preset;
    return config_from_json(merged);
}

} // namespace bexp
