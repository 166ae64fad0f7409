#include "bexp/commands.hpp"
#include "bexp/error.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <fstream>
#include <iostream>
#include <optional>

namespace {

using nlohmann::json;

struct Flags {
    std::string preset;
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> seeds;
    std::optional<double> alpha;
    std::string merge;
    std::string balance;
    bool dynamic_q = false;
    std::optional<std::size_t> epochs;
    std::optional<std::size_t> max_steps;
    std::optional<std::size_t> jobs;
    std::string out;
    bool dump_data = false;
};

void add_common(CLI::App& cmd, Flags& f) {
    cmd.add_option("--preset", f.preset, "default | mnli-like | fever-like | qqp-like");
    cmd.add_option("--config", f.config_path, "JSON config file");
    cmd.add_option("--seed", f.seed, "base seed");
    cmd.add_option("--seeds", f.seeds, "number of seeds (base, base+1, ...)");
    cmd.add_option("--alpha", f.alpha, "amplification exponent");
    cmd.add_option("--merge", f.merge, "softmax | softplus");
    cmd.add_option("--balance", f.balance, "reweight | oversample | undersample | none");
    cmd.add_flag("--dynamic-q", f.dynamic_q, "refresh q from a co-trained auxiliary each epoch");
    cmd.add_option("--epochs", f.epochs, "epochs per stage");
    cmd.add_option("--max-steps", f.max_steps, "expert step budget T");
    cmd.add_option("--jobs", f.jobs, "seeds run concurrently");
    cmd.add_option("--out", f.out, "output directory");
    cmd.add_flag("--dump-data", f.dump_data, "also write the dataset CSVs");
}

json read_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw bexp::ConfigError("config: cannot read " + path);
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw bexp::ConfigError("config: invalid JSON in " + path + ": " + e.what());
    }
}

bexp::RunConfig resolve(const Flags& f) {
    json file = f.config_path.empty() ? json::object() : read_config_file(f.config_path);
    json patch = json::object();
    if (!f.preset.empty()) patch["preset"] = f.preset;
    if (f.seed) patch["seed"] = *f.seed;
    if (f.seeds) patch["n_seeds"] = *f.seeds;
    if (f.alpha) patch["train"]["alpha"] = *f.alpha;
    if (!f.merge.empty()) patch["train"]["merge"] = f.merge;
    if (!f.balance.empty()) patch["train"]["balance"] = f.balance;
    if (f.dynamic_q) patch["train"]["dynamic_q"] = true;
    if (f.epochs) patch["train"]["epochs"] = *f.epochs;
    if (f.max_steps) patch["train"]["max_steps"] = *f.max_steps;
    if (f.jobs) patch["jobs"] = *f.jobs;
    if (!f.out.empty()) patch["out_dir"] = f.out;
    if (f.dump_data) patch["dump_data"] = true;
    return bexp::resolve_config(file, patch);
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Bias-expert debiasing pipeline on synthetic data"};
    app.require_subcommand(1);

    Flags run_flags, ablate_flags, sweep_flags, gen_flags;
    std::vector<std::size_t> t_values;
    CLI::App* run = app.add_subcommand("run", "train auxiliary, experts and main model; write reports");
    CLI::App* ablate = app.add_subcommand("ablate", "full / w/o amp / w/o OvR / w/o both on shared data");
    CLI::App* sweep = app.add_subcommand("sweep-t", "retrain experts and main model for each step budget T");
    CLI::App* gen = app.add_subcommand("gen-data", "write the synthetic splits as CSV");
    add_common(*run, run_flags);
    add_common(*ablate, ablate_flags);
    add_common(*sweep, sweep_flags);
    add_common(*gen, gen_flags);
    sweep->add_option("-T,--t-values", t_values, "increasing expert step budgets, e.g. 50,100,200")
        ->delimiter(',')
        ->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (run->parsed()) return bexp::cmd_run(resolve(run_flags), std::cout);
        if (ablate->parsed()) return bexp::cmd_ablate(resolve(ablate_flags), std::cout);
        if (sweep->parsed()) return bexp::cmd_sweep_t(resolve(sweep_flags), t_values, std::cout);
        if (gen->parsed()) return bexp::cmd_gen_data(resolve(gen_flags), std::cout);
    } catch (const bexp::ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
