#include "bexp/commands.hpp"

#include "bexp/error.hpp"
#include "bexp/util.hpp"

#include <algorithm>
#include <fstream>
#include <future>
#include <ostream>
#include <sstream>

namespace bexp {

namespace fs = std::filesystem;

void write_text(const fs::path& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot open " + path.string() + " for writing");
    out << content;
    out.flush();
    if (!out) throw Error("failed writing " + path.string());
}

DatasetBundle load_data(const RunConfig& cfg, std::uint64_t seed) {
    if (!cfg.dataset_csv_dir) return generate(cfg.spec_for_seed(seed));
    const fs::path dir(*cfg.dataset_csv_dir);
    const std::size_t k = cfg.dataset.k;
    return DatasetBundle{read_csv(dir / "dataset.csv", k), read_csv(dir / "dataset_id_test.csv", k),
                         read_csv(dir / "dataset_ood_test.csv", k)};
}

std::string config_fingerprint(const RunConfig& cfg) {
    // output-only fields do not change results
    auto j = to_json(cfg);
    j.erase("out_dir");
    j.erase("jobs");
    j.erase("dump_data");
    Fnv1a h;
    const std::string text = j.dump();
    h.update(text);
    return to_hex(h.digest());
}

namespace {

RunReport failed_report(const RunConfig& cfg, std::uint64_t seed, Arm arm, const std::string& what) {
    RunReport r;
    r.arm = to_string(arm);
    r.seed = seed;
    r.config = to_json(cfg);
    r.config_fingerprint = config_fingerprint(cfg);
    r.alpha = (arm == Arm::wo_amp || arm == Arm::wo_both) ? 0.0 : cfg.alpha;
    r.merge_rule = to_string(cfg.merge);
    r.balance = to_string(cfg.balance);
    r.dynamic_q = cfg.dynamic_q;
    r.T = cfg.max_steps;
    r.status = "failed";
    r.error = what;
    return r;
}

void stamp(RunReport& r, const RunConfig& cfg) {
    r.config = to_json(cfg);
    r.config_fingerprint = config_fingerprint(cfg);
}

// Runs fn over items with at most `jobs` in flight; results keep item order.
template <typename T, typename Fn>
auto parallel_map(const std::vector<T>& items, std::size_t jobs, Fn fn) {
    using R = decltype(fn(items.front()));
    std::vector<R> out;
    out.reserve(items.size());
    if (jobs <= 1) {
        for (const T& item : items) out.push_back(fn(item));
        return out;
    }
    for (std::size_t start = 0; start < items.size(); start += jobs) {
        std::vector<std::future<R>> batch;
        const std::size_t stop = std::min(items.size(), start + jobs);
        for (std::size_t i = start; i < stop; ++i) {
            batch.push_back(std::async(std::launch::async, [&fn, &item = items[i]] { return fn(item); }));
        }
        for (auto& f : batch) out.push_back(f.get());
    }
    return out;
}

bool all_ok(const std::vector<RunReport>& reports) {
    return std::all_of(reports.begin(), reports.end(), [](const RunReport& r) { return r.status == "ok"; });
}

std::string csv_lines(const std::vector<RunReport>& reports) {
    std::string out = run_csv_header() + "\n";
    for (const RunReport& r : reports) out += run_csv_row(r) + "\n";
    return out;
}

void log_report(std::ostream& log, const RunReport& r) {
    if (r.status == "ok") {
        log << r.run_id << ": id " << r.id_test.accuracy << " ood " << r.ood_test.accuracy << " ("
            << r.seconds << " s)\n";
    } else {
        log << r.run_id << ": FAILED " << r.error << "\n";
    }
}

void write_dataset_files(const DatasetBundle& data, const fs::path& dir, const std::string& suffix) {
    write_csv(data.train, dir / ("dataset" + suffix + ".csv"));
    write_csv(data.id_test, dir / ("dataset_id_test" + suffix + ".csv"));
    write_csv(data.ood_test, dir / ("dataset_ood_test" + suffix + ".csv"));
}

std::string dataset_suffix(const RunConfig& cfg, std::uint64_t seed) {
    return cfg.n_seeds == 1 ? std::string() : "_" + std::to_string(seed);
}

void write_trajectories(const RunReport& r, const fs::path& dir, const std::string& tag) {
    write_text(dir / ("trajectory_" + tag + ".csv"), trajectory_csv(r.auxiliary_log));
    for (std::size_t i = 0; i < r.expert_logs.size(); ++i) {
        write_text(dir / ("trajectory_" + tag + "_expert" + std::to_string(i) + ".csv"), trajectory_csv(r.expert_logs[i]));
    }
    write_text(dir / ("trajectory_" + tag + "_main.csv"), trajectory_csv(r.main_log));
}

} // namespace

RunReport execute_run(const RunConfig& cfg, std::uint64_t seed, Arm arm) {
    try {
        const DatasetBundle data = load_data(cfg, seed);
        RunReport r = run_arm(data, cfg.plan_for_seed(seed), arm);
        stamp(r, cfg);
        return r;
    } catch (const std::exception& e) {
        return failed_report(cfg, seed, arm, e.what());
    }
}

int cmd_run(const RunConfig& cfg, std::ostream& log) {
    validate(cfg);
    const fs::path dir(cfg.out_dir);
    fs::create_directories(dir);

    std::vector<RunReport> reports = parallel_map(cfg.seeds(), cfg.jobs, [&](std::uint64_t seed) {
        RunReport r = execute_run(cfg, seed);
        r.run_id = "s" + std::to_string(seed);
        return r;
    });

    for (const RunReport& r : reports) {
        log_report(log, r);
        const std::string tag = std::to_string(r.seed);
        write_text(dir / ("report_" + tag + ".json"), to_json(r).dump(2) + "\n");
        if (r.status == "ok") write_trajectories(r, dir, tag);
    }
    if (cfg.dump_data) {
        for (std::uint64_t seed : cfg.seeds()) write_dataset_files(load_data(cfg, seed), dir, dataset_suffix(cfg, seed));
    }

    std::string csv = csv_lines(reports);
    const bool ok = all_ok(reports);
    if (ok) {
        const Aggregate agg = aggregate(reports);
        csv += aggregate_csv_row("mean", agg) + "\n";
        write_text(dir / "aggregate.json", to_json(agg).dump(2) + "\n");
    } else {
        log << "aggregation skipped: at least one run failed\n";
    }
    write_text(dir / "runs.csv", csv);
    return ok ? 0 : 1;
}

int cmd_ablate(const RunConfig& cfg, std::ostream& log) {
    validate(cfg);
    const fs::path dir(cfg.out_dir);
    fs::create_directories(dir);
    const Arm arms[] = {Arm::full, Arm::wo_amp, Arm::wo_ovr, Arm::wo_both};

    auto per_seed = parallel_map(cfg.seeds(), cfg.jobs, [&](std::uint64_t seed) {
        std::vector<RunReport> out;
        try {
            const DatasetBundle data = load_data(cfg, seed);
            out = ablation_suite(data, cfg.plan_for_seed(seed));
            for (RunReport& r : out) stamp(r, cfg);
        } catch (const std::exception& e) {
            out.clear();
            for (Arm arm : arms) out.push_back(failed_report(cfg, seed, arm, e.what()));
        }
        for (RunReport& r : out) r.run_id = r.arm + "-s" + std::to_string(seed);
        return out;
    });

    std::vector<RunReport> reports;
    for (auto& group : per_seed) {
        for (RunReport& r : group) reports.push_back(std::move(r));
    }
    for (const RunReport& r : reports) {
        log_report(log, r);
        write_text(dir / ("report_" + r.arm + "_" + std::to_string(r.seed) + ".json"), to_json(r).dump(2) + "\n");
    }
    write_text(dir / "ablation.csv", csv_lines(reports));

    if (!all_ok(reports)) {
        log << "aggregation skipped: at least one run failed\n";
        return 1;
    }
    std::string summary = run_csv_header() + "\n";
    for (Arm arm : arms) {
        std::vector<RunReport> subset;
        for (const RunReport& r : reports) {
            if (r.arm == to_string(arm)) subset.push_back(r);
        }
        summary += aggregate_csv_row(to_string(arm), aggregate(subset)) + "\n";
    }
    write_text(dir / "ablation_summary.csv", summary);
    return 0;
}

int cmd_sweep_t(const RunConfig& cfg, const std::vector<std::size_t>& steps, std::ostream& log) {
    validate(cfg);
    if (steps.empty()) throw ConfigError("sweep-t: at least one T value is required");
    for (std::size_t i = 0; i < steps.size(); ++i) {
        if (steps[i] == 0) throw ConfigError("sweep-t: T values must be positive");
        if (i && steps[i] <= steps[i - 1]) throw ConfigError("sweep-t: T values must be strictly increasing");
    }
    const fs::path dir(cfg.out_dir);
    fs::create_directories(dir);

    // reports[t][seed]
    std::vector<std::vector<RunReport>> reports(steps.size());
    auto per_seed = parallel_map(cfg.seeds(), cfg.jobs, [&](std::uint64_t seed) {
        std::vector<RunReport> out;
        std::optional<DatasetBundle> data;
        std::optional<AuxiliaryResult> aux;
        std::string setup_error;
        try {
            data = load_data(cfg, seed);
            aux = train_auxiliary(data->train, cfg.plan_for_seed(seed).auxiliary);
        } catch (const std::exception& e) {
            setup_error = e.what();
        }
        for (std::size_t t : steps) {
            RunConfig at = cfg;
            at.max_steps = t;
            RunReport r;
            if (!setup_error.empty()) {
                r = failed_report(at, seed, Arm::full, setup_error);
            } else {
                try {
                    r = run_arm(*data, at.plan_for_seed(seed), Arm::full, &*aux);
                    stamp(r, at);
                } catch (const std::exception& e) {
                    r = failed_report(at, seed, Arm::full, e.what());
                }
            }
            r.run_id = "T" + std::to_string(t) + "-s" + std::to_string(seed);
            out.push_back(std::move(r));
        }
        return out;
    });
    for (auto& group : per_seed) {
        for (std::size_t i = 0; i < steps.size(); ++i) reports[i].push_back(std::move(group[i]));
    }

    std::vector<RunReport> flat;
    for (std::size_t i = 0; i < steps.size(); ++i) {
        for (const RunReport& r : reports[i]) {
            log_report(log, r);
            write_text(dir / ("report_T" + std::to_string(steps[i]) + "_" + std::to_string(r.seed) + ".json"),
                       to_json(r).dump(2) + "\n");
            flat.push_back(r);
        }
    }
    write_text(dir / "sweep_t.csv", csv_lines(flat));

    if (!all_ok(flat)) {
        log << "aggregation skipped: at least one run failed\n";
        return 1;
    }
    auto fmt = [](double v) { return nlohmann::json(v).dump(); };
    std::ostringstream summary;
    summary << "T,runs,acc_id,acc_ood,acc_conflicting,expert_conf_biased,expert_conf_conflicting\n";
    for (std::size_t i = 0; i < steps.size(); ++i) {
        double id = 0, ood = 0, conflict = 0, eb = 0, ec = 0;
        const double n = static_cast<double>(reports[i].size());
        for (const RunReport& r : reports[i]) {
            id += r.id_test.accuracy;
            ood += r.ood_test.accuracy;
            conflict += r.ood_test.groups.acc_conflicting.value_or(0.0);
            if (r.bias_model) {
                eb += r.bias_model->conf_biased.value_or(0.0);
                ec += r.bias_model->conf_conflicting.value_or(0.0);
            }
        }
        summary << steps[i] << ',' << reports[i].size() << ',' << fmt(id / n) << ',' << fmt(ood / n) << ','
                << fmt(conflict / n) << ',' << fmt(eb / n) << ',' << fmt(ec / n) << '\n';
    }
    write_text(dir / "sweep_t_summary.csv", summary.str());
    return 0;
}

int cmd_gen_data(const RunConfig& cfg, std::ostream& log) {
    validate(cfg);
    const fs::path dir(cfg.out_dir);
    fs::create_directories(dir);
    for (std::uint64_t seed : cfg.seeds()) {
        const DatasetBundle data = load_data(cfg, seed);
        write_dataset_files(data, dir, dataset_suffix(cfg, seed));
        log << "seed " << seed << ": " << data.train.size() << " train, " << data.id_test.size() << " id test, "
            << data.ood_test.size() << " ood test\n";
    }
    return 0;
}

} // namespace bexp
