#include "bexp/evalkit.hpp"

#include "bexp/error.hpp"
#include "bexp/util.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <sstream>

namespace bexp {

Histogram confidence_histogram(std::span<const double> confidences) {
    Histogram h{};
    for (double c : confidences) {
        const double clamped = std::clamp(c, 0.0, 1.0);
        auto bin = static_cast<std::size_t>(clamped * static_cast<double>(kHistogramBins));
        h[std::min(bin, kHistogramBins - 1)] += 1;
    }
    return h;
}

namespace {

std::size_t argmax(const std::vector<double>& p) {
    return static_cast<std::size_t>(std::max_element(p.begin(), p.end()) - p.begin());
}

} // namespace

double evaluate(const BiasScorer& scorer, const Dataset& ds) {
    if (ds.empty()) throw UndefinedMetricError("accuracy of an empty split is undefined");
    if (scorer.k() != ds.k()) throw ShapeError("evaluate: scorer and dataset disagree on k");
    std::size_t correct = 0;
    for (std::size_t i = 0; i < ds.size(); ++i) correct += argmax(scorer.distribution(ds.features(i))) == ds.label(i);
    return 100.0 * static_cast<double>(correct) / static_cast<double>(ds.size());
}

GroupMetrics group_metrics(const BiasScorer& scorer, const Dataset& ds) {
    const GroupPartition groups = group_partition(ds);
    GroupMetrics m;
    auto fill = [&](const std::vector<std::size_t>& ids, std::size_t& n, std::optional<double>& acc,
                    std::optional<double>& conf, Histogram& hist) {
        n = ids.size();
        if (ids.empty()) return;
        std::vector<double> confidences;
        confidences.reserve(ids.size());
        std::size_t correct = 0;
        double sum = 0.0;
        for (std::size_t id : ids) {
            const std::vector<double> p = scorer.distribution(ds.features(id));
            correct += argmax(p) == ds.label(id);
            confidences.push_back(p[ds.label(id)]);
            sum += p[ds.label(id)];
        }
        acc = 100.0 * static_cast<double>(correct) / static_cast<double>(n);
        conf = sum / static_cast<double>(n);
        hist = confidence_histogram(confidences);
    };
    fill(groups.biased, m.n_biased, m.acc_biased, m.conf_biased, m.hist_biased);
    fill(groups.bias_conflicting, m.n_conflicting, m.acc_conflicting, m.conf_conflicting, m.hist_conflicting);
    return m;
}

SplitMetrics split_metrics(const BiasScorer& scorer, const Dataset& ds) {
    SplitMetrics s;
    s.n = ds.size();
    s.accuracy = evaluate(scorer, ds);
    if (ds.has_alignment_flags()) s.groups = group_metrics(scorer, ds);
    return s;
}

std::string to_string(Arm arm) {
    switch (arm) {
    case Arm::full: return "full";
    case Arm::wo_amp: return "wo_amp";
    case Arm::wo_ovr: return "wo_ovr";
    case Arm::wo_both: return "wo_both";
    case Arm::erm: return "erm";
    }
    return "full";
}

Arm parse_arm(const std::string& name) {
    for (Arm a : {Arm::full, Arm::wo_amp, Arm::wo_ovr, Arm::wo_both, Arm::erm}) {
        if (to_string(a) == name) return a;
    }
    throw ConfigError("unknown arm '" + name + "'");
}

namespace {

nlohmann::ordered_json opt_json(const std::optional<double>& v) {
    return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr);
}

nlohmann::ordered_json to_json(const GroupMetrics& g) {
    nlohmann::ordered_json j;
    j["n_biased"] = g.n_biased;
    j["n_conflicting"] = g.n_conflicting;
    j["acc_biased"] = opt_json(g.acc_biased);
    j["acc_conflicting"] = opt_json(g.acc_conflicting);
    j["conf_biased"] = opt_json(g.conf_biased);
    j["conf_conflicting"] = opt_json(g.conf_conflicting);
    j["hist_biased"] = g.hist_biased;
    j["hist_conflicting"] = g.hist_conflicting;
    return j;
}

nlohmann::ordered_json to_json(const SplitMetrics& s) {
    nlohmann::ordered_json j;
    j["n"] = s.n;
    j["accuracy"] = s.accuracy;
    j["groups"] = to_json(s.groups);
    return j;
}

nlohmann::ordered_json to_json(const TrajectoryLog& log) {
    nlohmann::ordered_json j = nlohmann::ordered_json::array();
    for (const TrajectoryRecord& r : log) j.push_back(to_json(r));
    return j;
}

std::string num(double v) { return nlohmann::json(v).dump(); }
std::string num(const std::optional<double>& v) { return v ? num(*v) : std::string(); }

} // namespace

nlohmann::ordered_json to_json(const TrajectoryRecord& rec) {
    nlohmann::ordered_json j;
    j["epoch"] = rec.epoch;
    j["step"] = rec.step;
    j["conf_biased"] = opt_json(rec.conf_biased);
    j["conf_conflicting"] = opt_json(rec.conf_conflicting);
    j["acc_biased"] = opt_json(rec.acc_biased);
    j["acc_conflicting"] = opt_json(rec.acc_conflicting);
    return j;
}

nlohmann::ordered_json to_json(const RunReport& r) {
    nlohmann::ordered_json j;
    j["run_id"] = r.run_id;
    j["arm"] = r.arm;
    j["seed"] = r.seed;
    j["status"] = r.status;
    j["error"] = r.error;
    j["config_fingerprint"] = r.config_fingerprint;
    j["dataset_fingerprint"] = r.dataset_fingerprint;
    j["alpha"] = r.alpha;
    j["merge_rule"] = r.merge_rule;
    j["balance"] = r.balance;
    j["dynamic_q"] = r.dynamic_q;
    j["T"] = r.T ? nlohmann::ordered_json(*r.T) : nlohmann::ordered_json(nullptr);
    j["splits"]["train"] = to_json(r.train);
    j["splits"]["id_test"] = to_json(r.id_test);
    j["splits"]["ood_test"] = to_json(r.ood_test);
    j["id_ood_gap"] = r.id_ood_gap;
    j["bias_model"] = r.bias_model ? to_json(*r.bias_model) : nlohmann::ordered_json(nullptr);
    j["trajectories"]["auxiliary"] = to_json(r.auxiliary_log);
    j["trajectories"]["experts"] = nlohmann::ordered_json::array();
    for (const TrajectoryLog& log : r.expert_logs) j["trajectories"]["experts"].push_back(to_json(log));
    j["trajectories"]["main"] = to_json(r.main_log);
    j["config"] = r.config;
    j["seconds"] = r.seconds;
    return j;
}

std::string run_csv_header() {
    std::string out;
    for (std::size_t i = 0; i < kRunCsvColumns.size(); ++i) {
        if (i) out += ',';
        out += kRunCsvColumns[i];
    }
    return out;
}

std::string run_csv_row(const RunReport& r) {
    std::ostringstream out;
    const GroupMetrics& g = r.ood_test.groups;
    out << r.run_id << ',' << r.seed << ',' << num(r.alpha) << ',' << r.merge_rule << ',' << r.balance << ','
        << (r.dynamic_q ? "true" : "false") << ',' << (r.T ? std::to_string(*r.T) : std::string()) << ','
        << num(r.id_test.accuracy) << ',' << num(r.ood_test.accuracy) << ',' << num(r.id_ood_gap) << ','
        << num(g.acc_biased) << ',' << num(g.acc_conflicting) << ',' << num(g.conf_biased) << ','
        << num(g.conf_conflicting) << ',' << num(r.seconds);
    return out.str();
}

std::string trajectory_csv(const TrajectoryLog& log) {
    std::ostringstream out;
    for (std::size_t i = 0; i < kTrajectoryCsvColumns.size(); ++i) out << (i ? "," : "") << kTrajectoryCsvColumns[i];
    out << '\n';
    for (const TrajectoryRecord& r : log) {
        out << r.epoch << ',' << num(r.conf_biased) << ',' << num(r.conf_conflicting) << ',' << num(r.acc_biased)
            << ',' << num(r.acc_conflicting) << '\n';
    }
    return out.str();
}

Aggregate aggregate(std::span<const RunReport> reports) {
    Aggregate agg;
    agg.runs = reports.size();
    using Getter = std::optional<double> (*)(const RunReport&);
    const std::pair<const char*, Getter> columns[] = {
        {"alpha", [](const RunReport& r) -> std::optional<double> { return r.alpha; }},
        {"acc_id", [](const RunReport& r) -> std::optional<double> { return r.id_test.accuracy; }},
        {"acc_ood", [](const RunReport& r) -> std::optional<double> { return r.ood_test.accuracy; }},
        {"gap", [](const RunReport& r) -> std::optional<double> { return r.id_ood_gap; }},
        {"acc_biased", [](const RunReport& r) { return r.ood_test.groups.acc_biased; }},
        {"acc_conflicting", [](const RunReport& r) { return r.ood_test.groups.acc_conflicting; }},
        {"conf_biased", [](const RunReport& r) { return r.ood_test.groups.conf_biased; }},
        {"conf_conflicting", [](const RunReport& r) { return r.ood_test.groups.conf_conflicting; }},
        {"seconds", [](const RunReport& r) -> std::optional<double> { return r.seconds; }},
    };
    for (const auto& [name, get] : columns) {
        std::vector<double> values;
        for (const RunReport& r : reports) {
            if (auto v = get(r)) values.push_back(*v);
        }
        double mean = std::nan("");
        double sd = std::nan("");
        if (!values.empty()) {
            mean = 0.0;
            for (double v : values) mean += v;
            mean /= static_cast<double>(values.size());
        }
        if (values.size() > 1) {
            double ss = 0.0;
            for (double v : values) ss += (v - mean) * (v - mean);
            sd = std::sqrt(ss / static_cast<double>(values.size() - 1));
        }
        agg.columns.emplace_back(name, std::make_pair(mean, sd));
    }
    return agg;
}

std::string aggregate_csv_row(const std::string& run_id, const Aggregate& agg) {
    auto mean_of = [&](const std::string& name) -> std::string {
        for (const auto& [col, stats] : agg.columns) {
            if (col == name) return std::isnan(stats.first) ? std::string() : num(stats.first);
        }
        return {};
    };
    std::ostringstream out;
    out << run_id << ",," << mean_of("alpha") << ",,,,," << mean_of("acc_id") << ',' << mean_of("acc_ood") << ','
        << mean_of("gap") << ',' << mean_of("acc_biased") << ',' << mean_of("acc_conflicting") << ','
        << mean_of("conf_biased") << ',' << mean_of("conf_conflicting") << ',' << mean_of("seconds");
    return out.str();
}

nlohmann::ordered_json to_json(const Aggregate& agg) {
    nlohmann::ordered_json j;
    j["runs"] = agg.runs;
    for (const auto& [name, stats] : agg.columns) {
        j["mean"][name] = std::isnan(stats.first) ? nlohmann::ordered_json(nullptr) : nlohmann::ordered_json(stats.first);
        j["std"][name] = std::isnan(stats.second) ? nlohmann::ordered_json(nullptr) : nlohmann::ordered_json(stats.second);
    }
    return j;
}

namespace {

std::string bundle_fingerprint(const DatasetBundle& data) {
    Fnv1a h;
    for (const Dataset* ds : {&data.train, &data.id_test, &data.ood_test}) h.update_value(ds->content_fingerprint());
    return to_hex(h.digest());
}

} // namespace

RunReport run_arm(const DatasetBundle& data, const PipelinePlan& plan, Arm arm, const AuxiliaryResult* shared_aux) {
    const auto start = std::chrono::steady_clock::now();
    RunReport report;
    report.arm = to_string(arm);
    report.seed = plan.main.seed;
    report.dataset_fingerprint = bundle_fingerprint(data);
    report.alpha = (arm == Arm::wo_amp || arm == Arm::wo_both) ? 0.0 : plan.experts.alpha;
    report.merge_rule = to_string(plan.experts.merge);
    report.balance = to_string(plan.experts.balance);
    report.dynamic_q = plan.experts.dynamic_q;
    if (plan.experts.stop.kind == StopRule::Kind::steps) report.T = plan.experts.stop.value;

    const Dataset& train = data.train;
    std::optional<MainResult> main;
    if (arm == Arm::erm) {
        main = train_erm(train, plan.main);
    } else {
        std::optional<AuxiliaryResult> own_aux;
        if (!shared_aux) own_aux = train_auxiliary(train, plan.auxiliary);
        const AuxiliaryResult& aux = shared_aux ? *shared_aux : *own_aux;
        report.auxiliary_log = aux.log;

        TrainPlan expert_plan = plan.experts;
        expert_plan.alpha = report.alpha;
        if (arm == Arm::full || arm == Arm::wo_amp) {
            ExpertResult experts = train_bias_experts(train, aux.q, expert_plan);
            report.expert_logs = std::move(experts.logs);
            report.bias_model = group_metrics(experts.ensemble, train);
            main = train_main(train, experts.ensemble, plan.main, plan.ce_coeff, plan.poe_coeff);
        } else {
            const std::size_t members = plan.ensemble_members ? plan.ensemble_members : train.k();
            const MulticlassEnsemble ensemble = train_multiclass_auxiliary_ensemble(train, expert_plan, members, &aux.q);
            report.bias_model = group_metrics(ensemble, train);
            main = train_main(train, ensemble, plan.main, plan.ce_coeff, plan.poe_coeff);
        }
    }
    report.main_log = main->log;

    const ModelScorer scorer(main->model);
    report.train = split_metrics(scorer, data.train);
    report.id_test = split_metrics(scorer, data.id_test);
    report.ood_test = split_metrics(scorer, data.ood_test);
    report.id_ood_gap = report.id_test.accuracy - report.ood_test.accuracy;
    report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return report;
}

std::vector<RunReport> ablation_suite(const DatasetBundle& data, const PipelinePlan& plan) {
    const AuxiliaryResult aux = train_auxiliary(data.train, plan.auxiliary);
    std::vector<RunReport> reports;
    for (Arm arm : {Arm::full, Arm::wo_amp, Arm::wo_ovr, Arm::wo_both}) {
        reports.push_back(run_arm(data, plan, arm, &aux));
    }
    return reports;
}

} // namespace bexp
