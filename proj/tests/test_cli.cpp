#include "bexp/commands.hpp"
#include "bexp/config.hpp"
#include "bexp/error.hpp"

#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace bexp;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
    fs::path p = fs::temp_directory_path() / ("bexp_cli_" + name);
    fs::remove_all(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream s;
    s << in.rdbuf();
    return s.str();
}

std::vector<std::string> lines(const std::string& text) {
    std::vector<std::string> out;
    std::istringstream in(text);
    for (std::string l; std::getline(in, l);) out.push_back(l);
    return out;
}

RunConfig tiny(const fs::path& out) {
    RunConfig c;
    c.dataset.n_train = 600;
    c.dataset.n_id_test = 300;
    c.dataset.n_ood_test = 300;
    c.epochs = 1;
    c.out_dir = out.string();
    return c;
}

std::string message_of(const json& file, const json& flags) {
    try {
        resolve_config(file, flags);
    } catch (const ConfigError& e) {
        return e.what();
    }
    return "";
}

} // namespace

TEST_SUITE("cli.config") {
    TEST_CASE("presets") {
        CHECK(preset_names() == std::vector<std::string>{"default", "mnli-like", "fever-like", "qqp-like"});
        RunConfig fever = resolve_config(json::object(), {{"preset", "fever-like"}});
        CHECK(fever.alpha == 0.01);
        CHECK(fever.learning_rate == 2e-3);
        CHECK(fever.dataset.k == 3);
        RunConfig qqp = resolve_config({{"preset", "qqp-like"}}, json::object());
        CHECK(qqp.dataset.k == 2);
        CHECK(qqp.alpha == 0.3);
        CHECK(resolve_config(json::object(), json::object()) == RunConfig{});
        CHECK_THROWS_AS(preset_patch("imagenet"), ConfigError);
    }

    TEST_CASE("precedence: flags over file over preset over defaults") {
        json file = {{"preset", "qqp-like"}, {"train", {{"alpha", 0.7}, {"epochs", 5}}}};
        json flags = {{"train", {{"alpha", 0.9}}}};
        RunConfig c = resolve_config(file, flags);
        CHECK(c.alpha == 0.9);
        CHECK(c.epochs == 5);
        CHECK(c.dataset.k == 2);             // preset
        CHECK(c.learning_rate == 2e-3);      // preset
        CHECK(c.batch_size == 32);           // default
        // preset named by the flags wins over the file's
        CHECK(resolve_config(file, {{"preset", "fever-like"}}).dataset.k == 3);
    }

    TEST_CASE("strict parsing names the offending path") {
        CHECK(message_of({{"train", {{"alpha", "high"}}}}, json::object()) == "config.train.alpha: expected a number");
        CHECK(message_of({{"train", {{"alfa", 0.1}}}}, json::object()).find("config.train.alfa") != std::string::npos);
        CHECK(message_of({{"dataset", {{"k", -3}}}}, json::object()).find("config.dataset.k") != std::string::npos);
        CHECK(message_of({{"train", {{"merge", "max"}}}}, json::object()).find("max") != std::string::npos);
        CHECK(message_of(json::array(), json::object()) != "");
        CHECK(message_of({{"train", {{"alpha", -0.5}}}}, json::object()) != "");
        CHECK(message_of({{"train", {{"batch_size", 0}}}}, json::object()) != "");
    }

    TEST_CASE("config round-trips through JSON") {
        RunConfig c = resolve_config({{"preset", "mnli-like"}},
                                     {{"train", {{"max_steps", 200}, {"merge", "softplus"}, {"dynamic_q", true}}},
                                      {"seed", 4}});
        CHECK(config_from_json(to_json(c)) == c);
        CHECK(config_from_json(json::parse(to_json(c).dump())) == c);
        CHECK(config_fingerprint(c) == config_fingerprint(config_from_json(to_json(c))));
        RunConfig d = c;
        d.out_dir = "elsewhere";
        d.jobs = 4;
        CHECK(config_fingerprint(c) == config_fingerprint(d));
        d.alpha = 0.21;
        CHECK(config_fingerprint(c) != config_fingerprint(d));
    }

    TEST_CASE("seed list and per-stage plans") {
        RunConfig c;
        c.seed = 10;
        c.n_seeds = 3;
        CHECK(c.seeds() == std::vector<std::uint64_t>{10, 11, 12});
        c.max_steps = 77;
        PipelinePlan p = c.plan_for_seed(10);
        CHECK(p.experts.stop == StopRule::steps(77));
        CHECK(p.auxiliary.stop == StopRule::epochs(3));
        CHECK(p.main.hidden == std::vector<std::size_t>{64});
        CHECK(p.experts.alpha == 0.2);
        CHECK(c.spec_for_seed(12).seed == 12);
    }
}

TEST_SUITE("cli.commands") {
    TEST_CASE("run writes report, trajectories and runs.csv; reports reproduce except for seconds") {
        const fs::path a = fresh_dir("run_a"), b = fresh_dir("run_b");
        std::ostringstream log;
        RunConfig ca = tiny(a), cb = tiny(b);
        ca.dump_data = cb.dump_data = true;
        REQUIRE(cmd_run(ca, log) == 0);
        REQUIRE(cmd_run(cb, log) == 0);
        for (const char* f : {"report_0.json", "trajectory_0.csv", "trajectory_0_expert0.csv", "trajectory_0_main.csv",
                              "runs.csv", "aggregate.json", "dataset.csv", "dataset_id_test.csv",
                              "dataset_ood_test.csv"}) {
            CHECK_MESSAGE(fs::exists(a / f), f);
        }
        json ra = json::parse(slurp(a / "report_0.json")), rb = json::parse(slurp(b / "report_0.json"));
        ra.erase("seconds");
        rb.erase("seconds");
        ra["config"].erase("out_dir");
        rb["config"].erase("out_dir");
        CHECK(ra.dump() == rb.dump());
        CHECK(ra["status"] == "ok");
        CHECK(config_from_json(json::parse(slurp(a / "report_0.json"))["config"]) == ca);

        auto rows = lines(slurp(a / "runs.csv"));
        REQUIRE(rows.size() == 3);
        CHECK(rows[0] == run_csv_header());
        CHECK(rows[1].rfind("s0,0,", 0) == 0);
        CHECK(rows[2].rfind("mean,", 0) == 0);
        CHECK(slurp(a / "trajectory_0.csv") == slurp(b / "trajectory_0.csv"));
        CHECK(lines(slurp(a / "trajectory_0.csv"))[0] == "epoch,conf_biased,conf_conflicting,acc_biased,acc_conflicting");
        fs::remove_all(a);
        fs::remove_all(b);
    }

    TEST_CASE("several seeds, concurrently, match the serial run") {
        const fs::path a = fresh_dir("par_a"), b = fresh_dir("par_b");
        std::ostringstream log;
        RunConfig ca = tiny(a), cb = tiny(b);
        ca.n_seeds = cb.n_seeds = 2;
        cb.jobs = 2;
        REQUIRE(cmd_run(ca, log) == 0);
        REQUIRE(cmd_run(cb, log) == 0);
        for (const char* f : {"report_0.json", "report_1.json"}) {
            json x = json::parse(slurp(a / f)), y = json::parse(slurp(b / f));
            CHECK(x["splits"] == y["splits"]);
        }
        CHECK(lines(slurp(a / "runs.csv")).size() == 4);
        fs::remove_all(a);
        fs::remove_all(b);
    }

    TEST_CASE("a failing run is reported, not aggregated, and the exit code is nonzero") {
        const fs::path a = fresh_dir("fail");
        std::ostringstream log;
        RunConfig c = tiny(a);
        c.dataset_csv_dir = (a / "missing").string();
        CHECK(cmd_run(c, log) == 1);
        json r = json::parse(slurp(a / "report_0.json"));
        CHECK(r["status"] == "failed");
        CHECK(r["error"].get<std::string>().find("dataset.csv") != std::string::npos);
        CHECK_FALSE(fs::exists(a / "aggregate.json"));
        CHECK(lines(slurp(a / "runs.csv")).size() == 2);
        fs::remove_all(a);
    }

    TEST_CASE("gen-data output feeds a later run") {
        const fs::path a = fresh_dir("gen"), b = fresh_dir("gen_run"), c = fresh_dir("gen_direct");
        std::ostringstream log;
        REQUIRE(cmd_gen_data(tiny(a), log) == 0);
        RunConfig from_files = tiny(b);
        from_files.dataset_csv_dir = a.string();
        REQUIRE(cmd_run(from_files, log) == 0);
        REQUIRE(cmd_run(tiny(c), log) == 0);
        json x = json::parse(slurp(b / "report_0.json")), y = json::parse(slurp(c / "report_0.json"));
        CHECK(x["dataset_fingerprint"] == y["dataset_fingerprint"]);
        CHECK(x["splits"] == y["splits"]);
        fs::remove_all(a);
        fs::remove_all(b);
        fs::remove_all(c);
    }

    TEST_CASE("ablate writes four arms per seed") {
        const fs::path a = fresh_dir("ablate");
        std::ostringstream log;
        RunConfig c = tiny(a);
        c.n_seeds = 2;
        REQUIRE(cmd_ablate(c, log) == 0);
        auto rows = lines(slurp(a / "ablation.csv"));
        CHECK(rows.size() == 1 + 8);
        CHECK(fs::exists(a / "report_wo_both_1.json"));
        CHECK(fs::exists(a / "ablation_summary.csv"));
        fs::remove_all(a);
    }

    TEST_CASE("sweep-t records T; a single T matches run with max_steps") {
        const fs::path a = fresh_dir("sweep"), b = fresh_dir("sweep_run");
        std::ostringstream log;
        REQUIRE(cmd_sweep_t(tiny(a), {20, 60}, log) == 0);
        auto rows = lines(slurp(a / "sweep_t.csv"));
        REQUIRE(rows.size() == 3);
        CHECK(rows[1].rfind("T20-s0,0,0.2,softmax,reweight,false,20,", 0) == 0);
        CHECK(rows[2].rfind("T60-s0,0,0.2,softmax,reweight,false,60,", 0) == 0);
        CHECK(lines(slurp(a / "sweep_t_summary.csv")).size() == 3);

        RunConfig single = tiny(b);
        single.max_steps = 60;
        REQUIRE(cmd_run(single, log) == 0);
        json x = json::parse(slurp(a / "report_T60_0.json")), y = json::parse(slurp(b / "report_0.json"));
        CHECK(x["splits"] == y["splits"]);
        CHECK(x["T"] == 60);

        CHECK_THROWS_AS(cmd_sweep_t(tiny(a), {60, 20}, log), ConfigError);
        CHECK_THROWS_AS(cmd_sweep_t(tiny(a), {}, log), ConfigError);
        CHECK_THROWS_AS(cmd_sweep_t(tiny(a), {0, 5}, log), ConfigError);
        fs::remove_all(a);
        fs::remove_all(b);
    }
}

#ifdef BEXP_CLI_PATH
TEST_SUITE("cli.binary") {
    int run_cli(const std::string& args) {
        const std::string cmd = std::string("\"") + BEXP_CLI_PATH + "\" " + args + " > /dev/null 2>&1";
        const int status = std::system(cmd.c_str());
        return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    }

    TEST_CASE("exit codes") {
        const fs::path a = fresh_dir("bin");
        CHECK(run_cli("gen-data --out " + a.string()) == 0);
        CHECK(fs::exists(a / "dataset.csv"));
        CHECK(run_cli("run --balance smote --out " + a.string()) == 2);
        CHECK(run_cli("run --preset nope --out " + a.string()) == 2);
        CHECK(run_cli("run --config " + (a / "absent.json").string()) == 2);
        CHECK(run_cli("frobnicate") != 0);
        CHECK(run_cli("run --epochs 1 --max-steps 30 --seeds 1 --alpha 0.3 --merge softplus --balance oversample "
                      "--dynamic-q --out " + a.string()) == 0);
        json r = json::parse(slurp(a / "report_0.json"));
        CHECK(r["alpha"] == 0.3);
        CHECK(r["merge_rule"] == "softplus");
        CHECK(r["balance"] == "oversample");
        CHECK(r["dynamic_q"] == true);
        CHECK(r["T"] == 30);
        fs::remove_all(a);
    }
}
#endif
