#include "bexp/commands.hpp"
#include "bexp/config.hpp"
#include "bexp/datagen.hpp"
#include "bexp/error.hpp"
#include "bexp/evalkit.hpp"
#include "bexp/losses.hpp"
#include "bexp/ovr.hpp"
#include "bexp/training.hpp"

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

namespace py = pybind11;
using namespace bexp;

namespace {

// Plain-data copy of a BinaryView so Python never holds a pointer into a Dataset.
struct ViewSnapshot {
    std::size_t target_class = 0;
    std::string strategy;
    std::vector<bool> positive;
    std::vector<double> weights;
    std::vector<std::size_t> active_indices;
    std::size_t active_positives = 0;
    std::size_t active_negatives = 0;
};

ViewSnapshot snapshot(const BinaryView& v) {
    ViewSnapshot s;
    s.target_class = v.target_class();
    s.strategy = to_string(v.strategy());
    for (std::size_t id = 0; id < v.size(); ++id) {
        s.positive.push_back(v.is_positive(id));
        s.weights.push_back(v.sample_weight(id));
    }
    s.active_indices = v.active_indices();
    s.active_positives = v.active_positives();
    s.active_negatives = v.active_negatives();
    return s;
}

py::array_t<double> feature_matrix(const Dataset& ds) {
    py::array_t<double> out({ds.size(), ds.feature_dim()});
    auto m = out.mutable_unchecked<2>();
    for (std::size_t i = 0; i < ds.size(); ++i) {
        auto row = ds.features(i);
        for (std::size_t j = 0; j < row.size(); ++j) m(i, j) = row[j];
    }
    return out;
}

nlohmann::json parse_json(const std::string& text, const char* what) {
    try {
        return text.empty() ? nlohmann::json::object() : nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError(std::string(what) + ": invalid JSON: " + e.what());
    }
}

} // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Native core of the bias_experts package";

    auto base = py::register_exception<Error>(m, "BexpError", PyExc_RuntimeError);
    py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
    py::register_exception<ShapeError>(m, "ShapeError", base.ptr());
    py::register_exception<NumericError>(m, "NumericError", base.ptr());
    py::register_exception<LabelError>(m, "LabelError", base.ptr());
    py::register_exception<DistributionError>(m, "DistributionError", base.ptr());
    py::register_exception<DegenerateClassError>(m, "DegenerateClassError", base.ptr());

    py::class_<SyntheticSpec>(m, "SyntheticSpec")
        .def(py::init<>())
        .def_readwrite("n_train", &SyntheticSpec::n_train)
        .def_readwrite("n_id_test", &SyntheticSpec::n_id_test)
        .def_readwrite("n_ood_test", &SyntheticSpec::n_ood_test)
        .def_readwrite("k", &SyntheticSpec::k)
        .def_readwrite("d_target", &SyntheticSpec::d_target)
        .def_readwrite("d_bias", &SyntheticSpec::d_bias)
        .def_readwrite("d_noise", &SyntheticSpec::d_noise)
        .def_readwrite("bias_alignment", &SyntheticSpec::bias_alignment)
        .def_readwrite("target_snr", &SyntheticSpec::target_snr)
        .def_readwrite("bias_snr", &SyntheticSpec::bias_snr)
        .def_readwrite("seed", &SyntheticSpec::seed)
        .def("validate", &SyntheticSpec::validate)
        .def("fingerprint", &SyntheticSpec::fingerprint);

    py::class_<Dataset>(m, "Dataset")
        .def("__len__", &Dataset::size)
        .def_property_readonly("k", &Dataset::k)
        .def_property_readonly("feature_dim", &Dataset::feature_dim)
        .def("features", &feature_matrix, "copy of the feature matrix, shape (n, feature_dim)")
        .def("labels", [](const Dataset& ds) { return std::vector<std::size_t>(ds.labels().begin(), ds.labels().end()); })
        .def("class_counts", &Dataset::class_counts)
        .def("has_alignment_flags", &Dataset::has_alignment_flags)
        .def("fingerprint", &Dataset::content_fingerprint)
        .def("groups",
             [](const Dataset& ds) {
                 GroupPartition g = group_partition(ds);
                 return py::make_tuple(g.biased, g.bias_conflicting);
             },
             "(biased ids, bias-conflicting ids)")
        .def("write_csv", [](const Dataset& ds, const std::filesystem::path& p) { write_csv(ds, p); })
        .def_static("read_csv", &read_csv, py::arg("path"), py::arg("k") = py::none());

    py::class_<DatasetBundle>(m, "DatasetBundle")
        .def_readonly("train", &DatasetBundle::train)
        .def_readonly("id_test", &DatasetBundle::id_test)
        .def_readonly("ood_test", &DatasetBundle::ood_test);

    m.def("generate", &generate, py::arg("spec"));

    py::class_<ViewSnapshot>(m, "BinaryView")
        .def_readonly("target_class", &ViewSnapshot::target_class)
        .def_readonly("strategy", &ViewSnapshot::strategy)
        .def_readonly("positive", &ViewSnapshot::positive)
        .def_readonly("weights", &ViewSnapshot::weights)
        .def_readonly("active_indices", &ViewSnapshot::active_indices)
        .def_readonly("active_positives", &ViewSnapshot::active_positives)
        .def_readonly("active_negatives", &ViewSnapshot::active_negatives);

    m.def(
        "split_ovr",
        [](const Dataset& ds, const std::string& balance, std::uint64_t seed) {
            const BalanceConfig cfg{parse_balance(balance), seed};
            std::vector<ViewSnapshot> out;
            for (const BinaryView& v : split_ovr(ds)) out.push_back(snapshot(apply_balance(v, cfg)));
            return out;
        },
        py::arg("dataset"), py::arg("balance") = "none", py::arg("seed") = 0,
        "k target-vs-rest views, each balanced with the named strategy");

    m.def("softmax_ce", [](const std::vector<double>& z, std::size_t y) {
        LossAndGrad r = softmax_ce(z, y);
        return py::make_tuple(r.loss, r.grad);
    });
    m.def(
        "sigmoid_bce",
        [](double z, int label, double weight) {
            ScalarLoss r = sigmoid_bce(z, label, weight);
            return py::make_tuple(r.loss, r.grad);
        },
        py::arg("logit"), py::arg("label"), py::arg("weight") = 1.0);
    m.def("poe_loss", [](const std::vector<double>& z, const std::vector<double>& p_b, std::size_t y) {
        PoeLoss r = poe_loss(z, p_b, y);
        return py::make_tuple(r.loss, r.grad, r.clamped);
    });
    m.def(
        "main_loss",
        [](const std::vector<double>& z, const std::vector<double>& p_b, std::size_t y, double ce, double poe) {
            LossAndGrad r = main_loss(z, p_b, y, ce, poe);
            return py::make_tuple(r.loss, r.grad);
        },
        py::arg("logits"), py::arg("p_b"), py::arg("y"), py::arg("ce_coeff") = 0.3, py::arg("poe_coeff") = 1.0);
    m.def("amplification_weight", &amplification_weight, py::arg("q"), py::arg("alpha"), py::arg("positive"));
    m.def("balance_weights", [](std::size_t k) {
        AmplifyParams p = AmplifyParams::for_classes(k, 0.0);
        return py::make_tuple(p.lambda1, p.lambda2);
    });
    m.def(
        "merge_logits",
        [](const std::vector<double>& z, const std::string& rule) { return merge_logits(z, parse_merge(rule)); },
        py::arg("logits"), py::arg("rule") = "softmax");

    m.def("default_config_json", [] { return to_json(RunConfig{}).dump(); });
    m.def(
        "resolve_config_json",
        [](const std::string& file_json, const std::string& flags_json) {
            return to_json(resolve_config(parse_json(file_json, "config"), parse_json(flags_json, "flags"))).dump();
        },
        py::arg("file_json") = "", py::arg("flags_json") = "");
    m.def(
        "run_json",
        [](const std::string& config_json, std::uint64_t seed, const std::string& arm) {
            const RunConfig cfg = config_from_json(parse_json(config_json, "config"));
            const Arm a = parse_arm(arm);
            py::gil_scoped_release release;
            return to_json(execute_run(cfg, seed, a)).dump();
        },
        py::arg("config_json"), py::arg("seed"), py::arg("arm") = "full",
        "one pipeline run; returns the report as JSON text");
    m.def(
        "command",
        [](const std::string& name, const std::string& config_json, const std::vector<std::size_t>& t_values) {
            const RunConfig cfg = config_from_json(parse_json(config_json, "config"));
            std::ostringstream log;
            int code = 0;
            {
                py::gil_scoped_release release;
                if (name == "run") {
                    code = cmd_run(cfg, log);
                } else if (name == "ablate") {
                    code = cmd_ablate(cfg, log);
                } else if (name == "sweep-t") {
                    code = cmd_sweep_t(cfg, t_values, log);
                } else if (name == "gen-data") {
                    code = cmd_gen_data(cfg, log);
                } else {
                    throw ConfigError("unknown command '" + name + "'");
                }
            }
            return py::make_tuple(code, log.str());
        },
        py::arg("name"), py::arg("config_json"), py::arg("t_values") = std::vector<std::size_t>{});
}
