#include "bexp/datagen.hpp"

#include "bexp/error.hpp"
#include "bexp/util.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <random>
#include <sstream>

namespace bexp {

void SyntheticSpec::validate() const {
    if (k < 2) throw ConfigError("dataset.k must be at least 2");
    if (d_target < 1) throw ConfigError("dataset.d_target must be at least 1");
    if (d_bias < 1) throw ConfigError("dataset.d_bias must be at least 1");
    if (n_train == 0 || n_id_test == 0 || n_ood_test == 0) {
        throw ConfigError("dataset split sizes must be positive");
    }
    if (!(bias_alignment >= 0.0 && bias_alignment <= 1.0)) {
        throw ConfigError("dataset.bias_alignment must lie in [0, 1]");
    }
    if (!(target_snr > 0.0) || !(bias_snr > 0.0)) throw ConfigError("dataset snr values must be positive");
}

std::uint64_t SyntheticSpec::fingerprint() const {
    Fnv1a h;
    for (std::size_t v : {n_train, n_id_test, n_ood_test, k, d_target, d_bias, d_noise}) h.update_value(v);
    for (double v : {bias_alignment, target_snr, bias_snr}) h.update_value(v);
    h.update_value(seed);
    return h.digest();
}

Dataset::Dataset(std::size_t k, std::size_t feature_dim) : k_(k), feature_dim_(feature_dim) {
    if (k < 2) throw ConfigError("Dataset needs k >= 2");
    if (feature_dim == 0) throw ConfigError("Dataset needs a positive feature dimension");
}

void Dataset::add(const Example& example) {
    if (example.features.size() != feature_dim_) throw ShapeError("Dataset::add: feature length mismatch");
    if (example.label >= k_) throw LabelError("Dataset::add: label out of range");
    features_.insert(features_.end(), example.features.begin(), example.features.end());
    labels_.push_back(example.label);
    aligned_.push_back(example.bias_aligned.value_or(false) ? 1 : 0);
    if (!example.bias_aligned) has_flags_ = false;
}

std::vector<std::size_t> Dataset::class_counts() const {
    std::vector<std::size_t> counts(k_, 0);
    for (std::size_t y : labels_) ++counts[y];
    return counts;
}

std::uint64_t Dataset::content_fingerprint() const {
    Fnv1a h;
    h.update_value(k_);
    h.update_value(feature_dim_);
    h.update_span(std::span<const std::size_t>(labels_));
    h.update_span(std::span<const double>(features_));
    h.update_value(has_flags_);
    h.update_span(std::span<const std::uint8_t>(aligned_));
    return h.digest();
}

namespace {

Dataset generate_split(const SyntheticSpec& spec, std::size_t n, double alignment, std::uint32_t tag) {
    std::mt19937_64 engine = make_engine(spec.seed, {0x6461u, tag});
    std::uniform_int_distribution<std::size_t> pick_label(0, spec.k - 1);
    std::uniform_int_distribution<std::size_t> pick_other(0, spec.k - 2);
    std::bernoulli_distribution aligned_draw(alignment);
    std::normal_distribution<double> noise(0.0, 1.0);

    Dataset ds(spec.k, spec.feature_dim());
    ds.set_provenance(spec.fingerprint());
    Example ex;
    ex.features.resize(spec.feature_dim());
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t label = pick_label(engine);
        const bool aligned = aligned_draw(engine);
        std::size_t bias_class = label;
        if (!aligned) {
            // uniform over the k-1 wrong classes
            bias_class = pick_other(engine);
            if (bias_class >= label) ++bias_class;
        }
        for (double& f : ex.features) f = noise(engine);
        ex.features[label % spec.d_target] += spec.target_snr;
        ex.features[spec.d_target + bias_class % spec.d_bias] += spec.bias_snr;
        ex.label = label;
        ex.bias_aligned = aligned;
        ds.add(ex);
    }
    return ds;
}

} // namespace

DatasetBundle generate(const SyntheticSpec& spec) {
    spec.validate();
    const double chance = 1.0 / static_cast<double>(spec.k);
    return DatasetBundle{
        generate_split(spec, spec.n_train, spec.bias_alignment, 1),
        generate_split(spec, spec.n_id_test, spec.bias_alignment, 2),
        generate_split(spec, spec.n_ood_test, chance, 3),
    };
}

GroupPartition group_partition(const Dataset& ds) {
    if (!ds.has_flags_) throw UnsupportedDatasetError("dataset carries no bias-alignment flags");
    GroupPartition part;
    for (std::size_t i = 0; i < ds.size(); ++i) {
        (ds.aligned_[i] ? part.biased : part.bias_conflicting).push_back(i);
    }
    return part;
}

void write_csv(const Dataset& ds, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot open " + path.string() + " for writing");
    for (std::size_t j = 0; j < ds.feature_dim(); ++j) out << 'f' << j << ',';
    out << "label,bias_aligned\n";
    out << std::setprecision(17);
    for (std::size_t i = 0; i < ds.size(); ++i) {
        for (double f : ds.features(i)) out << f << ',';
        out << ds.label(i) << ',';
        if (ds.has_flags_) out << static_cast<int>(ds.aligned_[i]);
        out << '\n';
    }
    if (!out) throw ConfigError("failed writing " + path.string());
}

Dataset read_csv(const std::filesystem::path& path, std::optional<std::size_t> k) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw ConfigError(path.string() + ": empty file");

    std::size_t columns = 1;
    for (char c : line) columns += c == ',' ? 1 : 0;
    if (columns < 3 || line.rfind(",label,bias_aligned") != line.size() - 19) {
        throw ConfigError(path.string() + ": header must end with label,bias_aligned");
    }
    const std::size_t dim = columns - 2;

    std::vector<Example> rows;
    std::size_t max_label = 0;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        if (!line.empty() && line.back() == ',') cells.emplace_back();
        if (cells.size() != columns) {
            throw ConfigError(path.string() + ":" + std::to_string(line_no) + ": expected " +
                              std::to_string(columns) + " cells");
        }
        Example ex;
        ex.features.reserve(dim);
        try {
            for (std::size_t j = 0; j < dim; ++j) ex.features.push_back(std::stod(cells[j]));
            ex.label = static_cast<std::size_t>(std::stoul(cells[dim]));
        } catch (const std::exception&) {
            throw ConfigError(path.string() + ":" + std::to_string(line_no) + ": malformed number");
        }
        const std::string& flag = cells[dim + 1];
        if (flag == "1") ex.bias_aligned = true;
        else if (flag == "0") ex.bias_aligned = false;
        else if (!flag.empty()) throw ConfigError(path.string() + ":" + std::to_string(line_no) + ": bad flag");
        max_label = std::max(max_label, ex.label);
        rows.push_back(std::move(ex));
    }
    const std::size_t classes = k.value_or(std::max<std::size_t>(2, max_label + 1));
    Dataset ds(classes, dim);
    for (const Example& ex : rows) ds.add(ex);
    ds.set_provenance(ds.content_fingerprint());
    return ds;
}

} // namespace bexp
