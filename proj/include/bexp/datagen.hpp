#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace bexp {

// Synthetic k-class data with three feature blocks:
//   target block  one-hot(label) * target_snr + N(0, 1)   (predictive everywhere)
//   bias block    one-hot(b) * bias_snr + N(0, 1)         (b == label with prob. bias_alignment)
//   noise block   N(0, 1)
// A one-hot position is `class % block_width`, so blocks narrower than k alias classes.
struct SyntheticSpec {
    std::size_t n_train = 12000;
    std::size_t n_id_test = 3000;
    std::size_t n_ood_test = 3000;
    std::size_t k = 3;
    std::size_t d_target = 4;
    std::size_t d_bias = 4;
    std::size_t d_noise = 8;
    double bias_alignment = 0.95;
    double target_snr = 1.0;
    double bias_snr = 2.0;
    std::uint64_t seed = 0;

    std::size_t feature_dim() const noexcept { return d_target + d_bias + d_noise; }
    void validate() const;
    std::uint64_t fingerprint() const;
    bool operator==(const SyntheticSpec&) const = default;
};

struct Example {
    std::vector<double> features;
    std::size_t label = 0;
    std::optional<bool> bias_aligned;
};

class Dataset {
public:
    Dataset(std::size_t k, std::size_t feature_dim);

    void add(const Example& example);

    std::size_t size() const noexcept { return labels_.size(); }
    bool empty() const noexcept { return labels_.empty(); }
    std::size_t k() const noexcept { return k_; }
    std::size_t feature_dim() const noexcept { return feature_dim_; }

    std::span<const double> features(std::size_t i) const {
        return {features_.data() + i * feature_dim_, feature_dim_};
    }
    std::size_t label(std::size_t i) const { return labels_[i]; }
    std::span<const std::size_t> labels() const noexcept { return labels_; }
    std::vector<std::size_t> class_counts() const;

    // Alignment flags exist only for generated data; training code never reads them.
    bool has_alignment_flags() const noexcept { return has_flags_; }

    std::uint64_t provenance() const noexcept { return provenance_; }
    void set_provenance(std::uint64_t hash) noexcept { provenance_ = hash; }

    // Hash over k, labels, features and flags.
    std::uint64_t content_fingerprint() const;

private:
    friend struct GroupPartition group_partition(const Dataset&);
    friend void write_csv(const Dataset&, const std::filesystem::path&);

    std::size_t k_;
    std::size_t feature_dim_;
    std::vector<double> features_;
    std::vector<std::size_t> labels_;
    std::vector<std::uint8_t> aligned_;
    bool has_flags_ = true;
    std::uint64_t provenance_ = 0;
};

struct DatasetBundle {
    Dataset train;
    Dataset id_test;
    Dataset ood_test;
};

// The out-of-distribution split is always drawn with alignment exactly 1/k.
DatasetBundle generate(const SyntheticSpec& spec);

struct GroupPartition {
    std::vector<std::size_t> biased;
    std::vector<std::size_t> bias_conflicting;
};

GroupPartition group_partition(const Dataset& ds);

// CSV with header f0..f{D-1},label,bias_aligned and 17 significant digits.
// An empty bias_aligned cell marks an example without a flag.
void write_csv(const Dataset& ds, const std::filesystem::path& path);
Dataset read_csv(const std::filesystem::path& path, std::optional<std::size_t> k = std::nullopt);

} // namespace bexp
