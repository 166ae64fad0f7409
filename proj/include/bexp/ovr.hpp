#pragma once

#include "bexp/datagen.hpp"

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace bexp {

enum class BalanceStrategy { reweight, oversample, undersample, none };

std::string to_string(BalanceStrategy s);
BalanceStrategy parse_balance(const std::string& name);

struct BalanceConfig {
    BalanceStrategy strategy = BalanceStrategy::reweight;
    std::uint64_t seed = 0;
};

// Target-vs-rest projection of a k-class dataset. Per-example arrays are
// indexed by source example id; active_indices lists the ids (possibly
// repeated, always sorted) that training iterates over. The source dataset
// must outlive the view.
class BinaryView {
public:
    BinaryView(const Dataset& source, std::size_t target_class);

    const Dataset& source() const noexcept { return *source_; }
    std::size_t target_class() const noexcept { return target_; }
    std::size_t size() const noexcept { return binary_label_.size(); }

    bool is_positive(std::size_t id) const { return binary_label_[id] != 0; }
    double sample_weight(std::size_t id) const { return sample_weight_[id]; }
    const std::vector<std::size_t>& active_indices() const noexcept { return active_; }

    // Counts over active_indices (duplicates counted).
    std::size_t active_positives() const noexcept { return active_pos_; }
    std::size_t active_negatives() const noexcept { return active_.size() - active_pos_; }

    BalanceStrategy strategy() const noexcept { return strategy_; }

private:
    friend BinaryView apply_balance(const BinaryView&, const BalanceConfig&);
    void recount();

    const Dataset* source_;
    std::size_t target_;
    std::vector<std::uint8_t> binary_label_;
    std::vector<double> sample_weight_;
    std::vector<std::size_t> active_;
    std::size_t active_pos_ = 0;
    BalanceStrategy strategy_ = BalanceStrategy::none;
};

std::vector<BinaryView> split_ovr(const Dataset& ds);

// reweight:    all ids active, positives weighted (k-1)/k, negatives 1/k
// oversample:  minority side repeated by whole copies plus a seeded remainder
// undersample: majority side reduced to the minority count without replacement
// none:        weights 1, all ids active
BinaryView apply_balance(const BinaryView& view, const BalanceConfig& config);

} // namespace bexp
