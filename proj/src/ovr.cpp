#include "bexp/ovr.hpp"

#include "bexp/error.hpp"
#include "bexp/util.hpp"

#include <algorithm>
#include <random>

namespace bexp {

std::string to_string(BalanceStrategy s) {
    switch (s) {
    case BalanceStrategy::reweight: return "reweight";
    case BalanceStrategy::oversample: return "oversample";
    case BalanceStrategy::undersample: return "undersample";
    case BalanceStrategy::none: return "none";
    }
    return "none";
}

BalanceStrategy parse_balance(const std::string& name) {
    if (name == "reweight") return BalanceStrategy::reweight;
    if (name == "oversample") return BalanceStrategy::oversample;
    if (name == "undersample") return BalanceStrategy::undersample;
    if (name == "none") return BalanceStrategy::none;
    throw ConfigError("unknown balance strategy '" + name + "'");
}

BinaryView::BinaryView(const Dataset& source, std::size_t target_class)
    : source_(&source), target_(target_class) {
    if (target_class >= source.k()) throw LabelError("BinaryView: target class out of range");
    binary_label_.resize(source.size());
    for (std::size_t i = 0; i < source.size(); ++i) binary_label_[i] = source.label(i) == target_class ? 1 : 0;
    sample_weight_.assign(source.size(), 1.0);
    active_.resize(source.size());
    for (std::size_t i = 0; i < source.size(); ++i) active_[i] = i;
    recount();
}

void BinaryView::recount() {
    active_pos_ = 0;
    for (std::size_t id : active_) active_pos_ += binary_label_[id];
}

std::vector<BinaryView> split_ovr(const Dataset& ds) {
    std::vector<BinaryView> views;
    views.reserve(ds.k());
    for (std::size_t c = 0; c < ds.k(); ++c) views.emplace_back(ds, c);
    return views;
}

namespace {

std::vector<std::size_t> sample_without_replacement(std::vector<std::size_t> pool, std::size_t count,
                                                    std::mt19937_64& engine) {
    std::vector<std::size_t> out;
    out.reserve(count);
    std::sample(pool.begin(), pool.end(), std::back_inserter(out), count, engine);
    return out;
}

} // namespace

BinaryView apply_balance(const BinaryView& view, const BalanceConfig& config) {
    BinaryView out(view.source(), view.target_class());
    out.strategy_ = config.strategy;

    std::vector<std::size_t> positives;
    std::vector<std::size_t> negatives;
    for (std::size_t i = 0; i < out.size(); ++i) (out.is_positive(i) ? positives : negatives).push_back(i);

    const double k = static_cast<double>(view.source().k());
    std::mt19937_64 engine = make_engine(config.seed, {0x6f76u, static_cast<std::uint32_t>(view.target_class())});

    switch (config.strategy) {
    case BalanceStrategy::none:
        break;
    case BalanceStrategy::reweight:
        for (std::size_t i = 0; i < out.size(); ++i) {
            out.sample_weight_[i] = out.is_positive(i) ? (k - 1.0) / k : 1.0 / k;
        }
        break;
    case BalanceStrategy::oversample: {
        if (positives.empty() || negatives.empty()) {
            throw DegenerateClassError("oversample: class " + std::to_string(view.target_class()) +
                                       " has an empty side");
        }
        const bool pos_minor = positives.size() < negatives.size();
        std::vector<std::size_t>& minority = pos_minor ? positives : negatives;
        const std::size_t target = std::max(positives.size(), negatives.size());
        const std::size_t copies = target / minority.size();
        const std::size_t remainder = target % minority.size();
        std::vector<std::size_t> expanded;
        expanded.reserve(target);
        for (std::size_t c = 0; c < copies; ++c) expanded.insert(expanded.end(), minority.begin(), minority.end());
        const auto extra = sample_without_replacement(minority, remainder, engine);
        expanded.insert(expanded.end(), extra.begin(), extra.end());
        minority = std::move(expanded);
        out.active_ = positives;
        out.active_.insert(out.active_.end(), negatives.begin(), negatives.end());
        std::sort(out.active_.begin(), out.active_.end());
        break;
    }
    case BalanceStrategy::undersample: {
        if (positives.empty() || negatives.empty()) {
            throw DegenerateClassError("undersample: class " + std::to_string(view.target_class()) +
                                       " has an empty side");
        }
        const std::size_t target = std::min(positives.size(), negatives.size());
        if (positives.size() > target) positives = sample_without_replacement(positives, target, engine);
        if (negatives.size() > target) negatives = sample_without_replacement(negatives, target, engine);
        out.active_ = positives;
        out.active_.insert(out.active_.end(), negatives.begin(), negatives.end());
        std::sort(out.active_.begin(), out.active_.end());
        break;
    }
    }
    out.recount();
    return out;
}

} // namespace bexp
