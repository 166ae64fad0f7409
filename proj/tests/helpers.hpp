#pragma once

#include "bexp/datagen.hpp"

#include <random>
#include <vector>

namespace testing {

// Dataset with counts[c] examples of class c and random features; flags alternate.
inline bexp::Dataset dataset_with_counts(const std::vector<std::size_t>& counts, std::size_t dim = 3,
                                         std::uint64_t seed = 1) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n01;
    bexp::Dataset ds(counts.size(), dim);
    std::size_t i = 0;
    for (std::size_t c = 0; c < counts.size(); ++c) {
        for (std::size_t j = 0; j < counts[c]; ++j, ++i) {
            bexp::Example ex;
            ex.features.resize(dim);
            for (double& v : ex.features) v = n01(rng);
            ex.label = c;
            ex.bias_aligned = (i % 2 == 0);
            ds.add(ex);
        }
    }
    return ds;
}

inline std::vector<double> random_vector(std::size_t n, std::mt19937_64& rng, double scale = 1.0) {
    std::normal_distribution<double> n01;
    std::vector<double> v(n);
    for (double& x : v) x = scale * n01(rng);
    return v;
}

inline bexp::SyntheticSpec small_spec(std::uint64_t seed = 0) {
    bexp::SyntheticSpec s;
    s.n_train = 1500;
    s.n_id_test = 500;
    s.n_ood_test = 500;
    s.seed = seed;
    return s;
}

} // namespace testing
