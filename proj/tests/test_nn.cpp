#include "bexp/error.hpp"
#include "bexp/losses.hpp"
#include "bexp/nn.hpp"

#include "helpers.hpp"

#include <doctest.h>

#include <cmath>
#include <limits>

using namespace bexp;

namespace {

// Straight-line forward pass for a one-hidden-layer ReLU network.
std::vector<double> oracle_forward(const MlpModel& m, const std::vector<double>& x) {
    const auto dims = m.layer_dims();
    std::vector<double> h(dims[1]);
    for (std::size_t r = 0; r < dims[1]; ++r) {
        double s = m.bias(0, r);
        for (std::size_t c = 0; c < dims[0]; ++c) s += m.weight(0, r, c) * x[c];
        h[r] = s > 0 ? s : 0.0;
    }
    std::vector<double> out(dims[2]);
    for (std::size_t r = 0; r < dims[2]; ++r) {
        double s = m.bias(1, r);
        for (std::size_t c = 0; c < dims[1]; ++c) s += m.weight(1, r, c) * h[c];
        out[r] = s;
    }
    return out;
}

LossAndGrad squared_loss(std::span<const double> z) {
    LossAndGrad r;
    r.grad.resize(z.size());
    for (std::size_t i = 0; i < z.size(); ++i) {
        r.loss += 0.5 * (z[i] - 0.3) * (z[i] - 0.3);
        r.grad[i] = z[i] - 0.3;
    }
    return r;
}

LossAndGrad bce_loss(std::span<const double> z) {
    ScalarLoss s = sigmoid_bce(z[0], 1, 0.7);
    return {s.loss, {s.grad}};
}

} // namespace

TEST_SUITE("nn.forward") {
    TEST_CASE("zero parameters give zero logits") {
        MlpModel m = MlpModel::zeros({4, 5, 3});
        auto z = m.forward(std::vector<double>{1.0, -2.0, 3.0, 0.5});
        CHECK(z == std::vector<double>{0.0, 0.0, 0.0});
    }

    TEST_CASE("identity single layer returns the input") {
        MlpModel m = MlpModel::zeros({3, 3});
        for (std::size_t i = 0; i < 3; ++i) m.weight(0, i, i) = 1.0;
        std::vector<double> x{0.25, -1.5, 7.0};
        CHECK(m.forward(x) == x);
    }

    TEST_CASE("seeded two-layer model matches a hand-rolled matrix oracle") {
        std::mt19937_64 rng(11);
        MlpModel m({6, 7, 3}, 42);
        for (std::size_t l = 0; l < 2; ++l) {
            const auto dims = m.layer_dims();
            for (std::size_t r = 0; r < dims[l + 1]; ++r) m.bias(l, r) = 0.1 * static_cast<double>(r) - 0.2;
        }
        for (int trial = 0; trial < 5; ++trial) {
            auto x = testing::random_vector(6, rng);
            auto got = m.forward(x);
            auto want = oracle_forward(m, x);
            REQUIRE(got.size() == 3);
            for (std::size_t i = 0; i < 3; ++i) CHECK(std::abs(got[i] - want[i]) <= 1e-12);
        }
    }

    TEST_CASE("parameter layout and count") {
        MlpModel m({4, 5, 3}, 1);
        CHECK(m.parameter_count() == 4 * 5 + 5 + 5 * 3 + 3);
        std::vector<std::size_t> dims{4, 5, 3};
        CHECK(MlpModel::parameter_count_for(dims) == m.parameter_count());
        CHECK(m.weight_offset(0) == 0);
        CHECK(m.bias_offset(0) == 20);
        CHECK(m.weight_offset(1) == 25);
        m.weight(1, 2, 4) = 9.0;
        CHECK(m.parameters()[25 + 2 * 5 + 4] == 9.0);
    }

    TEST_CASE("initialization respects the fan-in bound and zero biases") {
        MlpModel m({10, 4, 2}, 3);
        for (std::size_t r = 0; r < 4; ++r) {
            CHECK(m.bias(0, r) == 0.0);
            for (std::size_t c = 0; c < 10; ++c) CHECK(std::abs(m.weight(0, r, c)) <= 1.0 / std::sqrt(10.0));
        }
    }

    TEST_CASE("same seed gives identical parameters, different seeds differ") {
        MlpModel a({5, 8, 3}, 9), b({5, 8, 3}, 9), c({5, 8, 3}, 10);
        CHECK(a.fingerprint() == b.fingerprint());
        CHECK(a.fingerprint() != c.fingerprint());
    }

    TEST_CASE("shape and numeric errors") {
        CHECK_THROWS_AS(MlpModel({3}, 0), ConfigError);
        CHECK_THROWS_AS(MlpModel({3, 0, 2}, 0), ConfigError);
        MlpModel m({3, 2}, 0);
        CHECK_THROWS_AS(m.forward(std::vector<double>{1.0, 2.0}), ShapeError);
        m.parameters()[0] = std::numeric_limits<double>::quiet_NaN();
        CHECK_THROWS_AS(m.forward(std::vector<double>{1.0, 2.0, 3.0}), NumericError);
    }
}

TEST_SUITE("nn.backward") {
    TEST_CASE("zero upstream gradient gives zero gradients") {
        MlpModel m({4, 6, 3}, 5);
        ForwardCache cache;
        m.forward(std::vector<double>{1, 2, 3, 4}, cache);
        GradientBuffer g = m.backward(cache, std::vector<double>{0, 0, 0});
        for (double v : g.values()) CHECK(v == 0.0);
    }

    TEST_CASE("linear model: unit upstream selects the input as weight row") {
        MlpModel m({3, 2}, 5);
        std::vector<double> x{0.5, -1.0, 2.0};
        ForwardCache cache;
        m.forward(x, cache);
        GradientBuffer g = m.backward(cache, std::vector<double>{0.0, 1.0});
        for (std::size_t c = 0; c < 3; ++c) {
            CHECK(g[m.weight_offset(0) + 0 * 3 + c] == 0.0);
            CHECK(g[m.weight_offset(0) + 1 * 3 + c] == x[c]);
        }
        CHECK(g[m.bias_offset(0) + 1] == 1.0);
    }

    TEST_CASE("backward without a forward cache is a protocol error") {
        MlpModel m({3, 2}, 5);
        ForwardCache cache;
        CHECK_THROWS_AS(m.backward(cache, std::vector<double>{1.0, 0.0}), ProtocolError);
    }

    TEST_CASE("upstream length must match output") {
        MlpModel m({3, 2}, 5);
        ForwardCache cache;
        m.forward(std::vector<double>{1, 2, 3}, cache);
        CHECK_THROWS_AS(m.backward(cache, std::vector<double>{1.0}), ShapeError);
    }

    TEST_CASE("accumulate_backward adds into the buffer") {
        MlpModel m({3, 4, 2}, 8);
        ForwardCache cache;
        m.forward(std::vector<double>{1, -2, 3}, cache);
        std::vector<double> up{0.3, -0.7};
        GradientBuffer once = m.backward(cache, up);
        GradientBuffer twice(m.parameter_count());
        m.accumulate_backward(cache, up, twice);
        m.accumulate_backward(cache, up, twice);
        for (std::size_t i = 0; i < once.size(); ++i) CHECK(twice[i] == doctest::Approx(2 * once[i]).epsilon(1e-14));
    }

    TEST_CASE("seeded two-layer model matches central differences over 20 seeds") {
        for (std::uint64_t seed = 0; seed < 20; ++seed) {
            std::mt19937_64 rng(seed);
            MlpModel m({5, 6, 3}, seed);
            auto x = testing::random_vector(5, rng);
            auto up = testing::random_vector(3, rng);
            LogitLoss linear = [&](std::span<const double> z) {
                LossAndGrad r;
                for (std::size_t i = 0; i < z.size(); ++i) r.loss += z[i] * up[i];
                r.grad = up;
                return r;
            };
            CHECK(finite_difference_check(m, x, linear) < 1e-4);
        }
    }
}

TEST_SUITE("nn.finite_difference_check") {
    TEST_CASE("linear model with squared loss") {
        std::mt19937_64 rng(3);
        MlpModel m({4, 2}, 3);
        CHECK(finite_difference_check(m, testing::random_vector(4, rng), squared_loss) < 1e-6);
    }

    TEST_CASE("two-layer model with sigmoid BCE") {
        std::mt19937_64 rng(4);
        MlpModel m({4, 8, 1}, 4);
        CHECK(finite_difference_check(m, testing::random_vector(4, rng), bce_loss) < 1e-4);
    }

    TEST_CASE("a flipped sign in the analytic gradient is caught") {
        std::mt19937_64 rng(5);
        MlpModel m({4, 8, 1}, 5);
        auto x = testing::random_vector(4, rng);
        ForwardCache cache;
        auto z = m.forward(x, cache);
        LossAndGrad lg = bce_loss(z);
        GradientBuffer g = m.backward(cache, lg.grad);
        std::size_t largest = 0;
        for (std::size_t i = 0; i < g.size(); ++i) {
            if (std::abs(g[i]) > std::abs(g[largest])) largest = i;
        }
        std::vector<double> corrupted(g.values().begin(), g.values().end());
        corrupted[largest] = -corrupted[largest];
        auto numeric = numeric_gradient(m, x, bce_loss);
        CHECK(max_relative_error(g.values(), numeric) < 1e-4);
        CHECK(max_relative_error(corrupted, numeric) > 1e-1);
    }

    TEST_CASE("relative error uses the 1e-8 floor") {
        std::vector<double> a{0.0, 1e-12}, n{0.0, 0.0};
        CHECK(max_relative_error(a, n) == doctest::Approx(1e-4));
    }
}

TEST_SUITE("nn.optimizer") {
    TEST_CASE("zero gradient and zero weight decay is a fixed point") {
        MlpModel m({3, 4, 2}, 1);
        const auto before = std::vector<double>(m.parameters().begin(), m.parameters().end());
        OptimizerState st(m.parameter_count(), {0.1, 0.9, 0.999, 1e-8, 0.0});
        GradientBuffer g(m.parameter_count());
        for (int i = 0; i < 3; ++i) optimizer_step(m, g, st);
        CHECK(std::vector<double>(m.parameters().begin(), m.parameters().end()) == before);
        CHECK(st.step_count() == 3);
    }

    TEST_CASE("single scalar step moves against the gradient by at most lr") {
        MlpModel m = MlpModel::zeros({1, 1});
        m.weight(0, 0, 0) = 1.0;
        OptimizerState st(m.parameter_count(), {0.1, 0.9, 0.999, 1e-8, 0.0});
        GradientBuffer g(m.parameter_count());
        g[0] = 1.0;
        optimizer_step(m, g, st);
        const double dw = m.weight(0, 0, 0) - 1.0;
        CHECK(dw < 0.0);
        CHECK(std::abs(dw) <= 0.1);
    }

    TEST_CASE("three steps match a hand-stepped AdamW oracle") {
        const double lr = 0.05, b1 = 0.9, b2 = 0.999, eps = 1e-8, wd = 0.1;
        MlpModel m = MlpModel::zeros({1, 1});
        m.weight(0, 0, 0) = 0.8;
        m.bias(0, 0) = -0.3;
        OptimizerState st(m.parameter_count(), {lr, b1, b2, eps, wd});
        // gradients of 0.5*(w*x + b - y)^2 at x=2, y=1 evaluated at the current point
        double w = 0.8, b = -0.3, mw = 0, vw = 0, mb = 0, vb = 0;
        for (int t = 1; t <= 3; ++t) {
            const double r = w * 2.0 + b - 1.0;
            const double gw = r * 2.0, gb = r;
            GradientBuffer g(m.parameter_count());
            g[0] = gw;
            g[1] = gb;
            optimizer_step(m, g, st);

            mw = b1 * mw + (1 - b1) * gw;
            vw = b2 * vw + (1 - b2) * gw * gw;
            mb = b1 * mb + (1 - b1) * gb;
            vb = b2 * vb + (1 - b2) * gb * gb;
            const double c1 = 1 - std::pow(b1, t), c2 = 1 - std::pow(b2, t);
            w = w * (1 - lr * wd) - lr * (mw / c1) / (std::sqrt(vw / c2) + eps);
            b = b * (1 - lr * wd) - lr * (mb / c1) / (std::sqrt(vb / c2) + eps);
            CHECK(std::abs(m.weight(0, 0, 0) - w) <= 1e-10);
            CHECK(std::abs(m.bias(0, 0) - b) <= 1e-10);
            CHECK(st.step_count() == static_cast<std::uint64_t>(t));
        }
        CHECK(st.first_moment()[0] == doctest::Approx(mw));
        CHECK(st.second_moment()[1] == doctest::Approx(vb));
    }

    TEST_CASE("weight decay alone shrinks parameters multiplicatively") {
        MlpModel m = MlpModel::zeros({1, 1});
        m.weight(0, 0, 0) = 2.0;
        OptimizerState st(m.parameter_count(), {0.1, 0.9, 0.999, 1e-8, 0.5});
        optimizer_step(m, GradientBuffer(m.parameter_count()), st);
        CHECK(m.weight(0, 0, 0) == doctest::Approx(2.0 * (1 - 0.05)));
    }

    TEST_CASE("shape mismatch and bad hyperparameters are configuration errors") {
        MlpModel m({2, 2}, 0);
        OptimizerState st(m.parameter_count(), {});
        CHECK_THROWS_AS(optimizer_step(m, GradientBuffer(3), st), ConfigError);
        CHECK_THROWS_AS(OptimizerState(4, AdamWConfig{0.0}), ConfigError);
        CHECK_THROWS_AS(OptimizerState(4, AdamWConfig{1e-3, 1.0}), ConfigError);
        CHECK_THROWS_AS(OptimizerState(4, AdamWConfig{1e-3, 0.9, 0.999, 1e-8, -1.0}), ConfigError);
    }

    TEST_CASE("a tiny step never increases the batch loss") {
        for (std::uint64_t seed = 0; seed < 20; ++seed) {
            std::mt19937_64 rng(seed);
            MlpModel m({4, 6, 3}, seed);
            std::vector<std::vector<double>> xs;
            std::vector<std::size_t> ys;
            for (int i = 0; i < 8; ++i) {
                xs.push_back(testing::random_vector(4, rng));
                ys.push_back(static_cast<std::size_t>(i % 3));
            }
            auto batch_loss = [&](const MlpModel& model, GradientBuffer* g) {
                double total = 0.0;
                for (std::size_t i = 0; i < xs.size(); ++i) {
                    ForwardCache cache;
                    auto z = model.forward(xs[i], cache);
                    LossAndGrad lg = softmax_ce(z, ys[i]);
                    total += lg.loss;
                    if (g) model.accumulate_backward(cache, lg.grad, *g);
                }
                return total;
            };
            GradientBuffer g(m.parameter_count());
            const double before = batch_loss(m, &g);
            OptimizerState st(m.parameter_count(), {1e-6, 0.9, 0.999, 1e-8, 0.0});
            optimizer_step(m, g, st);
            CHECK(batch_loss(m, nullptr) <= before);
        }
    }

    TEST_CASE("identical runs give bit-identical parameters") {
        auto train = [] {
            MlpModel m({3, 5, 2}, 77);
            OptimizerState st(m.parameter_count(), {0.01});
            std::mt19937_64 rng(1);
            for (int i = 0; i < 25; ++i) {
                ForwardCache cache;
                auto z = m.forward(testing::random_vector(3, rng), cache);
                optimizer_step(m, m.backward(cache, softmax_ce(z, i % 2).grad), st);
            }
            return m.fingerprint();
        };
        CHECK(train() == train());
    }
}

TEST_SUITE("nn.gradient_buffer") {
    TEST_CASE("zero, scale and add") {
        GradientBuffer a(3), b(3);
        a[0] = 1.0;
        a[2] = -2.0;
        b[1] = 4.0;
        a += b;
        a.scale(0.5);
        CHECK(a[0] == 0.5);
        CHECK(a[1] == 2.0);
        CHECK(a[2] == -1.0);
        a.zero();
        for (double v : a.values()) CHECK(v == 0.0);
        GradientBuffer c(2);
        CHECK_THROWS_AS(a += c, ShapeError);
    }
}
