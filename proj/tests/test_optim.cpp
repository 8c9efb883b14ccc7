#include <gtest/gtest.h>

#include <cmath>

#include "lfnn/optim.hpp"
#include "support/oracles.hpp"

using namespace lfnn;

TEST(Adam, ZeroGradientLeavesParameter) {
    Tensor<double> p({3}, {1, -2, 3});
    const auto before = p;
    AdamState<double> s;
    adam_update(p, Tensor<double>({3}), s, 0.1);
    EXPECT_EQ(p, before);
    EXPECT_EQ(s.t, 1u);
}

TEST(Adam, FirstStepHasMagnitudeLr) {
    Tensor<double> p({4}, {0, 0, 0, 0});
    AdamState<double> s;
    adam_update(p, Tensor<double>({4}, {3, -0.01, 1e3, -7}), s, 1e-3);
    for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(std::abs(p[i]), 1e-3, 1e-8);
    EXPECT_LT(p[0], 0);
    EXPECT_GT(p[1], 0);
}

TEST(Adam, MatchesHandTrace) {
    // scalar recurrences written out directly
    Rng rng(1);
    Tensor<double> p({5});
    for (auto &v : p.data()) v = rng.uniform(-1, 1);
    std::vector<double> ref(p.data().begin(), p.data().end()), m(5, 0), v(5, 0);
    AdamState<double> s;
    const double lr = 0.01, b1 = 0.9, b2 = 0.999, eps = 1e-8;
    for (int t = 1; t <= 10; ++t) {
        Tensor<double> g({5});
        for (auto &x : g.data()) x = rng.uniform(-2, 2);
        adam_update(p, g, s, lr, b1, b2, eps);
        for (std::size_t i = 0; i < 5; ++i) {
            m[i] = b1 * m[i] + (1 - b1) * g[i];
            v[i] = b2 * v[i] + (1 - b2) * g[i] * g[i];
            const double mh = m[i] / (1 - std::pow(b1, t)), vh = v[i] / (1 - std::pow(b2, t));
            ref[i] -= lr * mh / (std::sqrt(vh) + eps);
        }
        for (std::size_t i = 0; i < 5; ++i) EXPECT_NEAR(p[i], ref[i], 1e-10);
        EXPECT_EQ(s.t, static_cast<std::uint64_t>(t));
        EXPECT_EQ(s.m.shape(), p.shape());
    }
}

TEST(Adam, ConvergesOnConvexQuadratic) {
    // f(x) = 0.5 * sum a_i (x_i - c_i)^2
    const std::vector<double> a{1, 4, 0.5}, c{2, -1, 0.3};
    Tensor<double> x({3});
    AdamState<double> s;
    double gnorm = 1;
    for (int it = 0; it < 20000 && gnorm >= 1e-6; ++it) {
        Tensor<double> g({3});
        gnorm = 0;
        for (std::size_t i = 0; i < 3; ++i) {
            g[i] = a[i] * (x[i] - c[i]);
            gnorm += g[i] * g[i];
        }
        gnorm = std::sqrt(gnorm);
        const double lr = it < 2000 ? 0.05 : 0.005;
        adam_update(x, g, s, lr);
    }
    EXPECT_LT(gnorm, 1e-6);
}

TEST(Adam, ShapeMismatchThrows) {
    Tensor<double> p({2});
    AdamState<double> s;
    EXPECT_THROW(adam_update(p, Tensor<double>({3}), s, 0.1), DimensionError);
}

TEST(Sgd, Step) {
    Tensor<double> p({2}, {1, 1});
    sgd_update(p, Tensor<double>({2}, {0.5, -1}), 0.1);
    EXPECT_DOUBLE_EQ(p[0], 0.95);
    EXPECT_DOUBLE_EQ(p[1], 1.1);
}

TEST(LayerOptimizer, DispatchesOnKind) {
    Tensor<double> w({1}, {0}), b({1}, {0});
    LayerOptimizer<double> o;
    OptimizerConfig sgd{OptimizerKind::sgd, 0.5};
    o.apply(sgd, w, b, Tensor<double>({1}, {1}), Tensor<double>({1}, {2}));
    EXPECT_DOUBLE_EQ(w[0], -0.5);
    EXPECT_DOUBLE_EQ(b[0], -1.0);
    OptimizerConfig adam;
    adam.lr = 0.01;
    o.apply(adam, w, b, Tensor<double>({1}, {1}), Tensor<double>({1}, {2}));
    EXPECT_NEAR(w[0], -0.51, 1e-9);
    EXPECT_EQ(o.weights.t, 1u);
}
