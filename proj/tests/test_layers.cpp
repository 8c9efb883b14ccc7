#include <gtest/gtest.h>

#include "lfnn/layers.hpp"
#include "support/gradient_suite.hpp"
#include "support/oracles.hpp"

using namespace lfnn;
using lfnn::testing::max_relative_error;
using lfnn::testing::naive_conv;
using lfnn::testing::random_tensor;

TEST(Dense, ForwardExample) {
    DenseLayer<double> l{Tensor<double>({1, 2}, {1, -1}), Tensor<double>({1}, {0.5}), Activation::identity, 1};
    const auto y = dense_forward(l, Tensor<double>({2, 2}, {3, 1, 0, 0}));
    EXPECT_DOUBLE_EQ(y[0], 2.5);
    EXPECT_DOUBLE_EQ(y[1], 0.5);
    l.activation = Activation::sigmoid;
    EXPECT_DOUBLE_EQ(dense_forward(l, Tensor<double>({1, 2}, {0.5, 1}))[0], 0.5);
}

TEST(Dense, InputWidthMismatchThrows) {
    Rng rng(1);
    const auto l = DenseLayer<double>::glorot(rng, 3, 2, Activation::identity);
    try {
        dense_forward(l, Tensor<double>({4, 5}));
        FAIL();
    } catch (const DimensionError &e) {
        EXPECT_NE(std::string(e.what()).find("[4x5]"), std::string::npos);
    }
}

TEST(Dense, LocalGradRequiresRecordedInput) {
    Rng rng(2);
    const auto l = DenseLayer<double>::glorot(rng, 3, 2, Activation::identity);
    EXPECT_THROW(dense_local_grad(l, Tensor<double>(), Tensor<double>({1, 2})), std::logic_error);
}

TEST(Dense, LocalGradMatchesFiniteDifferences) {
    for (std::uint64_t s = 0; s < 60; ++s) EXPECT_LT(lfnn::testing::dense_local_instance(s), 1e-4) << "seed " << s;
}

TEST(Dense, BackpropGradMatchesFiniteDifferences) {
    for (std::uint64_t s = 0; s < 60; ++s) EXPECT_LT(lfnn::testing::dense_backprop_instance(s), 1e-4) << "seed " << s;
}

TEST(Conv, IdentityKernelReproducesInput) {
    Rng rng(3);
    const auto x = random_tensor(rng, {2, 1, 4, 5});
    ConvLayer<double> c{Tensor<double>({1, 1, 1, 1}, {1.0}), Tensor<double>({1}), 1, 0, Activation::identity};
    EXPECT_LT(max_abs_diff(conv_forward(c, x), x), 1e-15);
}

TEST(Conv, ForwardMatchesDirectLoops) {
    Rng rng(4);
    for (int trial = 0; trial < 40; ++trial) {
        const std::size_t C = 1 + rng.below(3), H = 3 + rng.below(5), W = 3 + rng.below(5), F = 1 + rng.below(4);
        const std::size_t k = 1 + rng.below(3), stride = 1 + rng.below(2), pad = rng.below(2);
        ConvLayer<double> c{random_tensor(rng, {F, C, k, k}), random_tensor(rng, {F}), stride, pad,
                            Activation::identity};
        const auto x = random_tensor(rng, {2, C, H, W});
        EXPECT_LT(max_abs_diff(conv_forward(c, x), naive_conv(x, c.filters, c.bias, stride, pad)), 1e-12);
    }
}

TEST(Conv, OutputGeometry) {
    Rng rng(5);
    const auto c = ConvLayer<double>::glorot(rng, 3, 8, 3, 2, 1, Activation::relu);
    EXPECT_EQ(c.output_hw(32, 32), (std::pair<std::size_t, std::size_t>{16, 16}));
    const auto y = conv_forward(c, Tensor<double>({1, 3, 32, 32}));
    EXPECT_EQ(y.shape(), (Shape{1, 8, 16, 16}));
    EXPECT_THROW(conv_forward(c, Tensor<double>({1, 2, 32, 32})), DimensionError);
}

TEST(Conv, LocalGradMatchesFiniteDifferences) {
    for (std::uint64_t s = 0; s < 60; ++s) EXPECT_LT(lfnn::testing::conv_local_instance(s), 1e-4) << "seed " << s;
}

TEST(Conv, BackpropGradMatchesFiniteDifferences) {
    for (std::uint64_t s = 0; s < 60; ++s) EXPECT_LT(lfnn::testing::conv_backprop_instance(s), 1e-4) << "seed " << s;
}

TEST(Conv, InputGradIsAdjointOfForward) {
    // <conv(x) - bias, d> == <x, conv_input_grad(d)>
    Rng rng(6);
    for (int trial = 0; trial < 30; ++trial) {
        const std::size_t C = 1 + rng.below(3), H = 3 + rng.below(4), W = 3 + rng.below(4), F = 1 + rng.below(3);
        const std::size_t k = 1 + rng.below(3), stride = 1 + rng.below(2), pad = rng.below(2);
        ConvLayer<double> c{random_tensor(rng, {F, C, k, k}), Tensor<double>({F}), stride, pad, Activation::identity};
        const auto x = random_tensor(rng, {2, C, H, W});
        const auto y = conv_forward(c, x);
        const auto d = random_tensor(rng, y.shape());
        const auto dx = conv_input_grad(c, x.shape(), d);
        double lhs = 0, rhs = 0;
        for (std::size_t i = 0; i < y.size(); ++i) lhs += y[i] * d[i];
        for (std::size_t i = 0; i < x.size(); ++i) rhs += x[i] * dx[i];
        EXPECT_NEAR(lhs, rhs, 1e-10 * (1 + std::abs(lhs)));
    }
}

TEST(Pooling, AverageAndBackward) {
    const Tensor<double> x({1, 2, 2, 2}, {1, 2, 3, 4, -1, -1, -1, -1});
    const auto p = global_avg_pool(x);
    EXPECT_EQ(p.shape(), (Shape{1, 2}));
    EXPECT_DOUBLE_EQ(p[0], 2.5);
    EXPECT_DOUBLE_EQ(p[1], -1.0);
    const auto d = global_avg_pool_backward(Tensor<double>({1, 2}, {4, 8}), x.shape());
    for (std::size_t i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ(d[i], 1.0);
    for (std::size_t i = 4; i < 8; ++i) EXPECT_DOUBLE_EQ(d[i], 2.0);
}

TEST(Activation, BackwardIsJacobianProduct) {
    Rng rng(7);
    const auto z = random_tensor(rng, {3, 6}, -3, 3);
    const auto dy = random_tensor(rng, {3, 6});
    for (auto act : {Activation::identity, Activation::sigmoid, Activation::softmax_groups, Activation::relu}) {
        const std::size_t group = act == Activation::softmax_groups ? 3 : 1;
        const auto y = apply_activation(z, act, group);
        const auto dz = activation_backward(y, dy, act, group);
        // numeric Jacobian-vector product
        Tensor<double> num(z.shape());
        for (std::size_t i = 0; i < z.size(); ++i) {
            Tensor<double> up = z, down = z;
            up[i] += 1e-6;
            down[i] -= 1e-6;
            const auto yu = apply_activation(up, act, group), yd = apply_activation(down, act, group);
            double s = 0;
            for (std::size_t k = 0; k < z.size(); ++k) s += dy[k] * (yu[k] - yd[k]) / 2e-6;
            num[i] = s;
        }
        EXPECT_LT(max_relative_error(dz, num), 1e-6) << to_string(act);
    }
}
