#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "lfnn/hierarchy.hpp"
#include "lfnn/layers.hpp"
#include "support/oracles.hpp"

using namespace lfnn;
using lfnn::testing::random_tensor;

namespace {

// leader set by sorting (loss, index) pairs
std::vector<std::size_t> full_sort_leaders(const std::vector<double> &loss, std::size_t k) {
    std::vector<std::pair<double, std::size_t>> v;
    for (std::size_t i = 0; i < loss.size(); ++i) v.emplace_back(loss[i], i);
    std::sort(v.begin(), v.end());
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < k; ++i) out.push_back(v[i].second);
    std::sort(out.begin(), out.end());
    return out;
}

}  // namespace

TEST(Partition, SlicesAreContiguous) {
    Tensor<double> out({1, 6}, {0, 1, 2, 3, 4, 5});
    const auto s = worker_outputs(out, WorkerPartition{0, WorkerKind::neuron_wise, 3, 2});
    ASSERT_EQ(s.size(), 3u);
    EXPECT_EQ(s[0], Tensor<double>({1, 2}, {0, 1}));
    EXPECT_EQ(s[1], Tensor<double>({1, 2}, {2, 3}));
    EXPECT_EQ(s[2], Tensor<double>({1, 2}, {4, 5}));
    const auto one = worker_outputs(out, WorkerPartition{0, WorkerKind::neuron_wise, 1, 6});
    EXPECT_EQ(one[0], out);
    EXPECT_THROW(worker_outputs(out, WorkerPartition{0, WorkerKind::neuron_wise, 4, 2}), DimensionError);
}

TEST(Partition, SlicesReconstructOutput) {
    Rng rng(1);
    for (int trial = 0; trial < 30; ++trial) {
        const std::size_t n = 1 + rng.below(6), w = 1 + rng.below(4), B = 1 + rng.below(3);
        const auto t = random_tensor(rng, {B, n * w});
        const auto s = worker_outputs(t, WorkerPartition{0, WorkerKind::neuron_wise, n, w});
        Tensor<double> back({B, n * w});
        for (std::size_t k = 0; k < n; ++k)
            for (std::size_t b = 0; b < B; ++b)
                for (std::size_t j = 0; j < w; ++j) back(b, k * w + j) = s[k](b, j);
        EXPECT_EQ(back, t);
    }
}

TEST(Partition, FilterWiseSlicesArePooled) {
    Rng rng(2);
    const auto maps = random_tensor(rng, {2, 4, 3, 3});
    const auto s = worker_outputs(maps, WorkerPartition{0, WorkerKind::filter_wise, 2, 2});
    const auto pooled = global_avg_pool(maps);
    EXPECT_DOUBLE_EQ(s[1](1, 0), pooled(1, 2));
}

TEST(PredictionLoss, Examples) {
    const std::vector<int> one{1};
    EXPECT_NEAR(worker_prediction_loss(Tensor<double>({1, 1}, {0.5}), one, Head::sigmoid_bce), std::log(2.0), 1e-12);
    const std::vector<int> cls{2};
    EXPECT_LE(worker_prediction_loss(Tensor<double>({1, 3}, {0, 0, 1}), cls, Head::softmax_ce), 1e-6);
    // clipping keeps a confidently wrong prediction finite
    EXPECT_TRUE(std::isfinite(worker_prediction_loss(Tensor<double>({1, 3}, {1, 0, 0}), cls, Head::softmax_ce)));
    EXPECT_THROW(worker_prediction_loss(Tensor<double>({1, 2}, {0.5, 0.5}), one, Head::sigmoid_bce), DimensionError);
}

TEST(PredictionLoss, MatchesDirectFormula) {
    Rng rng(3);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t B = 1 + rng.below(8), K = 2 + rng.below(5);
        Tensor<double> p({B, K});
        std::vector<int> labels(B);
        double ce = 0;
        for (std::size_t b = 0; b < B; ++b) {
            std::vector<double> z(K);
            for (auto &v : z) v = rng.uniform(-3, 3);
            const auto s = lfnn::testing::direct_softmax(z);
            for (std::size_t k = 0; k < K; ++k) p(b, k) = s[k];
            labels[b] = static_cast<int>(rng.below(K));
            ce -= std::log(s[static_cast<std::size_t>(labels[b])]);
        }
        EXPECT_NEAR(worker_prediction_loss(p, labels, Head::softmax_ce), ce / static_cast<double>(B), 1e-9);

        Tensor<double> q({B, 1});
        double bce = 0;
        for (std::size_t b = 0; b < B; ++b) {
            q[b] = rng.uniform(0.01, 0.99);
            labels[b] = static_cast<int>(rng.below(2));
            bce -= labels[b] ? std::log(q[b]) : std::log(1 - q[b]);
        }
        EXPECT_NEAR(worker_prediction_loss(q, labels, Head::sigmoid_bce), bce / static_cast<double>(B), 1e-9);
    }
}

TEST(LeaderCount, Examples) {
    EXPECT_EQ(leader_count(0.2, 32), 6u);
    EXPECT_EQ(leader_count(1.0, 17), 17u);
    EXPECT_EQ(leader_count(0.3, 32), 10u);
    EXPECT_EQ(leader_count(0.0, 5), 1u);
    EXPECT_EQ(leader_count(0.5, 5), 2u);   // 2.5 rounds to even
    EXPECT_EQ(leader_count(0.5, 7), 4u);   // 3.5 rounds to even
    EXPECT_EQ(leader_count(0.25, 2), 1u);  // 0.5 rounds to 0, floor of one leader
}

TEST(SelectLeaders, Examples) {
    const std::vector<double> l{0.3, 0.1, 0.5, 0.2};
    const auto a = select_leaders(l, 0.5);
    EXPECT_EQ(a.leader_indices, (std::vector<std::size_t>{1, 3}));
    EXPECT_EQ(a.best_leader, 1u);
    EXPECT_EQ(a.followers(), (std::vector<std::size_t>{0, 2}));

    const std::vector<double> eq(4, 0.7);
    const auto b = select_leaders(eq, 0.5);
    EXPECT_EQ(b.leader_indices, (std::vector<std::size_t>{0, 1}));
    EXPECT_EQ(b.best_leader, 0u);

    EXPECT_THROW(select_leaders(std::vector<double>{}, 0.5), std::invalid_argument);
    EXPECT_THROW(select_leaders(std::vector<double>{0.1, NAN}, 0.5), std::invalid_argument);
}

TEST(SelectLeaders, MatchesFullSortOracleAndDominance) {
    Rng rng(4);
    for (int trial = 0; trial < 2000; ++trial) {
        const std::size_t n = 1 + rng.below(40);
        const double delta = rng.uniform();
        std::vector<double> loss(n);
        // coarse values force ties
        for (auto &v : loss) v = static_cast<double>(rng.below(6)) * 0.25;
        const auto a = select_leaders(loss, delta);
        EXPECT_EQ(a.leader_indices, full_sort_leaders(loss, leader_count(delta, n)));
        double max_leader = -1, min_follower = 1e9;
        for (auto i : a.leader_indices) max_leader = std::max(max_leader, loss[i]);
        for (auto i : a.followers()) min_follower = std::min(min_follower, loss[i]);
        EXPECT_LE(max_leader, min_follower);
        EXPECT_TRUE(a.is_leader(a.best_leader));
        EXPECT_EQ(loss[a.best_leader], *std::min_element(loss.begin(), loss.end()));
    }
}

TEST(SelectLeaders, PermutationEquivariant) {
    Rng rng(5);
    for (int trial = 0; trial < 300; ++trial) {
        const std::size_t n = 2 + rng.below(30);
        std::vector<double> loss(n);
        for (auto &v : loss) v = rng.uniform();  // distinct with probability 1
        std::vector<std::size_t> perm(n);
        std::iota(perm.begin(), perm.end(), std::size_t{0});
        rng.shuffle(perm.begin(), perm.end());
        std::vector<double> permuted(n);
        for (std::size_t i = 0; i < n; ++i) permuted[perm[i]] = loss[i];
        const double delta = rng.uniform();
        const auto a = select_leaders(loss, delta), b = select_leaders(permuted, delta);
        std::vector<std::size_t> mapped;
        for (auto i : a.leader_indices) mapped.push_back(perm[i]);
        std::sort(mapped.begin(), mapped.end());
        EXPECT_EQ(mapped, b.leader_indices);
        EXPECT_EQ(perm[a.best_leader], b.best_leader);
    }
}

TEST(Alignment, Examples) {
    const Tensor<double> leader({1, 1}, {1.0});
    const std::vector<Tensor<double>> same{leader};
    EXPECT_EQ(follower_alignment_loss<double>(same, leader), 0.0);
    const std::vector<Tensor<double>> zero{Tensor<double>({1, 1}, {0.0})};
    EXPECT_DOUBLE_EQ(follower_alignment_loss<double>(zero, leader), 1.0);
    EXPECT_EQ(follower_alignment_loss<double>(std::vector<Tensor<double>>{}, leader), 0.0);
    const std::vector<Tensor<double>> bad{Tensor<double>({1, 2})};
    EXPECT_THROW(follower_alignment_loss<double>(bad, leader), DimensionError);
}

TEST(Alignment, MatchesDirectFormula) {
    Rng rng(6);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t B = 1 + rng.below(5), W = 1 + rng.below(4), F = 1 + rng.below(5);
        const auto ref = random_tensor(rng, {B, W});
        std::vector<Tensor<double>> fs;
        double total = 0;
        for (std::size_t f = 0; f < F; ++f) {
            fs.push_back(random_tensor(rng, {B, W}));
            double s = 0;
            for (std::size_t i = 0; i < B * W; ++i) s += std::pow(fs.back()[i] - ref[i], 2);
            total += s / static_cast<double>(B * W);
        }
        EXPECT_NEAR(follower_alignment_loss<double>(fs, ref), total / static_cast<double>(F), 1e-9);
    }
}

TEST(Alignment, GradientStepDecreasesLoss) {
    // one step on a sigmoid follower, fixed input and fixed leader output
    Rng rng(7);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t B = 4, in = 3;
        DenseLayer<double> f{random_tensor(rng, {1, in}), random_tensor(rng, {1}), Activation::sigmoid, 1};
        const auto x = random_tensor(rng, {B, in});
        const auto ref = random_tensor(rng, {B, 1}, 0, 1);
        const auto y = dense_forward(f, x);
        const std::vector<Tensor<double>> before{y};
        const double l0 = follower_alignment_loss<double>(before, ref);
        const auto dy = follower_alignment_output_grad(y, ref, 1);
        const auto g = dense_local_grad(f, x, activation_backward(y, dy, Activation::sigmoid));
        for (std::size_t i = 0; i < in; ++i) f.weights[i] -= 0.1 * g.d_weights[i] * static_cast<double>(B);
        f.bias[0] -= 0.1 * g.d_bias[0] * static_cast<double>(B);
        const std::vector<Tensor<double>> after{dense_forward(f, x)};
        if (l0 > 1e-12) {
            EXPECT_LT(follower_alignment_loss<double>(after, ref), l0);
        }
    }
}

TEST(Compose, Examples) {
    EXPECT_EQ(compose_loss_bp(1, 2, 3, 1, 1).total, 6.0);
    EXPECT_EQ(compose_loss_bp(1.5, 2, 3, 0, 0).total, 1.5);
    EXPECT_EQ(compose_loss_bpfree(1, 1, 1, 1).total, 3.0);
    const auto b = compose_loss_bpfree(0.5, 0.25, 4, 0);
    EXPECT_EQ(b.total, 0.75);
    EXPECT_EQ(b.follower_align, 4.0);
}

TEST(Compose, TotalsReproducibleFromComponents) {
    Rng rng(8);
    for (int trial = 0; trial < 200; ++trial) {
        const double g = rng.uniform(0, 5), l = rng.uniform(0, 5), f = rng.uniform(0, 5);
        const double a = rng.uniform(0, 2), c = rng.uniform(0, 2);
        EXPECT_EQ(compose_loss_bp(g, l, f, a, c).total, g + a * l + c * f);
        EXPECT_EQ(compose_loss_bpfree(g, l, f, a).total, g + l + a * f);
    }
}

TEST(Ablation, Variants) {
    EXPECT_EQ(ablation_variant(Ablation::L1), (LossWeights{1, 1}));
    EXPECT_EQ(ablation_variant(Ablation::L2), (LossWeights{1, 0}));
    EXPECT_EQ(ablation_variant(Ablation::L3), (LossWeights{0, 1}));
    EXPECT_EQ(ablation_variant(Ablation::L4), (LossWeights{0, 0}));
    const auto w = ablation_variant(Ablation::L1);
    EXPECT_EQ(compose_loss_bp(1, 2, 3, w.lambda1, w.lambda2).total, compose_loss_bp(1, 2, 3, 1, 1).total);
    EXPECT_THROW(ablation_variant(Ablation::L2, TrainMode::lfnn_local), std::invalid_argument);
}
