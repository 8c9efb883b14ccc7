#ifndef LFNN_HIERARCHY_HPP
#define LFNN_HIERARCHY_HPP

/// @file hierarchy.hpp Leader-follower worker hierarchy: partitioning a layer
/// into workers, per-worker prediction losses, leader selection and the loss
/// compositions of the two training modes.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "layers.hpp"
#include "tensor.hpp"

namespace lfnn {

enum class WorkerKind { neuron_wise, filter_wise };

/// Prediction head of a worker (and of the output layer).
enum class Head { sigmoid_bce, softmax_ce };

/// LFNN trains with backprop of the global loss plus local terms; LFNN-l is
/// fully local (no gradient crosses a layer boundary).
enum class TrainMode { lfnn, lfnn_local };

enum class Ablation { L1, L2, L3, L4 };

inline std::string to_string(Head h) { return h == Head::sigmoid_bce ? "sigmoid-bce" : "softmax-ce"; }
inline std::string to_string(TrainMode m) { return m == TrainMode::lfnn ? "lfnn" : "lfnn-l"; }
inline std::string to_string(WorkerKind k) { return k == WorkerKind::neuron_wise ? "neuron-wise" : "filter-wise"; }
inline std::string to_string(Ablation a) {
    constexpr const char *names[] = {"L1", "L2", "L3", "L4"};
    return names[static_cast<int>(a)];
}

inline Activation head_activation(Head h) {
    return h == Head::sigmoid_bce ? Activation::sigmoid : Activation::softmax_groups;
}

/// Disjoint contiguous ranges of `worker_width` units covering a layer.
struct WorkerPartition {
    std::size_t layer_index = 0;
    WorkerKind kind = WorkerKind::neuron_wise;
    std::size_t num_workers = 1;
    std::size_t worker_width = 1;

    std::size_t units() const { return num_workers * worker_width; }
    std::size_t begin(std::size_t worker) const { return worker * worker_width; }
    std::size_t end(std::size_t worker) const { return (worker + 1) * worker_width; }

    void validate(std::size_t layer_units) const {
        if (num_workers == 0 || worker_width == 0) {
            throw std::invalid_argument("worker partition of layer " + std::to_string(layer_index) +
                                        " needs positive worker count and width");
        }
        if (units() != layer_units) {
            throw DimensionError("layer " + std::to_string(layer_index) + " has " + std::to_string(layer_units) +
                                 " units but partition covers " + std::to_string(num_workers) + " x " +
                                 std::to_string(worker_width) + " = " + std::to_string(units()));
        }
    }
};

struct LeadershipAssignment {
    std::size_t layer_index = 0;
    std::size_t step = 0;
    std::vector<std::size_t> leader_indices;  // ascending
    std::size_t best_leader = 0;
    std::vector<double> per_worker_loss;

    bool is_leader(std::size_t worker) const {
        return std::binary_search(leader_indices.begin(), leader_indices.end(), worker);
    }
    std::size_t num_workers() const { return per_worker_loss.size(); }
    std::vector<std::size_t> followers() const {
        std::vector<std::size_t> out;
        for (std::size_t i = 0; i < num_workers(); ++i) {
            if (!is_leader(i)) out.push_back(i);
        }
        return out;
    }
};

struct LossBreakdown {
    double global = 0;
    double leader_local = 0;
    double follower_align = 0;
    double total = 0;
};

/// Splits a layer output into per-worker slices [batch x width]. Rank-4
/// filter-wise outputs are globally average pooled first.
template <std::floating_point T>
std::vector<Tensor<T>> worker_outputs(const Tensor<T> &layer_output, const WorkerPartition &partition) {
    const Tensor<T> flat = layer_output.rank() == 4 ? global_avg_pool(layer_output) : layer_output;
    if (flat.rank() != 2) {
        throw DimensionError("worker_outputs expects [batch x units] or [batch x F x H x W], got " +
                             shape_string(layer_output.shape()));
    }
    partition.validate(flat.dim(1));
    const std::size_t B = flat.dim(0);
    std::vector<Tensor<T>> out;
    out.reserve(partition.num_workers);
    for (std::size_t w = 0; w < partition.num_workers; ++w) {
        Tensor<T> slice({B, partition.worker_width});
        for (std::size_t b = 0; b < B; ++b) {
            for (std::size_t j = 0; j < partition.worker_width; ++j) slice(b, j) = flat(b, partition.begin(w) + j);
        }
        out.push_back(std::move(slice));
    }
    return out;
}

inline constexpr double kProbabilityClip = 1e-7;

namespace detail {

template <std::floating_point T>
void check_head(const Tensor<T> &pred, std::span<const int> labels, Head head) {
    if (pred.rank() != 2 || pred.dim(0) != labels.size()) {
        throw DimensionError("worker prediction " + shape_string(pred.shape()) + " does not match " +
                             std::to_string(labels.size()) + " labels");
    }
    const std::size_t width = pred.dim(1);
    if (head == Head::sigmoid_bce && width != 1) {
        throw DimensionError("sigmoid-bce head needs width 1, got " + std::to_string(width));
    }
    const int classes = head == Head::sigmoid_bce ? 2 : static_cast<int>(width);
    for (int l : labels) {
        if (l < 0 || l >= classes) throw std::invalid_argument("label " + std::to_string(l) + " out of range");
    }
}

inline double clip_probability(double p) { return std::clamp(p, kProbabilityClip, 1.0 - kProbabilityClip); }

}  // namespace detail

/// Batch-mean prediction loss of one worker's activated output.
template <std::floating_point T>
double worker_prediction_loss(const Tensor<T> &pred, std::span<const int> labels, Head head) {
    detail::check_head(pred, labels, head);
    double sum = 0;
    for (std::size_t b = 0; b < labels.size(); ++b) {
        if (head == Head::sigmoid_bce) {
            const double p = detail::clip_probability(pred(b, 0));
            sum -= labels[b] == 1 ? std::log(p) : std::log(1.0 - p);
        } else {
            sum -= std::log(detail::clip_probability(pred(b, static_cast<std::size_t>(labels[b]))));
        }
    }
    return sum / static_cast<double>(labels.size());
}

/// Per-sample derivative of the prediction loss with respect to the head's
/// logits (fused sigmoid+BCE or softmax+CE): `pred - target`.
template <std::floating_point T>
Tensor<T> worker_loss_logit_grad(const Tensor<T> &pred, std::span<const int> labels, Head head) {
    detail::check_head(pred, labels, head);
    Tensor<T> g = pred;
    for (std::size_t b = 0; b < labels.size(); ++b) {
        const std::size_t col = head == Head::sigmoid_bce ? 0 : static_cast<std::size_t>(labels[b]);
        if (head == Head::softmax_ce || labels[b] == 1) g(b, col) -= T{1};
    }
    return g;
}

/// `max(1, round_half_to_even(delta * n))`, capped at n.
inline std::size_t leader_count(double delta, std::size_t n_workers) {
    if (n_workers == 0) throw std::invalid_argument("leader_count: no workers");
    const double scaled = delta * static_cast<double>(n_workers);
    const double lower = std::floor(scaled);
    const double frac = scaled - lower;
    double rounded = lower;
    if (frac > 0.5 || (frac == 0.5 && std::fmod(lower, 2.0) != 0.0)) rounded = lower + 1.0;
    const auto count = static_cast<std::size_t>(std::max(1.0, rounded));
    return std::min(count, n_workers);
}

/// Picks the leader_count(delta, N) workers with the smallest loss. Ties go to
/// the lowest worker index.
inline LeadershipAssignment select_leaders(std::span<const double> per_worker_loss, double delta,
                                           std::size_t layer_index = 0, std::size_t step = 0) {
    if (per_worker_loss.empty()) throw std::invalid_argument("select_leaders: empty worker list");
    for (std::size_t i = 0; i < per_worker_loss.size(); ++i) {
        if (!std::isfinite(per_worker_loss[i])) {
            throw std::invalid_argument("select_leaders: non-finite loss for worker " + std::to_string(i) +
                                        " of layer " + std::to_string(layer_index));
        }
    }
    const std::size_t n = per_worker_loss.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return per_worker_loss[a] < per_worker_loss[b]; });
    const std::size_t k = leader_count(delta, n);
    LeadershipAssignment out;
    out.layer_index = layer_index;
    out.step = step;
    out.best_leader = order[0];
    out.leader_indices.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k));
    std::sort(out.leader_indices.begin(), out.leader_indices.end());
    out.per_worker_loss.assign(per_worker_loss.begin(), per_worker_loss.end());
    return out;
}

template <std::floating_point T>
double mse(const Tensor<T> &a, const Tensor<T> &b) {
    if (a.shape() != b.shape()) {
        throw DimensionError("mse shape mismatch: " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
    }
    double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
        s += d * d;
    }
    return s / static_cast<double>(a.size());
}

/// Mean over followers of MSE(follower, best leader). The leader output is a
/// constant target; an empty follower set contributes 0.
template <std::floating_point T>
double follower_alignment_loss(std::span<const Tensor<T>> follower_outs, const Tensor<T> &best_leader_out) {
    if (follower_outs.empty()) return 0.0;
    double s = 0;
    for (const auto &f : follower_outs) s += mse(f, best_leader_out);
    return s / static_cast<double>(follower_outs.size());
}

/// Per-sample derivative of follower_alignment_loss with respect to one
/// follower's output, given `n_followers` followers in the mean.
template <std::floating_point T>
Tensor<T> follower_alignment_output_grad(const Tensor<T> &follower_out, const Tensor<T> &best_leader_out,
                                         std::size_t n_followers) {
    if (follower_out.shape() != best_leader_out.shape()) {
        throw DimensionError("alignment shape mismatch: " + shape_string(follower_out.shape()) + " vs " +
                             shape_string(best_leader_out.shape()));
    }
    const T scale = T{2} / static_cast<T>(follower_out.dim(1) * n_followers);
    Tensor<T> g(follower_out.shape());
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = scale * (follower_out[i] - best_leader_out[i]);
    return g;
}

/// Total of the backprop-assisted objective: L_g + lambda1 L_leader + lambda2 L_follower.
inline LossBreakdown compose_loss_bp(double global, double leader_local, double follower_align, double lambda1,
                                     double lambda2) {
    return {global, leader_local, follower_align, global + lambda1 * leader_local + lambda2 * follower_align};
}

/// Total of the fully local objective: L_g^o + L_leader + lambda L_follower.
inline LossBreakdown compose_loss_bpfree(double global_out, double leader_local, double follower_align,
                                         double lambda) {
    return {global_out, leader_local, follower_align, global_out + leader_local + lambda * follower_align};
}

struct LossWeights {
    double lambda1 = 1;
    double lambda2 = 1;

    friend bool operator==(const LossWeights &, const LossWeights &) = default;
};

/// L1 = L_g + L_leader + L_follower, L2 = L_g + L_leader, L3 = L_g + L_follower, L4 = L_g.
inline LossWeights ablation_variant(Ablation which, TrainMode mode = TrainMode::lfnn) {
    if (mode != TrainMode::lfnn) {
        throw std::invalid_argument("loss ablation " + to_string(which) + " is only defined for lfnn (backprop) mode");
    }
    switch (which) {
        case Ablation::L1: return {1, 1};
        case Ablation::L2: return {1, 0};
        case Ablation::L3: return {0, 1};
        case Ablation::L4: return {0, 0};
    }
    return {};
}

}  // namespace lfnn

#endif  // LFNN_HIERARCHY_HPP
