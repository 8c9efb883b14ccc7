#ifndef LFNN_ENGINE_HPP
#define LFNN_ENGINE_HPP

/// @file engine.hpp Training steps for both modes, evaluation and leadership
/// bookkeeping.
///
/// A step always starts with one forward pass that records every layer's
/// input. In lfnn-l mode each layer's gradient is then a function of that
/// recorded input and the labels only, so layers are updated independently
/// (and optionally concurrently). In lfnn mode the output loss is
/// back-propagated; follower rows of each hidden layer are masked out of the
/// global-loss parameter gradient but still pass the signal upstream.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <iterator>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "data.hpp"
#include "hierarchy.hpp"
#include "layers.hpp"
#include "model.hpp"
#include "optim.hpp"
#include "parallel.hpp"
#include "tensor.hpp"

namespace lfnn {

class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class LeaderSelection { per_batch, per_epoch };

struct TrainConfig {
    TrainMode mode = TrainMode::lfnn_local;
    double delta = 0.7;
    double lambda1 = 1.0;  // lfnn: leader local loss
    double lambda2 = 1.0;  // lfnn: follower alignment
    double lambda = 1.0;   // lfnn-l: follower alignment
    bool leader_local = true;          // lfnn: include the optional leader local loss
    bool mask_follower_global = true;  // lfnn: followers get no global-loss update
    std::optional<Ablation> ablation;  // lfnn only
    LeaderSelection selection = LeaderSelection::per_batch;
    OptimizerConfig optimizer;
    std::size_t batch_size = 64;
    std::size_t epochs = 1;
    std::uint64_t seed = 0;
    std::size_t threads = 1;

    void validate() const {
        if (!(delta > 0.0 && delta <= 1.0)) throw std::invalid_argument("delta must be in (0, 1]");
        if (lambda1 < 0 || lambda2 < 0 || lambda < 0) throw std::invalid_argument("loss weights must be >= 0");
        if (!(optimizer.lr >= 0)) throw std::invalid_argument("learning rate must be >= 0");
        if (batch_size == 0) throw std::invalid_argument("batch_size must be positive");
        if (ablation && mode != TrainMode::lfnn) {
            throw std::invalid_argument("loss ablation is only defined for lfnn (backprop) mode");
        }
    }

    /// (lambda1, lambda2) after the ablation mask and the leader_local flag.
    LossWeights effective_weights() const {
        LossWeights w{lambda1, lambda2};
        if (ablation) {
            const auto mask = ablation_variant(*ablation, mode);
            w.lambda1 *= mask.lambda1;
            w.lambda2 *= mask.lambda2;
        }
        if (!leader_local) w.lambda1 = 0;
        return w;
    }
};

template <std::floating_point T>
struct Batch {
    Tensor<T> images;         // [batch x C x H x W]
    std::vector<int> labels;  // class index (0/1 for binary heads)

    std::size_t size() const { return labels.size(); }
};

struct StepTelemetry {
    std::size_t step = 0;
    std::size_t model_index = 0;
    std::vector<LeadershipAssignment> leadership;  // per hidden layer
    std::vector<LossBreakdown> layer_losses;       // per hidden layer: leader_local / follower_align
    LossBreakdown loss;
    std::vector<std::vector<double>> worker_activity;  // per hidden layer, per worker; empty without probe
    std::size_t batch_size = 0;
    std::size_t batch_correct = 0;
    double running_accuracy = 0;
};

// ---------------------------------------------------------------------------
// Per-layer signals

/// Gradient of a hidden layer's local losses with respect to its worker logits
/// (dense: pre-activation; conv: pooled maps), plus the selection it used.
template <std::floating_point T>
struct LocalSignal {
    Tensor<T> d_logits;  // per-sample, [batch x units]
    LeadershipAssignment assignment;
    double leader_loss = 0;    // mean prediction loss over leaders
    double follower_loss = 0;  // mean alignment loss over followers
};

/// Per-worker batch-mean prediction losses of a [batch x units] prediction.
template <std::floating_point T>
std::vector<double> per_worker_losses(const Tensor<T> &preds, const WorkerPartition &partition,
                                      std::span<const int> labels, Head head) {
    const auto slices = worker_outputs(preds, partition);
    std::vector<double> losses(slices.size());
    for (std::size_t w = 0; w < slices.size(); ++w) {
        losses[w] = worker_prediction_loss(slices[w], labels, head);
        if (!std::isfinite(losses[w])) {
            throw NumericalError("non-finite prediction loss at layer " + std::to_string(partition.layer_index) +
                                 ", worker " + std::to_string(w));
        }
    }
    return losses;
}

/// Leader and follower signals for one hidden layer. Leaders get
/// `leader_weight` times the gradient of the mean leader prediction loss;
/// followers get `follower_weight` times the gradient of the mean MSE to the
/// (detached) best leader's prediction.
template <std::floating_point T>
LocalSignal<T> local_worker_signal(const Tensor<T> &preds, const WorkerPartition &partition,
                                   std::span<const int> labels, Head head, double delta, double leader_weight,
                                   double follower_weight, std::size_t step,
                                   const LeadershipAssignment *held = nullptr) {
    const auto losses = per_worker_losses(preds, partition, labels, head);
    LocalSignal<T> sig;
    if (held) {
        sig.assignment = *held;
        sig.assignment.step = step;
        sig.assignment.per_worker_loss = losses;
        sig.assignment.best_leader = *std::min_element(
            held->leader_indices.begin(), held->leader_indices.end(),
            [&](std::size_t a, std::size_t b) { return losses[a] < losses[b] || (losses[a] == losses[b] && a < b); });
    } else {
        sig.assignment = select_leaders(losses, delta, partition.layer_index, step);
    }
    const auto &asg = sig.assignment;
    const std::size_t B = preds.dim(0), W = partition.worker_width;
    const std::size_t n_leaders = asg.leader_indices.size();
    const std::size_t n_followers = partition.num_workers - n_leaders;
    sig.d_logits = Tensor<T>(preds.shape());

    for (auto l : asg.leader_indices) sig.leader_loss += losses[l];
    sig.leader_loss /= static_cast<double>(n_leaders);

    const T lw = static_cast<T>(leader_weight / static_cast<double>(n_leaders));
    if (leader_weight != 0.0) {
        for (auto l : asg.leader_indices) {
            for (std::size_t b = 0; b < B; ++b) {
                for (std::size_t j = 0; j < W; ++j) {
                    const std::size_t col = partition.begin(l) + j;
                    const bool hot = head == Head::sigmoid_bce ? labels[b] == 1 : labels[b] == static_cast<int>(j);
                    sig.d_logits(b, col) = lw * (preds(b, col) - (hot ? T{1} : T{0}));
                }
            }
        }
    }

    if (n_followers == 0) return sig;
    const std::size_t ref = partition.begin(asg.best_leader);
    const T fw = static_cast<T>(follower_weight * 2.0 / static_cast<double>(W * n_followers));
    double align = 0;
    std::vector<T> dy(W);
    for (std::size_t f = 0; f < partition.num_workers; ++f) {
        if (asg.is_leader(f)) continue;
        const std::size_t off = partition.begin(f);
        double sq = 0;
        for (std::size_t b = 0; b < B; ++b) {
            for (std::size_t j = 0; j < W; ++j) {
                const T diff = preds(b, off + j) - preds(b, ref + j);
                sq += static_cast<double>(diff) * static_cast<double>(diff);
                dy[j] = fw * diff;
            }
            if (follower_weight == 0.0) continue;
            // back through the worker head: sigmoid or per-worker softmax
            if (head == Head::sigmoid_bce) {
                const T y = preds(b, off);
                sig.d_logits(b, off) = dy[0] * y * (T{1} - y);
            } else {
                T s{0};
                for (std::size_t j = 0; j < W; ++j) s += dy[j] * preds(b, off + j);
                for (std::size_t j = 0; j < W; ++j) sig.d_logits(b, off + j) = preds(b, off + j) * (dy[j] - s);
            }
        }
        align += sq / static_cast<double>(B * W);
    }
    sig.follower_loss = align / static_cast<double>(n_followers);
    return sig;
}

/// Maps a gradient on worker logits to the layer's pre-activation output.
template <std::floating_point T>
Tensor<T> logits_to_preactivation(const HiddenLayer<T> &layer, const Tensor<T> &layer_output,
                                  const Tensor<T> &d_logits) {
    if (!layer.is_conv()) return d_logits;
    const Tensor<T> d_post = global_avg_pool_backward(d_logits, layer_output.shape());
    return activation_backward(layer_output, d_post, layer.conv().activation);
}

template <std::floating_point T>
LayerGrads<T> hidden_local_grad(const HiddenLayer<T> &layer, const Tensor<T> &input, const Tensor<T> &d_pre,
                                std::size_t index) {
    return layer.is_conv() ? conv_local_grad(layer.conv(), input, d_pre, index)
                           : dense_local_grad(layer.dense(), input, d_pre, index);
}

/// Number of correct argmax predictions in a [batch x head_width] output.
template <std::floating_point T>
std::size_t count_correct(const Tensor<T> &prediction, std::span<const int> labels, Head head) {
    std::size_t ok = 0;
    for (std::size_t b = 0; b < labels.size(); ++b) {
        int cls;
        if (head == Head::sigmoid_bce) {
            cls = prediction(b, 0) >= T{0.5} ? 1 : 0;
        } else {
            const auto r = prediction.row(b);
            cls = static_cast<int>(std::max_element(r.begin(), r.end()) - r.begin());
        }
        ok += cls == labels[b];
    }
    return ok;
}

/// Output-layer signal: per-sample d(loss)/d(logits) and the loss itself.
template <std::floating_point T>
std::pair<Tensor<T>, double> output_signal(const Tensor<T> &prediction, std::span<const int> labels, Head head) {
    const double loss = worker_prediction_loss(prediction, labels, head);
    if (!std::isfinite(loss)) throw NumericalError("non-finite global prediction loss at the output layer");
    return {worker_loss_logit_grad(prediction, labels, head), loss};
}

// ---------------------------------------------------------------------------
// Gradient computation

template <std::floating_point T>
struct StepGrads {
    std::vector<LayerGrads<T>> hidden;
    LayerGrads<T> output;
    std::vector<LocalSignal<T>> signals;  // d_logits cleared after use
    double global_loss = 0;
};

/// Fully local gradients for hidden layer `l` from a recorded forward trace.
/// Reads nothing but the trace, the labels and the layer's own shape.
template <std::floating_point T>
std::pair<LayerGrads<T>, LocalSignal<T>> bpfree_layer_grad(const Model<T> &model, const ForwardTrace<T> &trace,
                                                           std::size_t l, std::span<const int> labels,
                                                           const TrainConfig &cfg, std::size_t step,
                                                           const LeadershipAssignment *held = nullptr) {
    const auto &layer = model.hidden(l);
    auto sig = local_worker_signal(trace.worker_preds[l], layer.partition, labels, model.architecture().head,
                                   cfg.delta, 1.0, cfg.lambda, step, held);
    const Tensor<T> d_pre = logits_to_preactivation(layer, trace.outputs[l], sig.d_logits);
    auto grads = hidden_local_grad(layer, trace.inputs[l], d_pre, l);
    sig.d_logits = Tensor<T>();
    return {std::move(grads), std::move(sig)};
}

template <std::floating_point T>
LayerGrads<T> bpfree_output_grad(const Model<T> &model, const ForwardTrace<T> &trace, std::span<const int> labels,
                                 double *loss_out = nullptr) {
    auto [d, loss] = output_signal(trace.prediction, labels, model.architecture().head);
    if (loss_out) *loss_out = loss;
    return dense_local_grad(model.output(), trace.output_input, d, model.num_hidden());
}

/// Backprop-assisted gradients (global loss through every layer plus local
/// terms with the effective lambda1, lambda2).
template <std::floating_point T>
StepGrads<T> bp_grads(const Model<T> &model, const ForwardTrace<T> &trace, std::span<const int> labels,
                      const TrainConfig &cfg, std::size_t step,
                      const std::vector<std::optional<LeadershipAssignment>> *held = nullptr) {
    const auto w = cfg.effective_weights();
    const Head head = model.architecture().head;
    const std::size_t L = model.num_hidden();
    const std::size_t B = labels.size();
    StepGrads<T> out;
    out.hidden.resize(L);
    out.signals.resize(L);

    auto [d_out, loss] = output_signal(trace.prediction, labels, head);
    out.global_loss = loss;
    auto [og, d_up] = dense_backprop_grad(model.output(), trace.output_input, d_out, L);
    out.output = std::move(og);

    for (std::size_t i = L; i-- > 0;) {
        const auto &layer = model.hidden(i);
        const auto &y = trace.outputs[i];
        const LeadershipAssignment *h = held && (*held)[i] ? &*(*held)[i] : nullptr;
        auto sig =
            local_worker_signal(trace.worker_preds[i], layer.partition, labels, head, cfg.delta, w.lambda1,
                                w.lambda2, step, h);
        // d_up arrives flattened when the next layer is dense
        const Tensor<T> d_y = d_up.shape() == y.shape() ? std::move(d_up) : std::move(d_up).reshaped(y.shape());
        const Activation act = layer.is_conv() ? layer.conv().activation : layer.dense().activation;
        Tensor<T> d_global = activation_backward(y, d_y, act, layer.partition.worker_width);
        if (i > 0) {
            d_up = layer.is_conv() ? conv_input_grad(layer.conv(), trace.inputs[i].shape(), d_global)
                                   : dense_input_grad(layer.dense(), d_global);
        }
        if (cfg.mask_follower_global) {
            const std::size_t per_sample = d_global.size() / B;
            const std::size_t span_per_unit = per_sample / layer.partition.units();
            for (std::size_t f = 0; f < layer.partition.num_workers; ++f) {
                if (sig.assignment.is_leader(f)) continue;
                for (std::size_t b = 0; b < B; ++b) {
                    auto row = d_global.row(b);
                    std::fill(row.begin() + static_cast<std::ptrdiff_t>(layer.partition.begin(f) * span_per_unit),
                              row.begin() + static_cast<std::ptrdiff_t>(layer.partition.end(f) * span_per_unit), T{0});
                }
            }
        }
        const Tensor<T> d_local = logits_to_preactivation(layer, y, sig.d_logits);
        for (std::size_t k = 0; k < d_global.size(); ++k) d_global[k] += d_local[k];
        out.hidden[i] = hidden_local_grad(layer, trace.inputs[i], d_global, i);
        sig.d_logits = Tensor<T>();
        out.signals[i] = std::move(sig);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Trainer

/// One model with its optimizer state and step counter.
template <std::floating_point T>
class Trainer {
public:
    Trainer(Model<T> model, TrainConfig cfg) : model_(std::move(model)), cfg_(std::move(cfg)) {
        cfg_.validate();
        optim_.resize(model_.num_hidden() + 1);
        held_.resize(model_.num_hidden());
    }

    const Model<T> &model() const { return model_; }
    Model<T> &model() { return model_; }
    const TrainConfig &config() const { return cfg_; }
    std::size_t steps_taken() const { return step_; }

    /// Per-epoch selection re-picks leaders at the next step.
    void begin_epoch() {
        for (auto &h : held_) h.reset();
    }

    void reset_running_accuracy() { seen_ = correct_ = 0; }

    StepTelemetry step(const Batch<T> &batch, const Tensor<T> *probe = nullptr) {
        if (batch.size() == 0) throw std::invalid_argument("train step on an empty batch");
        if (batch.images.dim(0) != batch.size()) throw DimensionError("batch images and labels disagree");
        const Head head = model_.architecture().head;
        const std::size_t L = model_.num_hidden();
        std::vector<Tensor<T>> probe_before;
        if (probe) probe_before = model_.forward(*probe).worker_preds;

        const ForwardTrace<T> trace = model_.forward(batch.images);
        StepTelemetry tel;
        tel.step = step_;
        tel.batch_size = batch.size();
        tel.batch_correct = count_correct(trace.prediction, batch.labels, head);
        tel.leadership.resize(L);
        tel.layer_losses.resize(L);

        const bool per_epoch = cfg_.selection == LeaderSelection::per_epoch;
        if (cfg_.mode == TrainMode::lfnn_local) {
            // Independent per-layer units of work: select, differentiate, update.
            std::vector<double> output_loss(1);
            parallel_for(L + 1, cfg_.threads, [&](std::size_t l) {
                if (l == L) {
                    auto g = bpfree_output_grad(model_, trace, batch.labels, output_loss.data());
                    optim_[L].apply(cfg_.optimizer, model_.output().weights, model_.output().bias, g.d_weights,
                                    g.d_bias);
                    return;
                }
                const LeadershipAssignment *h = per_epoch && held_[l] ? &*held_[l] : nullptr;
                auto [g, sig] = bpfree_layer_grad(model_, trace, l, batch.labels, cfg_, step_, h);
                auto &layer = model_.hidden(l);
                optim_[l].apply(cfg_.optimizer, layer.weights(), layer.bias(), g.d_weights, g.d_bias);
                tel.layer_losses[l] = {0, sig.leader_loss, sig.follower_loss, sig.leader_loss + cfg_.lambda * sig.follower_loss};
                tel.leadership[l] = std::move(sig.assignment);
            });
            double leader = 0, follower = 0;
            for (const auto &ll : tel.layer_losses) {
                leader += ll.leader_local;
                follower += ll.follower_align;
            }
            tel.loss = compose_loss_bpfree(output_loss[0], leader, follower, cfg_.lambda);
        } else {
            auto grads = bp_grads(model_, trace, batch.labels, cfg_, step_, per_epoch ? &held_ : nullptr);
            parallel_for(L + 1, cfg_.threads, [&](std::size_t l) {
                if (l == L) {
                    optim_[L].apply(cfg_.optimizer, model_.output().weights, model_.output().bias,
                                    grads.output.d_weights, grads.output.d_bias);
                } else {
                    auto &layer = model_.hidden(l);
                    optim_[l].apply(cfg_.optimizer, layer.weights(), layer.bias(), grads.hidden[l].d_weights,
                                    grads.hidden[l].d_bias);
                }
            });
            const auto w = cfg_.effective_weights();
            double leader = 0, follower = 0;
            for (std::size_t l = 0; l < L; ++l) {
                auto &sig = grads.signals[l];
                tel.layer_losses[l] = {0, sig.leader_loss, sig.follower_loss,
                                       w.lambda1 * sig.leader_loss + w.lambda2 * sig.follower_loss};
                leader += sig.leader_loss;
                follower += sig.follower_loss;
                tel.leadership[l] = std::move(sig.assignment);
            }
            tel.loss = compose_loss_bp(grads.global_loss, leader, follower, w.lambda1, w.lambda2);
        }
        if (!std::isfinite(tel.loss.total)) {
            throw NumericalError("non-finite total loss at step " + std::to_string(step_));
        }
        if (per_epoch) {
            for (std::size_t l = 0; l < L; ++l) {
                if (!held_[l]) held_[l] = tel.leadership[l];
            }
        }

        if (probe) {
            const auto after = model_.forward(*probe).worker_preds;
            tel.worker_activity.resize(L);
            for (std::size_t l = 0; l < L; ++l) {
                const auto &part = model_.hidden(l).partition;
                auto &act = tel.worker_activity[l];
                act.assign(part.num_workers, 0.0);
                for (std::size_t b = 0; b < after[l].dim(0); ++b) {
                    for (std::size_t u = 0; u < part.units(); ++u) {
                        const double d = static_cast<double>(after[l](b, u)) - probe_before[l](b, u);
                        act[u / part.worker_width] += d * d;
                    }
                }
                for (auto &a : act) a = std::sqrt(a);
            }
        }

        seen_ += tel.batch_size;
        correct_ += tel.batch_correct;
        tel.running_accuracy = static_cast<double>(correct_) / static_cast<double>(seen_);
        ++step_;
        return tel;
    }

private:
    Model<T> model_;
    TrainConfig cfg_;
    std::vector<LayerOptimizer<T>> optim_;
    std::vector<std::optional<LeadershipAssignment>> held_;
    std::size_t step_ = 0;
    std::size_t seen_ = 0;
    std::size_t correct_ = 0;
};

/// Free-function forms of a single step.
template <std::floating_point T>
StepTelemetry train_step_bpfree(Trainer<T> &trainer, const Batch<T> &batch, const Tensor<T> *probe = nullptr) {
    if (trainer.config().mode != TrainMode::lfnn_local) throw std::invalid_argument("trainer is not in lfnn-l mode");
    return trainer.step(batch, probe);
}

template <std::floating_point T>
StepTelemetry train_step_bp(Trainer<T> &trainer, const Batch<T> &batch, const Tensor<T> *probe = nullptr) {
    if (trainer.config().mode != TrainMode::lfnn) throw std::invalid_argument("trainer is not in lfnn mode");
    return trainer.step(batch, probe);
}

// ---------------------------------------------------------------------------
// Learner: a softmax classifier, or one binary model per class (one-vs-all).

template <std::floating_point T>
class Learner {
public:
    /// For one-vs-all, `arch` describes one binary model (sigmoid-bce head) and
    /// `num_classes` models are built from the same seeded stream.
    static Learner make(const Architecture &arch, const TrainConfig &cfg, bool one_vs_all = false,
                        std::size_t num_classes = 10) {
        Learner l;
        l.one_vs_all_ = one_vs_all;
        Rng rng(cfg.seed);
        if (one_vs_all) {
            if (arch.head != Head::sigmoid_bce) throw std::invalid_argument("one-vs-all needs sigmoid-bce models");
            l.num_classes_ = num_classes;
            for (std::size_t c = 0; c < num_classes; ++c) l.trainers_.emplace_back(Model<T>::build(arch, rng), cfg);
        } else {
            l.num_classes_ = arch.num_classes;
            l.trainers_.emplace_back(Model<T>::build(arch, rng), cfg);
        }
        return l;
    }

    std::size_t num_classes() const { return num_classes_; }
    bool one_vs_all() const { return one_vs_all_; }
    std::size_t num_models() const { return trainers_.size(); }
    Trainer<T> &trainer(std::size_t i) { return trainers_.at(i); }
    const Trainer<T> &trainer(std::size_t i) const { return trainers_.at(i); }
    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const auto &t : trainers_) n += t.model().parameter_count();
        return n;
    }

    void begin_epoch() {
        for (auto &t : trainers_) t.begin_epoch();
    }

    /// [batch x num_classes] class scores.
    Tensor<T> scores(const Tensor<T> &images) const {
        if (!one_vs_all_) return trainers_[0].model().predict(images);
        const std::size_t B = images.dim(0);
        Tensor<T> s({B, num_classes_});
        for (std::size_t c = 0; c < num_classes_; ++c) {
            const Tensor<T> p = trainers_[c].model().predict(images);
            for (std::size_t b = 0; b < B; ++b) s(b, c) = p(b, 0);
        }
        return s;
    }

    /// One step on every model; per-model telemetry in model order. Running
    /// accuracy is measured on the multi-class prediction before the update.
    std::vector<StepTelemetry> step(const Batch<T> &batch, const Tensor<T> *probe = nullptr) {
        const std::size_t correct = count_correct(scores(batch.images), batch.labels, Head::softmax_ce);
        std::vector<StepTelemetry> out(trainers_.size());
        if (!one_vs_all_) {
            out[0] = trainers_[0].step(batch, probe);
        } else {
            parallel_for(trainers_.size(), trainers_.front().config().threads, [&](std::size_t c) {
                Batch<T> binary{batch.images, {}};
                binary.labels.reserve(batch.size());
                for (int l : batch.labels) binary.labels.push_back(l == static_cast<int>(c) ? 1 : 0);
                out[c] = trainers_[c].step(binary, probe);
                out[c].model_index = c;
            });
        }
        seen_ += batch.size();
        correct_ += correct;
        for (auto &t : out) {
            t.batch_correct = correct;
            t.running_accuracy = running_accuracy();
        }
        return out;
    }

    double running_accuracy() const { return seen_ ? static_cast<double>(correct_) / static_cast<double>(seen_) : 0; }

private:
    std::vector<Trainer<T>> trainers_;
    std::size_t num_classes_ = 10;
    bool one_vs_all_ = false;
    std::size_t seen_ = 0;
    std::size_t correct_ = 0;
};

// ---------------------------------------------------------------------------
// Evaluation and leadership statistics

struct EvalResult {
    double test_error = 0;  // percent
    std::vector<double> per_class_accuracy;
    std::vector<std::vector<std::size_t>> confusion;  // [true][predicted]
    std::size_t samples = 0;
};

/// `score_fn(images) -> [batch x K]`; evaluation runs in chunks of `chunk`.
template <std::floating_point T, class ScoreFn>
EvalResult evaluate_scores(ScoreFn &&score_fn, const Dataset &ds, std::size_t num_classes, std::size_t chunk = 500) {
    if (ds.size() == 0) throw std::invalid_argument("evaluate: empty dataset");
    EvalResult r;
    r.samples = ds.size();
    r.confusion.assign(num_classes, std::vector<std::size_t>(num_classes, 0));
    std::size_t correct = 0;
    for (const auto &idx : batches(ds.size(), chunk, nullptr, false)) {
        const Tensor<T> sc = score_fn(ds.images<T>(idx));
        for (std::size_t b = 0; b < idx.size(); ++b) {
            const auto row = sc.row(b);
            const auto pred = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
            const auto truth = static_cast<std::size_t>(ds.labels[idx[b]]);
            ++r.confusion.at(truth).at(pred);
            correct += pred == truth;
        }
    }
    r.per_class_accuracy.resize(num_classes);
    for (std::size_t c = 0; c < num_classes; ++c) {
        std::size_t total = 0;
        for (auto v : r.confusion[c]) total += v;
        r.per_class_accuracy[c] = total ? static_cast<double>(r.confusion[c][c]) / static_cast<double>(total) : 0.0;
    }
    r.test_error = 100.0 * (1.0 - static_cast<double>(correct) / static_cast<double>(ds.size()));
    return r;
}

template <std::floating_point T>
EvalResult evaluate(const Learner<T> &learner, const Dataset &ds) {
    return evaluate_scores<T>([&](const Tensor<T> &x) { return learner.scores(x); }, ds, learner.num_classes());
}

/// A single model; binary heads score as [1 - p, p].
template <std::floating_point T>
EvalResult evaluate(const Model<T> &model, const Dataset &ds) {
    if (model.architecture().head == Head::sigmoid_bce) {
        return evaluate_scores<T>(
            [&](const Tensor<T> &x) {
                const Tensor<T> p = model.predict(x);
                Tensor<T> s({p.dim(0), 2});
                for (std::size_t b = 0; b < p.dim(0); ++b) {
                    s(b, 0) = T{1} - p(b, 0);
                    s(b, 1) = p(b, 0);
                }
                return s;
            },
            ds, 2);
    }
    return evaluate_scores<T>([&](const Tensor<T> &x) { return model.predict(x); }, ds,
                              model.architecture().num_classes);
}

template <std::floating_point T>
Batch<T> make_batch(const Dataset &ds, std::span<const std::size_t> indices) {
    Batch<T> b{ds.images<T>(indices), {}};
    b.labels.reserve(indices.size());
    for (auto i : indices) b.labels.push_back(ds.labels[i]);
    return b;
}

/// Visits `stream` once in order, one step per batch, and returns the running
/// (predict-then-train) accuracy after every step. `on_step(step_rows)` sees
/// the telemetry of each step.
template <std::floating_point T, class OnStep>
std::vector<double> online_train_one_pass(Learner<T> &learner, const Dataset &stream, std::size_t batch_size,
                                          OnStep &&on_step, const Tensor<T> *probe = nullptr) {
    std::vector<double> trace;
    if (stream.size() == 0) return trace;
    const auto order = batches(stream.size(), batch_size, nullptr, false);
    trace.reserve(order.size());
    for (const auto &idx : order) {
        const auto rows = learner.step(make_batch<T>(stream, idx), probe);
        trace.push_back(learner.running_accuracy());
        on_step(rows);
    }
    return trace;
}

template <std::floating_point T>
std::vector<double> online_train_one_pass(Learner<T> &learner, const Dataset &stream, std::size_t batch_size) {
    return online_train_one_pass(learner, stream, batch_size, [](const auto &) {});
}

/// counts[layer][worker] over a run of telemetry rows from one model.
inline std::vector<std::vector<std::size_t>> leadership_histogram(std::span<const StepTelemetry> rows) {
    if (rows.empty()) throw std::invalid_argument("leadership_histogram: no steps recorded");
    std::vector<std::vector<std::size_t>> counts(rows.front().leadership.size());
    for (std::size_t l = 0; l < counts.size(); ++l) counts[l].assign(rows.front().leadership[l].num_workers(), 0);
    for (const auto &row : rows) {
        for (std::size_t l = 0; l < row.leadership.size(); ++l) {
            for (auto w : row.leadership[l].leader_indices) ++counts[l].at(w);
        }
    }
    return counts;
}

/// The `k` most frequently selected workers (ties to the lowest index), ascending.
inline std::vector<std::size_t> top_leaders(std::span<const std::size_t> counts, std::size_t k) {
    std::vector<std::size_t> order(counts.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return counts[a] > counts[b]; });
    order.resize(std::min(k, order.size()));
    std::sort(order.begin(), order.end());
    return order;
}

inline double jaccard(std::span<const std::size_t> a, std::span<const std::size_t> b) {
    std::vector<std::size_t> x(a.begin(), a.end()), y(b.begin(), b.end());
    std::sort(x.begin(), x.end());
    std::sort(y.begin(), y.end());
    std::vector<std::size_t> inter, uni;
    std::set_intersection(x.begin(), x.end(), y.begin(), y.end(), std::back_inserter(inter));
    std::set_union(x.begin(), x.end(), y.begin(), y.end(), std::back_inserter(uni));
    return uni.empty() ? 1.0 : static_cast<double>(inter.size()) / static_cast<double>(uni.size());
}

}  // namespace lfnn

#endif  // LFNN_ENGINE_HPP
