#ifndef LFNN_OPTIM_HPP
#define LFNN_OPTIM_HPP

#include <cmath>
#include <cstdint>

#include "tensor.hpp"

namespace lfnn {

enum class OptimizerKind { adam, sgd };

struct OptimizerConfig {
    OptimizerKind kind = OptimizerKind::adam;
    double lr = 5e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// Moment accumulators for one parameter tensor.
template <std::floating_point T>
struct AdamState {
    Tensor<T> m;
    Tensor<T> v;
    std::uint64_t t = 0;

    AdamState() = default;
    explicit AdamState(const Shape &shape) : m(shape), v(shape) {}
};

/// One bias-corrected Adam step, in place.
template <std::floating_point T>
void adam_update(Tensor<T> &param, const Tensor<T> &grad, AdamState<T> &state, double lr, double beta1 = 0.9,
                 double beta2 = 0.999, double eps = 1e-8) {
    if (grad.shape() != param.shape()) {
        throw DimensionError("adam_update: gradient " + shape_string(grad.shape()) + " vs parameter " +
                             shape_string(param.shape()));
    }
    if (state.m.shape() != param.shape()) state = AdamState<T>(param.shape());
    ++state.t;
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(state.t));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(state.t));
    const T b1 = static_cast<T>(beta1), b2 = static_cast<T>(beta2);
    for (std::size_t i = 0; i < param.size(); ++i) {
        const T g = grad[i];
        state.m[i] = b1 * state.m[i] + (T{1} - b1) * g;
        state.v[i] = b2 * state.v[i] + (T{1} - b2) * g * g;
        const double m_hat = static_cast<double>(state.m[i]) / c1;
        const double v_hat = static_cast<double>(state.v[i]) / c2;
        param[i] -= static_cast<T>(lr * m_hat / (std::sqrt(v_hat) + eps));
    }
}

template <std::floating_point T>
void sgd_update(Tensor<T> &param, const Tensor<T> &grad, double lr) {
    if (grad.shape() != param.shape()) {
        throw DimensionError("sgd_update: gradient " + shape_string(grad.shape()) + " vs parameter " +
                             shape_string(param.shape()));
    }
    const T step = static_cast<T>(lr);
    for (std::size_t i = 0; i < param.size(); ++i) param[i] -= step * grad[i];
}

/// Optimizer state for one layer's weights and bias.
template <std::floating_point T>
struct LayerOptimizer {
    AdamState<T> weights;
    AdamState<T> bias;

    void apply(const OptimizerConfig &cfg, Tensor<T> &w, Tensor<T> &b, const Tensor<T> &dw, const Tensor<T> &db) {
        if (cfg.kind == OptimizerKind::adam) {
            adam_update(w, dw, weights, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps);
            adam_update(b, db, bias, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps);
        } else {
            sgd_update(w, dw, cfg.lr);
            sgd_update(b, db, cfg.lr);
        }
    }
};

}  // namespace lfnn

#endif  // LFNN_OPTIM_HPP
