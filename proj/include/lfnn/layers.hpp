#ifndef LFNN_LAYERS_HPP
#define LFNN_LAYERS_HPP

/// @file layers.hpp Dense and convolutional layers with closed-form forward
/// passes and local gradient routines.
///
/// Gradient routines take `d_out`, the per-sample derivative of the loss with
/// respect to the layer's pre-activation output, and return parameter
/// gradients averaged over the batch. Local routines never produce a gradient
/// with respect to the input; the `*_input_grad` hooks exist for backprop mode.

#include <cstddef>
#include <string>
#include <utility>

#include "tensor.hpp"

namespace lfnn {

enum class Activation { identity, sigmoid, softmax_groups, relu };

inline std::string to_string(Activation a) {
    switch (a) {
        case Activation::identity: return "identity";
        case Activation::sigmoid: return "sigmoid";
        case Activation::softmax_groups: return "softmax";
        case Activation::relu: return "relu";
    }
    return "?";
}

template <std::floating_point T>
struct DenseLayer {
    Tensor<T> weights;  // [out x in]
    Tensor<T> bias;     // [out]
    Activation activation = Activation::identity;
    std::size_t group_width = 1;  // softmax group size for softmax_groups

    std::size_t in_units() const { return weights.dim(1); }
    std::size_t out_units() const { return weights.dim(0); }
    std::size_t parameter_count() const { return weights.size() + bias.size(); }

    static DenseLayer glorot(Rng &rng, std::size_t in, std::size_t out, Activation act, std::size_t group = 1) {
        return DenseLayer{init_glorot<T>(rng, in, out, {out, in}), Tensor<T>({out}), act, group};
    }
};

template <std::floating_point T>
struct ConvLayer {
    Tensor<T> filters;  // [F x C x kh x kw]
    Tensor<T> bias;     // [F]
    std::size_t stride = 1;
    std::size_t padding = 0;
    Activation activation = Activation::relu;

    std::size_t num_filters() const { return filters.dim(0); }
    std::size_t in_channels() const { return filters.dim(1); }
    std::size_t kernel_h() const { return filters.dim(2); }
    std::size_t kernel_w() const { return filters.dim(3); }
    std::size_t parameter_count() const { return filters.size() + bias.size(); }

    std::pair<std::size_t, std::size_t> output_hw(std::size_t h, std::size_t w) const {
        if (h + 2 * padding < kernel_h() || w + 2 * padding < kernel_w()) {
            throw DimensionError("conv kernel larger than padded input");
        }
        return {(h + 2 * padding - kernel_h()) / stride + 1, (w + 2 * padding - kernel_w()) / stride + 1};
    }

    static ConvLayer glorot(Rng &rng, std::size_t in_channels, std::size_t filters, std::size_t kernel,
                            std::size_t stride, std::size_t padding, Activation act = Activation::relu) {
        const std::size_t receptive = kernel * kernel;
        return ConvLayer{init_glorot<T>(rng, in_channels * receptive, filters * receptive,
                                        {filters, in_channels, kernel, kernel}),
                         Tensor<T>({filters}), stride, padding, act};
    }
};

template <std::floating_point T>
struct LayerGrads {
    Tensor<T> d_weights;
    Tensor<T> d_bias;
    std::size_t layer_index = 0;

    friend bool operator==(const LayerGrads &, const LayerGrads &) = default;
};

// ---------------------------------------------------------------------------
// Activations

template <std::floating_point T>
Tensor<T> apply_activation(const Tensor<T> &z, Activation act, std::size_t group_width = 1) {
    switch (act) {
        case Activation::identity: return z;
        case Activation::sigmoid: return sigmoid(z);
        case Activation::softmax_groups: return softmax_groups(z.reshaped({z.dim(0), z.size() / z.dim(0)}), group_width)
                                              .reshaped(z.shape());
        case Activation::relu: {
            Tensor<T> y = z;
            for (auto &v : y.data()) v = v > T{0} ? v : T{0};
            return y;
        }
    }
    return z;
}

/// Vector-Jacobian product of the activation: maps dL/dy to dL/dz given the
/// activation output y.
template <std::floating_point T>
Tensor<T> activation_backward(const Tensor<T> &y, const Tensor<T> &dy, Activation act, std::size_t group_width = 1) {
    if (y.shape() != dy.shape()) {
        throw DimensionError("activation_backward shape mismatch: " + shape_string(y.shape()) + " vs " +
                             shape_string(dy.shape()));
    }
    Tensor<T> dz(y.shape());
    const std::size_t n = y.size();
    switch (act) {
        case Activation::identity: return dy;
        case Activation::sigmoid:
            for (std::size_t i = 0; i < n; ++i) dz[i] = dy[i] * y[i] * (T{1} - y[i]);
            return dz;
        case Activation::relu:
            for (std::size_t i = 0; i < n; ++i) dz[i] = y[i] > T{0} ? dy[i] : T{0};
            return dz;
        case Activation::softmax_groups:
            for (std::size_t off = 0; off < n; off += group_width) {
                T s{0};
                for (std::size_t j = 0; j < group_width; ++j) s += dy[off + j] * y[off + j];
                for (std::size_t j = 0; j < group_width; ++j) dz[off + j] = y[off + j] * (dy[off + j] - s);
            }
            return dz;
    }
    return dz;
}

// ---------------------------------------------------------------------------
// Dense

template <std::floating_point T>
void check_dense_input(const DenseLayer<T> &layer, const Tensor<T> &x) {
    if (x.rank() != 2 || x.dim(1) != layer.in_units()) {
        throw DimensionError("dense layer expects input [batch x " + std::to_string(layer.in_units()) + "], got " +
                             shape_string(x.shape()));
    }
}

/// x * W^T + b
template <std::floating_point T>
Tensor<T> dense_preactivation(const DenseLayer<T> &layer, const Tensor<T> &x) {
    check_dense_input(layer, x);
    Tensor<T> z = matmul_nt(x, layer.weights);
    const std::size_t out = layer.out_units();
    for (std::size_t b = 0; b < z.dim(0); ++b) {
        for (std::size_t j = 0; j < out; ++j) z(b, j) += layer.bias[j];
    }
    return z;
}

template <std::floating_point T>
Tensor<T> dense_forward(const DenseLayer<T> &layer, const Tensor<T> &x) {
    return apply_activation(dense_preactivation(layer, x), layer.activation, layer.group_width);
}

template <std::floating_point T>
LayerGrads<T> dense_local_grad(const DenseLayer<T> &layer, const Tensor<T> &x, const Tensor<T> &d_out,
                               std::size_t layer_index = 0) {
    if (x.empty()) throw std::logic_error("dense_local_grad: no recorded forward input");
    check_dense_input(layer, x);
    if (d_out.rank() != 2 || d_out.dim(0) != x.dim(0) || d_out.dim(1) != layer.out_units()) {
        throw DimensionError("dense_local_grad: d_out " + shape_string(d_out.shape()) + " does not match [" +
                             std::to_string(x.dim(0)) + "x" + std::to_string(layer.out_units()) + "]");
    }
    const T inv_batch = T{1} / static_cast<T>(x.dim(0));
    LayerGrads<T> g{matmul_tn(d_out, x), Tensor<T>({layer.out_units()}), layer_index};
    for (auto &v : g.d_weights.data()) v *= inv_batch;
    for (std::size_t b = 0; b < d_out.dim(0); ++b) {
        for (std::size_t j = 0; j < layer.out_units(); ++j) g.d_bias[j] += d_out(b, j);
    }
    for (auto &v : g.d_bias.data()) v *= inv_batch;
    return g;
}

/// d_out * W, the per-sample gradient with respect to the layer input.
template <std::floating_point T>
Tensor<T> dense_input_grad(const DenseLayer<T> &layer, const Tensor<T> &d_out) {
    if (d_out.rank() != 2 || d_out.dim(1) != layer.out_units()) {
        throw DimensionError("dense_input_grad: d_out " + shape_string(d_out.shape()) + " vs layer output " +
                             std::to_string(layer.out_units()));
    }
    return matmul(d_out, layer.weights);
}

template <std::floating_point T>
std::pair<LayerGrads<T>, Tensor<T>> dense_backprop_grad(const DenseLayer<T> &layer, const Tensor<T> &x,
                                                        const Tensor<T> &d_out, std::size_t layer_index = 0) {
    return {dense_local_grad(layer, x, d_out, layer_index), dense_input_grad(layer, d_out)};
}

// ---------------------------------------------------------------------------
// Convolution (cross-correlation), implemented with im2col per image.

namespace detail {

struct ConvGeometry {
    std::size_t channels, height, width, out_h, out_w, kernel_h, kernel_w, stride, padding;

    std::size_t patch() const { return channels * kernel_h * kernel_w; }
    std::size_t positions() const { return out_h * out_w; }
};

template <std::floating_point T>
ConvGeometry conv_geometry(const ConvLayer<T> &layer, const Shape &x) {
    if (x.size() != 4 || x[1] != layer.in_channels()) {
        throw DimensionError("conv layer expects input [batch x " + std::to_string(layer.in_channels()) +
                             " x H x W], got " + shape_string(x));
    }
    if (layer.stride == 0) throw DimensionError("conv stride must be positive");
    auto [oh, ow] = layer.output_hw(x[2], x[3]);
    return {x[1], x[2], x[3], oh, ow, layer.kernel_h(), layer.kernel_w(), layer.stride, layer.padding};
}

/// cols[patch x positions] for one image laid out [C x H x W].
template <std::floating_point T>
void im2col(std::span<const T> image, const ConvGeometry &g, Tensor<T> &cols) {
    const std::size_t P = g.positions();
    for (std::size_t c = 0; c < g.channels; ++c) {
        for (std::size_t ki = 0; ki < g.kernel_h; ++ki) {
            for (std::size_t kj = 0; kj < g.kernel_w; ++kj) {
                T *dst = cols.data().data() + ((c * g.kernel_h + ki) * g.kernel_w + kj) * P;
                for (std::size_t oi = 0; oi < g.out_h; ++oi) {
                    const long ii = static_cast<long>(oi * g.stride + ki) - static_cast<long>(g.padding);
                    for (std::size_t oj = 0; oj < g.out_w; ++oj) {
                        const long jj = static_cast<long>(oj * g.stride + kj) - static_cast<long>(g.padding);
                        const bool inside = ii >= 0 && jj >= 0 && ii < static_cast<long>(g.height) &&
                                            jj < static_cast<long>(g.width);
                        dst[oi * g.out_w + oj] =
                            inside ? image[(c * g.height + static_cast<std::size_t>(ii)) * g.width +
                                           static_cast<std::size_t>(jj)]
                                   : T{0};
                    }
                }
            }
        }
    }
}

template <std::floating_point T>
void col2im_add(const Tensor<T> &cols, const ConvGeometry &g, std::span<T> image) {
    const std::size_t P = g.positions();
    for (std::size_t c = 0; c < g.channels; ++c) {
        for (std::size_t ki = 0; ki < g.kernel_h; ++ki) {
            for (std::size_t kj = 0; kj < g.kernel_w; ++kj) {
                const T *src = cols.data().data() + ((c * g.kernel_h + ki) * g.kernel_w + kj) * P;
                for (std::size_t oi = 0; oi < g.out_h; ++oi) {
                    const long ii = static_cast<long>(oi * g.stride + ki) - static_cast<long>(g.padding);
                    if (ii < 0 || ii >= static_cast<long>(g.height)) continue;
                    for (std::size_t oj = 0; oj < g.out_w; ++oj) {
                        const long jj = static_cast<long>(oj * g.stride + kj) - static_cast<long>(g.padding);
                        if (jj < 0 || jj >= static_cast<long>(g.width)) continue;
                        image[(c * g.height + static_cast<std::size_t>(ii)) * g.width + static_cast<std::size_t>(jj)] +=
                            src[oi * g.out_w + oj];
                    }
                }
            }
        }
    }
}

}  // namespace detail

/// Cross-correlation plus bias; returns the pre-activation feature maps.
template <std::floating_point T>
Tensor<T> conv_forward(const ConvLayer<T> &layer, const Tensor<T> &x) {
    const auto g = detail::conv_geometry(layer, x.shape());
    const std::size_t B = x.dim(0), F = layer.num_filters(), P = g.positions();
    const Tensor<T> w = layer.filters.reshaped({F, g.patch()});
    Tensor<T> out({B, F, g.out_h, g.out_w});
    Tensor<T> cols({g.patch(), P});
    for (std::size_t b = 0; b < B; ++b) {
        detail::im2col<T>(x.row(b), g, cols);
        const Tensor<T> y = matmul(w, cols);
        auto dst = out.row(b);
        for (std::size_t f = 0; f < F; ++f) {
            for (std::size_t p = 0; p < P; ++p) dst[f * P + p] = y(f, p) + layer.bias[f];
        }
    }
    return out;
}

template <std::floating_point T>
void check_conv_d_out(const ConvLayer<T> &layer, const detail::ConvGeometry &g, std::size_t batch,
                      const Tensor<T> &d_out) {
    const Shape expect{batch, layer.num_filters(), g.out_h, g.out_w};
    if (d_out.shape() != expect) {
        throw DimensionError("conv gradient: d_out " + shape_string(d_out.shape()) + " expected " +
                             shape_string(expect));
    }
}

template <std::floating_point T>
LayerGrads<T> conv_local_grad(const ConvLayer<T> &layer, const Tensor<T> &x, const Tensor<T> &d_out,
                              std::size_t layer_index = 0) {
    if (x.empty()) throw std::logic_error("conv_local_grad: no recorded forward input");
    const auto g = detail::conv_geometry(layer, x.shape());
    const std::size_t B = x.dim(0), F = layer.num_filters(), P = g.positions();
    check_conv_d_out(layer, g, B, d_out);
    Tensor<T> dw({F, g.patch()});
    Tensor<T> db({F});
    Tensor<T> cols({g.patch(), P});
    for (std::size_t b = 0; b < B; ++b) {
        detail::im2col<T>(x.row(b), g, cols);
        const auto d = d_out.row(b);
        const Tensor<T> db_img({F, P}, std::vector<T>(d.begin(), d.end()));
        const Tensor<T> part = matmul_nt(db_img, cols);
        for (std::size_t i = 0; i < dw.size(); ++i) dw[i] += part[i];
        for (std::size_t f = 0; f < F; ++f) {
            for (std::size_t p = 0; p < P; ++p) db[f] += d[f * P + p];
        }
    }
    const T inv_batch = T{1} / static_cast<T>(B);
    for (auto &v : dw.data()) v *= inv_batch;
    for (auto &v : db.data()) v *= inv_batch;
    return {std::move(dw).reshaped(layer.filters.shape()), std::move(db), layer_index};
}

template <std::floating_point T>
Tensor<T> conv_input_grad(const ConvLayer<T> &layer, const Shape &input_shape, const Tensor<T> &d_out) {
    const auto g = detail::conv_geometry(layer, input_shape);
    const std::size_t B = input_shape[0], F = layer.num_filters(), P = g.positions();
    check_conv_d_out(layer, g, B, d_out);
    const Tensor<T> w = layer.filters.reshaped({F, g.patch()});
    Tensor<T> dx(input_shape);
    for (std::size_t b = 0; b < B; ++b) {
        const auto d = d_out.row(b);
        const Tensor<T> d_img({F, P}, std::vector<T>(d.begin(), d.end()));
        detail::col2im_add<T>(matmul_tn(w, d_img), g, dx.row(b));
    }
    return dx;
}

template <std::floating_point T>
std::pair<LayerGrads<T>, Tensor<T>> conv_backprop_grad(const ConvLayer<T> &layer, const Tensor<T> &x,
                                                       const Tensor<T> &d_out, std::size_t layer_index = 0) {
    return {conv_local_grad(layer, x, d_out, layer_index), conv_input_grad(layer, x.shape(), d_out)};
}

// ---------------------------------------------------------------------------
// Global average pooling

template <std::floating_point T>
Tensor<T> global_avg_pool(const Tensor<T> &x) {
    detail::require_rank(x.shape(), 4, "global_avg_pool");
    const std::size_t B = x.dim(0), F = x.dim(1), HW = x.dim(2) * x.dim(3);
    Tensor<T> out({B, F});
    for (std::size_t b = 0; b < B; ++b) {
        const auto img = x.row(b);
        for (std::size_t f = 0; f < F; ++f) {
            T s{0};
            for (std::size_t p = 0; p < HW; ++p) s += img[f * HW + p];
            out(b, f) = s / static_cast<T>(HW);
        }
    }
    return out;
}

/// Spreads d_pooled[B x F] uniformly back over spatial positions.
template <std::floating_point T>
Tensor<T> global_avg_pool_backward(const Tensor<T> &d_pooled, const Shape &input_shape) {
    const std::size_t B = input_shape[0], F = input_shape[1], HW = input_shape[2] * input_shape[3];
    if (d_pooled.shape() != Shape{B, F}) {
        throw DimensionError("global_avg_pool_backward: " + shape_string(d_pooled.shape()) + " vs input " +
                             shape_string(input_shape));
    }
    Tensor<T> dx(input_shape);
    const T scale = T{1} / static_cast<T>(HW);
    for (std::size_t b = 0; b < B; ++b) {
        auto img = dx.row(b);
        for (std::size_t f = 0; f < F; ++f) {
            const T v = d_pooled(b, f) * scale;
            for (std::size_t p = 0; p < HW; ++p) img[f * HW + p] = v;
        }
    }
    return dx;
}

}  // namespace lfnn

#endif  // LFNN_LAYERS_HPP
