#ifndef LFNN_MODEL_HPP
#define LFNN_MODEL_HPP

/// @file model.hpp A feed-forward stack of partitioned hidden layers and a
/// dense output layer.

#include <cstddef>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "hierarchy.hpp"
#include "layers.hpp"
#include "tensor.hpp"

namespace lfnn {

struct LayerSpec {
    enum class Type { dense, conv };
    Type type = Type::dense;
    std::size_t workers = 1;
    std::size_t worker_width = 1;
    // conv only
    std::size_t kernel = 3;
    std::size_t stride = 1;
    std::size_t padding = 1;

    std::size_t units() const { return workers * worker_width; }
};

/// Shapes only; no parameters.
struct Architecture {
    Shape input{1, 28, 28};  // C x H x W
    Head head = Head::softmax_ce;
    std::size_t num_classes = 10;  // 2 for sigmoid-bce heads
    std::vector<LayerSpec> hidden;

    std::size_t head_width() const { return head == Head::sigmoid_bce ? 1 : num_classes; }

    void validate() const {
        if (input.size() != 3) throw std::invalid_argument("architecture input must be C x H x W");
        if (head == Head::sigmoid_bce && num_classes != 2) {
            throw std::invalid_argument("sigmoid-bce head is binary; num_classes must be 2");
        }
        if (head == Head::softmax_ce && num_classes < 2) {
            throw std::invalid_argument("softmax-ce head needs at least 2 classes");
        }
        bool seen_dense = false;
        for (std::size_t i = 0; i < hidden.size(); ++i) {
            const auto &l = hidden[i];
            const std::string where = "hidden layer " + std::to_string(i);
            if (l.workers == 0) throw std::invalid_argument(where + ": workers must be positive");
            if (l.worker_width != head_width()) {
                throw std::invalid_argument(where + ": worker_width " + std::to_string(l.worker_width) +
                                            " must equal the head arity " + std::to_string(head_width()));
            }
            if (l.type == LayerSpec::Type::conv) {
                if (seen_dense) throw std::invalid_argument(where + ": conv layers must precede dense layers");
                if (l.kernel == 0 || l.stride == 0) throw std::invalid_argument(where + ": bad conv geometry");
            } else {
                seen_dense = true;
            }
        }
    }
};

template <std::floating_point T>
struct HiddenLayer {
    std::variant<DenseLayer<T>, ConvLayer<T>> layer;
    WorkerPartition partition;

    bool is_conv() const { return std::holds_alternative<ConvLayer<T>>(layer); }
    DenseLayer<T> &dense() { return std::get<DenseLayer<T>>(layer); }
    const DenseLayer<T> &dense() const { return std::get<DenseLayer<T>>(layer); }
    ConvLayer<T> &conv() { return std::get<ConvLayer<T>>(layer); }
    const ConvLayer<T> &conv() const { return std::get<ConvLayer<T>>(layer); }

    Tensor<T> &weights() { return is_conv() ? conv().filters : dense().weights; }
    Tensor<T> &bias() { return is_conv() ? conv().bias : dense().bias; }
    const Tensor<T> &weights() const { return is_conv() ? conv().filters : dense().weights; }
    const Tensor<T> &bias() const { return is_conv() ? conv().bias : dense().bias; }
    std::size_t parameter_count() const { return weights().size() + bias().size(); }
};

/// Activations recorded by one forward pass.
template <std::floating_point T>
struct ForwardTrace {
    std::vector<Tensor<T>> inputs;        // input to each hidden layer
    std::vector<Tensor<T>> outputs;       // post-activation output of each hidden layer
    std::vector<Tensor<T>> worker_preds;  // [batch x units], activated per-worker predictions
    Tensor<T> output_input;               // flattened input of the output layer
    Tensor<T> prediction;                 // [batch x head_width]
};

template <std::floating_point T>
class Model {
public:
    Model() = default;

    static Model build(const Architecture &arch, Rng &rng) {
        arch.validate();
        Model m;
        m.arch_ = arch;
        Shape cur = arch.input;  // per-sample shape
        const Activation head_act = head_activation(arch.head);
        for (std::size_t i = 0; i < arch.hidden.size(); ++i) {
            const auto &spec = arch.hidden[i];
            HiddenLayer<T> h;
            if (spec.type == LayerSpec::Type::conv) {
                auto conv = ConvLayer<T>::glorot(rng, cur[0], spec.units(), spec.kernel, spec.stride, spec.padding,
                                                 Activation::relu);
                auto [oh, ow] = conv.output_hw(cur[1], cur[2]);
                cur = {spec.units(), oh, ow};
                h.layer = std::move(conv);
                h.partition = {i, WorkerKind::filter_wise, spec.workers, spec.worker_width};
            } else {
                h.layer = DenseLayer<T>::glorot(rng, shape_size(cur), spec.units(), head_act, spec.worker_width);
                cur = {spec.units()};
                h.partition = {i, WorkerKind::neuron_wise, spec.workers, spec.worker_width};
            }
            m.hidden_.push_back(std::move(h));
        }
        m.output_ = DenseLayer<T>::glorot(rng, shape_size(cur), arch.head_width(), head_act, arch.head_width());
        return m;
    }

    const Architecture &architecture() const { return arch_; }
    std::size_t num_hidden() const { return hidden_.size(); }
    HiddenLayer<T> &hidden(std::size_t i) { return hidden_.at(i); }
    const HiddenLayer<T> &hidden(std::size_t i) const { return hidden_.at(i); }
    DenseLayer<T> &output() { return output_; }
    const DenseLayer<T> &output() const { return output_; }

    std::size_t parameter_count() const {
        std::size_t n = output_.parameter_count();
        for (const auto &h : hidden_) n += h.parameter_count();
        return n;
    }

    /// images: [batch x C x H x W]
    ForwardTrace<T> forward(const Tensor<T> &images) const {
        if (images.rank() != 4 || Shape(images.shape().begin() + 1, images.shape().end()) != arch_.input) {
            throw DimensionError("model expects images [batch x " + shape_string(arch_.input) + "], got " +
                                 shape_string(images.shape()));
        }
        const std::size_t B = images.dim(0);
        ForwardTrace<T> tr;
        tr.inputs.reserve(hidden_.size());
        Tensor<T> cur = images;
        for (const auto &h : hidden_) {
            if (h.is_conv()) {
                const auto &conv = h.conv();
                tr.inputs.push_back(cur);
                Tensor<T> y = apply_activation(conv_forward(conv, cur), conv.activation);
                tr.worker_preds.push_back(apply_activation(global_avg_pool(y), head_activation(arch_.head),
                                                           h.partition.worker_width));
                tr.outputs.push_back(y);
                cur = std::move(y);
            } else {
                if (cur.rank() != 2) cur = std::move(cur).reshaped({B, cur.size() / B});
                tr.inputs.push_back(cur);
                Tensor<T> y = dense_forward(h.dense(), cur);
                tr.worker_preds.push_back(y);
                tr.outputs.push_back(y);
                cur = std::move(y);
            }
        }
        if (cur.rank() != 2) cur = std::move(cur).reshaped({B, cur.size() / B});
        tr.output_input = cur;
        tr.prediction = dense_forward(output_, cur);
        return tr;
    }

    Tensor<T> predict(const Tensor<T> &images) const { return forward(images).prediction; }

    friend bool operator==(const Model &a, const Model &b) {
        if (a.hidden_.size() != b.hidden_.size() || !(a.output_.weights == b.output_.weights) ||
            !(a.output_.bias == b.output_.bias))
            return false;
        for (std::size_t i = 0; i < a.hidden_.size(); ++i) {
            if (!(a.hidden_[i].weights() == b.hidden_[i].weights()) || !(a.hidden_[i].bias() == b.hidden_[i].bias()))
                return false;
        }
        return true;
    }

private:
    Architecture arch_;
    std::vector<HiddenLayer<T>> hidden_;
    DenseLayer<T> output_;
};

/// Parameter count of the plain network with the same layer shapes: every
/// layer's weights plus biases, with no per-worker machinery.
inline std::size_t plain_parameter_count(const Architecture &arch) {
    std::size_t total = 0;
    std::size_t c = arch.input[0], h = arch.input[1], w = arch.input[2], flat = c * h * w;
    for (const auto &l : arch.hidden) {
        if (l.type == LayerSpec::Type::conv) {
            total += l.units() * c * l.kernel * l.kernel + l.units();
            h = (h + 2 * l.padding - l.kernel) / l.stride + 1;
            w = (w + 2 * l.padding - l.kernel) / l.stride + 1;
            c = l.units();
            flat = c * h * w;
        } else {
            total += l.units() * flat + l.units();
            flat = l.units();
        }
    }
    return total + arch.head_width() * flat + arch.head_width();
}

}  // namespace lfnn

#endif  // LFNN_MODEL_HPP
