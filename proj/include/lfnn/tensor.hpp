#ifndef LFNN_TENSOR_HPP
#define LFNN_TENSOR_HPP

/// @file tensor.hpp Dense row-major tensors and the handful of kernels the
/// layers and losses are built from.

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <random>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace lfnn {

using Shape = std::vector<std::size_t>;

/// Thrown when operand shapes do not fit together.
class DimensionError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

inline std::string shape_string(const Shape &shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

inline std::size_t shape_size(const Shape &shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

/// Dense n-dimensional array of reals in contiguous row-major storage.
///
/// `product(shape) == data.size()` always holds; every dimension is positive.
template <std::floating_point T>
class Tensor {
public:
    using value_type = T;

    Tensor() = default;

    explicit Tensor(Shape shape, T fill = T{0})
        : shape_(std::move(shape)), data_(checked_size(shape_), fill) {}

    Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
        if (checked_size(shape_) != data_.size()) {
            throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                                 " does not match shape " + shape_string(shape_));
        }
    }

    const Shape &shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    std::span<T> data() noexcept { return data_; }
    std::span<const T> data() const noexcept { return data_; }
    const std::vector<T> &values() const noexcept { return data_; }

    T &operator[](std::size_t i) noexcept { return data_[i]; }
    const T &operator[](std::size_t i) const noexcept { return data_[i]; }

    /// 2-D element access.
    T &operator()(std::size_t r, std::size_t c) noexcept { return data_[r * shape_[1] + c]; }
    const T &operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * shape_[1] + c]; }

    /// Contiguous slice along the leading axis.
    std::span<T> row(std::size_t r) noexcept {
        const std::size_t stride = data_.size() / shape_[0];
        return std::span<T>(data_).subspan(r * stride, stride);
    }
    std::span<const T> row(std::size_t r) const noexcept {
        const std::size_t stride = data_.size() / shape_[0];
        return std::span<const T>(data_).subspan(r * stride, stride);
    }

    Tensor reshaped(Shape shape) const & {
        if (checked_size(shape) != data_.size()) {
            throw DimensionError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
        }
        return Tensor(std::move(shape), data_);
    }
    Tensor reshaped(Shape shape) && {
        if (checked_size(shape) != data_.size()) {
            throw DimensionError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
        }
        shape_ = std::move(shape);
        return std::move(*this);
    }

    void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

    template <std::floating_point U>
    Tensor<U> cast() const {
        return Tensor<U>(shape_, std::vector<U>(data_.begin(), data_.end()));
    }

    friend bool operator==(const Tensor &, const Tensor &) = default;

private:
    static std::size_t checked_size(const Shape &shape) {
        if (shape.empty()) throw DimensionError("tensor shape must have at least one dimension");
        for (auto d : shape) {
            if (d == 0) throw DimensionError("tensor dimensions must be positive, got " + shape_string(shape));
        }
        return shape_size(shape);
    }

    Shape shape_;
    std::vector<T> data_;
};

/// Seeded random stream. The engine is std::mt19937_64, whose output sequence
/// is fixed by the standard; conversions to reals are done here rather than
/// through <random> distributions so streams are identical across toolchains.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : seed_(seed), engine_(seed) {}

    std::uint64_t seed() const noexcept { return seed_; }
    std::uint64_t next() { return engine_(); }

    /// Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n), rejection-sampled to avoid modulo bias.
    std::uint64_t below(std::uint64_t n) {
        if (n == 0) throw std::invalid_argument("Rng::below requires n > 0");
        const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                    std::numeric_limits<std::uint64_t>::max() % n;
        std::uint64_t x;
        do {
            x = engine_();
        } while (x >= limit);
        return x % n;
    }

    /// Standard normal via Box-Muller.
    double normal() {
        double u1;
        do {
            u1 = uniform();
        } while (u1 <= 0.0);
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
    }

    template <class It>
    void shuffle(It first, It last) {
        const auto n = static_cast<std::uint64_t>(last - first);
        for (std::uint64_t i = n; i > 1; --i) {
            const auto j = below(i);
            std::iter_swap(first + (i - 1), first + j);
        }
    }

private:
    std::uint64_t seed_;
    std::mt19937_64 engine_;
};

namespace detail {

inline void require_rank(const Shape &s, std::size_t rank, const char *what) {
    if (s.size() != rank) {
        throw DimensionError(std::string(what) + " expects a rank-" + std::to_string(rank) +
                             " tensor, got " + shape_string(s));
    }
}

template <std::floating_point T>
T dot(const T *a, const T *b, std::size_t n) {
    T acc{0};
#pragma omp simd reduction(+ : acc)
    for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
    return acc;
}

template <std::floating_point T>
void axpy(T alpha, const T *x, T *y, std::size_t n) {
#pragma omp simd
    for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

}  // namespace detail

/// a[m x k] * b[k x n]
template <std::floating_point T>
Tensor<T> matmul(const Tensor<T> &a, const Tensor<T> &b) {
    detail::require_rank(a.shape(), 2, "matmul");
    detail::require_rank(b.shape(), 2, "matmul");
    if (a.dim(1) != b.dim(0)) {
        throw DimensionError("matmul inner dimensions disagree: " + shape_string(a.shape()) + " * " +
                             shape_string(b.shape()));
    }
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    Tensor<T> c({m, n});
    for (std::size_t i = 0; i < m; ++i) {
        T *ci = c.data().data() + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const T aip = a(i, p);
            if (aip != T{0}) detail::axpy(aip, b.data().data() + p * n, ci, n);
        }
    }
    return c;
}

/// a[m x k] * b[n x k]^T
template <std::floating_point T>
Tensor<T> matmul_nt(const Tensor<T> &a, const Tensor<T> &b) {
    detail::require_rank(a.shape(), 2, "matmul_nt");
    detail::require_rank(b.shape(), 2, "matmul_nt");
    if (a.dim(1) != b.dim(1)) {
        throw DimensionError("matmul_nt inner dimensions disagree: " + shape_string(a.shape()) + " * " +
                             shape_string(b.shape()) + "^T");
    }
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
    Tensor<T> c({m, n});
    const T *ad = a.data().data();
    const T *bd = b.data().data();
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) c(i, j) = detail::dot(ad + i * k, bd + j * k, k);
    }
    return c;
}

/// a[k x m]^T * b[k x n]
template <std::floating_point T>
Tensor<T> matmul_tn(const Tensor<T> &a, const Tensor<T> &b) {
    detail::require_rank(a.shape(), 2, "matmul_tn");
    detail::require_rank(b.shape(), 2, "matmul_tn");
    if (a.dim(0) != b.dim(0)) {
        throw DimensionError("matmul_tn inner dimensions disagree: " + shape_string(a.shape()) + "^T * " +
                             shape_string(b.shape()));
    }
    const std::size_t k = a.dim(0), m = a.dim(1), n = b.dim(1);
    Tensor<T> c({m, n});
    T *cd = c.data().data();
    for (std::size_t p = 0; p < k; ++p) {
        const T *bp = b.data().data() + p * n;
        for (std::size_t i = 0; i < m; ++i) {
            const T api = a(p, i);
            if (api != T{0}) detail::axpy(api, bp, cd + i * n, n);
        }
    }
    return c;
}

/// Numerically stable softmax over a contiguous range, written into `out`.
template <std::floating_point T>
void softmax_into(std::span<const T> logits, std::span<T> out) {
    const T mx = *std::max_element(logits.begin(), logits.end());
    T sum{0};
    for (std::size_t i = 0; i < logits.size(); ++i) {
        out[i] = std::exp(logits[i] - mx);
        sum += out[i];
    }
    for (auto &v : out) v /= sum;
}

/// Softmax over all elements of `logits` (typically a length-K vector).
template <std::floating_point T>
Tensor<T> softmax(const Tensor<T> &logits) {
    Tensor<T> out(logits.shape());
    softmax_into<T>(logits.data(), out.data());
    return out;
}

/// Row-wise softmax applied independently to consecutive groups of `width`
/// columns of a [rows x cols] tensor.
template <std::floating_point T>
Tensor<T> softmax_groups(const Tensor<T> &logits, std::size_t width) {
    detail::require_rank(logits.shape(), 2, "softmax_groups");
    if (width == 0 || logits.dim(1) % width != 0) {
        throw DimensionError("softmax group width " + std::to_string(width) + " does not divide " +
                             shape_string(logits.shape()));
    }
    Tensor<T> out(logits.shape());
    const std::size_t n = logits.size();
    for (std::size_t off = 0; off < n; off += width) {
        softmax_into<T>(logits.data().subspan(off, width), out.data().subspan(off, width));
    }
    return out;
}

template <std::floating_point T>
T sigmoid(T x) {
    if (x >= T{0}) return T{1} / (T{1} + std::exp(-x));
    const T e = std::exp(x);
    return e / (T{1} + e);
}

template <std::floating_point T>
Tensor<T> sigmoid(const Tensor<T> &x) {
    Tensor<T> out(x.shape());
    std::transform(x.data().begin(), x.data().end(), out.data().begin(), [](T v) { return sigmoid(v); });
    return out;
}

/// Glorot-uniform samples in +-sqrt(6 / (fan_in + fan_out)).
template <std::floating_point T>
Tensor<T> init_glorot(Rng &rng, std::size_t fan_in, std::size_t fan_out, Shape shape) {
    if (fan_in == 0 || fan_out == 0) throw std::invalid_argument("init_glorot: fans must be positive");
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    Tensor<T> t(std::move(shape));
    for (auto &v : t.data()) v = static_cast<T>(rng.uniform(-bound, bound));
    return t;
}

template <std::floating_point T>
bool all_finite(const Tensor<T> &t) {
    return std::all_of(t.data().begin(), t.data().end(), [](T v) { return std::isfinite(v); });
}

template <std::floating_point T>
T max_abs_diff(const Tensor<T> &a, const Tensor<T> &b) {
    if (a.shape() != b.shape()) {
        throw DimensionError("max_abs_diff shape mismatch: " + shape_string(a.shape()) + " vs " +
                             shape_string(b.shape()));
    }
    T m{0};
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

}  // namespace lfnn

#endif  // LFNN_TENSOR_HPP
