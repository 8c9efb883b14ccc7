#ifndef LFNN_DATA_HPP
#define LFNN_DATA_HPP

/// @file data.hpp MNIST (IDX) and CIFAR-10 (binary batch) ingestion, pixel
/// permutation, label encodings and batching.
///
/// Pixels are kept as raw bytes and normalized to [0, 1] (p / 255) when a
/// batch tensor is materialized.

#include <zlib.h>

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "tensor.hpp"

namespace lfnn {

class ParseError : public std::runtime_error {
public:
    ParseError(const std::string &file, std::size_t offset, const std::string &what)
        : std::runtime_error(file + " at byte " + std::to_string(offset) + ": " + what), offset_(offset) {}

    std::size_t offset() const noexcept { return offset_; }

private:
    std::size_t offset_;
};

enum class Split { train, test };

struct Dataset {
    Shape image_shape;                // C x H x W
    std::vector<std::uint8_t> pixels;  // n * C * H * W, row-major
    std::vector<int> labels;
    Split split = Split::train;
    std::size_t num_classes = 10;

    std::size_t size() const { return labels.size(); }
    std::size_t image_size() const { return shape_size(image_shape); }
    std::span<const std::uint8_t> image(std::size_t i) const {
        return std::span<const std::uint8_t>(pixels).subspan(i * image_size(), image_size());
    }

    void validate() const {
        if (pixels.size() != labels.size() * image_size()) {
            throw std::invalid_argument("dataset pixel count does not match " + std::to_string(labels.size()) +
                                        " images of " + shape_string(image_shape));
        }
        for (int l : labels) {
            if (l < 0 || static_cast<std::size_t>(l) >= num_classes) {
                throw std::invalid_argument("dataset label " + std::to_string(l) + " out of range");
            }
        }
    }

    /// [indices.size() x C x H x W], normalized.
    template <std::floating_point T>
    Tensor<T> images(std::span<const std::size_t> indices) const {
        Shape s{indices.size()};
        s.insert(s.end(), image_shape.begin(), image_shape.end());
        Tensor<T> t(s);
        const std::size_t per = image_size();
        for (std::size_t k = 0; k < indices.size(); ++k) {
            const auto src = image(indices[k]);
            T *dst = t.data().data() + k * per;
            for (std::size_t p = 0; p < per; ++p) dst[p] = static_cast<T>(src[p]) / T{255};
        }
        return t;
    }

    /// The first `n` examples (all when n == 0 or n >= size()).
    Dataset head(std::size_t n) const {
        if (n == 0 || n >= size()) return *this;
        Dataset d{image_shape, {}, {labels.begin(), labels.begin() + static_cast<std::ptrdiff_t>(n)}, split,
                  num_classes};
        d.pixels.assign(pixels.begin(), pixels.begin() + static_cast<std::ptrdiff_t>(n * image_size()));
        return d;
    }
};

// ---------------------------------------------------------------------------
// File access

/// Reads a whole file, transparently inflating gzip. Falls back to
/// `path + ".gz"` when `path` does not exist.
inline std::vector<std::uint8_t> read_maybe_gzipped(const std::filesystem::path &path) {
    std::filesystem::path actual = path;
    if (!std::filesystem::exists(actual)) {
        auto gz = path;
        gz += ".gz";
        if (!std::filesystem::exists(gz)) throw std::runtime_error("missing data file: " + path.string());
        actual = gz;
    }
    gzFile f = gzopen(actual.string().c_str(), "rb");
    if (!f) throw std::runtime_error("cannot open " + actual.string());
    std::vector<std::uint8_t> out;
    std::uint8_t buf[1 << 16];
    int n;
    while ((n = gzread(f, buf, sizeof buf)) > 0) out.insert(out.end(), buf, buf + n);
    const bool failed = n < 0;
    gzclose(f);
    if (failed) throw std::runtime_error("read error in " + actual.string());
    return out;
}

namespace detail {

inline std::uint32_t read_be32(std::span<const std::uint8_t> bytes, std::size_t offset, const std::string &name) {
    if (bytes.size() < offset + 4) {
        throw ParseError(name, offset, "truncated header: need " + std::to_string(offset + 4) + " bytes, have " +
                                           std::to_string(bytes.size()));
    }
    return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
           (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

}  // namespace detail

struct IdxImages {
    std::size_t count = 0, rows = 0, cols = 0;
    std::vector<std::uint8_t> pixels;
};

inline IdxImages parse_idx_images(std::span<const std::uint8_t> bytes, const std::string &name = "idx") {
    const auto magic = detail::read_be32(bytes, 0, name);
    if (magic != 0x00000803) throw ParseError(name, 0, "bad image magic " + std::to_string(magic));
    IdxImages img{detail::read_be32(bytes, 4, name), detail::read_be32(bytes, 8, name),
                  detail::read_be32(bytes, 12, name), {}};
    const std::size_t expected = 16 + img.count * img.rows * img.cols;
    if (bytes.size() != expected) {
        throw ParseError(name, std::min(bytes.size(), expected),
                         "expected " + std::to_string(expected) + " bytes, file has " + std::to_string(bytes.size()));
    }
    img.pixels.assign(bytes.begin() + 16, bytes.end());
    return img;
}

inline std::vector<int> parse_idx_labels(std::span<const std::uint8_t> bytes, const std::string &name = "idx") {
    const auto magic = detail::read_be32(bytes, 0, name);
    if (magic != 0x00000801) throw ParseError(name, 0, "bad label magic " + std::to_string(magic));
    const std::size_t count = detail::read_be32(bytes, 4, name);
    const std::size_t expected = 8 + count;
    if (bytes.size() != expected) {
        throw ParseError(name, std::min(bytes.size(), expected),
                         "expected " + std::to_string(expected) + " bytes, file has " + std::to_string(bytes.size()));
    }
    std::vector<int> labels(bytes.begin() + 8, bytes.end());
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] > 9) throw ParseError(name, 8 + i, "label " + std::to_string(labels[i]) + " out of range");
    }
    return labels;
}

inline Dataset load_idx_pair(const std::filesystem::path &images, const std::filesystem::path &labels, Split split) {
    const auto img = parse_idx_images(read_maybe_gzipped(images), images.filename().string());
    auto lab = parse_idx_labels(read_maybe_gzipped(labels), labels.filename().string());
    if (img.count != lab.size()) {
        throw ParseError(labels.filename().string(), 4,
                         "label count " + std::to_string(lab.size()) + " does not match image count " +
                             std::to_string(img.count));
    }
    return Dataset{{1, img.rows, img.cols}, img.pixels, std::move(lab), split, 10};
}

/// Standard file names (optionally .gz) in `dir`.
inline std::pair<Dataset, Dataset> load_mnist(const std::filesystem::path &dir) {
    return {load_idx_pair(dir / "train-images-idx3-ubyte", dir / "train-labels-idx1-ubyte", Split::train),
            load_idx_pair(dir / "t10k-images-idx3-ubyte", dir / "t10k-labels-idx1-ubyte", Split::test)};
}

inline constexpr std::size_t kCifarRecord = 1 + 3 * 32 * 32;

inline void append_cifar_batch(std::span<const std::uint8_t> bytes, const std::string &name, Dataset &ds) {
    if (bytes.empty() || bytes.size() % kCifarRecord != 0) {
        throw ParseError(name, bytes.size() - bytes.size() % kCifarRecord,
                         "file size " + std::to_string(bytes.size()) + " is not a multiple of the " +
                             std::to_string(kCifarRecord) + "-byte record");
    }
    const std::size_t n = bytes.size() / kCifarRecord;
    for (std::size_t r = 0; r < n; ++r) {
        const std::size_t off = r * kCifarRecord;
        if (bytes[off] > 9) throw ParseError(name, off, "label " + std::to_string(bytes[off]) + " out of range");
        ds.labels.push_back(bytes[off]);
        ds.pixels.insert(ds.pixels.end(), bytes.begin() + static_cast<std::ptrdiff_t>(off + 1),
                         bytes.begin() + static_cast<std::ptrdiff_t>(off + kCifarRecord));
    }
}

/// data_batch_1..5.bin and test_batch.bin in `dir` or `dir/cifar-10-batches-bin`.
inline std::pair<Dataset, Dataset> load_cifar10(const std::filesystem::path &dir) {
    std::filesystem::path root = dir;
    if (!std::filesystem::exists(root / "test_batch.bin") && !std::filesystem::exists(root / "test_batch.bin.gz") &&
        std::filesystem::exists(dir / "cifar-10-batches-bin")) {
        root = dir / "cifar-10-batches-bin";
    }
    Dataset train{{3, 32, 32}, {}, {}, Split::train, 10};
    Dataset test{{3, 32, 32}, {}, {}, Split::test, 10};
    for (int i = 1; i <= 5; ++i) {
        const auto name = "data_batch_" + std::to_string(i) + ".bin";
        append_cifar_batch(read_maybe_gzipped(root / name), name, train);
    }
    append_cifar_batch(read_maybe_gzipped(root / "test_batch.bin"), "test_batch.bin", test);
    return {std::move(train), std::move(test)};
}

// ---------------------------------------------------------------------------
// Transforms

/// Bijection over pixel positions: output pixel i takes input pixel mapping[i].
struct Permutation {
    std::uint64_t seed = 0;
    std::vector<std::size_t> mapping;

    static Permutation identity(std::size_t n) {
        Permutation p{0, std::vector<std::size_t>(n)};
        std::iota(p.mapping.begin(), p.mapping.end(), std::size_t{0});
        return p;
    }

    static Permutation random(std::size_t n, std::uint64_t seed) {
        Permutation p = identity(n);
        p.seed = seed;
        Rng rng(seed);
        rng.shuffle(p.mapping.begin(), p.mapping.end());
        return p;
    }

    Permutation inverse() const {
        Permutation inv{seed, std::vector<std::size_t>(mapping.size())};
        for (std::size_t i = 0; i < mapping.size(); ++i) inv.mapping[mapping[i]] = i;
        return inv;
    }

    bool is_bijection() const {
        auto sorted = mapping;
        std::sort(sorted.begin(), sorted.end());
        for (std::size_t i = 0; i < sorted.size(); ++i) {
            if (sorted[i] != i) return false;
        }
        return true;
    }
};

/// Applies the same spatial permutation to every channel of every image.
inline Dataset permute_pixels(const Dataset &ds, const Permutation &perm) {
    const std::size_t hw = ds.image_shape.at(1) * ds.image_shape.at(2);
    if (perm.mapping.size() != hw) {
        throw DimensionError("permutation of size " + std::to_string(perm.mapping.size()) + " does not match " +
                             std::to_string(hw) + " pixel positions");
    }
    if (!perm.is_bijection()) throw std::invalid_argument("permutation mapping is not a bijection");
    Dataset out = ds;
    const std::size_t channels = ds.image_shape[0];
    for (std::size_t i = 0; i < ds.size(); ++i) {
        const auto src = ds.image(i);
        std::uint8_t *dst = out.pixels.data() + i * ds.image_size();
        for (std::size_t c = 0; c < channels; ++c) {
            for (std::size_t p = 0; p < hw; ++p) dst[c * hw + p] = src[c * hw + perm.mapping[p]];
        }
    }
    return out;
}

inline std::vector<int> one_vs_all_labels(std::span<const int> labels, int positive_class) {
    if (positive_class < 0) throw std::invalid_argument("one_vs_all_labels: negative class");
    std::vector<int> out(labels.size());
    std::transform(labels.begin(), labels.end(), out.begin(), [&](int l) { return l == positive_class ? 1 : 0; });
    return out;
}

/// Index lists covering [0, n) once; the last batch may be short.
inline std::vector<std::vector<std::size_t>> batches(std::size_t n, std::size_t batch_size, Rng *rng,
                                                     bool shuffle) {
    if (batch_size == 0) throw std::invalid_argument("batches: batch_size must be positive");
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    if (shuffle) {
        if (!rng) throw std::invalid_argument("batches: shuffling needs an rng");
        rng->shuffle(order.begin(), order.end());
    }
    std::vector<std::vector<std::size_t>> out;
    for (std::size_t start = 0; start < n; start += batch_size) {
        const std::size_t end = std::min(n, start + batch_size);
        out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(end));
    }
    return out;
}

}  // namespace lfnn

#endif  // LFNN_DATA_HPP
