#ifndef LFNN_CONFIG_HPP
#define LFNN_CONFIG_HPP

/// @file config.hpp Versioned JSON experiment configuration. Unknown keys are
/// rejected with their full path.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "engine.hpp"
#include "model.hpp"

namespace lfnn {

using json = nlohmann::ordered_json;

inline constexpr int kSchemaVersion = 1;

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class ExperimentKind {
    online_permuted_mnist,
    mnist_classify,
    cifar10_classify,
    leadership_sweep,
    ablation,
    leadership_development
};

enum class DataFormat { mnist, cifar10 };
enum class Precision { float32, float64 };

struct DataConfig {
    DataFormat format = DataFormat::mnist;
    std::string dir = "data/mnist";
    std::optional<std::uint64_t> permutation_seed;  // pixel permutation for both splits
    std::size_t train_limit = 0;                     // 0 = all
    std::size_t test_limit = 0;
};

struct ModelConfig {
    Head head = Head::softmax_ce;
    bool one_vs_all = false;  // one binary sigmoid-bce model per class
    std::vector<LayerSpec> layers;
};

struct TelemetryConfig {
    std::size_t every = 1;       // write a JSONL record every N steps (0 = never)
    bool per_worker = true;      // include per-worker losses and activity
    std::size_t probe_size = 64;  // first N test images; 0 disables activity
};

struct SweepConfig {
    std::vector<double> deltas;
    bool bp_reference = false;  // add a plain-backprop row
    ExperimentKind base = ExperimentKind::online_permuted_mnist;
};

struct DevelopmentConfig {
    std::size_t steps_per_epoch = 0;  // 0 = full epoch
};

struct ExperimentConfig {
    ExperimentKind experiment = ExperimentKind::online_permuted_mnist;
    DataConfig data;
    ModelConfig model;
    TrainConfig train;
    Precision precision = Precision::float32;
    TelemetryConfig telemetry;
    SweepConfig sweep;
    DevelopmentConfig development;

    void validate() const;
};

// ---------------------------------------------------------------------------
// Enum spellings

namespace detail {

template <class E>
struct Spelling {
    E value;
    const char *name;
};

inline constexpr Spelling<ExperimentKind> kKinds[] = {
    {ExperimentKind::online_permuted_mnist, "online-permuted-mnist"},
    {ExperimentKind::mnist_classify, "mnist-classify"},
    {ExperimentKind::cifar10_classify, "cifar10-classify"},
    {ExperimentKind::leadership_sweep, "leadership-sweep"},
    {ExperimentKind::ablation, "ablation"},
    {ExperimentKind::leadership_development, "leadership-development"}};
inline constexpr Spelling<DataFormat> kFormats[] = {{DataFormat::mnist, "mnist"}, {DataFormat::cifar10, "cifar10"}};
inline constexpr Spelling<Precision> kPrecisions[] = {{Precision::float32, "float32"}, {Precision::float64, "float64"}};
inline constexpr Spelling<Head> kHeads[] = {{Head::sigmoid_bce, "sigmoid-bce"}, {Head::softmax_ce, "softmax-ce"}};
inline constexpr Spelling<TrainMode> kModes[] = {{TrainMode::lfnn, "lfnn"}, {TrainMode::lfnn_local, "lfnn-l"}};
inline constexpr Spelling<Ablation> kAblations[] = {
    {Ablation::L1, "L1"}, {Ablation::L2, "L2"}, {Ablation::L3, "L3"}, {Ablation::L4, "L4"}};
inline constexpr Spelling<LeaderSelection> kSelections[] = {{LeaderSelection::per_batch, "per-batch"},
                                                            {LeaderSelection::per_epoch, "per-epoch"}};
inline constexpr Spelling<OptimizerKind> kOptimizers[] = {{OptimizerKind::adam, "adam"}, {OptimizerKind::sgd, "sgd"}};
inline constexpr Spelling<LayerSpec::Type> kLayerTypes[] = {{LayerSpec::Type::dense, "dense"},
                                                            {LayerSpec::Type::conv, "conv"}};

template <class E, std::size_t N>
const char *spell(const Spelling<E> (&table)[N], E v) {
    for (const auto &s : table)
        if (s.value == v) return s.name;
    throw std::logic_error("unspelled enum value");
}

template <class E, std::size_t N>
E parse_enum(const Spelling<E> (&table)[N], const std::string &text, const std::string &path) {
    std::string options;
    for (const auto &s : table) {
        if (text == s.name) return s.value;
        options += options.empty() ? "" : ", ";
        options += s.name;
    }
    throw ConfigError(path + ": unknown value \"" + text + "\" (expected one of " + options + ")");
}

/// Reads one JSON object, remembering which keys were consumed.
class ObjectReader {
public:
    ObjectReader(const json &j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) throw ConfigError(where() + ": expected an object");
    }

    bool has(const std::string &key) const { return j_.contains(key); }

    template <class T>
    void get(const std::string &key, T &out) {
        if (!j_.contains(key)) return;
        seen_.insert(key);
        try {
            out = j_.at(key).get<T>();
        } catch (const nlohmann::json::exception &e) {
            throw ConfigError(child(key) + ": " + strip(e.what()));
        }
    }

    template <class E, std::size_t N>
    void get_enum(const std::string &key, const Spelling<E> (&table)[N], E &out) {
        if (!j_.contains(key)) return;
        std::string s;
        get(key, s);
        out = parse_enum(table, s, child(key));
    }

    const json &sub(const std::string &key) {
        seen_.insert(key);
        return j_.at(key);
    }

    std::string child(const std::string &key) const { return path_.empty() ? key : path_ + "." + key; }

    void finish() const {
        for (auto it = j_.begin(); it != j_.end(); ++it) {
            if (!seen_.count(it.key())) throw ConfigError("unknown config field \"" + child(it.key()) + "\"");
        }
    }

private:
    std::string where() const { return path_.empty() ? "config" : path_; }
    static std::string strip(const std::string &what) {
        const auto p = what.find("] ");
        return p == std::string::npos ? what : what.substr(p + 2);
    }

    const json &j_;
    std::string path_;
    std::set<std::string> seen_;
};

}  // namespace detail

inline std::string to_string(ExperimentKind k) { return detail::spell(detail::kKinds, k); }

// ---------------------------------------------------------------------------
// Parsing

inline ExperimentConfig parse_config(const json &root) {
    using detail::ObjectReader;
    ExperimentConfig c;
    ObjectReader r(root, "");
    int version = 0;
    if (!r.has("schema_version")) throw ConfigError("schema_version: missing (expected " + std::to_string(kSchemaVersion) + ")");
    r.get("schema_version", version);
    if (version != kSchemaVersion) {
        throw ConfigError("schema_version: unsupported version " + std::to_string(version) + " (expected " +
                          std::to_string(kSchemaVersion) + ")");
    }
    if (!r.has("experiment")) throw ConfigError("experiment: missing");
    r.get_enum("experiment", detail::kKinds, c.experiment);
    c.data.format = c.experiment == ExperimentKind::cifar10_classify ? DataFormat::cifar10 : DataFormat::mnist;
    if (c.data.format == DataFormat::cifar10) c.data.dir = "data/cifar10";

    if (r.has("data")) {
        ObjectReader d(r.sub("data"), "data");
        d.get_enum("format", detail::kFormats, c.data.format);
        d.get("dir", c.data.dir);
        if (d.has("permutation_seed") && !r.sub("data").at("permutation_seed").is_null()) {
            std::uint64_t s = 0;
            d.get("permutation_seed", s);
            c.data.permutation_seed = s;
        } else if (d.has("permutation_seed")) {
            d.sub("permutation_seed");
        }
        d.get("train_limit", c.data.train_limit);
        d.get("test_limit", c.data.test_limit);
        d.finish();
    }

    if (!r.has("model")) throw ConfigError("model: missing");
    {
        ObjectReader m(r.sub("model"), "model");
        m.get_enum("head", detail::kHeads, c.model.head);
        m.get("one_vs_all", c.model.one_vs_all);
        if (!m.has("layers")) throw ConfigError("model.layers: missing");
        const json &layers = m.sub("layers");
        if (!layers.is_array()) throw ConfigError("model.layers: expected an array");
        for (std::size_t i = 0; i < layers.size(); ++i) {
            ObjectReader l(layers[i], "model.layers[" + std::to_string(i) + "]");
            LayerSpec s;
            l.get_enum("type", detail::kLayerTypes, s.type);
            l.get("workers", s.workers);
            l.get("worker_width", s.worker_width);
            l.get("kernel", s.kernel);
            l.get("stride", s.stride);
            l.get("padding", s.padding);
            l.finish();
            c.model.layers.push_back(s);
        }
        m.finish();
    }

    if (r.has("train")) {
        ObjectReader t(r.sub("train"), "train");
        auto &tc = c.train;
        t.get_enum("mode", detail::kModes, tc.mode);
        t.get("delta", tc.delta);
        t.get("lambda1", tc.lambda1);
        t.get("lambda2", tc.lambda2);
        t.get("lambda", tc.lambda);
        t.get("leader_local", tc.leader_local);
        t.get("mask_follower_global", tc.mask_follower_global);
        if (t.has("ablation") && !r.sub("train").at("ablation").is_null()) {
            Ablation a{};
            t.get_enum("ablation", detail::kAblations, a);
            tc.ablation = a;
        } else if (t.has("ablation")) {
            t.sub("ablation");
        }
        t.get_enum("selection", detail::kSelections, tc.selection);
        if (t.has("optimizer")) {
            ObjectReader o(t.sub("optimizer"), "train.optimizer");
            o.get_enum("kind", detail::kOptimizers, tc.optimizer.kind);
            o.get("lr", tc.optimizer.lr);
            o.get("beta1", tc.optimizer.beta1);
            o.get("beta2", tc.optimizer.beta2);
            o.get("eps", tc.optimizer.eps);
            o.finish();
        }
        t.get("batch_size", tc.batch_size);
        t.get("epochs", tc.epochs);
        t.get("seed", tc.seed);
        t.get("threads", tc.threads);
        t.finish();
    }
    r.get_enum("precision", detail::kPrecisions, c.precision);

    if (r.has("telemetry")) {
        ObjectReader t(r.sub("telemetry"), "telemetry");
        t.get("every", c.telemetry.every);
        t.get("per_worker", c.telemetry.per_worker);
        t.get("probe_size", c.telemetry.probe_size);
        t.finish();
    }
    if (r.has("sweep")) {
        ObjectReader s(r.sub("sweep"), "sweep");
        s.get("deltas", c.sweep.deltas);
        s.get("bp_reference", c.sweep.bp_reference);
        s.get_enum("base", detail::kKinds, c.sweep.base);
        s.finish();
    }
    if (r.has("development")) {
        ObjectReader d(r.sub("development"), "development");
        d.get("steps_per_epoch", c.development.steps_per_epoch);
        d.finish();
    }
    r.finish();
    c.validate();
    return c;
}

inline ExperimentConfig parse_config_text(const std::string &text, const std::string &name = "config") {
    json j;
    try {
        j = json::parse(text);
    } catch (const nlohmann::json::parse_error &e) {
        throw ConfigError(name + ": " + e.what());
    }
    return parse_config(j);
}

inline ExperimentConfig load_config(const std::filesystem::path &path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot read config " + path.string());
    std::stringstream ss;
    ss << f.rdbuf();
    return parse_config_text(ss.str(), path.string());
}

// ---------------------------------------------------------------------------
// Resolved snapshot

/// Every field written explicitly; parse_config(to_json(c)) reproduces c.
inline json to_json(const ExperimentConfig &c) {
    using detail::spell;
    json j;
    j["schema_version"] = kSchemaVersion;
    j["experiment"] = spell(detail::kKinds, c.experiment);
    j["data"] = {{"format", spell(detail::kFormats, c.data.format)},
                 {"dir", c.data.dir},
                 {"permutation_seed", c.data.permutation_seed ? json(*c.data.permutation_seed) : json(nullptr)},
                 {"train_limit", c.data.train_limit},
                 {"test_limit", c.data.test_limit}};
    json layers = json::array();
    for (const auto &l : c.model.layers) {
        json o{{"type", spell(detail::kLayerTypes, l.type)}, {"workers", l.workers}, {"worker_width", l.worker_width}};
        if (l.type == LayerSpec::Type::conv) {
            o["kernel"] = l.kernel;
            o["stride"] = l.stride;
            o["padding"] = l.padding;
        }
        layers.push_back(o);
    }
    j["model"] = {{"head", spell(detail::kHeads, c.model.head)}, {"one_vs_all", c.model.one_vs_all}, {"layers", layers}};
    const auto &t = c.train;
    j["train"] = {{"mode", spell(detail::kModes, t.mode)},
                  {"delta", t.delta},
                  {"lambda1", t.lambda1},
                  {"lambda2", t.lambda2},
                  {"lambda", t.lambda},
                  {"leader_local", t.leader_local},
                  {"mask_follower_global", t.mask_follower_global},
                  {"ablation", t.ablation ? json(spell(detail::kAblations, *t.ablation)) : json(nullptr)},
                  {"selection", spell(detail::kSelections, t.selection)},
                  {"optimizer",
                   {{"kind", spell(detail::kOptimizers, t.optimizer.kind)},
                    {"lr", t.optimizer.lr},
                    {"beta1", t.optimizer.beta1},
                    {"beta2", t.optimizer.beta2},
                    {"eps", t.optimizer.eps}}},
                  {"batch_size", t.batch_size},
                  {"epochs", t.epochs},
                  {"seed", t.seed},
                  {"threads", t.threads}};
    j["precision"] = spell(detail::kPrecisions, c.precision);
    j["telemetry"] = {{"every", c.telemetry.every},
                      {"per_worker", c.telemetry.per_worker},
                      {"probe_size", c.telemetry.probe_size}};
    j["sweep"] = {{"deltas", c.sweep.deltas},
                  {"bp_reference", c.sweep.bp_reference},
                  {"base", spell(detail::kKinds, c.sweep.base)}};
    j["development"] = {{"steps_per_epoch", c.development.steps_per_epoch}};
    return j;
}

/// FNV-1a over the resolved snapshot, excluding the thread count (which does
/// not change results).
inline std::string config_hash(const ExperimentConfig &c) {
    json j = to_json(c);
    j["train"].erase("threads");
    const std::string s = j.dump();
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char ch : s) {
        h ^= ch;
        h *= 1099511628211ull;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

// ---------------------------------------------------------------------------
// Validation

/// Architecture of one trained model; input C x H x W comes from the data.
inline Architecture make_architecture(const ExperimentConfig &c, const Shape &input, std::size_t num_classes) {
    Architecture a;
    a.input = input;
    a.head = c.model.one_vs_all ? Head::sigmoid_bce : c.model.head;
    a.num_classes = a.head == Head::sigmoid_bce ? 2 : num_classes;
    a.hidden = c.model.layers;
    return a;
}

inline void ExperimentConfig::validate() const {
    try {
        train.validate();
    } catch (const std::invalid_argument &e) {
        throw ConfigError(std::string("train: ") + e.what());
    }
    if (model.one_vs_all && model.head != Head::sigmoid_bce) {
        throw ConfigError("model.one_vs_all: requires model.head \"sigmoid-bce\"");
    }
    if (!model.one_vs_all && model.head == Head::sigmoid_bce) {
        throw ConfigError("model.head: sigmoid-bce on a 10-class dataset needs model.one_vs_all = true");
    }
    const std::size_t width = model.head == Head::sigmoid_bce ? 1 : 10;
    for (std::size_t i = 0; i < model.layers.size(); ++i) {
        const auto &l = model.layers[i];
        const std::string p = "model.layers[" + std::to_string(i) + "]";
        if (l.workers == 0) throw ConfigError(p + ".workers: must be positive");
        if (l.worker_width != width) {
            throw ConfigError(p + ".worker_width: must equal the head arity " + std::to_string(width));
        }
    }
    try {
        make_architecture(*this, {1, 28, 28}, 10).validate();
    } catch (const std::invalid_argument &e) {
        throw ConfigError(std::string("model: ") + e.what());
    }
    if (experiment == ExperimentKind::ablation && train.mode != TrainMode::lfnn) {
        throw ConfigError("train.mode: the ablation experiment requires \"lfnn\" (backprop) mode");
    }
    if (experiment == ExperimentKind::leadership_sweep) {
        if (sweep.deltas.empty()) throw ConfigError("sweep.deltas: needs at least one value");
        for (double d : sweep.deltas) {
            if (!(d > 0 && d <= 1)) throw ConfigError("sweep.deltas: " + std::to_string(d) + " is outside (0, 1]");
        }
        if (sweep.base == ExperimentKind::leadership_sweep || sweep.base == ExperimentKind::ablation ||
            sweep.base == ExperimentKind::leadership_development) {
            throw ConfigError("sweep.base: must be a single-run experiment kind");
        }
    }
}

}  // namespace lfnn

#endif  // LFNN_CONFIG_HPP
