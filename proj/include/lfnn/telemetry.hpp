#ifndef LFNN_TELEMETRY_HPP
#define LFNN_TELEMETRY_HPP

/// @file telemetry.hpp JSON-lines step records and CSV summaries.
///
/// telemetry.jsonl, one object per (step, model):
///   config_hash  string
///   step         integer, 0-based, per model
///   model        integer (class index for one-vs-all)
///   loss         {global, leader_local, follower_align, total}
///   running_accuracy  real in [0, 1]
///   layers       [{layer, leaders, best_leader, leader_loss, follower_loss,
///                  per_worker_loss?, activity?}]
///
/// summary.csv starts with a "# config_hash: <hash>" line followed by the
/// header epoch,train_err_pct,test_err_pct,mean_leader_loss,mean_follower_loss.

#include <charconv>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "engine.hpp"

namespace lfnn {

/// Shortest round-trip decimal form.
inline std::string format_double(double v) {
    char buf[64];
    const auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
}

inline std::ofstream open_output(const std::filesystem::path &path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write " + path.string());
    return f;
}

class TelemetryWriter {
public:
    TelemetryWriter() = default;
    TelemetryWriter(const std::filesystem::path &path, std::string hash, bool per_worker)
        : out_(open_output(path)), hash_(std::move(hash)), per_worker_(per_worker) {}

    bool is_open() const { return out_.is_open(); }

    void write(const StepTelemetry &t) {
        if (!out_.is_open()) return;
        nlohmann::ordered_json j;
        j["config_hash"] = hash_;
        j["step"] = t.step;
        j["model"] = t.model_index;
        j["loss"] = {{"global", t.loss.global},
                     {"leader_local", t.loss.leader_local},
                     {"follower_align", t.loss.follower_align},
                     {"total", t.loss.total}};
        j["running_accuracy"] = t.running_accuracy;
        auto layers = nlohmann::ordered_json::array();
        for (std::size_t l = 0; l < t.leadership.size(); ++l) {
            const auto &a = t.leadership[l];
            nlohmann::ordered_json o{{"layer", l},
                                     {"leaders", a.leader_indices},
                                     {"best_leader", a.best_leader},
                                     {"leader_loss", t.layer_losses[l].leader_local},
                                     {"follower_loss", t.layer_losses[l].follower_align}};
            if (per_worker_) {
                o["per_worker_loss"] = a.per_worker_loss;
                if (l < t.worker_activity.size()) o["activity"] = t.worker_activity[l];
            }
            layers.push_back(std::move(o));
        }
        j["layers"] = std::move(layers);
        out_ << j.dump() << '\n';
    }

    void flush() { out_.flush(); }

private:
    std::ofstream out_;
    std::string hash_;
    bool per_worker_ = true;
};

struct SummaryRow {
    std::size_t epoch = 0;
    double train_err_pct = 0;
    double test_err_pct = 0;
    double mean_leader_loss = 0;
    double mean_follower_loss = 0;

    friend bool operator==(const SummaryRow &, const SummaryRow &) = default;
};

inline constexpr const char *kSummaryHeader = "epoch,train_err_pct,test_err_pct,mean_leader_loss,mean_follower_loss";

inline void write_summary_csv(const std::filesystem::path &path, const std::string &hash,
                              const std::vector<SummaryRow> &rows) {
    auto f = open_output(path);
    f << "# config_hash: " << hash << '\n' << kSummaryHeader << '\n';
    for (const auto &r : rows) {
        f << r.epoch << ',' << format_double(r.train_err_pct) << ',' << format_double(r.test_err_pct) << ','
          << format_double(r.mean_leader_loss) << ',' << format_double(r.mean_follower_loss) << '\n';
    }
}

/// One row per training step: step,epoch,running_accuracy.
inline void write_trace_csv(const std::filesystem::path &path, const std::string &hash,
                            const std::vector<std::pair<std::size_t, double>> &trace) {
    auto f = open_output(path);
    f << "# config_hash: " << hash << "\nstep,epoch,running_accuracy\n";
    for (std::size_t s = 0; s < trace.size(); ++s) {
        f << s << ',' << trace[s].first << ',' << format_double(trace[s].second) << '\n';
    }
}

/// Accumulates mean leader / follower loss over (step, model, layer) records.
struct LossMeans {
    double leader = 0, follower = 0;
    std::size_t n = 0;

    void add(const StepTelemetry &t) {
        for (const auto &l : t.layer_losses) {
            leader += l.leader_local;
            follower += l.follower_align;
            ++n;
        }
    }
    double mean_leader() const { return n ? leader / static_cast<double>(n) : 0; }
    double mean_follower() const { return n ? follower / static_cast<double>(n) : 0; }
};

}  // namespace lfnn

#endif  // LFNN_TELEMETRY_HPP
