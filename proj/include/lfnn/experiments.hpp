#ifndef LFNN_EXPERIMENTS_HPP
#define LFNN_EXPERIMENTS_HPP

/// @file experiments.hpp Config-driven experiment runs: online one-pass
/// training, multi-epoch classification, leadership sweeps, the loss ablation
/// and leadership development.

#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <string>
#include <thread>
#include <vector>

#include "config.hpp"
#include "data.hpp"
#include "engine.hpp"
#include "telemetry.hpp"

namespace lfnn {

namespace fs = std::filesystem;

struct ExperimentData {
    Dataset train;
    Dataset test;
};

/// Loads both splits, applies the limits and the optional pixel permutation.
inline ExperimentData load_experiment_data(const DataConfig &d) {
    auto [train, test] = d.format == DataFormat::mnist ? load_mnist(d.dir) : load_cifar10(d.dir);
    ExperimentData out{train.head(d.train_limit), test.head(d.test_limit)};
    if (d.permutation_seed) {
        const auto perm = Permutation::random(out.train.image_shape[1] * out.train.image_shape[2], *d.permutation_seed);
        out.train = permute_pixels(out.train, perm);
        out.test = permute_pixels(out.test, perm);
    }
    return out;
}

struct RunOptions {
    std::ostream *log = nullptr;  // progress lines
    std::size_t log_every = 0;    // steps between progress lines (0 = epoch ends only)
    bool parallel = false;        // sweep: run cells concurrently
};

struct RunResult {
    std::string config_hash;
    std::vector<SummaryRow> summary;
    std::vector<std::pair<std::size_t, double>> trace;  // (epoch, running accuracy) per step
    EvalResult test;                                     // after the last epoch
    double final_running_accuracy = 0;
    std::size_t parameter_count = 0;
    // leadership development: [epoch][layer] leader sets and their Jaccard vs the previous epoch
    std::vector<std::vector<std::vector<std::size_t>>> epoch_leaders;
    std::vector<std::vector<std::vector<std::size_t>>> epoch_counts;
    std::vector<std::vector<double>> jaccard;
};

namespace detail {

inline void write_snapshot(const ExperimentConfig &c, const fs::path &out, const std::string &hash) {
    auto j = to_json(c);
    auto f = open_output(out / "resolved_config.json");
    f << j.dump(2) << '\n';
    auto h = open_output(out / "config_hash.txt");
    h << hash << '\n';
}

template <std::floating_point T>
RunResult run_single_impl(const ExperimentConfig &c, const ExperimentData &data, const fs::path &out,
                          const RunOptions &opt) {
    RunResult res;
    res.config_hash = config_hash(c);
    fs::create_directories(out);
    write_snapshot(c, out, res.config_hash);

    const auto arch = make_architecture(c, data.train.image_shape, data.train.num_classes);
    auto learner = Learner<T>::make(arch, c.train, c.model.one_vs_all, data.train.num_classes);
    res.parameter_count = learner.parameter_count();

    TelemetryWriter tel;
    if (c.telemetry.every > 0) tel = TelemetryWriter(out / "telemetry.jsonl", res.config_hash, c.telemetry.per_worker);
    Tensor<T> probe;
    const bool use_probe = c.telemetry.every > 0 && c.telemetry.per_worker && c.telemetry.probe_size > 0;
    if (use_probe) {
        std::vector<std::size_t> idx(std::min(c.telemetry.probe_size, data.test.size()));
        std::iota(idx.begin(), idx.end(), std::size_t{0});
        probe = data.test.images<T>(idx);
    }

    const bool online = c.experiment == ExperimentKind::online_permuted_mnist;
    const std::size_t epochs = online ? 1 : c.train.epochs;
    const bool development = c.experiment == ExperimentKind::leadership_development;
    Rng order_rng(c.train.seed ^ 0x9e3779b97f4a7c15ull);
    std::size_t global_step = 0;

    for (std::size_t epoch = 1; epoch <= epochs; ++epoch) {
        learner.begin_epoch();
        auto order = batches(data.train.size(), c.train.batch_size, &order_rng, !online);
        if (c.development.steps_per_epoch > 0 && order.size() > c.development.steps_per_epoch) {
            order.resize(c.development.steps_per_epoch);
        }
        std::size_t seen = 0, correct = 0;
        LossMeans means;
        std::vector<std::vector<std::size_t>> counts;  // model 0, per layer
        for (std::size_t s = 0; s < order.size(); ++s) {
            const bool record = c.telemetry.every > 0 && global_step % c.telemetry.every == 0;
            const auto rows = learner.step(make_batch<T>(data.train, order[s]), record && use_probe ? &probe : nullptr);
            seen += order[s].size();
            correct += rows[0].batch_correct;
            const double acc = static_cast<double>(correct) / static_cast<double>(seen);
            res.trace.emplace_back(epoch, acc);
            for (const auto &r : rows) {
                means.add(r);
                if (record) {
                    StepTelemetry copy = r;
                    copy.running_accuracy = acc;
                    tel.write(copy);
                }
            }
            if (development) {
                const auto &lead = rows[0].leadership;
                if (counts.empty()) {
                    counts.resize(lead.size());
                    for (std::size_t l = 0; l < lead.size(); ++l) counts[l].assign(lead[l].num_workers(), 0);
                }
                for (std::size_t l = 0; l < lead.size(); ++l)
                    for (auto w : lead[l].leader_indices) ++counts[l][w];
            }
            ++global_step;
            if (opt.log && opt.log_every && global_step % opt.log_every == 0) {
                *opt.log << "  step " << global_step << " running acc " << acc << std::endl;
            }
        }
        res.final_running_accuracy = seen ? static_cast<double>(correct) / static_cast<double>(seen) : 0;
        res.test = evaluate(learner, data.test);
        res.summary.push_back(
            {epoch, 100.0 * (1.0 - res.final_running_accuracy), res.test.test_error, means.mean_leader(), means.mean_follower()});
        if (development && !counts.empty()) {
            std::vector<std::vector<std::size_t>> sets;
            std::vector<double> jac;
            for (std::size_t l = 0; l < counts.size(); ++l) {
                sets.push_back(top_leaders(counts[l], leader_count(c.train.delta, counts[l].size())));
                jac.push_back(res.epoch_leaders.empty() ? 0.0 : jaccard(sets[l], res.epoch_leaders.back()[l]));
            }
            res.epoch_leaders.push_back(std::move(sets));
            res.epoch_counts.push_back(counts);
            res.jaccard.push_back(std::move(jac));
        }
        if (opt.log) {
            *opt.log << "epoch " << epoch << ": train err " << res.summary.back().train_err_pct << "%, test err "
                     << res.test.test_error << "%" << std::endl;
        }
        tel.flush();
    }

    write_summary_csv(out / "summary.csv", res.config_hash, res.summary);
    write_trace_csv(out / "trace.csv", res.config_hash, res.trace);
    if (development) {
        auto f = open_output(out / "leadership.csv");
        f << "# config_hash: " << res.config_hash << "\nepoch,layer,worker,count,in_top_set\n";
        for (std::size_t e = 0; e < res.epoch_counts.size(); ++e)
            for (std::size_t l = 0; l < res.epoch_counts[e].size(); ++l)
                for (std::size_t w = 0; w < res.epoch_counts[e][l].size(); ++w) {
                    const auto &set = res.epoch_leaders[e][l];
                    f << e + 1 << ',' << l << ',' << w << ',' << res.epoch_counts[e][l][w] << ','
                      << (std::binary_search(set.begin(), set.end(), w) ? 1 : 0) << '\n';
                }
        auto g = open_output(out / "jaccard.csv");
        g << "# config_hash: " << res.config_hash << "\nepoch,layer,jaccard_vs_previous\n";
        for (std::size_t e = 1; e < res.jaccard.size(); ++e)
            for (std::size_t l = 0; l < res.jaccard[e].size(); ++l)
                g << e + 1 << ',' << l << ',' << format_double(res.jaccard[e][l]) << '\n';
    }
    return res;
}

inline std::string delta_label(double d) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "delta_%.3g", d);
    return buf;
}

}  // namespace detail

/// A single-run experiment kind (online, classify, development).
inline RunResult run_single(const ExperimentConfig &c, const ExperimentData &data, const fs::path &out,
                            const RunOptions &opt = {}) {
    return c.precision == Precision::float32 ? detail::run_single_impl<float>(c, data, out, opt)
                                             : detail::run_single_impl<double>(c, data, out, opt);
}

/// The plain-backprop reference: lfnn mode, global loss only, every worker a
/// leader, no follower mask.
inline ExperimentConfig plain_bp_variant(ExperimentConfig c) {
    c.train.mode = TrainMode::lfnn;
    c.train.ablation = Ablation::L4;
    c.train.delta = 1.0;
    c.train.mask_follower_global = false;
    return c;
}

struct SweepRow {
    std::string label;
    double delta = 0;
    bool ok = false;
    std::string error;
    RunResult result;
};

/// One run per delta (shared seed), plus an optional plain-backprop row. A
/// failing cell is recorded and the remaining cells still run.
inline std::vector<SweepRow> sweep_leadership(const ExperimentConfig &base, const ExperimentData &data,
                                              const fs::path &out, const RunOptions &opt = {}) {
    std::vector<SweepRow> rows;
    std::vector<std::pair<std::string, ExperimentConfig>> cells;
    for (double d : base.sweep.deltas) {
        ExperimentConfig c = base;
        c.experiment = base.sweep.base;
        c.train.delta = d;
        cells.emplace_back(detail::delta_label(d), c);
    }
    if (base.sweep.bp_reference) {
        ExperimentConfig c = plain_bp_variant(base);
        c.experiment = base.sweep.base;
        cells.emplace_back("bp_reference", c);
    }
    rows.resize(cells.size());
    auto run_cell = [&](std::size_t i, const RunOptions &cell_opt) {
        auto &[label, c] = cells[i];
        SweepRow &row = rows[i];
        row.label = label;
        row.delta = c.train.delta;
        if (cell_opt.log) *cell_opt.log << "== " << label << std::endl;
        try {
            c.validate();
            row.result = run_single(c, data, out / label, cell_opt);
            row.ok = true;
        } catch (const std::exception &e) {
            row.error = e.what();
            if (cell_opt.log) *cell_opt.log << "   failed: " << row.error << std::endl;
        }
    };
    if (opt.parallel) {
        // cells are independent; per-cell progress output is dropped
        std::vector<std::thread> pool;
        for (std::size_t i = 0; i < cells.size(); ++i) pool.emplace_back(run_cell, i, RunOptions{});
        for (auto &t : pool) t.join();
    } else {
        for (std::size_t i = 0; i < cells.size(); ++i) run_cell(i, opt);
    }
    auto f = open_output(out / "sweep.csv");
    f << "# config_hash: " << config_hash(base) << "\nlabel,delta,train_err_pct,test_err_pct,status\n";
    for (const auto &r : rows) {
        f << r.label << ',' << format_double(r.delta) << ',';
        if (r.ok) {
            f << format_double(r.result.summary.back().train_err_pct) << ','
              << format_double(r.result.summary.back().test_err_pct) << ",ok\n";
        } else {
            std::string msg = r.error;
            std::replace(msg.begin(), msg.end(), ',', ';');
            std::replace(msg.begin(), msg.end(), '\n', ' ');
            f << ",,error: " << msg << '\n';
        }
    }
    return rows;
}

struct AblationRow {
    Ablation variant;
    RunResult result;
};

/// Four one-pass runs (L1..L4) under the same seed and data order.
inline std::vector<AblationRow> run_ablation(const ExperimentConfig &base, const ExperimentData &data,
                                             const fs::path &out, const RunOptions &opt = {}) {
    if (base.train.mode != TrainMode::lfnn) throw ConfigError("ablation requires train.mode \"lfnn\"");
    std::vector<AblationRow> rows;
    for (auto v : {Ablation::L1, Ablation::L2, Ablation::L3, Ablation::L4}) {
        ExperimentConfig c = base;
        c.experiment = ExperimentKind::online_permuted_mnist;
        c.train.ablation = v;
        if (opt.log) *opt.log << "== " << to_string(v) << std::endl;
        rows.push_back({v, run_single(c, data, out / to_string(v), opt)});
    }
    auto f = open_output(out / "ablation.csv");
    f << "# config_hash: " << config_hash(base) << "\nvariant,final_running_acc_pct,test_acc_pct,config_hash\n";
    for (const auto &r : rows) {
        f << to_string(r.variant) << ',' << format_double(100.0 * r.result.final_running_accuracy) << ','
          << format_double(100.0 - r.result.test.test_error) << ',' << r.result.config_hash << '\n';
    }
    return rows;
}

/// Dispatches on the configured experiment kind.
inline void run_experiment(const ExperimentConfig &c, const ExperimentData &data, const fs::path &out,
                           const RunOptions &opt = {}) {
    switch (c.experiment) {
        case ExperimentKind::leadership_sweep: sweep_leadership(c, data, out, opt); break;
        case ExperimentKind::ablation: run_ablation(c, data, out, opt); break;
        default: run_single(c, data, out, opt); break;
    }
}

}  // namespace lfnn

#endif  // LFNN_EXPERIMENTS_HPP
