// lfnn: run leader-follower training experiments from JSON configs.

#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "lfnn/experiments.hpp"

namespace {

struct Common {
    std::string config;
    std::string out;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> threads;
    std::optional<std::string> data_dir;
    bool parallel = false;
    std::size_t log_every = 0;
    bool quiet = false;
};

void add_common(CLI::App *cmd, Common &c) {
    cmd->add_option("--config", c.config, "experiment config (JSON)")->required()->check(CLI::ExistingFile);
    cmd->add_option("--out", c.out, "output directory")->required();
    cmd->add_option("--seed", c.seed, "override train.seed");
    cmd->add_option("--threads", c.threads, "override train.threads")->check(CLI::PositiveNumber);
    cmd->add_option("--data-dir", c.data_dir, "override data.dir");
    cmd->add_option("--log-every", c.log_every, "print progress every N steps");
    cmd->add_flag("-q,--quiet", c.quiet, "no progress output");
}

lfnn::ExperimentConfig resolve(const Common &c) {
    auto cfg = lfnn::load_config(c.config);
    if (c.seed) cfg.train.seed = *c.seed;
    if (c.threads) cfg.train.threads = *c.threads;
    if (c.data_dir) cfg.data.dir = *c.data_dir;
    cfg.validate();
    return cfg;
}

}  // namespace

int main(int argc, char **argv) {
    CLI::App app{"Leader-follower neural network training experiments"};
    app.require_subcommand(1);
    Common run_opts, sweep_opts, ablation_opts;
    auto *run = app.add_subcommand("run", "run the experiment described by the config");
    auto *sweep = app.add_subcommand("sweep", "one run per sweep.deltas value");
    auto *ablation = app.add_subcommand("ablation", "L1..L4 loss ablation (lfnn mode)");
    add_common(run, run_opts);
    add_common(sweep, sweep_opts);
    sweep->add_flag("--parallel", sweep_opts.parallel, "run the sweep cells concurrently");
    add_common(ablation, ablation_opts);
    CLI11_PARSE(app, argc, argv);

    const Common &c = run->parsed() ? run_opts : sweep->parsed() ? sweep_opts : ablation_opts;
    try {
        auto cfg = resolve(c);
        lfnn::RunOptions opt;
        if (!c.quiet) opt.log = &std::cerr;
        opt.log_every = c.log_every;
        opt.parallel = c.parallel;
        const auto data = lfnn::load_experiment_data(cfg.data);
        if (!c.quiet) {
            std::cerr << lfnn::to_string(cfg.experiment) << ": " << data.train.size() << " train / "
                      << data.test.size() << " test examples, config hash " << lfnn::config_hash(cfg) << std::endl;
        }
        if (sweep->parsed()) {
            if (cfg.sweep.deltas.empty()) throw lfnn::ConfigError("sweep.deltas: needs at least one value");
            const auto rows = lfnn::sweep_leadership(cfg, data, c.out, opt);
            for (const auto &r : rows) {
                if (!r.ok) return 2;
            }
        } else if (ablation->parsed()) {
            lfnn::run_ablation(cfg, data, c.out, opt);
        } else {
            lfnn::run_experiment(cfg, data, c.out, opt);
        }
    } catch (const lfnn::ConfigError &e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 3;
    } catch (const std::exception &e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
