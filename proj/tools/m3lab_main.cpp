// Command-line front end: one subcommand per experiment, each reading a
// sectioned key-value config and writing CSVs plus a run manifest under the
// output root (--out, then M3LAB_OUT, then run.out from the config).
#include <cstdio>
#include <exception>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "m3lab/experiments.hpp"

namespace {

struct CliArgs {
    std::string config_path;
    std::vector<uint64_t> seeds;
    std::string out;
    int workers = 0;
};

int run(const std::string& experiment, const CliArgs& args) {
    m3lab::ExperimentConfig cfg = m3lab::load_config_file(args.config_path);
    if (cfg.experiment.empty())
        cfg.experiment = experiment;
    else if (cfg.experiment != experiment)
        throw m3lab::ConfigError("config sets run.experiment = '" + cfg.experiment +
                                 "' but the command line asks for '" + experiment + "'");
    if (!args.seeds.empty()) cfg.seeds = args.seeds;
    if (args.workers > 0) cfg.workers = args.workers;
    m3lab::validate_config(cfg);

    std::string out_dir = m3lab::resolve_out_dir(cfg, args.out);
    m3lab::CommandOutcome outcome = m3lab::run_experiment(cfg, out_dir);
    std::printf("%s\n", outcome.summary.c_str());
    for (const std::string& name : outcome.outputs)
        std::printf("  %s/%s\n", outcome.out_dir.c_str(), name.c_str());
    return outcome.exit_code;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"model-based reinforcement learning experiment runner"};
    app.set_version_flag("--version", "m3lab 0.1.0");
    app.require_subcommand(1);

    CliArgs args;
    std::string chosen;
    for (const std::string& name : m3lab::experiment_names()) {
        CLI::App* sub = app.add_subcommand(name, "run the " + name + " experiment");
        sub->add_option("--config", args.config_path, "experiment config file")
            ->required()
            ->check(CLI::ExistingFile);
        sub->add_option("--seed", args.seeds, "override run.seeds (repeatable)");
        sub->add_option("--out", args.out, "output root (overrides M3LAB_OUT and run.out)");
        sub->add_option("--workers", args.workers, "override run.workers")
            ->check(CLI::PositiveNumber);
        sub->callback([&chosen, name] { chosen = name; });
    }

    CLI11_PARSE(app, argc, argv);

    try {
        return run(chosen, args);
    } catch (const m3lab::ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
}
