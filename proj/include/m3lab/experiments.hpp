#pragma once

#include <string>
#include <vector>

#include "m3lab/config.hpp"

namespace m3lab {

struct CommandOutcome {
    int exit_code = 0;  // nonzero when a hard invariant failed (bound violations)
    std::string out_dir;
    std::vector<std::string> outputs;  // file names relative to out_dir
    std::string summary;               // one-line human description
};

// Output directory resolution: the CLI --out flag wins, then the M3LAB_OUT
// environment variable, then the config's run.out; the experiment name is
// appended and the directory is created.
std::string resolve_out_dir(const ExperimentConfig& cfg, const std::string& cli_out);

// Actor-critic learning curves and AUC table across model kinds and target
// depths. Writes curves.csv, auc.csv, plot.py, manifest.json.
CommandOutcome cmd_background_planning(const ExperimentConfig& cfg, const std::string& out_dir);

// Model-backed DQN behavior curves plus the stored-snapshot protocol: each
// snapshot's critic is evaluated greedy vs planned with a model retrained on
// the data available at snapshot time. Writes behavior_curve.csv,
// snapshot_gains.csv, snapshots/*.net, plot.py, manifest.json.
CommandOutcome cmd_decision_time(const ExperimentConfig& cfg, const std::string& out_dir);

// Online-trained models scored by per-depth prediction error on held-out
// episodes. Writes errors.csv, summary.csv, plot.py, manifest.json.
CommandOutcome cmd_model_eval(const ExperimentConfig& cfg, const std::string& out_dir);

// Random-corruption harness for both value-error bounds, with the translated
// corruption giving a side-by-side of the two right-hand sides. Exit code 1
// if any bound is violated. Writes reports.csv, side_by_side.csv, summary.csv,
// plot.py, manifest.json.
CommandOutcome cmd_bound_check(const ExperimentConfig& cfg, const std::string& out_dir);

// Mixture-model demo on the wandering-ghost gridworld: component predictions
// at the corner-ghost start state, fit diagnostics, and the planning
// comparison of the mixture planner against a deterministic-model planner.
// Writes em_modes.csv, em_fit.csv, em_planning.csv, summary.csv, plot.py,
// manifest.json.
CommandOutcome cmd_em_demo(const ExperimentConfig& cfg, const std::string& out_dir);

// Multi-path ensemble prediction error as a function of the number of sampled
// paths, against the direct deep head and the composed one-step chain.
// Writes ensemble.csv, summary.csv, plot.py, manifest.json.
CommandOutcome cmd_ensemble_demo(const ExperimentConfig& cfg, const std::string& out_dir);

// Dispatch on cfg.experiment. Throws ConfigError for an unknown name.
CommandOutcome run_experiment(const ExperimentConfig& cfg, const std::string& out_dir);

}  // namespace m3lab
