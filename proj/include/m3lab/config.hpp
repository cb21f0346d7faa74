#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "m3lab/agents.hpp"
#include "m3lab/em_model.hpp"
#include "m3lab/gridworld.hpp"
#include "m3lab/model.hpp"
#include "m3lab/planner.hpp"

namespace m3lab {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Typed experiment settings covering every command. Config files are sectioned
// key-value text ("[section]" headers, "key = value" lines, '#' comments);
// unknown or duplicate keys are rejected so typos never silently fall back to
// defaults. Key names and defaults are listed by known_config_keys().
struct ExperimentConfig {
    // [run]
    std::string experiment;  // optional in the file; the CLI subcommand fills it
    std::string env_name = "gridworld";
    std::vector<uint64_t> seeds = {0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
    int episodes = 300;
    int workers = 1;
    std::string out_root = "runs";
    bool save_snapshots = true;

    // [model]
    std::vector<ModelKind> model_kinds = {ModelKind::None, ModelKind::OneStep, ModelKind::M3,
                                          ModelKind::Hallucinated};
    int horizon = 8;    // prediction depth H of the multi-step model
    TrainConfig model;  // network shape and training budget

    // [actor_critic]  (horizon, episodes and model config are filled per run)
    ActorCriticConfig ac;
    std::vector<int> ac_horizons = {1, 2, 4, 8};  // target-depth sweep

    // [dqn]  (plan, model_cfg and em_cfg are filled from the sections below)
    DqnRunConfig dqn;

    // [plan]
    PlanConfig plan;
    bool sweep_strategies = false;  // enumerate expansion x valuation combos

    // [eval]
    int eval_episodes = 30;      // episodes per snapshot arm / planning arm
    int eval_max_h = 8;          // deepest h-step error measured
    int heldout_episodes = 20;   // fresh episodes for error measurement
    int refresh_batches = 30;    // online model minibatches per episode
    int max_windows = 2000;      // per-seed cap on ensemble eval windows, 0 = all
    std::vector<int> ensemble_paths = {1, 2, 4, 8, 16};
    int dqn_episodes = 150;      // critic training budget for the planning demo
    int plan_episodes = 50;      // evaluation episodes per planning arm

    // [em]
    EmConfig em;

    // [grid]
    GridworldConfig grid;

    // [bound]
    std::vector<int> bound_horizons = {2, 3, 4, 5};
    int corruptions = 100;

    // Every field as "section.key=value" lines in a fixed order, so two
    // configs serialize identically iff every field matches.
    std::string canonical() const;
    uint64_t hash() const;  // FNV-1a 64 of canonical()
};

// Parses, applies defaults, validates. Throws ConfigError with the offending
// key or value in the message.
ExperimentConfig load_config_text(const std::string& text);
ExperimentConfig load_config_file(const std::string& path);

// Range and consistency checks shared by the loaders; callable on
// programmatically built configs too.
void validate_config(const ExperimentConfig& cfg);

// Every accepted "section.key", sorted; useful for docs and error hints.
std::vector<std::string> known_config_keys();

const std::vector<std::string>& experiment_names();

uint64_t fnv1a64(std::string_view s);
std::string hash_hex(uint64_t h);

// Provenance sidecar written next to every command's outputs.
struct RunRecord {
    std::string run_id;  // "<experiment>-<config hash>"
    std::string experiment;
    std::string config_hash;
    std::string artifact_version;
    std::vector<uint64_t> seeds;
    std::vector<std::string> outputs;  // file names relative to the run directory
    double wall_ms = 0.0;
    std::string note;
    std::string config_canonical;  // full canonical config for reproduction
};

std::string manifest_json(const RunRecord& rec);
void write_manifest(const std::string& path, const RunRecord& rec);

}  // namespace m3lab
