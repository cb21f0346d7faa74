#pragma once

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

#include "m3lab/agents.hpp"
#include "m3lab/dataset.hpp"
#include "m3lab/em_model.hpp"
#include "m3lab/env.hpp"
#include "m3lab/model.hpp"
#include "m3lab/nn.hpp"
#include "m3lab/rng.hpp"

namespace m3lab {

enum class Expansion { Full, Greedy };
enum class Valuation { LeafSum, Ensemble };
enum class RewardSource { Learned, Oracle };

const char* expansion_name(Expansion e);
const char* valuation_name(Valuation v);
Expansion expansion_from_name(const std::string& name);
Valuation valuation_from_name(const std::string& name);

struct PlanConfig {
    int horizon = 2;
    Expansion expansion = Expansion::Greedy;
    Valuation valuation = Valuation::Ensemble;
    // OneStep and Hallucinated chain the one-step head; M3 and Em evaluate
    // every node from the root state. None is rejected by the tree builder.
    ModelKind kind = ModelKind::M3;
    RewardSource reward_source = RewardSource::Learned;
    const Env* oracle_env = nullptr;  // required for RewardSource::Oracle and for EM trees
    int em_samples = 4;               // sampled trees averaged per EM decision
};

struct PlanNode {
    State state;
    State parent_state;  // empty at the root
    int depth = 0;
    int action = -1;     // edge action from the parent; -1 at the root
    double reward_to_node = 0.0;
    std::vector<int> prefix;  // edge actions from the root down to this node
    std::vector<std::unique_ptr<PlanNode>> children;

    const PlanNode* child(int a) const;
};

// Expands a planning tree from s. Full expansion fans out every action at
// every node down to cfg.horizon; greedy expansion fans out the root only and
// then follows the critic's argmax action at each level.
PlanNode build_tree(const State& s, const TransitionModel& model, const nn::Network& q,
                    const PlanConfig& cfg);

// Same tree shapes, but every node state is drawn from the mixture model
// (one draw per node).
PlanNode build_tree_em(const State& s, const EMModel& model, const nn::Network& q,
                       const PlanConfig& cfg, Rng& rng);

// Return estimate through a node: the accumulated reward down to it plus the
// critic's value of its edge action at the parent state. The root carries no
// edge, so its estimate is the model-free max-Q value.
double node_estimate(const PlanNode& node, const nn::Network& q);

// Value of a root action: follow its branch along the stored chain (greedy
// trees) or the critic's argmax child (full trees); LeafSum returns the
// deepest node's estimate, Ensemble the mean estimate across depths.
double action_value(const PlanNode& root, int action, const nn::Network& q, const PlanConfig& cfg);

// Argmax of action_value over the root actions, ties to the lowest index.
int plan_action(const State& s, const TransitionModel& model, const nn::Network& q,
                const PlanConfig& cfg);

// EM variant: builds cfg.em_samples trees, averages each root action's value
// across them, then takes the argmax.
int plan_action_em(const State& s, const EMModel& model, const nn::Network& q,
                   const PlanConfig& cfg, Rng& rng);

struct SnapshotEvalRow {
    int snapshot_index = 0;
    std::string strategy;
    std::string valuation;
    std::string model_kind;
    double mean_gain = 0.0;
    double stderr_gain = 0.0;
};

// Figure-style snapshot protocol: for each stored critic and its matching
// model, runs episodes_per_point greedy episodes and episodes_per_point
// planned episodes (no learning), and reports the mean return difference.
std::vector<SnapshotEvalRow> snapshot_evaluation(const Env& env,
                                                 const std::vector<nn::Network>& snapshots,
                                                 const std::vector<const TransitionModel*>& models,
                                                 const PlanConfig& cfg, int episodes_per_point,
                                                 uint64_t seed);

std::string snapshot_eval_csv_header();
void append_snapshot_eval_csv(std::ostream& out, const std::vector<SnapshotEvalRow>& rows);

struct DqnRunConfig {
    int hidden = 64;
    int layers = 1;
    double lr = 5e-3;
    double gamma = 0.99;
    double epsilon = 0.01;
    int batch_size = 32;
    int replay_capacity = 20000;
    int target_sync_every = 200;  // environment steps between target syncs
    int updates_per_step = 1;
    int min_replay = 200;         // replay size before updates begin
    int snapshot_every = 100;     // episodes between q-network snapshots
    PlanConfig plan;
    TrainConfig model_cfg;        // learned deterministic model backing the planner
    int refresh_batches = 30;     // model minibatches after each episode
    EmConfig em_cfg;              // mixture model when plan.kind == Em
    int em_refit_every = 10;      // episodes between full EM refits
};

struct DqnSnapshot {
    int episode = 0;
    nn::Network q;
    size_t episodes_collected = 0;  // dataset episodes available at snapshot time
};

struct DqnRunResult {
    ModelKind kind = ModelKind::None;
    uint64_t seed = 0;
    std::vector<EpisodeRecord> episodes;
    std::vector<DqnSnapshot> snapshots;
    TransitionDataset data{1, 1};
    long env_steps = 0;
};

// DQN training loop whose behavior policy takes plan_action (epsilon-random
// override) when a model kind is set, with the model trained online. None
// degenerates to plain DQN.
DqnRunResult run_model_based_dqn(const Env& env, ModelKind kind, const DqnRunConfig& cfg,
                                 int episodes, uint64_t seed);

}  // namespace m3lab
