#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "m3lab/env.hpp"
#include "m3lab/model.hpp"
#include "m3lab/rng.hpp"

namespace m3lab {

// Policy queried during rollouts: full probability distribution over actions.
using Policy = std::function<std::vector<double>(const State&)>;

Policy uniform_policy(int num_actions);

enum class RolloutKind { ComposedOneStep, FixedOriginM3 };

struct RolloutStep {
    int action = 0;     // action sampled at this depth
    State predicted;    // model's state prediction after this action
    double cum_reward;  // predicted reward summed from the origin through this step
};

struct RolloutTrace {
    RolloutKind kind = RolloutKind::ComposedOneStep;
    State origin;
    std::vector<RolloutStep> steps;  // steps[h-1] holds depth-h records

    std::vector<int> actions() const;
};

// Chains the model's one-step head: each prediction is fed back in as the next
// input state. Works with any model of horizon >= 1; depth may exceed it.
RolloutTrace composed_rollout(const TransitionModel& model, const State& s1, const Policy& policy,
                              int depth, Rng& rng);

// Every prediction is a direct depth-h head call on the rollout origin s1; the
// intermediate predictions are used only to sample the next action. Requires
// depth <= model.horizon().
RolloutTrace m3_rollout(const TransitionModel& model, const State& s1, const Policy& policy,
                        int depth, Rng& rng);

// Probability that m3_rollout samples exactly this action sequence from s:
// policy(a_1 | s) times, for each later h, policy(a_h | prediction after the
// first h-1 actions).
double action_sequence_probability(const TransitionModel& model, const State& s,
                                   std::span<const int> actions, const Policy& policy);

// Ordered positive step sizes summing to the full prediction depth, e.g.
// {2, 2, 4} splits an 8-step prediction into three chained head calls.
using PathPartition = std::vector<int>;

// Number of distinct partitions of a depth-H prediction: 2^(H-1).
uint64_t count_paths(int depth);

// Uniform over all partitions, via an independent fair cut/no-cut draw at each
// of the depth-1 boundaries between consecutive steps.
PathPartition sample_path(int depth, Rng& rng);

// Applies the head for path[0] to s1 and the first path[0] actions, then the
// head for path[1] to that result with the next actions, and so on. The parts
// must sum to the number of actions.
State chain_predict(const TransitionModel& model, const State& s1, std::span<const int> actions,
                    const PathPartition& path);

// Component-wise mean endpoint over num_paths sampled partitions.
State ensemble_predict(const TransitionModel& model, const State& s1, std::span<const int> actions,
                       int num_paths, Rng& rng);

// Trace serialization: one row per step with columns
// run,h,action,s0..s{D-1},cum_reward.
std::string trace_csv_header(int state_dim);
void append_trace_csv(std::ostream& out, const RolloutTrace& trace, int run_id);

}  // namespace m3lab
