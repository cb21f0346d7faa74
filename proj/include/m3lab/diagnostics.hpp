#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "m3lab/dataset.hpp"
#include "m3lab/gridworld.hpp"
#include "m3lab/model.hpp"
#include "m3lab/rollout.hpp"

namespace m3lab {

// --- h-step prediction error -------------------------------------------------

// Per-depth prediction quality of a model on recorded experience: for every
// start index t and every depth h with t+h inside the episode, predict from
// (s_t, recorded actions) and take the L1 distance to the realized state h
// steps later. Depths within the model's horizon query the matching head
// directly; a one-step model is composed on its own predictions instead.
struct HStepErrorReport {
    std::string model_name;
    std::vector<double> mean_l1;  // index h-1 for h in [1, H]; 0 when no window exists
    std::vector<long> counts;     // valid h-windows aggregated per depth
};

HStepErrorReport h_step_error(const TransitionModel& model, const Episode& episode, int max_h,
                              const std::string& model_name = "");
HStepErrorReport h_step_error(const TransitionModel& model, const std::vector<Episode>& episodes,
                              int max_h, const std::string& model_name = "");

// --- exact evaluation on the gridworld ---------------------------------------

struct ExactValues {
    int horizon = 0;
    // H-step undiscounted value per grid state index
    std::vector<double> value;
    // visitation[h-1][s] = P(state at step h = s) starting from the start
    // state and following the policy; step 1 is the start distribution. Used
    // in place of a stationary distribution, which a finite-horizon episodic
    // chain does not have.
    std::vector<std::vector<double>> visitation;
};

// Exact dynamic-programming evaluation of the H-step value under the true
// transition law (stochastic ghosts are enumerated exactly).
ExactValues exact_value(const Gridworld& grid, const Policy& policy, int horizon);

// Same evaluation over an arbitrary deterministic successor table (entry
// s*|A|+a gives the successor state index). Rewards are always the true
// reward function of the realized true transition, evaluated at the table's
// states, so a model table yields the model-MDP value of the real reward.
ExactValues exact_value_over(const Gridworld& grid, const std::vector<int>& successors,
                             const Policy& policy, int horizon);

// Deterministic law tables over grid state indices. Both require a frozen
// ghost; with a wandering ghost the law is stochastic and has no table.
std::vector<int> true_successors(const Gridworld& grid);
std::vector<double> true_rewards(const Gridworld& grid);  // R(s,a), zero at absorbing states
// One-step model predictions snapped to the nearest grid cell.
std::vector<int> model_successors(const Gridworld& grid, const TransitionModel& model);

// --- reward smoothness --------------------------------------------------------

// Largest |f(s1,a) - f(s2,a)| / L1(encode(s1), encode(s2)) over all state
// pairs and actions.
double lipschitz_constant(const Gridworld& grid,
                          const std::function<double(const GridState&, int)>& f);
// The constant for the gridworld's own expected one-step reward.
double lipschitz_reward_constant(const Gridworld& grid);

// --- value-error bound checks -------------------------------------------------

struct BoundReport {
    std::string bound;  // "one-step" or "multi-step"
    int horizon = 0;
    double lip = 0.0;
    double lhs = 0.0;   // |E[V - V̂]| at the start state, by exact evaluation
    double rhs = 0.0;   // lip * sum_h weight(h) * per_h(h)
    bool holds = false;  // lhs <= rhs + 1e-9
    // per_h[h-1] for h in [1, H-1]: expected h-step transition error (L1, no
    // weight or lip applied); weights[h-1] is the summand's weight
    std::vector<double> per_h;
    std::vector<double> weights;
    // largest total-variation distance between the policy at matched true and
    // predicted states (multi-step check only; the bound's derivation assumes
    // the policy responds identically at both)
    double policy_mismatch = 0.0;
    bool policy_assumption_ok = true;  // policy_mismatch <= 0.05; flagged, not failed
    std::string note;
};

// One-step bound: the model value composes T̂₁ from the start state, and the
// error expectation at depth h is taken under the policy's step-h visitation
// distribution in the true MDP, weighted by (H-h).
BoundReport check_theorem1(const Gridworld& grid, const TransitionModel& one_step,
                           const Policy& policy, int horizon, double lip_r);

// Multi-step bound: the model value queries head h from the start state with
// the policy acting on predicted states, and each depth's error expectation is
// taken over true-law action sequences from the start state, unweighted.
BoundReport check_theorem2(const Gridworld& grid, const TransitionModel& m3,
                           const Policy& policy, int horizon, double lip_r);

// One CSV row per summand so the decomposition can be tabulated offline.
std::string bound_report_csv_header();
void append_bound_report_csv(std::ostream& out, const BoundReport& report,
                             const std::string& label);

// --- corruptible tabular grid models ------------------------------------------

// Deterministic tabular model backed by the frozen-ghost law with selected
// entries overridden. In compose mode every depth folds the (possibly
// overridden) one-step law, mimicking a one-step model rolled forward; in
// direct mode each depth replays the true law unless that exact (depth,
// state, action sequence) entry was overridden. Reward queries replay the
// uncorrupted law; the bound checks never consult model rewards.
class GridLawModel : public TransitionModel {
public:
    GridLawModel(const GridworldConfig& cfg, int horizon, bool compose_one_step = false);

    const Gridworld& grid() const { return grid_; }

    // replace the stored depth-h prediction for (state, action sequence)
    void set_entry(int h, const GridState& s, std::span<const int> actions, const GridState& next);

    int horizon() const override { return horizon_; }
    int num_actions() const override { return grid_.spec().num_actions; }
    int state_dim() const override { return grid_.spec().state_dim; }
    State predict_state(const State& s, std::span<const int> actions) const override;
    double predict_reward(const State& s, std::span<const int> actions) const override;

private:
    uint64_t entry_key(int state_index, std::span<const int> actions) const;
    GridState step_true(const GridState& s, int action) const;
    GridState lookup_one_step(const GridState& s, int action) const;

    Gridworld grid_;
    int horizon_;
    bool compose_;
    std::vector<std::unordered_map<uint64_t, int>> entries_;  // [h-1]: key -> successor index
};

}  // namespace m3lab
