#pragma once

#include <utility>
#include <vector>

#include "m3lab/env.hpp"

namespace m3lab {

// Agent and ghost coordinates on an n x n grid; (0,0) is the bottom-left cell.
struct GridState {
    int ax = 0, ay = 0, gx = 0, gy = 0;
    bool operator==(const GridState&) const = default;
};

struct GridworldConfig {
    int n = 5;
    int ghost_start_x = 2, ghost_start_y = 2;
    bool freeze_ghost = false;
    double step_reward = -0.1;
    double goal_reward = 10.0;
    double capture_reward = -1.0;
    int horizon_cap = 1000;
};

// Pursuit gridworld: the agent starts bottom-left and seeks the top-right goal
// (+goal_reward); a ghost performs a uniform random walk over its in-grid
// neighbor cells (or stays put when frozen). Walking into the ghost, or the
// ghost walking into the agent, ends the episode with capture_reward. Every
// step additionally costs step_reward. Goal and capture states are absorbing.
class Gridworld : public Env {
public:
    explicit Gridworld(GridworldConfig cfg = {});

    const EnvSpec& spec() const override { return spec_; }
    State reset(Rng& rng) const override;
    StepResult step(const State& s, int action, Rng& rng) const override;
    double reward(const State& s, int action, const State& next) const override;

    const GridworldConfig& config() const { return cfg_; }
    int size() const { return cfg_.n; }
    int num_states() const { return cfg_.n * cfg_.n * cfg_.n * cfg_.n; }

    int index(const GridState& s) const;
    GridState state_at(int index) const;
    State encode(const GridState& s) const;
    GridState decode(const State& s) const;

    bool at_goal(const GridState& s) const { return s.ax == cfg_.n - 1 && s.ay == cfg_.n - 1; }
    bool captured(const GridState& s) const { return s.ax == s.gx && s.ay == s.gy; }
    bool terminal(const GridState& s) const { return at_goal(s) || captured(s); }

    // Deterministic component of the dynamics: the agent's clipped move.
    GridState agent_move(const GridState& s, int action) const;
    std::vector<std::pair<int, int>> ghost_neighbors(int gx, int gy) const;

    GridState start_state() const;
    StepResult step_grid(const GridState& s, int action, Rng& rng) const;

    // Exact law of step_grid as (successor, probability) pairs summing to one.
    std::vector<std::pair<GridState, double>> enumerate(const GridState& s, int action) const;

    // Reward as a function of the realized transition, matching step_grid.
    double grid_reward(const GridState& s, int action, const GridState& next) const;

private:
    GridworldConfig cfg_;
    EnvSpec spec_;
};

std::unique_ptr<Env> make_gridworld(GridworldConfig cfg = {});

}  // namespace m3lab
