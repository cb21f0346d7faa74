#pragma once

// Shared test doubles built on the abstract model interface: an exact tabular
// model wrapping the frozen-ghost gridworld law, plus small scripted models
// with planted behavior.

#include <cmath>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include "m3lab/gridworld.hpp"
#include "m3lab/model.hpp"

namespace m3test {

inline m3lab::GridworldConfig frozen_grid_cfg() {
    m3lab::GridworldConfig cfg;
    cfg.freeze_ghost = true;
    return cfg;
}

// Replays the true gridworld law for any prefix length, so every head is exact
// by construction. Requires a frozen ghost; otherwise the law is stochastic
// and cannot back a deterministic model.
class ExactGridModel : public m3lab::TransitionModel {
public:
    ExactGridModel(const m3lab::GridworldConfig& cfg, int horizon) : grid_(cfg), horizon_(horizon) {
        if (!cfg.freeze_ghost) throw std::logic_error("ExactGridModel: ghost must be frozen");
        if (horizon < 1) throw std::invalid_argument("ExactGridModel: bad horizon");
    }

    const m3lab::Gridworld& grid() const { return grid_; }

    int horizon() const override { return horizon_; }
    int num_actions() const override { return grid_.spec().num_actions; }
    int state_dim() const override { return grid_.spec().state_dim; }

    m3lab::State predict_state(const m3lab::State& s, std::span<const int> actions) const override {
        return run(s, actions).first;
    }
    double predict_reward(const m3lab::State& s, std::span<const int> actions) const override {
        return run(s, actions).second;
    }

private:
    std::pair<m3lab::State, double> run(const m3lab::State& s, std::span<const int> actions) const {
        if (actions.empty() || static_cast<int>(actions.size()) > horizon_)
            throw std::invalid_argument("ExactGridModel: bad sequence length");
        m3lab::State cur = s;
        double total = 0.0;
        m3lab::Rng rng(0);  // the frozen-ghost law never draws from it
        for (int a : actions) {
            m3lab::StepResult r = grid_.step_grid(grid_.decode(cur), a, rng);
            total += r.reward;
            cur = std::move(r.next);
        }
        return {std::move(cur), total};
    }

    m3lab::Gridworld grid_;
    int horizon_;
};

// One-step model on the real line: action 1 steps +1, action 0 steps -1, and
// every prediction lands `bias` above the true successor.
class BiasedWalkModel : public m3lab::TransitionModel {
public:
    explicit BiasedWalkModel(double bias) : bias_(bias) {}

    int horizon() const override { return 1; }
    int num_actions() const override { return 2; }
    int state_dim() const override { return 1; }

    m3lab::State predict_state(const m3lab::State& s, std::span<const int> actions) const override {
        if (actions.size() != 1) throw std::invalid_argument("BiasedWalkModel: one-step only");
        return {s.at(0) + (actions[0] == 1 ? 1.0 : -1.0) + bias_};
    }
    double predict_reward(const m3lab::State&, std::span<const int>) const override { return 0.0; }

private:
    double bias_;
};

// Deterministic scripted model on the real line whose depth-h head shifts the
// state by the signed action sum plus 0.1*h*h. The quadratic term makes direct
// deep predictions differ from chained shallow ones, so path identities are
// distinguishable.
class ShiftModel : public m3lab::TransitionModel {
public:
    ShiftModel(int horizon, int num_actions) : horizon_(horizon), num_actions_(num_actions) {}

    int horizon() const override { return horizon_; }
    int num_actions() const override { return num_actions_; }
    int state_dim() const override { return 1; }

    m3lab::State predict_state(const m3lab::State& s, std::span<const int> actions) const override {
        check(actions);
        double h = static_cast<double>(actions.size());
        double moves = 0.0;
        for (int a : actions) moves += 2.0 * a - (num_actions_ - 1);
        return {s.at(0) + 0.5 * moves + 0.1 * h * h};
    }
    double predict_reward(const m3lab::State&, std::span<const int> actions) const override {
        check(actions);
        double total = 0.5 * static_cast<double>(actions.size());
        for (int a : actions) total += 0.25 * a;
        return total;
    }

private:
    void check(std::span<const int> actions) const {
        if (actions.empty() || static_cast<int>(actions.size()) > horizon_)
            throw std::invalid_argument("ShiftModel: bad sequence length");
        for (int a : actions)
            if (a < 0 || a >= num_actions_) throw std::invalid_argument("ShiftModel: bad action");
    }

    int horizon_;
    int num_actions_;
};

}  // namespace m3test
