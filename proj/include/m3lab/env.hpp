#pragma once

#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "m3lab/rng.hpp"

namespace m3lab {

using State = std::vector<double>;

struct EnvSpec {
    std::string name;
    int state_dim = 0;
    int num_actions = 0;
    int horizon_cap = 0;
    std::string reward_desc;
    bool is_deterministic = false;
    // per-component normalization scale and clip bounds for model predictions
    std::vector<double> scale;
    std::vector<double> low;
    std::vector<double> high;
};

struct StepResult {
    State next;
    double reward = 0.0;
    bool done = false;
};

// Environments are pure transition laws: step depends only on (state, action, rng).
// Episode truncation at spec().horizon_cap is enforced by the episode runners.
class Env {
public:
    virtual ~Env() = default;
    virtual const EnvSpec& spec() const = 0;
    virtual State reset(Rng& rng) const = 0;
    virtual StepResult step(const State& s, int action, Rng& rng) const = 0;
    // Oracle reward for a realized or predicted transition.
    virtual double reward(const State& s, int action, const State& next) const = 0;

    void check_action(int action) const {
        if (action < 0 || action >= spec().num_actions)
            throw std::invalid_argument(spec().name + ": action out of range");
    }
    void check_state(const State& s) const {
        if (static_cast<int>(s.size()) != spec().state_dim)
            throw std::invalid_argument(spec().name + ": state dimension mismatch");
    }
};

std::unique_ptr<Env> make_cartpole();
std::unique_ptr<Env> make_acrobot();

// Factory over the built-in environment names: cartpole, acrobot, gridworld.
std::unique_ptr<Env> make_env(const std::string& name);

// Exact transition law for enumerable environments. Throws std::invalid_argument
// when the environment is continuous.
std::vector<std::pair<State, double>> enumerate_transitions(const Env& env, const State& s, int action);

}  // namespace m3lab
