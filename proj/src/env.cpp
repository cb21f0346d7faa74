#include "m3lab/env.hpp"

#include <stdexcept>

#include "m3lab/gridworld.hpp"

namespace m3lab {

std::unique_ptr<Env> make_env(const std::string& name) {
    if (name == "cartpole") return make_cartpole();
    if (name == "acrobot") return make_acrobot();
    if (name == "gridworld") return make_gridworld();
    throw std::invalid_argument("make_env: unknown environment '" + name + "'");
}

std::vector<std::pair<State, double>> enumerate_transitions(const Env& env, const State& s, int action) {
    const auto* grid = dynamic_cast<const Gridworld*>(&env);
    if (grid == nullptr)
        throw std::invalid_argument("enumerate_transitions: " + env.spec().name +
                                    " has continuous states");
    auto law = grid->enumerate(grid->decode(s), action);
    std::vector<std::pair<State, double>> out;
    out.reserve(law.size());
    for (const auto& [g, p] : law) out.emplace_back(grid->encode(g), p);
    return out;
}

}  // namespace m3lab
