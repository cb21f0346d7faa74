#include "m3lab/gridworld.hpp"

#include <cmath>
#include <stdexcept>

namespace m3lab {

Gridworld::Gridworld(GridworldConfig cfg) : cfg_(cfg) {
    if (cfg_.n < 2) throw std::invalid_argument("gridworld: n must be at least 2");
    if (cfg_.ghost_start_x < 0 || cfg_.ghost_start_x >= cfg_.n || cfg_.ghost_start_y < 0 ||
        cfg_.ghost_start_y >= cfg_.n)
        throw std::invalid_argument("gridworld: ghost start outside the grid");
    double hi = static_cast<double>(cfg_.n - 1);
    spec_.name = "gridworld";
    spec_.state_dim = 4;
    spec_.num_actions = 4;
    spec_.horizon_cap = cfg_.horizon_cap;
    spec_.reward_desc = "step -0.1, goal +10, capture -1";
    spec_.is_deterministic = cfg_.freeze_ghost;
    spec_.scale = {hi, hi, hi, hi};
    spec_.low = {0.0, 0.0, 0.0, 0.0};
    spec_.high = {hi, hi, hi, hi};
}

int Gridworld::index(const GridState& s) const {
    int n = cfg_.n;
    return ((s.ax * n + s.ay) * n + s.gx) * n + s.gy;
}

GridState Gridworld::state_at(int index) const {
    int n = cfg_.n;
    GridState s;
    s.gy = index % n;
    index /= n;
    s.gx = index % n;
    index /= n;
    s.ay = index % n;
    index /= n;
    s.ax = index;
    return s;
}

State Gridworld::encode(const GridState& s) const {
    return {static_cast<double>(s.ax), static_cast<double>(s.ay), static_cast<double>(s.gx),
            static_cast<double>(s.gy)};
}

GridState Gridworld::decode(const State& s) const {
    check_state(s);
    auto clampi = [this](double v) {
        int x = static_cast<int>(std::llround(v));
        return std::max(0, std::min(cfg_.n - 1, x));
    };
    return GridState{clampi(s[0]), clampi(s[1]), clampi(s[2]), clampi(s[3])};
}

GridState Gridworld::agent_move(const GridState& s, int action) const {
    check_action(action);
    GridState next = s;
    switch (action) {
        case 0: next.ay += 1; break;  // up
        case 1: next.ay -= 1; break;  // down
        case 2: next.ax -= 1; break;  // left
        case 3: next.ax += 1; break;  // right
    }
    next.ax = std::max(0, std::min(cfg_.n - 1, next.ax));
    next.ay = std::max(0, std::min(cfg_.n - 1, next.ay));
    return next;
}

std::vector<std::pair<int, int>> Gridworld::ghost_neighbors(int gx, int gy) const {
    std::vector<std::pair<int, int>> cells;
    if (gy + 1 < cfg_.n) cells.emplace_back(gx, gy + 1);
    if (gy - 1 >= 0) cells.emplace_back(gx, gy - 1);
    if (gx - 1 >= 0) cells.emplace_back(gx - 1, gy);
    if (gx + 1 < cfg_.n) cells.emplace_back(gx + 1, gy);
    return cells;
}

GridState Gridworld::start_state() const {
    return GridState{0, 0, cfg_.ghost_start_x, cfg_.ghost_start_y};
}

StepResult Gridworld::step_grid(const GridState& s, int action, Rng& rng) const {
    check_action(action);
    if (terminal(s)) return {encode(s), 0.0, true};

    GridState next = agent_move(s, action);
    double r = cfg_.step_reward;
    if (at_goal(next)) return {encode(next), r + cfg_.goal_reward, true};
    if (captured(next)) return {encode(next), r + cfg_.capture_reward, true};

    if (!cfg_.freeze_ghost) {
        auto cells = ghost_neighbors(next.gx, next.gy);
        auto [gx, gy] = cells[rng.uniform_int(static_cast<int>(cells.size()))];
        next.gx = gx;
        next.gy = gy;
        if (captured(next)) return {encode(next), r + cfg_.capture_reward, true};
    }
    return {encode(next), r, false};
}

std::vector<std::pair<GridState, double>> Gridworld::enumerate(const GridState& s, int action) const {
    check_action(action);
    if (terminal(s)) return {{s, 1.0}};

    GridState next = agent_move(s, action);
    if (at_goal(next) || captured(next) || cfg_.freeze_ghost) return {{next, 1.0}};

    auto cells = ghost_neighbors(next.gx, next.gy);
    double p = 1.0 / static_cast<double>(cells.size());
    std::vector<std::pair<GridState, double>> out;
    out.reserve(cells.size());
    for (auto [gx, gy] : cells) {
        GridState g = next;
        g.gx = gx;
        g.gy = gy;
        out.emplace_back(g, p);
    }
    return out;
}

double Gridworld::grid_reward(const GridState& s, int action, const GridState& next) const {
    check_action(action);
    if (terminal(s)) return 0.0;
    GridState moved = agent_move(s, action);
    double r = cfg_.step_reward;
    if (at_goal(moved)) return r + cfg_.goal_reward;
    if (captured(moved)) return r + cfg_.capture_reward;
    // moved ghost capture: judge by the realized successor's ghost cell
    if (next.gx == moved.ax && next.gy == moved.ay) return r + cfg_.capture_reward;
    return r;
}

State Gridworld::reset(Rng&) const { return encode(start_state()); }

StepResult Gridworld::step(const State& s, int action, Rng& rng) const {
    return step_grid(decode(s), action, rng);
}

double Gridworld::reward(const State& s, int action, const State& next) const {
    return grid_reward(decode(s), action, decode(next));
}

std::unique_ptr<Env> make_gridworld(GridworldConfig cfg) { return std::make_unique<Gridworld>(cfg); }

}  // namespace m3lab
