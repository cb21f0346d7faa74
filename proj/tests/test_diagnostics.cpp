#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <functional>
#include <sstream>
#include <vector>

#include "doctest.h"
#include "helpers.hpp"
#include "m3lab/diagnostics.hpp"
#include "m3lab/gridworld.hpp"
#include "m3lab/rng.hpp"

using namespace m3lab;

namespace {

double l1(const State& a, const State& b) {
    double total = 0.0;
    for (size_t i = 0; i < a.size(); ++i) total += std::abs(a[i] - b[i]);
    return total;
}

// per-coordinate deterministic policy on encoded grid states; falls back to
// uniform where no action is scripted
Policy scripted_policy(std::function<int(int, int)> pick, int num_actions) {
    return [pick = std::move(pick), num_actions](const State& s) {
        int choice = pick(static_cast<int>(std::llround(s[0])), static_cast<int>(std::llround(s[1])));
        std::vector<double> probs(static_cast<size_t>(num_actions),
                                  choice < 0 ? 1.0 / num_actions : 0.0);
        if (choice >= 0) probs[static_cast<size_t>(choice)] = 1.0;
        return probs;
    };
}

Episode random_walk_episode(const Gridworld& grid, int steps, uint64_t seed) {
    Rng rng(seed);
    GridState gs = grid.start_state();
    Episode ep;
    for (int t = 0; t < steps; ++t) {
        State s = grid.encode(gs);
        int a = rng.uniform_int(grid.spec().num_actions);
        StepResult r = grid.step_grid(gs, a, rng);
        ep.push_back({std::move(s), a, r.reward, r.next, r.done});
        gs = grid.decode(r.next);
        if (r.done) break;
    }
    return ep;
}

// expected H-step return from one state by replaying every action sequence of
// a deterministic successor table, weighting by the policy along that table
double enumerated_value(const Gridworld& grid, const std::vector<int>& succ,
                        const std::vector<double>& rewards, const Policy& policy, int state,
                        int horizon) {
    if (horizon == 0) return 0.0;
    const int num_actions = grid.spec().num_actions;
    std::vector<double> probs = policy(grid.encode(grid.state_at(state)));
    double total = 0.0;
    for (int a = 0; a < num_actions; ++a) {
        if (probs[static_cast<size_t>(a)] == 0.0) continue;
        int next = succ[static_cast<size_t>(state * num_actions + a)];
        total += probs[static_cast<size_t>(a)] *
                 (rewards[static_cast<size_t>(state * num_actions + a)] +
                  enumerated_value(grid, succ, rewards, policy, next, horizon - 1));
    }
    return total;
}

}  // namespace

TEST_CASE("h-step errors vanish for an exact model and count every window") {
    Gridworld grid(m3test::frozen_grid_cfg());
    m3test::ExactGridModel model(m3test::frozen_grid_cfg(), 4);
    Episode ep = random_walk_episode(grid, 8, 3);
    REQUIRE(ep.size() == 8);  // the seed-3 walk never terminates early

    HStepErrorReport report = h_step_error(model, ep, 4, "exact");
    CHECK(report.model_name == "exact");
    REQUIRE(report.mean_l1.size() == 4);
    for (int h = 1; h <= 4; ++h) {
        CHECK(report.mean_l1[static_cast<size_t>(h - 1)] == 0.0);
        CHECK(report.counts[static_cast<size_t>(h - 1)] == 8 - h + 1);
    }

    CHECK_THROWS_AS(h_step_error(model, ep, 0), std::invalid_argument);
    CHECK_THROWS_AS(h_step_error(model, Episode{}, 2), std::invalid_argument);
    CHECK_THROWS_AS(h_step_error(model, std::vector<Episode>{}, 2), std::invalid_argument);
}

TEST_CASE("a planted one-step bias compounds linearly in depth") {
    // true law: the state walks plus or minus one; the model lands `bias`
    // above every successor, so composing h times drifts by h*bias
    const double bias = 0.125;
    m3test::BiasedWalkModel model(bias);
    Rng rng(11);
    Episode ep;
    double s = 0.0;
    for (int t = 0; t < 10; ++t) {
        int a = rng.uniform_int(2);
        double next = s + (a == 1 ? 1.0 : -1.0);
        ep.push_back({{s}, a, 0.0, {next}, false});
        s = next;
    }

    HStepErrorReport report = h_step_error(model, ep, 5);
    for (int h = 1; h <= 5; ++h) {
        CHECK(report.mean_l1[static_cast<size_t>(h - 1)] == doctest::Approx(h * bias).epsilon(1e-12));
        CHECK(report.counts[static_cast<size_t>(h - 1)] == 10 - h + 1);
    }
}

TEST_CASE("depth-one errors agree between a deep model and its one-step twin") {
    GridworldConfig cfg = m3test::frozen_grid_cfg();
    Gridworld grid(cfg);
    GridState from{1, 0, 2, 2};
    std::vector<int> up{0};

    GridLawModel deep(cfg, 3);
    deep.set_entry(1, from, up, GridState{2, 1, 2, 2});
    GridLawModel shallow(cfg, 1);
    shallow.set_entry(1, from, up, GridState{2, 1, 2, 2});

    std::vector<Episode> eps;
    for (uint64_t seed = 0; seed < 6; ++seed) eps.push_back(random_walk_episode(grid, 8, seed));

    HStepErrorReport a = h_step_error(deep, eps, 3);
    HStepErrorReport b = h_step_error(shallow, eps, 3);
    CHECK(a.mean_l1[0] == b.mean_l1[0]);
    CHECK(a.counts == b.counts);
    // deeper depths differ: the deep model replays the clean law per depth
    // while the one-step twin composes its corrupted head
    CHECK(a.mean_l1[1] != b.mean_l1[1]);
}

TEST_CASE("exact evaluation reproduces a hand-walked corridor") {
    GridworldConfig cfg;
    cfg.n = 3;
    cfg.ghost_start_x = 0;
    cfg.ghost_start_y = 2;
    cfg.freeze_ghost = true;
    Gridworld grid(cfg);

    // right, up, up, right: four moves from the corner to the goal
    Policy policy = scripted_policy(
        [](int x, int y) {
            if (x == 0 && y == 0) return 3;
            if (x == 1 && y == 0) return 0;
            if (x == 1 && y == 1) return 0;
            if (x == 1 && y == 2) return 3;
            return -1;
        },
        4);

    int start = grid.index(grid.start_state());
    CHECK(exact_value(grid, policy, 0).value[static_cast<size_t>(start)] == 0.0);
    CHECK(exact_value(grid, policy, 0).visitation.empty());
    CHECK(exact_value(grid, policy, 1).value[static_cast<size_t>(start)] == doctest::Approx(-0.1));
    CHECK(exact_value(grid, policy, 3).value[static_cast<size_t>(start)] == doctest::Approx(-0.3));
    ExactValues five = exact_value(grid, policy, 5);
    CHECK(five.value[static_cast<size_t>(start)] == doctest::Approx(9.6));
    CHECK(exact_value(grid, policy, 7).value[static_cast<size_t>(start)] == doctest::Approx(9.6));

    // one step from the goal the same policy collects it immediately
    CHECK(exact_value(grid, policy, 1).value[static_cast<size_t>(grid.index({1, 2, 0, 2}))] ==
          doctest::Approx(9.9));
    // absorbing states stay worthless at every horizon
    CHECK(five.value[static_cast<size_t>(grid.index({2, 2, 0, 2}))] == 0.0);
    CHECK(five.value[static_cast<size_t>(grid.index({0, 2, 0, 2}))] == 0.0);

    // the visitation rides the scripted trajectory as point masses
    REQUIRE(five.visitation.size() == 5);
    std::vector<GridState> path{{0, 0, 0, 2}, {1, 0, 0, 2}, {1, 1, 0, 2}, {1, 2, 0, 2}, {2, 2, 0, 2}};
    for (size_t h = 0; h < path.size(); ++h) {
        CHECK(five.visitation[h][static_cast<size_t>(grid.index(path[h]))] == doctest::Approx(1.0));
        double total = 0.0;
        for (double p : five.visitation[h]) total += p;
        CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("exact evaluation matches brute-force sequence enumeration everywhere") {
    Gridworld grid(m3test::frozen_grid_cfg());
    Policy policy = uniform_policy(4);
    std::vector<int> succ = true_successors(grid);
    std::vector<double> rewards = true_rewards(grid);

    ExactValues vals = exact_value(grid, policy, 3);
    for (int i = 0; i < grid.num_states(); ++i) {
        double oracle = enumerated_value(grid, succ, rewards, policy, i, 3);
        CHECK(vals.value[static_cast<size_t>(i)] == doctest::Approx(oracle).epsilon(1e-12));
    }
}

TEST_CASE("exact evaluation enumerates the wandering ghost and matches monte carlo") {
    GridworldConfig cfg;  // ghost walks
    Gridworld grid(cfg);
    Policy policy = uniform_policy(4);
    ExactValues vals = exact_value(grid, policy, 4);

    for (const auto& dist : vals.visitation) {
        double total = 0.0;
        for (double p : dist) total += p;
        CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
    }

    Rng rng(17);
    const int episodes = 10000;
    double mean = 0.0, m2 = 0.0;
    for (int e = 1; e <= episodes; ++e) {
        State s = grid.reset(rng);
        double ret = 0.0;
        for (int t = 0; t < 4; ++t) {
            int a = rng.categorical(policy(s));
            StepResult r = grid.step(s, a, rng);
            ret += r.reward;
            s = std::move(r.next);
        }
        double delta = ret - mean;
        mean += delta / e;
        m2 += delta * (ret - mean);
    }
    double stderr_mc = std::sqrt(m2 / (episodes - 1) / episodes);
    double exact = vals.value[static_cast<size_t>(grid.index(grid.start_state()))];
    CHECK(std::abs(mean - exact) <= 3.0 * stderr_mc);
}

TEST_CASE("model-table evaluation agrees with simulating the model as an mdp") {
    GridworldConfig cfg = m3test::frozen_grid_cfg();
    Gridworld grid(cfg);
    Policy policy = uniform_policy(4);

    GridLawModel model(cfg, 1);
    model.set_entry(1, {1, 0, 2, 2}, std::vector<int>{0}, {2, 1, 2, 2});
    model.set_entry(1, {0, 1, 2, 2}, std::vector<int>{3}, {1, 2, 2, 2});
    std::vector<int> succ = model_successors(grid, model);
    std::vector<double> rewards = true_rewards(grid);

    // the table law equals the true law when the model is clean
    GridLawModel clean(cfg, 1);
    CHECK(model_successors(grid, clean) == true_successors(grid));
    ExactValues truth = exact_value(grid, policy, 4);
    ExactValues via_table = exact_value_over(grid, true_successors(grid), policy, 4);
    for (int i = 0; i < grid.num_states(); ++i)
        CHECK(via_table.value[static_cast<size_t>(i)] ==
              doctest::Approx(truth.value[static_cast<size_t>(i)]).epsilon(1e-12));

    // monte-carlo rollouts of the corrupted table reproduce its exact value
    const int horizon = 4, episodes = 10000;
    ExactValues model_vals = exact_value_over(grid, succ, policy, horizon);
    Rng rng(23);
    double mean = 0.0, m2 = 0.0;
    for (int e = 1; e <= episodes; ++e) {
        int s = grid.index(grid.start_state());
        double ret = 0.0;
        for (int t = 0; t < horizon; ++t) {
            int a = rng.categorical(policy(grid.encode(grid.state_at(s))));
            ret += rewards[static_cast<size_t>(s * 4 + a)];
            s = succ[static_cast<size_t>(s * 4 + a)];
        }
        double delta = ret - mean;
        mean += delta / e;
        m2 += delta * (ret - mean);
    }
    double stderr_mc = std::sqrt(m2 / (episodes - 1) / episodes);
    double exact = model_vals.value[static_cast<size_t>(grid.index(grid.start_state()))];
    CHECK(std::abs(mean - exact) <= 3.0 * stderr_mc);

    CHECK_THROWS_AS(exact_value_over(grid, std::vector<int>(12, 0), policy, 2),
                    std::invalid_argument);
    std::vector<int> bad = true_successors(grid);
    bad[0] = grid.num_states();
    CHECK_THROWS_AS(exact_value_over(grid, bad, policy, 2), std::invalid_argument);
}

TEST_CASE("reward smoothness constants") {
    GridworldConfig cfg = m3test::frozen_grid_cfg();
    Gridworld grid(cfg);

    SUBCASE("constant rewards have zero slope") {
        GridworldConfig flat = cfg;
        flat.step_reward = 0.0;
        flat.goal_reward = 0.0;
        flat.capture_reward = 0.0;
        CHECK(lipschitz_reward_constant(Gridworld(flat)) == 0.0);
    }

    SUBCASE("the agent's x coordinate has unit slope") {
        CHECK(lipschitz_constant(grid, [](const GridState& s, int) {
                  return static_cast<double>(s.ax);
              }) == doctest::Approx(1.0).epsilon(1e-12));
    }

    SUBCASE("the reference gridworld constant comes from the goal corner") {
        double lip = lipschitz_reward_constant(grid);
        // with the ghost parked at (3,4), stepping up from (4,3) scores the
        // goal while the adjacent (3,3) walks into the ghost: the full
        // goal-to-capture swing across one cell
        double r_goal = grid.grid_reward({4, 3, 3, 4}, 0, {4, 4, 3, 4});
        double r_capture = grid.grid_reward({3, 3, 3, 4}, 0, {3, 4, 3, 4});
        CHECK(lip >= std::abs(r_goal - r_capture) - 1e-12);
        CHECK(lip == doctest::Approx(11.0).epsilon(1e-12));
    }
}

TEST_CASE("tabular law model replays the law until entries are overridden") {
    GridworldConfig cfg = m3test::frozen_grid_cfg();
    Gridworld grid(cfg);
    m3test::ExactGridModel exact(cfg, 3);

    SUBCASE("clean model equals the exact replay at every depth") {
        GridLawModel model(cfg, 3);
        Rng rng(29);
        for (int trial = 0; trial < 200; ++trial) {
            State s = grid.encode(grid.state_at(rng.uniform_int(grid.num_states())));
            std::vector<int> seq;
            for (int h = 0, len = 1 + rng.uniform_int(3); h < len; ++h)
                seq.push_back(rng.uniform_int(4));
            CHECK(model.predict_state(s, seq) == exact.predict_state(s, seq));
            CHECK(model.predict_reward(s, seq) == exact.predict_reward(s, seq));
        }
    }

    SUBCASE("direct overrides touch exactly one entry") {
        GridLawModel model(cfg, 3);
        GridState from{1, 0, 2, 2};
        std::vector<int> seq{0, 3};
        model.set_entry(2, from, seq, GridState{0, 0, 2, 2});
        CHECK(model.predict_state(grid.encode(from), seq) == grid.encode({0, 0, 2, 2}));
        // same sequence elsewhere, other sequences, and other depths are untouched
        CHECK(model.predict_state(grid.encode({1, 1, 2, 2}), seq) ==
              exact.predict_state(grid.encode({1, 1, 2, 2}), seq));
        std::vector<int> other{0, 1};
        CHECK(model.predict_state(grid.encode(from), other) ==
              exact.predict_state(grid.encode(from), other));
        std::vector<int> one{0};
        CHECK(model.predict_state(grid.encode(from), one) ==
              exact.predict_state(grid.encode(from), one));
        // rewards keep replaying the clean law
        CHECK(model.predict_reward(grid.encode(from), seq) ==
              exact.predict_reward(grid.encode(from), seq));
    }

    SUBCASE("composed mode folds the corrupted one-step law") {
        GridLawModel model(cfg, 3, true);
        GridState from{1, 0, 2, 2};
        std::vector<int> up{0};
        model.set_entry(1, from, up, GridState{2, 1, 2, 2});
        // (1,0) -up-> override (2,1) -up-> capture (2,2), then absorb
        std::vector<int> seq{0, 0};
        CHECK(model.predict_state(grid.encode(from), seq) == grid.encode({2, 2, 2, 2}));
        std::vector<int> seq3{0, 0, 0};
        CHECK(model.predict_state(grid.encode(from), seq3) == grid.encode({2, 2, 2, 2}));
        CHECK_THROWS_AS(model.set_entry(2, from, seq, from), std::invalid_argument);
    }

    SUBCASE("rejected inputs") {
        GridLawModel model(cfg, 2);
        GridState s{0, 0, 2, 2};
        CHECK_THROWS_AS(GridLawModel(GridworldConfig{}, 2), std::logic_error);
        CHECK_THROWS_AS(GridLawModel(cfg, 0), std::invalid_argument);
        CHECK_THROWS_AS(model.set_entry(3, s, std::vector<int>{0, 0, 0}, s),
                        std::invalid_argument);
        CHECK_THROWS_AS(model.set_entry(1, s, std::vector<int>{0, 0}, s), std::invalid_argument);
        CHECK_THROWS_AS(model.set_entry(1, s, std::vector<int>{7}, s), std::invalid_argument);
        CHECK_THROWS_AS(model.predict_state(grid.encode(s), std::vector<int>{0, 0, 0}),
                        std::invalid_argument);
        CHECK_THROWS_AS(model.predict_state(grid.encode(s), std::vector<int>{}),
                        std::invalid_argument);
    }
}

TEST_CASE("one-step value-error bound by exact enumeration") {
    GridworldConfig cfg = m3test::frozen_grid_cfg();
    Gridworld grid(cfg);
    Policy policy = uniform_policy(4);
    double lip = lipschitz_reward_constant(grid);

    SUBCASE("perfect model is tight at zero") {
        GridLawModel clean(cfg, 1);
        BoundReport report = check_theorem1(grid, clean, policy, 4, lip);
        CHECK(report.bound == "one-step");
        CHECK(report.lhs == 0.0);
        CHECK(report.rhs == 0.0);
        CHECK(report.holds);
        REQUIRE(report.per_h.size() == 3);
        CHECK(report.weights == std::vector<double>{3.0, 2.0, 1.0});
    }

    SUBCASE("single corruption: independent enumeration of both sides") {
        const int horizon = 3;
        GridLawModel model(cfg, 1);
        model.set_entry(1, {1, 0, 2, 2}, std::vector<int>{0}, {2, 1, 2, 2});
        BoundReport report = check_theorem1(grid, model, policy, horizon, lip);

        std::vector<int> succ_true = true_successors(grid);
        std::vector<int> succ_model = model_successors(grid, model);
        std::vector<double> rewards = true_rewards(grid);
        int start = grid.index(grid.start_state());

        double v_true = enumerated_value(grid, succ_true, rewards, policy, start, horizon);
        double v_model = enumerated_value(grid, succ_model, rewards, policy, start, horizon);
        CHECK(report.lhs == doctest::Approx(std::abs(v_true - v_model)).epsilon(1e-12));

        // per-depth error terms by walking every true-law prefix
        std::vector<double> per_h(static_cast<size_t>(horizon - 1), 0.0);
        std::function<void(int, double, int)> walk = [&](int s, double w, int h) {
            if (h > horizon - 1) return;
            for (int a = 0; a < 4; ++a) {
                per_h[static_cast<size_t>(h - 1)] +=
                    w * 0.25 *
                    l1(grid.encode(grid.state_at(succ_model[static_cast<size_t>(s * 4 + a)])),
                       grid.encode(grid.state_at(succ_true[static_cast<size_t>(s * 4 + a)])));
                walk(succ_true[static_cast<size_t>(s * 4 + a)], w * 0.25, h + 1);
            }
        };
        walk(start, 1.0, 1);
        double rhs = 0.0;
        for (int h = 1; h <= horizon - 1; ++h) {
            CHECK(report.per_h[static_cast<size_t>(h - 1)] ==
                  doctest::Approx(per_h[static_cast<size_t>(h - 1)]).epsilon(1e-12));
            rhs += lip * (horizon - h) * per_h[static_cast<size_t>(h - 1)];
        }
        CHECK(report.rhs == doctest::Approx(rhs).epsilon(1e-12));

        // hand values: the corrupted cell is reached with mass 1/4 at step 2
        CHECK(report.per_h[0] == 0.0);
        CHECK(report.per_h[1] == doctest::Approx(0.0625).epsilon(1e-12));
        CHECK(report.lhs == doctest::Approx(0.015625).epsilon(1e-12));
        CHECK(report.holds);
        CHECK(report.lhs < report.rhs);
    }

    SUBCASE("random single-cell corruptions always satisfy the bound") {
        Rng rng(31);
        for (int trial = 0; trial < 25; ++trial) {
            GridLawModel model(cfg, 1);
            GridState s = grid.state_at(rng.uniform_int(grid.num_states()));
            int action = rng.uniform_int(4);
            GridState next = grid.enumerate(s, action).front().first;
            GridState moved = grid.decode(grid.encode(next));
            switch (rng.uniform_int(4)) {
                case 0: moved.ax = std::min(cfg.n - 1, moved.ax + 1); break;
                case 1: moved.ax = std::max(0, moved.ax - 1); break;
                case 2: moved.ay = std::min(cfg.n - 1, moved.ay + 1); break;
                case 3: moved.ay = std::max(0, moved.ay - 1); break;
            }
            std::vector<int> one{action};
            model.set_entry(1, s, one, moved);
            for (int horizon : {2, 3, 4}) {
                BoundReport report = check_theorem1(grid, model, policy, horizon, lip);
                CHECK(report.holds);
            }
        }
    }

    SUBCASE("rejected inputs") {
        GridLawModel clean(cfg, 1);
        Gridworld wandering((GridworldConfig()));
        CHECK_THROWS_AS(check_theorem1(wandering, clean, policy, 3, lip), std::invalid_argument);
        CHECK_THROWS_AS(check_theorem1(grid, clean, policy, 0, lip), std::invalid_argument);
        CHECK_THROWS_AS(check_theorem1(grid, clean, policy, 3, -1.0), std::invalid_argument);
        CHECK_THROWS_AS(check_theorem1(grid, clean, uniform_policy(3), 3, lip),
                        std::invalid_argument);
    }
}

TEST_CASE("multi-step value-error bound by exact enumeration") {
    GridworldConfig cfg = m3test::frozen_grid_cfg();
    Gridworld grid(cfg);
    Policy policy = uniform_policy(4);
    double lip = lipschitz_reward_constant(grid);

    SUBCASE("perfect heads are tight at zero") {
        m3test::ExactGridModel exact(cfg, 4);
        BoundReport report = check_theorem2(grid, exact, policy, 5, lip);
        CHECK(report.bound == "multi-step");
        CHECK(report.lhs <= 1e-10);
        for (double err : report.per_h) CHECK(err == 0.0);
        CHECK(report.holds);
        CHECK(report.policy_mismatch == 0.0);
        CHECK(report.policy_assumption_ok);
    }

    SUBCASE("corrupting one deep head is counted once, unweighted") {
        const int horizon = 3;
        GridLawModel model(cfg, 2);
        GridState start = grid.start_state();
        std::vector<int> seq{3, 3};
        model.set_entry(2, start, seq, GridState{2, 1, 2, 2});  // truth lands at (2,0)
        BoundReport report = check_theorem2(grid, model, policy, horizon, lip);

        REQUIRE(report.per_h.size() == 2);
        CHECK(report.weights == std::vector<double>{1.0, 1.0});
        CHECK(report.per_h[0] == 0.0);
        CHECK(report.per_h[1] == doctest::Approx(0.0625).epsilon(1e-12));
        CHECK(report.rhs == doctest::Approx(lip * 0.0625).epsilon(1e-12));
        CHECK(report.lhs == doctest::Approx(0.015625).epsilon(1e-12));
        CHECK(report.holds);

        // independent check of the model value: walk predicted states with
        // the true reward function
        std::vector<double> rewards = true_rewards(grid);
        double vhat = 0.0;
        std::function<void(const State&, double, std::vector<int>&)> walk =
            [&](const State& s, double w, std::vector<int>& prefix) {
                int cell = grid.index(grid.decode(s));
                for (int a = 0; a < 4; ++a) {
                    vhat += w * 0.25 * rewards[static_cast<size_t>(cell * 4 + a)];
                    if (static_cast<int>(prefix.size()) + 1 < horizon) {
                        prefix.push_back(a);
                        walk(model.predict_state(grid.encode(start), prefix), w * 0.25, prefix);
                        prefix.pop_back();
                    }
                }
            };
        std::vector<int> prefix;
        walk(grid.encode(start), 1.0, prefix);
        double v_true = enumerated_value(grid, true_successors(grid), rewards, policy,
                                         grid.index(start), horizon);
        CHECK(report.lhs == doctest::Approx(std::abs(v_true - vhat)).epsilon(1e-12));
    }

    SUBCASE("random deep-head corruptions always satisfy the bound") {
        Rng rng(37);
        GridState start = grid.start_state();
        for (int trial = 0; trial < 25; ++trial) {
            for (int horizon : {2, 3, 4}) {
                GridLawModel model(cfg, horizon - 1 > 0 ? horizon - 1 : 1);
                int h = 1 + rng.uniform_int(std::max(1, horizon - 1));
                std::vector<int> seq;
                for (int i = 0; i < h; ++i) seq.push_back(rng.uniform_int(4));
                GridState next = grid.decode(model.predict_state(grid.encode(start), seq));
                switch (rng.uniform_int(4)) {
                    case 0: next.ax = std::min(cfg.n - 1, next.ax + 1); break;
                    case 1: next.ax = std::max(0, next.ax - 1); break;
                    case 2: next.ay = std::min(cfg.n - 1, next.ay + 1); break;
                    case 3: next.ay = std::max(0, next.ay - 1); break;
                }
                model.set_entry(h, start, seq, next);
                BoundReport report = check_theorem2(grid, model, policy, horizon, lip);
                CHECK(report.holds);
            }
        }
    }

    SUBCASE("one-step corruption translated to composed heads gives the same lhs") {
        const int horizon = 4;
        GridState from{1, 0, 2, 2};
        std::vector<int> up{0};

        GridLawModel one_step(cfg, 1);
        one_step.set_entry(1, from, up, GridState{2, 1, 2, 2});
        GridLawModel composed(cfg, horizon, true);
        composed.set_entry(1, from, up, GridState{2, 1, 2, 2});

        BoundReport first = check_theorem1(grid, one_step, policy, horizon, lip);
        BoundReport second = check_theorem2(grid, composed, policy, horizon, lip);
        CHECK(first.lhs == doctest::Approx(second.lhs).epsilon(1e-12));
        CHECK(first.holds);
        CHECK(second.holds);
        CHECK(first.rhs > 0.0);
        CHECK(second.rhs > 0.0);
    }

    SUBCASE("a state-sensitive policy trips the response flag without failing") {
        Policy sensitive = [](const State& s) {
            bool even = static_cast<int>(std::llround(s[0])) % 2 == 0;
            return std::vector<double>{even ? 0.7 : 0.1, 0.1, 0.1, even ? 0.1 : 0.7};
        };
        GridLawModel model(cfg, 1);
        GridState start = grid.start_state();
        std::vector<int> right{3};
        model.set_entry(1, start, right, GridState{2, 0, 2, 2});  // truth lands at (1,0)
        BoundReport report = check_theorem2(grid, model, policy, 2, lip);
        CHECK(report.policy_mismatch == 0.0);  // uniform policy never trips it

        BoundReport flagged = check_theorem2(grid, model, sensitive, 2, lip);
        CHECK(flagged.policy_mismatch > 0.05);
        CHECK_FALSE(flagged.policy_assumption_ok);
    }

    SUBCASE("rejected inputs") {
        m3test::ExactGridModel shallow(cfg, 2);
        CHECK_THROWS_AS(check_theorem2(grid, shallow, policy, 5, lip), std::invalid_argument);
        Gridworld wandering((GridworldConfig()));
        m3test::ExactGridModel deep(cfg, 4);
        CHECK_THROWS_AS(check_theorem2(wandering, deep, policy, 3, lip), std::invalid_argument);
    }
}

TEST_CASE("bound reports serialize one row per summand") {
    CHECK(bound_report_csv_header() ==
          "label,bound,horizon,lip,lhs,rhs,holds,policy_mismatch,h,weight,err_h");

    BoundReport report;
    report.bound = "one-step";
    report.horizon = 3;
    report.lip = 10.0;
    report.lhs = 0.5;
    report.rhs = 1.25;
    report.holds = true;
    report.per_h = {0.0, 0.0625};
    report.weights = {2.0, 1.0};
    std::ostringstream out;
    append_bound_report_csv(out, report, "trial7");
    CHECK(out.str() ==
          "trial7,one-step,3,10,0.5,1.25,1,0,1,2,0\n"
          "trial7,one-step,3,10,0.5,1.25,1,0,2,1,0.0625\n");

    BoundReport empty;
    empty.bound = "multi-step";
    empty.horizon = 1;
    std::ostringstream out2;
    append_bound_report_csv(out2, empty, "t");
    CHECK(out2.str() == "t,multi-step,1,0,0,0,0,0,0,0,0\n");
}
