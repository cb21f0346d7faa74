#include "m3lab/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <stdexcept>

namespace m3lab {

namespace {

double l1_distance(const State& a, const State& b) {
    if (a.size() != b.size()) throw std::invalid_argument("diagnostics: state dimension mismatch");
    double total = 0.0;
    for (size_t i = 0; i < a.size(); ++i) total += std::abs(a[i] - b[i]);
    return total;
}

std::vector<double> query_policy(const Policy& policy, const State& s, int num_actions) {
    std::vector<double> probs = policy(s);
    if (static_cast<int>(probs.size()) != num_actions)
        throw std::invalid_argument("diagnostics: policy width does not match the action count");
    return probs;
}

// depth-h prediction: the matching head when the model has one, otherwise a
// one-step model composed on its own predictions
State predict_prefix(const TransitionModel& model, const State& s, std::span<const int> actions) {
    if (static_cast<int>(actions.size()) <= model.horizon()) return model.predict_state(s, actions);
    if (model.horizon() != 1)
        throw std::invalid_argument(
            "diagnostics: depth exceeds the model horizon and the model is not one-step");
    State cur = s;
    for (int a : actions) {
        std::span<const int> one(&a, 1);
        cur = model.predict_state(cur, one);
    }
    return cur;
}

void accumulate_h_step(const TransitionModel& model, const Episode& episode, int max_h,
                       std::vector<double>& sums, std::vector<long>& counts) {
    const int len = static_cast<int>(episode.size());
    std::vector<int> actions;
    actions.reserve(static_cast<size_t>(max_h));
    for (int t = 0; t < len; ++t) {
        actions.clear();
        const int deepest = std::min(max_h, len - t);
        for (int h = 1; h <= deepest; ++h) {
            actions.push_back(episode[static_cast<size_t>(t + h - 1)].action);
            const State& realized = (t + h < len) ? episode[static_cast<size_t>(t + h)].s
                                                  : episode.back().next;
            State predicted = predict_prefix(model, episode[static_cast<size_t>(t)].s, actions);
            sums[static_cast<size_t>(h - 1)] += l1_distance(predicted, realized);
            counts[static_cast<size_t>(h - 1)] += 1;
        }
    }
}

HStepErrorReport finish_h_step(std::vector<double> sums, std::vector<long> counts,
                               const std::string& model_name) {
    HStepErrorReport report;
    report.model_name = model_name;
    report.counts = std::move(counts);
    report.mean_l1.resize(sums.size(), 0.0);
    for (size_t i = 0; i < sums.size(); ++i)
        if (report.counts[i] > 0)
            report.mean_l1[i] = sums[i] / static_cast<double>(report.counts[i]);
    return report;
}

void check_frozen(const Gridworld& grid, const char* what) {
    if (!grid.config().freeze_ghost)
        throw std::invalid_argument(std::string("diagnostics: ") + what +
                                    " needs deterministic dynamics (freeze the ghost)");
}

// enumerable law of one (state, action) cell: successors with probabilities
// and the realized rewards
struct Edge {
    int next;
    double prob;
    double reward;
};

std::vector<std::vector<Edge>> law_table(const Gridworld& grid) {
    const int num_actions = grid.spec().num_actions;
    std::vector<std::vector<Edge>> law(static_cast<size_t>(grid.num_states() * num_actions));
    for (int i = 0; i < grid.num_states(); ++i) {
        GridState s = grid.state_at(i);
        for (int a = 0; a < num_actions; ++a) {
            auto outcomes = grid.enumerate(s, a);
            std::vector<Edge>& edges = law[static_cast<size_t>(i * num_actions + a)];
            edges.reserve(outcomes.size());
            for (const auto& [next, prob] : outcomes)
                edges.push_back({grid.index(next), prob, grid.grid_reward(s, a, next)});
        }
    }
    return law;
}

std::vector<std::vector<double>> policy_table(const Gridworld& grid, const Policy& policy) {
    std::vector<std::vector<double>> probs(static_cast<size_t>(grid.num_states()));
    for (int i = 0; i < grid.num_states(); ++i)
        probs[static_cast<size_t>(i)] =
            query_policy(policy, grid.encode(grid.state_at(i)), grid.spec().num_actions);
    return probs;
}

ExactValues evaluate_law(const Gridworld& grid, const std::vector<std::vector<Edge>>& law,
                         const Policy& policy, int horizon) {
    if (horizon < 0) throw std::invalid_argument("diagnostics: horizon must be non-negative");
    const int num_states = grid.num_states();
    const int num_actions = grid.spec().num_actions;
    std::vector<std::vector<double>> probs = policy_table(grid, policy);

    ExactValues out;
    out.horizon = horizon;
    out.value.assign(static_cast<size_t>(num_states), 0.0);
    for (int k = 1; k <= horizon; ++k) {
        std::vector<double> next(static_cast<size_t>(num_states), 0.0);
        for (int i = 0; i < num_states; ++i) {
            double v = 0.0;
            for (int a = 0; a < num_actions; ++a) {
                double pa = probs[static_cast<size_t>(i)][static_cast<size_t>(a)];
                if (pa == 0.0) continue;
                for (const Edge& e : law[static_cast<size_t>(i * num_actions + a)])
                    v += pa * e.prob * (e.reward + out.value[static_cast<size_t>(e.next)]);
            }
            next[static_cast<size_t>(i)] = v;
        }
        out.value = std::move(next);
    }

    if (horizon >= 1) {
        std::vector<double> dist(static_cast<size_t>(num_states), 0.0);
        dist[static_cast<size_t>(grid.index(grid.start_state()))] = 1.0;
        out.visitation.push_back(dist);
        for (int h = 2; h <= horizon; ++h) {
            std::vector<double> next(static_cast<size_t>(num_states), 0.0);
            for (int i = 0; i < num_states; ++i) {
                double mass = out.visitation.back()[static_cast<size_t>(i)];
                if (mass == 0.0) continue;
                for (int a = 0; a < num_actions; ++a) {
                    double pa = probs[static_cast<size_t>(i)][static_cast<size_t>(a)];
                    if (pa == 0.0) continue;
                    for (const Edge& e : law[static_cast<size_t>(i * num_actions + a)])
                        next[static_cast<size_t>(e.next)] += mass * pa * e.prob;
                }
            }
            out.visitation.push_back(std::move(next));
        }
    }
    return out;
}

}  // namespace

HStepErrorReport h_step_error(const TransitionModel& model, const Episode& episode, int max_h,
                              const std::string& model_name) {
    if (max_h < 1) throw std::invalid_argument("diagnostics: depth must be at least 1");
    if (episode.empty()) throw std::invalid_argument("diagnostics: empty episode");
    std::vector<double> sums(static_cast<size_t>(max_h), 0.0);
    std::vector<long> counts(static_cast<size_t>(max_h), 0);
    accumulate_h_step(model, episode, max_h, sums, counts);
    return finish_h_step(std::move(sums), std::move(counts), model_name);
}

HStepErrorReport h_step_error(const TransitionModel& model, const std::vector<Episode>& episodes,
                              int max_h, const std::string& model_name) {
    if (max_h < 1) throw std::invalid_argument("diagnostics: depth must be at least 1");
    if (episodes.empty()) throw std::invalid_argument("diagnostics: no episodes");
    std::vector<double> sums(static_cast<size_t>(max_h), 0.0);
    std::vector<long> counts(static_cast<size_t>(max_h), 0);
    for (const Episode& episode : episodes) {
        if (episode.empty()) throw std::invalid_argument("diagnostics: empty episode");
        accumulate_h_step(model, episode, max_h, sums, counts);
    }
    return finish_h_step(std::move(sums), std::move(counts), model_name);
}

ExactValues exact_value(const Gridworld& grid, const Policy& policy, int horizon) {
    return evaluate_law(grid, law_table(grid), policy, horizon);
}

ExactValues exact_value_over(const Gridworld& grid, const std::vector<int>& successors,
                             const Policy& policy, int horizon) {
    const int num_actions = grid.spec().num_actions;
    if (static_cast<int>(successors.size()) != grid.num_states() * num_actions)
        throw std::invalid_argument("diagnostics: successor table has the wrong size");
    std::vector<double> rewards = true_rewards(grid);
    std::vector<std::vector<Edge>> law(successors.size());
    for (size_t i = 0; i < successors.size(); ++i) {
        if (successors[i] < 0 || successors[i] >= grid.num_states())
            throw std::invalid_argument("diagnostics: successor index out of range");
        law[i] = {{successors[i], 1.0, rewards[i]}};
    }
    return evaluate_law(grid, law, policy, horizon);
}

std::vector<int> true_successors(const Gridworld& grid) {
    check_frozen(grid, "the tabular law");
    const int num_actions = grid.spec().num_actions;
    std::vector<int> succ(static_cast<size_t>(grid.num_states() * num_actions));
    for (int i = 0; i < grid.num_states(); ++i) {
        GridState s = grid.state_at(i);
        for (int a = 0; a < num_actions; ++a)
            succ[static_cast<size_t>(i * num_actions + a)] =
                grid.index(grid.enumerate(s, a).front().first);
    }
    return succ;
}

std::vector<double> true_rewards(const Gridworld& grid) {
    check_frozen(grid, "the tabular law");
    const int num_actions = grid.spec().num_actions;
    std::vector<double> rewards(static_cast<size_t>(grid.num_states() * num_actions));
    for (int i = 0; i < grid.num_states(); ++i) {
        GridState s = grid.state_at(i);
        for (int a = 0; a < num_actions; ++a) {
            GridState next = grid.enumerate(s, a).front().first;
            rewards[static_cast<size_t>(i * num_actions + a)] = grid.grid_reward(s, a, next);
        }
    }
    return rewards;
}

std::vector<int> model_successors(const Gridworld& grid, const TransitionModel& model) {
    const int num_actions = grid.spec().num_actions;
    if (model.state_dim() != grid.spec().state_dim || model.num_actions() != num_actions)
        throw std::invalid_argument("diagnostics: model does not match the gridworld");
    std::vector<int> succ(static_cast<size_t>(grid.num_states() * num_actions));
    for (int i = 0; i < grid.num_states(); ++i) {
        State s = grid.encode(grid.state_at(i));
        for (int a = 0; a < num_actions; ++a) {
            std::span<const int> one(&a, 1);
            succ[static_cast<size_t>(i * num_actions + a)] =
                grid.index(grid.decode(model.predict_state(s, one)));
        }
    }
    return succ;
}

double lipschitz_constant(const Gridworld& grid,
                          const std::function<double(const GridState&, int)>& f) {
    const int num_states = grid.num_states();
    const int num_actions = grid.spec().num_actions;
    std::vector<State> encoded(static_cast<size_t>(num_states));
    for (int i = 0; i < num_states; ++i) encoded[static_cast<size_t>(i)] = grid.encode(grid.state_at(i));

    double best = 0.0;
    for (int a = 0; a < num_actions; ++a) {
        std::vector<double> values(static_cast<size_t>(num_states));
        for (int i = 0; i < num_states; ++i)
            values[static_cast<size_t>(i)] = f(grid.state_at(i), a);
        for (int i = 0; i < num_states; ++i)
            for (int j = i + 1; j < num_states; ++j) {
                double gap = std::abs(values[static_cast<size_t>(i)] - values[static_cast<size_t>(j)]);
                if (gap == 0.0) continue;
                double d = l1_distance(encoded[static_cast<size_t>(i)], encoded[static_cast<size_t>(j)]);
                best = std::max(best, gap / d);
            }
    }
    return best;
}

double lipschitz_reward_constant(const Gridworld& grid) {
    return lipschitz_constant(grid, [&](const GridState& s, int a) {
        double expected = 0.0;
        for (const auto& [next, prob] : grid.enumerate(s, a))
            expected += prob * grid.grid_reward(s, a, next);
        return expected;
    });
}

BoundReport check_theorem1(const Gridworld& grid, const TransitionModel& one_step,
                           const Policy& policy, int horizon, double lip_r) {
    check_frozen(grid, "the one-step bound check");
    if (horizon < 1) throw std::invalid_argument("diagnostics: horizon must be at least 1");
    if (lip_r < 0.0) throw std::invalid_argument("diagnostics: negative Lipschitz constant");
    if (one_step.state_dim() != grid.spec().state_dim ||
        one_step.num_actions() != grid.spec().num_actions)
        throw std::invalid_argument("diagnostics: model does not match the gridworld");

    const int num_actions = grid.spec().num_actions;
    ExactValues truth = exact_value(grid, policy, horizon);
    ExactValues model_val = exact_value_over(grid, model_successors(grid, one_step), policy, horizon);
    std::vector<int> succ = true_successors(grid);
    std::vector<std::vector<double>> probs = policy_table(grid, policy);

    const int start = grid.index(grid.start_state());
    BoundReport report;
    report.bound = "one-step";
    report.horizon = horizon;
    report.lip = lip_r;
    report.lhs = std::abs(truth.value[static_cast<size_t>(start)] -
                          model_val.value[static_cast<size_t>(start)]);
    report.note =
        "depth-h error expectations use the policy's step-h visitation distribution under the "
        "true dynamics from the start state (finite-horizon stand-in for a stationary law)";

    for (int h = 1; h <= horizon - 1; ++h) {
        const std::vector<double>& dist = truth.visitation[static_cast<size_t>(h - 1)];
        double err = 0.0;
        for (int i = 0; i < grid.num_states(); ++i) {
            double mass = dist[static_cast<size_t>(i)];
            if (mass == 0.0) continue;
            State s = grid.encode(grid.state_at(i));
            for (int a = 0; a < num_actions; ++a) {
                double pa = probs[static_cast<size_t>(i)][static_cast<size_t>(a)];
                if (pa == 0.0) continue;
                std::span<const int> one(&a, 1);
                State truth_next = grid.encode(grid.state_at(succ[static_cast<size_t>(i * num_actions + a)]));
                err += mass * pa * l1_distance(one_step.predict_state(s, one), truth_next);
            }
        }
        report.per_h.push_back(err);
        report.weights.push_back(static_cast<double>(horizon - h));
        report.rhs += lip_r * static_cast<double>(horizon - h) * err;
    }
    report.holds = report.lhs <= report.rhs + 1e-9;
    return report;
}

BoundReport check_theorem2(const Gridworld& grid, const TransitionModel& m3, const Policy& policy,
                           int horizon, double lip_r) {
    check_frozen(grid, "the multi-step bound check");
    if (horizon < 1) throw std::invalid_argument("diagnostics: horizon must be at least 1");
    if (lip_r < 0.0) throw std::invalid_argument("diagnostics: negative Lipschitz constant");
    if (m3.state_dim() != grid.spec().state_dim || m3.num_actions() != grid.spec().num_actions)
        throw std::invalid_argument("diagnostics: model does not match the gridworld");
    if (horizon >= 2 && m3.horizon() < horizon - 1)
        throw std::invalid_argument("diagnostics: bound needs model heads up to depth H-1");

    const int num_actions = grid.spec().num_actions;
    ExactValues truth = exact_value(grid, policy, horizon);
    std::vector<int> succ = true_successors(grid);
    std::vector<double> rewards = true_rewards(grid);
    const int start = grid.index(grid.start_state());
    const State start_enc = grid.encode(grid.start_state());

    BoundReport report;
    report.bound = "multi-step";
    report.horizon = horizon;
    report.lip = lip_r;
    report.per_h.assign(static_cast<size_t>(std::max(0, horizon - 1)), 0.0);
    report.weights.assign(static_cast<size_t>(std::max(0, horizon - 1)), 1.0);
    report.note =
        "depth-h error expectations enumerate true-law action sequences from the start state; "
        "the model value lets the policy act on predicted states";

    // model value: every step-i state is the depth-(i-1) head's prediction
    // from the start, and the policy acts on those predictions
    double vhat = 0.0;
    std::vector<int> prefix;
    std::function<void(const State&, double, int)> walk_model = [&](const State& s, double weight,
                                                                    int depth) {
        std::vector<double> probs = query_policy(policy, s, num_actions);
        int cell = grid.index(grid.decode(s));
        for (int a = 0; a < num_actions; ++a) {
            double w = weight * probs[static_cast<size_t>(a)];
            if (w == 0.0) continue;
            vhat += w * rewards[static_cast<size_t>(cell * num_actions + a)];
            if (depth < horizon) {
                prefix.push_back(a);
                walk_model(m3.predict_state(start_enc, prefix), w, depth + 1);
                prefix.pop_back();
            }
        }
    };
    walk_model(start_enc, 1.0, 1);
    report.lhs = std::abs(truth.value[static_cast<size_t>(start)] - vhat);

    // error terms and the policy-response diagnostic along true-law sequences
    std::function<void(int, double, int)> walk_truth = [&](int state_index, double weight,
                                                           int depth) {
        if (depth > horizon - 1) return;
        std::vector<double> probs =
            query_policy(policy, grid.encode(grid.state_at(state_index)), num_actions);
        for (int a = 0; a < num_actions; ++a) {
            double w = weight * probs[static_cast<size_t>(a)];
            if (w == 0.0) continue;
            prefix.push_back(a);
            int next = succ[static_cast<size_t>(state_index * num_actions + a)];
            State true_next = grid.encode(grid.state_at(next));
            State predicted = m3.predict_state(start_enc, prefix);
            report.per_h[static_cast<size_t>(depth - 1)] += w * l1_distance(predicted, true_next);

            std::vector<double> at_truth = query_policy(policy, true_next, num_actions);
            std::vector<double> at_predicted = query_policy(policy, predicted, num_actions);
            double tv = 0.0;
            for (int b = 0; b < num_actions; ++b)
                tv += std::abs(at_truth[static_cast<size_t>(b)] -
                               at_predicted[static_cast<size_t>(b)]);
            report.policy_mismatch = std::max(report.policy_mismatch, 0.5 * tv);

            walk_truth(next, w, depth + 1);
            prefix.pop_back();
        }
    };
    if (horizon >= 2) walk_truth(start, 1.0, 1);

    for (double err : report.per_h) report.rhs += lip_r * err;
    report.policy_assumption_ok = report.policy_mismatch <= 0.05;
    report.holds = report.lhs <= report.rhs + 1e-9;
    return report;
}

std::string bound_report_csv_header() {
    return "label,bound,horizon,lip,lhs,rhs,holds,policy_mismatch,h,weight,err_h";
}

void append_bound_report_csv(std::ostream& out, const BoundReport& report,
                             const std::string& label) {
    char buf[256];
    size_t terms = report.per_h.empty() ? 1 : report.per_h.size();
    for (size_t i = 0; i < terms; ++i) {
        double weight = report.per_h.empty() ? 0.0 : report.weights[i];
        double err = report.per_h.empty() ? 0.0 : report.per_h[i];
        int h = report.per_h.empty() ? 0 : static_cast<int>(i + 1);
        out << label << ',' << report.bound << ',' << report.horizon;
        std::snprintf(buf, sizeof(buf), ",%.17g,%.17g,%.17g,%d,%.17g,%d,%.17g,%.17g\n", report.lip,
                      report.lhs, report.rhs, report.holds ? 1 : 0, report.policy_mismatch, h,
                      weight, err);
        out << buf;
    }
}

GridLawModel::GridLawModel(const GridworldConfig& cfg, int horizon, bool compose_one_step)
    : grid_(cfg), horizon_(horizon), compose_(compose_one_step) {
    if (!cfg.freeze_ghost) throw std::logic_error("GridLawModel: ghost must be frozen");
    if (horizon < 1) throw std::invalid_argument("GridLawModel: bad horizon");
    entries_.resize(static_cast<size_t>(horizon));
}

uint64_t GridLawModel::entry_key(int state_index, std::span<const int> actions) const {
    uint64_t key = static_cast<uint64_t>(state_index);
    for (int a : actions) key = key * static_cast<uint64_t>(grid_.spec().num_actions) +
                                static_cast<uint64_t>(a);
    return key;
}

GridState GridLawModel::step_true(const GridState& s, int action) const {
    return grid_.enumerate(s, action).front().first;
}

GridState GridLawModel::lookup_one_step(const GridState& s, int action) const {
    std::span<const int> one(&action, 1);
    auto it = entries_[0].find(entry_key(grid_.index(s), one));
    if (it != entries_[0].end()) return grid_.state_at(it->second);
    return step_true(s, action);
}

void GridLawModel::set_entry(int h, const GridState& s, std::span<const int> actions,
                             const GridState& next) {
    if (h < 1 || h > horizon_) throw std::invalid_argument("GridLawModel: depth out of range");
    if (compose_ && h != 1)
        throw std::invalid_argument("GridLawModel: composed depths derive from the one-step law");
    if (static_cast<int>(actions.size()) != h)
        throw std::invalid_argument("GridLawModel: sequence length must equal the depth");
    for (int a : actions)
        if (a < 0 || a >= grid_.spec().num_actions)
            throw std::invalid_argument("GridLawModel: action out of range");
    entries_[static_cast<size_t>(h - 1)][entry_key(grid_.index(s), actions)] = grid_.index(next);
}

State GridLawModel::predict_state(const State& s, std::span<const int> actions) const {
    if (actions.empty() || static_cast<int>(actions.size()) > horizon_)
        throw std::invalid_argument("GridLawModel: bad sequence length");
    for (int a : actions)
        if (a < 0 || a >= grid_.spec().num_actions)
            throw std::invalid_argument("GridLawModel: action out of range");
    GridState cur = grid_.decode(s);
    if (compose_) {
        for (int a : actions) cur = lookup_one_step(cur, a);
        return grid_.encode(cur);
    }
    const int h = static_cast<int>(actions.size());
    auto it = entries_[static_cast<size_t>(h - 1)].find(entry_key(grid_.index(cur), actions));
    if (it != entries_[static_cast<size_t>(h - 1)].end()) return grid_.encode(grid_.state_at(it->second));
    for (int a : actions) cur = step_true(cur, a);
    return grid_.encode(cur);
}

double GridLawModel::predict_reward(const State& s, std::span<const int> actions) const {
    if (actions.empty() || static_cast<int>(actions.size()) > horizon_)
        throw std::invalid_argument("GridLawModel: bad sequence length");
    GridState cur = grid_.decode(s);
    double total = 0.0;
    for (int a : actions) {
        GridState next = step_true(cur, a);
        total += grid_.grid_reward(cur, a, next);
        cur = next;
    }
    return total;
}

}  // namespace m3lab
