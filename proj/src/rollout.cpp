#include "m3lab/rollout.hpp"

#include <cstdio>
#include <ostream>
#include <stdexcept>

namespace m3lab {

namespace {

std::vector<double> query_policy(const Policy& policy, const State& s, int num_actions) {
    std::vector<double> probs = policy(s);
    if (static_cast<int>(probs.size()) != num_actions)
        throw std::invalid_argument("rollout: policy returned wrong number of action probabilities");
    return probs;
}

void check_origin(const TransitionModel& model, const State& s1) {
    if (static_cast<int>(s1.size()) != model.state_dim())
        throw std::invalid_argument("rollout: origin state dimension mismatch");
}

void check_actions(const TransitionModel& model, std::span<const int> actions) {
    if (actions.empty()) throw std::invalid_argument("rollout: empty action sequence");
    if (static_cast<int>(actions.size()) > model.horizon())
        throw std::invalid_argument("rollout: action sequence longer than model horizon");
    for (int a : actions)
        if (a < 0 || a >= model.num_actions())
            throw std::invalid_argument("rollout: action out of range");
}

}  // namespace

Policy uniform_policy(int num_actions) {
    if (num_actions < 1) throw std::invalid_argument("rollout: need at least one action");
    std::vector<double> probs(static_cast<size_t>(num_actions), 1.0 / num_actions);
    return [probs](const State&) { return probs; };
}

std::vector<int> RolloutTrace::actions() const {
    std::vector<int> out;
    out.reserve(steps.size());
    for (const RolloutStep& step : steps) out.push_back(step.action);
    return out;
}

RolloutTrace composed_rollout(const TransitionModel& model, const State& s1, const Policy& policy,
                              int depth, Rng& rng) {
    if (depth < 1) throw std::invalid_argument("rollout: depth must be at least 1");
    check_origin(model, s1);
    RolloutTrace trace{RolloutKind::ComposedOneStep, s1, {}};
    trace.steps.reserve(static_cast<size_t>(depth));
    State cur = s1;
    double cum = 0.0;
    for (int h = 1; h <= depth; ++h) {
        std::vector<double> probs = query_policy(policy, cur, model.num_actions());
        int a = rng.categorical(probs);
        std::span<const int> one(&a, 1);
        cum += model.predict_reward(cur, one);
        cur = model.predict_state(cur, one);
        trace.steps.push_back({a, cur, cum});
    }
    return trace;
}

RolloutTrace m3_rollout(const TransitionModel& model, const State& s1, const Policy& policy,
                        int depth, Rng& rng) {
    if (depth < 1) throw std::invalid_argument("rollout: depth must be at least 1");
    if (depth > model.horizon())
        throw std::invalid_argument("rollout: depth exceeds model horizon");
    check_origin(model, s1);
    RolloutTrace trace{RolloutKind::FixedOriginM3, s1, {}};
    trace.steps.reserve(static_cast<size_t>(depth));
    std::vector<int> prefix;
    prefix.reserve(static_cast<size_t>(depth));
    const State* policy_state = &s1;
    for (int h = 1; h <= depth; ++h) {
        std::vector<double> probs = query_policy(policy, *policy_state, model.num_actions());
        prefix.push_back(rng.categorical(probs));
        State pred = model.predict_state(s1, prefix);
        double cum = model.predict_reward(s1, prefix);
        trace.steps.push_back({prefix.back(), std::move(pred), cum});
        policy_state = &trace.steps.back().predicted;
    }
    return trace;
}

double action_sequence_probability(const TransitionModel& model, const State& s,
                                   std::span<const int> actions, const Policy& policy) {
    check_actions(model, actions);
    check_origin(model, s);
    double p = query_policy(policy, s, model.num_actions())[static_cast<size_t>(actions[0])];
    for (size_t h = 1; h < actions.size(); ++h) {
        State pred = model.predict_state(s, actions.subspan(0, h));
        p *= query_policy(policy, pred, model.num_actions())[static_cast<size_t>(actions[h])];
    }
    return p;
}

uint64_t count_paths(int depth) {
    if (depth < 1) throw std::invalid_argument("count_paths: depth must be at least 1");
    if (depth > 63) throw std::invalid_argument("count_paths: depth too large for exact counting");
    // A depth-H prediction is either one direct head call or a shorter
    // partition followed by a final part, so C(H) = 1 + sum of C(h) for h < H.
    uint64_t total = 0;
    uint64_t c = 0;
    for (int h = 1; h <= depth; ++h) {
        c = 1 + total;
        total += c;
    }
    return c;
}

PathPartition sample_path(int depth, Rng& rng) {
    if (depth < 1) throw std::invalid_argument("sample_path: depth must be at least 1");
    PathPartition parts;
    int run = 1;
    for (int boundary = 1; boundary < depth; ++boundary) {
        if (rng.uniform() < 0.5) {
            parts.push_back(run);
            run = 1;
        } else {
            ++run;
        }
    }
    parts.push_back(run);
    return parts;
}

State chain_predict(const TransitionModel& model, const State& s1, std::span<const int> actions,
                    const PathPartition& path) {
    check_actions(model, actions);
    check_origin(model, s1);
    if (path.empty()) throw std::invalid_argument("chain_predict: empty path");
    size_t total = 0;
    for (int part : path) {
        if (part < 1) throw std::invalid_argument("chain_predict: path parts must be positive");
        total += static_cast<size_t>(part);
    }
    if (total != actions.size())
        throw std::invalid_argument("chain_predict: path parts must sum to the action count");
    State cur = s1;
    size_t offset = 0;
    for (int part : path) {
        cur = model.predict_state(cur, actions.subspan(offset, static_cast<size_t>(part)));
        offset += static_cast<size_t>(part);
    }
    return cur;
}

State ensemble_predict(const TransitionModel& model, const State& s1, std::span<const int> actions,
                       int num_paths, Rng& rng) {
    check_actions(model, actions);
    check_origin(model, s1);
    if (num_paths < 1) throw std::invalid_argument("ensemble_predict: need at least one path");
    State mean(s1.size(), 0.0);
    for (int k = 0; k < num_paths; ++k) {
        PathPartition path = sample_path(static_cast<int>(actions.size()), rng);
        State endpoint = chain_predict(model, s1, actions, path);
        for (size_t j = 0; j < mean.size(); ++j) mean[j] += endpoint[j];
    }
    for (double& v : mean) v /= num_paths;
    return mean;
}

std::string trace_csv_header(int state_dim) {
    std::string header = "run,h,action";
    char buf[32];
    for (int j = 0; j < state_dim; ++j) {
        std::snprintf(buf, sizeof(buf), ",s%d", j);
        header += buf;
    }
    header += ",cum_reward";
    return header;
}

void append_trace_csv(std::ostream& out, const RolloutTrace& trace, int run_id) {
    char buf[64];
    for (size_t h = 0; h < trace.steps.size(); ++h) {
        const RolloutStep& step = trace.steps[h];
        out << run_id << ',' << (h + 1) << ',' << step.action;
        for (double v : step.predicted) {
            std::snprintf(buf, sizeof(buf), ",%.17g", v);
            out << buf;
        }
        std::snprintf(buf, sizeof(buf), ",%.17g\n", step.cum_reward);
        out << buf;
    }
}

}  // namespace m3lab
