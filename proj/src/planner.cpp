#include "m3lab/planner.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <optional>
#include <ostream>
#include <stdexcept>

namespace m3lab {

namespace {

void check_plan_config(const PlanConfig& cfg, int state_dim) {
    if (cfg.horizon < 1) throw std::invalid_argument("planner: horizon must be at least 1");
    if (cfg.reward_source == RewardSource::Oracle || cfg.kind == ModelKind::Em) {
        if (!cfg.oracle_env)
            throw std::invalid_argument("planner: oracle rewards need an environment");
        if (cfg.oracle_env->spec().state_dim != state_dim)
            throw std::invalid_argument("planner: oracle environment dimension mismatch");
    }
}

void check_tree_inputs(const State& s, int state_dim, int num_actions, const nn::Network& q) {
    if (static_cast<int>(s.size()) != state_dim)
        throw std::invalid_argument("planner: root state dimension mismatch");
    if (q.input_size() != state_dim || q.output_size() != num_actions)
        throw std::invalid_argument("planner: critic shape does not match the model");
}

double oracle_reward(const PlanConfig& cfg, const State& s, int action, const State& next) {
    return cfg.oracle_env->reward(s, action, next);
}

// shared expansion logic: `advance` produces the child node for one edge
using AdvanceFn = std::function<PlanNode(const PlanNode&, int)>;

void expand(PlanNode& root, const nn::Network& q, const PlanConfig& cfg, int num_actions,
            const AdvanceFn& advance) {
    if (cfg.expansion == Expansion::Full) {
        std::function<void(PlanNode&)> grow = [&](PlanNode& node) {
            if (node.depth == cfg.horizon) return;
            for (int a = 0; a < num_actions; ++a) {
                node.children.push_back(std::make_unique<PlanNode>(advance(node, a)));
                grow(*node.children.back());
            }
        };
        grow(root);
        return;
    }
    // greedy: full fan-out at the root so actions stay comparable, then each
    // branch follows the critic's argmax action
    for (int a = 0; a < num_actions; ++a) {
        root.children.push_back(std::make_unique<PlanNode>(advance(root, a)));
        PlanNode* cur = root.children.back().get();
        while (cur->depth < cfg.horizon) {
            int best = greedy_action(critic_values(q, cur->state));
            cur->children.push_back(std::make_unique<PlanNode>(advance(*cur, best)));
            cur = cur->children.back().get();
        }
    }
}

double run_episode(const Env& env, Rng& rng, const std::function<int(const State&)>& act) {
    State s = env.reset(rng);
    double ret = 0.0;
    for (int t = 0; t < env.spec().horizon_cap; ++t) {
        int a = act(s);
        StepResult r = env.step(s, a, rng);
        ret += r.reward;
        s = std::move(r.next);
        if (r.done) break;
    }
    return ret;
}

double mean_of(const std::vector<double>& v) {
    double total = 0.0;
    for (double x : v) total += x;
    return total / static_cast<double>(v.size());
}

double sample_var(const std::vector<double>& v, double mean) {
    if (v.size() < 2) return 0.0;
    double total = 0.0;
    for (double x : v) total += (x - mean) * (x - mean);
    return total / static_cast<double>(v.size() - 1);
}

}  // namespace

const char* expansion_name(Expansion e) {
    return e == Expansion::Full ? "full" : "greedy";
}

const char* valuation_name(Valuation v) {
    return v == Valuation::LeafSum ? "leaf-sum" : "ensemble";
}

Expansion expansion_from_name(const std::string& name) {
    if (name == "full") return Expansion::Full;
    if (name == "greedy") return Expansion::Greedy;
    throw std::invalid_argument("planner: unknown expansion '" + name + "'");
}

Valuation valuation_from_name(const std::string& name) {
    if (name == "leaf-sum") return Valuation::LeafSum;
    if (name == "ensemble") return Valuation::Ensemble;
    throw std::invalid_argument("planner: unknown valuation '" + name + "'");
}

const PlanNode* PlanNode::child(int a) const {
    for (const auto& c : children)
        if (c->action == a) return c.get();
    return nullptr;
}

PlanNode build_tree(const State& s, const TransitionModel& model, const nn::Network& q,
                    const PlanConfig& cfg) {
    if (cfg.kind == ModelKind::None || cfg.kind == ModelKind::Em)
        throw std::invalid_argument("planner: tree construction needs a deterministic model kind");
    check_plan_config(cfg, model.state_dim());
    check_tree_inputs(s, model.state_dim(), model.num_actions(), q);
    bool fixed_origin = cfg.kind == ModelKind::M3;
    if (fixed_origin && cfg.horizon > model.horizon())
        throw std::invalid_argument("planner: horizon exceeds model horizon");

    PlanNode root;
    root.state = s;
    AdvanceFn advance = [&](const PlanNode& parent, int a) {
        PlanNode child;
        child.depth = parent.depth + 1;
        child.action = a;
        child.parent_state = parent.state;
        child.prefix = parent.prefix;
        child.prefix.push_back(a);
        if (fixed_origin) {
            child.state = model.predict_state(s, child.prefix);
            child.reward_to_node =
                cfg.reward_source == RewardSource::Learned
                    ? model.predict_reward(s, child.prefix)
                    : parent.reward_to_node + oracle_reward(cfg, parent.state, a, child.state);
        } else {
            std::span<const int> one(&a, 1);
            child.state = model.predict_state(parent.state, one);
            child.reward_to_node =
                parent.reward_to_node +
                (cfg.reward_source == RewardSource::Learned
                     ? model.predict_reward(parent.state, one)
                     : oracle_reward(cfg, parent.state, a, child.state));
        }
        return child;
    };
    expand(root, q, cfg, model.num_actions(), advance);
    return root;
}

PlanNode build_tree_em(const State& s, const EMModel& model, const nn::Network& q,
                       const PlanConfig& cfg, Rng& rng) {
    if (cfg.kind != ModelKind::Em)
        throw std::invalid_argument("planner: mixture trees need the em model kind");
    check_plan_config(cfg, model.state_dim());
    check_tree_inputs(s, model.state_dim(), model.num_actions(), q);
    if (cfg.horizon > model.horizon())
        throw std::invalid_argument("planner: horizon exceeds model horizon");

    PlanNode root;
    root.state = s;
    AdvanceFn advance = [&](const PlanNode& parent, int a) {
        PlanNode child;
        child.depth = parent.depth + 1;
        child.action = a;
        child.parent_state = parent.state;
        child.prefix = parent.prefix;
        child.prefix.push_back(a);
        child.state = model.em_sample(s, child.prefix, rng);
        child.reward_to_node =
            parent.reward_to_node + oracle_reward(cfg, parent.state, a, child.state);
        return child;
    };
    expand(root, q, cfg, model.num_actions(), advance);
    return root;
}

double node_estimate(const PlanNode& node, const nn::Network& q) {
    if (node.depth == 0) {
        std::vector<double> values = critic_values(q, node.state);
        return *std::max_element(values.begin(), values.end());
    }
    return node.reward_to_node +
           critic_values(q, node.parent_state)[static_cast<size_t>(node.action)];
}

double action_value(const PlanNode& root, int action, const nn::Network& q,
                    const PlanConfig& cfg) {
    const PlanNode* cur = root.child(action);
    if (!cur) throw std::invalid_argument("planner: action not expanded at the root");
    double total = 0.0;
    double leaf = 0.0;
    int count = 0;
    while (true) {
        leaf = node_estimate(*cur, q);
        total += leaf;
        ++count;
        if (cur->children.empty()) break;
        if (cur->children.size() == 1) {
            cur = cur->children.front().get();
        } else {
            // full trees: the branch follows the critic's argmax child
            cur = cur->child(greedy_action(critic_values(q, cur->state)));
        }
    }
    return cfg.valuation == Valuation::LeafSum ? leaf : total / count;
}

int plan_action(const State& s, const TransitionModel& model, const nn::Network& q,
                const PlanConfig& cfg) {
    PlanNode root = build_tree(s, model, q, cfg);
    int best = 0;
    double best_value = -std::numeric_limits<double>::infinity();
    for (int a = 0; a < model.num_actions(); ++a) {
        double value = action_value(root, a, q, cfg);
        if (value > best_value) {
            best_value = value;
            best = a;
        }
    }
    return best;
}

int plan_action_em(const State& s, const EMModel& model, const nn::Network& q,
                   const PlanConfig& cfg, Rng& rng) {
    if (cfg.em_samples < 1) throw std::invalid_argument("planner: need at least one sampled tree");
    std::vector<double> totals(static_cast<size_t>(model.num_actions()), 0.0);
    for (int k = 0; k < cfg.em_samples; ++k) {
        PlanNode root = build_tree_em(s, model, q, cfg, rng);
        for (int a = 0; a < model.num_actions(); ++a)
            totals[static_cast<size_t>(a)] += action_value(root, a, q, cfg);
    }
    return greedy_action(totals);
}

std::vector<SnapshotEvalRow> snapshot_evaluation(const Env& env,
                                                 const std::vector<nn::Network>& snapshots,
                                                 const std::vector<const TransitionModel*>& models,
                                                 const PlanConfig& cfg, int episodes_per_point,
                                                 uint64_t seed) {
    if (snapshots.empty()) throw std::invalid_argument("planner: no snapshots to evaluate");
    if (snapshots.size() != models.size())
        throw std::invalid_argument("planner: snapshot/model count mismatch");
    if (episodes_per_point < 1)
        throw std::invalid_argument("planner: need at least one evaluation episode");

    std::vector<SnapshotEvalRow> rows;
    rows.reserve(snapshots.size());
    for (size_t i = 0; i < snapshots.size(); ++i) {
        const nn::Network& q = snapshots[i];
        if (!models[i]) throw std::invalid_argument("planner: missing model for snapshot");
        const TransitionModel& model = *models[i];

        std::vector<double> free_returns, planned_returns;
        Rng free_rng(derive_seed(seed, i, 1));
        for (int e = 0; e < episodes_per_point; ++e)
            free_returns.push_back(run_episode(
                env, free_rng, [&](const State& s) { return greedy_action(critic_values(q, s)); }));

        Rng plan_rng(derive_seed(seed, i, 2));
        for (int e = 0; e < episodes_per_point; ++e)
            planned_returns.push_back(run_episode(
                env, plan_rng, [&](const State& s) { return plan_action(s, model, q, cfg); }));

        double free_mean = mean_of(free_returns);
        double plan_mean = mean_of(planned_returns);
        double n = static_cast<double>(episodes_per_point);
        SnapshotEvalRow row;
        row.snapshot_index = static_cast<int>(i);
        row.strategy = expansion_name(cfg.expansion);
        row.valuation = valuation_name(cfg.valuation);
        row.model_kind = model_kind_name(cfg.kind);
        row.mean_gain = plan_mean - free_mean;
        row.stderr_gain = std::sqrt(sample_var(planned_returns, plan_mean) / n +
                                    sample_var(free_returns, free_mean) / n);
        rows.push_back(std::move(row));
    }
    return rows;
}

std::string snapshot_eval_csv_header() {
    return "snapshot_index,strategy,valuation,model_kind,mean_gain,stderr";
}

void append_snapshot_eval_csv(std::ostream& out, const std::vector<SnapshotEvalRow>& rows) {
    char buf[64];
    for (const SnapshotEvalRow& row : rows) {
        out << row.snapshot_index << ',' << row.strategy << ',' << row.valuation << ','
            << row.model_kind;
        std::snprintf(buf, sizeof(buf), ",%.17g", row.mean_gain);
        out << buf;
        std::snprintf(buf, sizeof(buf), ",%.17g\n", row.stderr_gain);
        out << buf;
    }
}

DqnRunResult run_model_based_dqn(const Env& env, ModelKind kind, const DqnRunConfig& cfg,
                                 int episodes, uint64_t seed) {
    const EnvSpec& spec = env.spec();
    if (episodes < 1) throw std::invalid_argument("planner: need at least one episode");
    if (!(cfg.lr > 0.0)) throw std::invalid_argument("planner: learning rate must be positive");
    if (cfg.epsilon < 0.0 || cfg.epsilon > 1.0)
        throw std::invalid_argument("planner: epsilon out of range");
    if (cfg.batch_size < 1 || cfg.replay_capacity < cfg.batch_size)
        throw std::invalid_argument("planner: bad replay config");
    if (cfg.target_sync_every < 1 || cfg.updates_per_step < 0 || cfg.snapshot_every < 1 ||
        cfg.refresh_batches < 0 || cfg.em_refit_every < 1)
        throw std::invalid_argument("planner: bad cadence config");

    PlanConfig plan = cfg.plan;
    plan.kind = kind;
    if (kind != ModelKind::None) check_plan_config(plan, spec.state_dim);

    int model_horizon = (kind == ModelKind::M3 || kind == ModelKind::Em) ? plan.horizon : 1;
    TrainConfig model_cfg = cfg.model_cfg;
    if (kind != ModelKind::Hallucinated) model_cfg.halluc_depth = 0;
    std::optional<MultiStepModel> model;
    std::optional<EMModel> em;
    if (kind == ModelKind::OneStep || kind == ModelKind::M3 || kind == ModelKind::Hallucinated)
        model.emplace(model_horizon, spec, model_cfg, derive_seed(seed, 3));
    if (kind == ModelKind::Em) em.emplace(plan.horizon, spec, cfg.em_cfg, derive_seed(seed, 3));

    std::vector<int> q_sizes{spec.state_dim};
    for (int l = 0; l < cfg.layers; ++l) q_sizes.push_back(cfg.hidden);
    q_sizes.push_back(spec.num_actions);
    nn::Network q = nn::init_network(q_sizes, derive_seed(seed, 1));
    nn::Network target_q = q;

    ReplayBuffer replay(static_cast<size_t>(cfg.replay_capacity));
    Rng env_rng(derive_seed(seed, 4));
    Rng plan_rng(derive_seed(seed, 5));
    Rng learn_rng(derive_seed(seed, 6));

    DqnRunResult result;
    result.kind = kind;
    result.seed = seed;
    result.data = TransitionDataset(model_horizon, spec.num_actions);

    bool em_fitted = false;
    int steps_since_sync = 0;
    size_t min_before_updates =
        static_cast<size_t>(std::max(cfg.min_replay, cfg.batch_size));
    for (int episode = 1; episode <= episodes; ++episode) {
        auto t0 = std::chrono::steady_clock::now();
        Episode ep;
        double ret = 0.0;
        State s = env.reset(env_rng);
        for (int t = 0; t < spec.horizon_cap; ++t) {
            int a;
            if (env_rng.uniform() < cfg.epsilon) {
                a = env_rng.uniform_int(spec.num_actions);
            } else if (kind == ModelKind::None) {
                a = greedy_action(critic_values(q, s));
            } else if (kind == ModelKind::Em) {
                // fall back to the critic until the first mixture fit exists
                a = em_fitted ? plan_action_em(s, *em, q, plan, plan_rng)
                              : greedy_action(critic_values(q, s));
            } else {
                a = plan_action(s, *model, q, plan);
            }
            StepResult r = env.step(s, a, env_rng);
            replay.add({s, a, r.reward, r.next, r.done});
            ep.push_back({std::move(s), a, r.reward, r.next, r.done});
            ret += r.reward;
            s = std::move(r.next);
            ++result.env_steps;
            ++steps_since_sync;
            if (replay.size() >= min_before_updates)
                for (int u = 0; u < cfg.updates_per_step; ++u)
                    dqn_update(q, target_q, replay, cfg.batch_size, cfg.gamma, cfg.lr, learn_rng);
            if (steps_since_sync >= cfg.target_sync_every) {
                target_q = q;
                steps_since_sync = 0;
            }
            if (r.done) break;
        }

        if (kind != ModelKind::None) result.data.add_episode(std::move(ep));
        if (model) model->refresh(result.data, cfg.refresh_batches);
        if (em && episode % cfg.em_refit_every == 0 &&
            result.data.size(model_horizon) > 0) {
            em.emplace(plan.horizon, spec, cfg.em_cfg, derive_seed(seed, 3, static_cast<uint64_t>(episode)));
            em->fit(result.data);
            em_fitted = true;
        }

        double wall_ms =
            std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
        result.episodes.push_back({episode, ret, wall_ms});
        if (episode % cfg.snapshot_every == 0)
            result.snapshots.push_back({episode, q, result.data.num_episodes()});
    }
    return result;
}

}  // namespace m3lab
