#include "m3lab/agents.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <optional>
#include <stdexcept>

namespace m3lab {

namespace {

void sgd_step(nn::Network& net, const nn::GradientSet& grads, double lr) {
    for (size_t l = 0; l < net.w.size(); ++l) {
        for (size_t i = 0; i < net.w[l].size(); ++i) net.w[l][i] -= lr * grads.w[l][i];
        for (size_t i = 0; i < net.b[l].size(); ++i) net.b[l][i] -= lr * grads.b[l][i];
    }
}

std::vector<double> softmax(std::span<const double> logits) {
    double top = *std::max_element(logits.begin(), logits.end());
    std::vector<double> probs(logits.size());
    double total = 0.0;
    for (size_t i = 0; i < logits.size(); ++i) {
        probs[i] = std::exp(logits[i] - top);
        total += probs[i];
    }
    for (double& p : probs) p /= total;
    return probs;
}

std::vector<int> layer_sizes(int in, int hidden, int layers, int out) {
    std::vector<int> sizes{in};
    for (int l = 0; l < layers; ++l) sizes.push_back(hidden);
    sizes.push_back(out);
    return sizes;
}

}  // namespace

const char* model_kind_name(ModelKind kind) {
    switch (kind) {
        case ModelKind::None: return "none";
        case ModelKind::OneStep: return "one-step";
        case ModelKind::M3: return "m3";
        case ModelKind::Hallucinated: return "hallucinated";
        case ModelKind::Em: return "em";
    }
    throw std::logic_error("agents: unknown model kind");
}

ModelKind model_kind_from_name(const std::string& name) {
    if (name == "none") return ModelKind::None;
    if (name == "one-step") return ModelKind::OneStep;
    if (name == "m3") return ModelKind::M3;
    if (name == "hallucinated") return ModelKind::Hallucinated;
    if (name == "em") return ModelKind::Em;
    throw std::invalid_argument("agents: unknown model kind '" + name + "'");
}

std::vector<double> policy_probs(const nn::Network& policy, const State& s) {
    return softmax(nn::forward(policy, s));
}

Policy policy_as_function(const nn::Network& policy) {
    // captures by reference: the net must outlive the returned function
    return [&policy](const State& s) { return policy_probs(policy, s); };
}

std::vector<double> critic_values(const nn::Network& critic, const State& s) {
    return nn::forward(critic, s);
}

int greedy_action(std::span<const double> values) {
    if (values.empty()) throw std::invalid_argument("agents: empty value vector");
    int best = 0;
    for (size_t a = 1; a < values.size(); ++a)
        if (values[a] > values[static_cast<size_t>(best)]) best = static_cast<int>(a);
    return best;
}

int epsilon_greedy(const nn::Network& q, const State& s, double epsilon, Rng& rng) {
    if (epsilon < 0.0 || epsilon > 1.0) throw std::invalid_argument("agents: epsilon out of range");
    if (rng.uniform() < epsilon) return rng.uniform_int(q.output_size());
    return greedy_action(critic_values(q, s));
}

void critic_update(nn::Network& critic, const State& s, int action, double target, double lr) {
    if (!std::isfinite(target)) throw std::invalid_argument("agents: non-finite critic target");
    if (action < 0 || action >= critic.output_size())
        throw std::invalid_argument("agents: critic action out of range");
    nn::Workspace ws;
    std::span<const double> y = nn::forward_trace(critic, s, ws);
    std::vector<double> dl_dy(y.size(), 0.0);
    dl_dy[static_cast<size_t>(action)] = y[static_cast<size_t>(action)] - target;
    nn::GradientSet grads = nn::make_gradients(critic);
    nn::backward_from_output_grad(critic, dl_dy, grads, ws);
    sgd_step(critic, grads, lr);
}

void actor_update(nn::Network& policy, const nn::Network& critic, const State& s, double lr) {
    std::vector<double> q = critic_values(critic, s);
    if (q.size() != static_cast<size_t>(policy.output_size()))
        throw std::invalid_argument("agents: policy and critic action counts differ");
    nn::Workspace ws;
    std::span<const double> logits = nn::forward_trace(policy, s, ws);
    std::vector<double> probs = softmax(logits);

    double baseline = 0.0;
    for (size_t a = 0; a < probs.size(); ++a) baseline += probs[a] * q[a];
    // ascent on sum_a pi(a|s) (Q(a) - baseline): the logit gradient is
    // pi_j (Q_j - baseline); negate for the descent-convention backward pass
    std::vector<double> dl_dy(probs.size());
    for (size_t a = 0; a < probs.size(); ++a) dl_dy[a] = -probs[a] * (q[a] - baseline);
    nn::GradientSet grads = nn::make_gradients(policy);
    nn::backward_from_output_grad(policy, dl_dy, grads, ws);
    sgd_step(policy, grads, lr);
}

double critic_target_gh(const TransitionModel& model, bool fixed_origin, const State& s,
                        int action, const Policy& policy, const nn::Network& critic, int horizon,
                        int rollouts, Rng& rng) {
    if (horizon < 1) throw std::invalid_argument("agents: target depth must be at least 1");
    if (fixed_origin && horizon > model.horizon())
        throw std::invalid_argument("agents: target depth exceeds model horizon");
    if (rollouts < 1) throw std::invalid_argument("agents: need at least one rollout");
    if (action < 0 || action >= model.num_actions())
        throw std::invalid_argument("agents: forced action out of range");

    double total = 0.0;
    for (int k = 0; k < rollouts; ++k) {
        int calls = 0;
        Policy forced = [&](const State& st) {
            if (calls++ == 0) {
                std::vector<double> first(static_cast<size_t>(model.num_actions()), 0.0);
                first[static_cast<size_t>(action)] = 1.0;
                return first;
            }
            return policy(st);
        };
        RolloutTrace trace = fixed_origin ? m3_rollout(model, s, forced, horizon, rng)
                                          : composed_rollout(model, s, forced, horizon, rng);
        const State& end = trace.steps.back().predicted;
        int bootstrap = rng.categorical(policy(end));
        total += trace.steps.back().cum_reward +
                 critic_values(critic, end)[static_cast<size_t>(bootstrap)];
    }
    return total / rollouts;
}

ReplayBuffer::ReplayBuffer(size_t capacity) : capacity_(capacity) {
    if (capacity == 0) throw std::invalid_argument("replay: capacity must be positive");
}

void ReplayBuffer::add(Transition t) {
    if (items_.size() < capacity_)
        items_.push_back(std::move(t));
    else
        items_[next_] = std::move(t);
    next_ = (next_ + 1) % capacity_;
}

std::vector<const Transition*> ReplayBuffer::sample(int batch_size, Rng& rng) const {
    if (batch_size < 1) throw std::invalid_argument("replay: batch size must be positive");
    if (static_cast<size_t>(batch_size) > items_.size())
        throw std::invalid_argument("replay: not enough stored transitions");
    // partial Fisher-Yates over the index range gives a uniform batch without
    // replacement
    std::vector<size_t> idx(items_.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::vector<const Transition*> out;
    out.reserve(static_cast<size_t>(batch_size));
    for (int k = 0; k < batch_size; ++k) {
        size_t j = static_cast<size_t>(k) +
                   static_cast<size_t>(rng.uniform_int(static_cast<int>(idx.size() - k)));
        std::swap(idx[static_cast<size_t>(k)], idx[j]);
        out.push_back(&items_[idx[static_cast<size_t>(k)]]);
    }
    return out;
}

void dqn_update(nn::Network& q, const nn::Network& target_q, const ReplayBuffer& replay,
                int batch_size, double gamma, double lr, Rng& rng) {
    if (gamma < 0.0 || gamma > 1.0) throw std::invalid_argument("agents: gamma out of range");
    std::vector<const Transition*> batch = replay.sample(batch_size, rng);
    nn::Workspace ws;
    nn::GradientSet grads = nn::make_gradients(q);
    std::vector<double> dl_dy(static_cast<size_t>(q.output_size()));
    for (const Transition* tr : batch) {
        double target = tr->reward;
        if (!tr->done) {
            std::vector<double> next_q = nn::forward(target_q, tr->next);
            target += gamma * *std::max_element(next_q.begin(), next_q.end());
        }
        std::span<const double> y = nn::forward_trace(q, tr->s, ws);
        std::fill(dl_dy.begin(), dl_dy.end(), 0.0);
        dl_dy[static_cast<size_t>(tr->action)] =
            (y[static_cast<size_t>(tr->action)] - target) / batch_size;
        nn::backward_from_output_grad(q, dl_dy, grads, ws);
    }
    sgd_step(q, grads, lr);
}

LearningCurve run_actor_critic(const Env& env, ModelKind kind, const ActorCriticConfig& cfg,
                               uint64_t seed) {
    const EnvSpec& spec = env.spec();
    if (kind == ModelKind::Em)
        throw std::invalid_argument("agents: the actor-critic does not roll out mixture models");
    if (cfg.episodes < 1 || cfg.horizon < 1 || cfg.rollouts < 1)
        throw std::invalid_argument("agents: bad actor-critic budget config");
    if (!(cfg.actor_lr > 0.0) || !(cfg.critic_lr > 0.0))
        throw std::invalid_argument("agents: learning rates must be positive");
    if (cfg.snapshot_every < 1 || cfg.refresh_batches < 0)
        throw std::invalid_argument("agents: bad cadence config");

    nn::Network policy = nn::init_network(
        layer_sizes(spec.state_dim, cfg.policy_hidden, cfg.policy_layers, spec.num_actions),
        derive_seed(seed, 1));
    nn::Network critic = nn::init_network(
        layer_sizes(spec.state_dim, cfg.critic_hidden, cfg.critic_layers, spec.num_actions),
        derive_seed(seed, 2));

    // the hallucination mechanism stays off unless this run is the
    // hallucinated arm
    TrainConfig model_cfg = cfg.model_cfg;
    if (kind != ModelKind::Hallucinated) model_cfg.halluc_depth = 0;
    int model_horizon = kind == ModelKind::M3 ? cfg.horizon : 1;
    std::optional<MultiStepModel> model;
    if (kind != ModelKind::None)
        model.emplace(model_horizon, spec, model_cfg, derive_seed(seed, 3));
    TransitionDataset ds(model_horizon, spec.num_actions);

    Rng env_rng(derive_seed(seed, 4));
    Rng target_rng(derive_seed(seed, 5));
    Policy policy_fn = policy_as_function(policy);

    LearningCurve curve;
    curve.kind = kind;
    curve.seed = seed;
    curve.horizon = cfg.horizon;
    curve.rollouts = cfg.rollouts;

    for (int episode = 1; episode <= cfg.episodes; ++episode) {
        auto t0 = std::chrono::steady_clock::now();

        Episode ep;
        double ret = 0.0;
        State s = env.reset(env_rng);
        for (int t = 0; t < spec.horizon_cap; ++t) {
            int a = env_rng.categorical(policy_probs(policy, s));
            StepResult r = env.step(s, a, env_rng);
            ep.push_back({s, a, r.reward, r.next, r.done});
            ret += r.reward;
            s = r.next;
            ++curve.env_steps;
            if (r.done) break;
        }

        if (model) {
            ds.add_episode(ep);
            if (cfg.full_retrain) {
                model.emplace(model_horizon, spec, model_cfg, derive_seed(seed, 3, episode));
                model->fit(ds);
            } else {
                model->refresh(ds, cfg.refresh_batches);
            }
        }

        // one critic and one actor step per environment step, for every kind
        int len = static_cast<int>(ep.size());
        for (int t = 0; t < len; ++t) {
            double target;
            if (kind == ModelKind::None) {
                // realized H-step return from the recorded trajectory
                int end = std::min(t + cfg.horizon, len);
                target = 0.0;
                for (int i = t; i < end; ++i) target += ep[static_cast<size_t>(i)].reward;
                if (end < len) {
                    const Transition& boot = ep[static_cast<size_t>(end)];
                    target += critic_values(critic, boot.s)[static_cast<size_t>(boot.action)];
                } else if (!ep.back().done) {
                    const State& last = ep.back().next;
                    int a = target_rng.categorical(policy_probs(policy, last));
                    target += critic_values(critic, last)[static_cast<size_t>(a)];
                }
            } else {
                target = critic_target_gh(*model, kind == ModelKind::M3, ep[static_cast<size_t>(t)].s,
                                          ep[static_cast<size_t>(t)].action, policy_fn, critic,
                                          cfg.horizon, cfg.rollouts, target_rng);
            }
            critic_update(critic, ep[static_cast<size_t>(t)].s, ep[static_cast<size_t>(t)].action,
                          target, cfg.critic_lr);
            ++curve.critic_updates;
            actor_update(policy, critic, ep[static_cast<size_t>(t)].s, cfg.actor_lr);
            ++curve.actor_updates;
        }

        double wall_ms =
            std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
        curve.episodes.push_back({episode, ret, wall_ms});
        if (episode % cfg.snapshot_every == 0) curve.critic_snapshots.emplace_back(episode, critic);
    }
    return curve;
}

}  // namespace m3lab
