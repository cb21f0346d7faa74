#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "m3lab/dataset.hpp"
#include "m3lab/env.hpp"
#include "m3lab/model.hpp"
#include "m3lab/nn.hpp"
#include "m3lab/rng.hpp"
#include "m3lab/rollout.hpp"

namespace m3lab {

// Which dynamics model backs an agent's targets or a planner's tree. Em is
// planner-only: the actor-critic never rolls out stochastic models.
enum class ModelKind { None, OneStep, M3, Hallucinated, Em };

const char* model_kind_name(ModelKind kind);
ModelKind model_kind_from_name(const std::string& name);

// Softmax distribution over the policy net's logits.
std::vector<double> policy_probs(const nn::Network& policy, const State& s);

// Wraps a policy net for the rollout API.
Policy policy_as_function(const nn::Network& policy);

// One action value per output unit.
std::vector<double> critic_values(const nn::Network& critic, const State& s);

// Lowest-index argmax.
int greedy_action(std::span<const double> values);

// With probability epsilon a uniform random action, otherwise the greedy one.
int epsilon_greedy(const nn::Network& q, const State& s, double epsilon, Rng& rng);

// One plain gradient step pulling the critic's (s, action) output toward
// target, leaving the other outputs' errors out of the loss.
void critic_update(nn::Network& critic, const State& s, int action, double target, double lr);

// One ascent step on the all-actions objective: the sum over actions of
// pi(a|s) Qhat(s,a), with the probability-weighted mean Q subtracted as a
// baseline. The baseline cancels in the summed gradient, so it changes nothing
// but numerical conditioning; the critic is treated as a constant.
void actor_update(nn::Network& policy, const nn::Network& critic, const State& s, double lr);

// Mean over `rollouts` independent model rollouts of depth `horizon` from s
// with the first action forced to `action`: each contributes its predicted
// cumulative reward plus the critic's value at the predicted endpoint under an
// action drawn from the policy. fixed_origin selects the rollout procedure.
double critic_target_gh(const TransitionModel& model, bool fixed_origin, const State& s,
                        int action, const Policy& policy, const nn::Network& critic, int horizon,
                        int rollouts, Rng& rng);

// Bounded FIFO of transitions with uniform batch sampling (no replacement
// within one batch).
class ReplayBuffer {
public:
    explicit ReplayBuffer(size_t capacity);

    void add(Transition t);
    size_t size() const { return items_.size(); }
    size_t capacity() const { return capacity_; }
    const Transition& at(size_t i) const { return items_[i]; }

    std::vector<const Transition*> sample(int batch_size, Rng& rng) const;

private:
    size_t capacity_;
    size_t next_ = 0;
    std::vector<Transition> items_;
};

// One minibatch semi-gradient step on the squared TD error against
// r + gamma * max_a' targetQ(s', a'), with terminal transitions bootstrapping
// nothing.
void dqn_update(nn::Network& q, const nn::Network& target_q, const ReplayBuffer& replay,
                int batch_size, double gamma, double lr, Rng& rng);

struct ActorCriticConfig {
    int horizon = 8;    // target depth H
    int rollouts = 5;   // model rollouts averaged per target
    int episodes = 300;
    int policy_hidden = 32;
    int policy_layers = 1;
    int critic_hidden = 64;
    int critic_layers = 1;
    double actor_lr = 1e-3;
    double critic_lr = 1e-2;
    TrainConfig model_cfg;      // network shape and budget for the learned model
    int refresh_batches = 50;   // incremental model minibatches after each episode
    bool full_retrain = false;  // refit from scratch each episode instead
    int snapshot_every = 100;   // episodes between critic snapshots
};

struct EpisodeRecord {
    int episode = 0;
    double ret = 0.0;
    double wall_ms = 0.0;
};

struct LearningCurve {
    ModelKind kind = ModelKind::None;
    uint64_t seed = 0;
    int horizon = 0;
    int rollouts = 0;
    std::vector<EpisodeRecord> episodes;
    std::vector<std::pair<int, nn::Network>> critic_snapshots;
    // update parity counters: every model kind must perform the same number of
    // critic and actor steps per environment step
    long env_steps = 0;
    long critic_updates = 0;
    long actor_updates = 0;
};

// On-policy loop: act with the softmax policy, then after each episode train
// the model on the data so far (model-backed kinds) and replay the episode
// once through critic and actor updates. The critic target is the realized
// H-step return for ModelKind::None and critic_target_gh otherwise.
LearningCurve run_actor_critic(const Env& env, ModelKind kind, const ActorCriticConfig& cfg,
                               uint64_t seed);

}  // namespace m3lab
