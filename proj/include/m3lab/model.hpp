#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "m3lab/dataset.hpp"
#include "m3lab/env.hpp"
#include "m3lab/nn.hpp"
#include "m3lab/rng.hpp"

namespace m3lab {

// Fixed-width action sequence encoding: horizon one-hot blocks of num_actions
// entries each, blocks past the sequence length left all zero.
std::vector<double> hhot_encode(std::span<const int> actions, int horizon, int num_actions);
std::vector<int> hhot_decode(std::span<const double> encoded, int horizon, int num_actions);

struct TrainConfig {
    int hidden = 64;
    int hidden_layers = 1;
    int epochs = 40;
    int batch_size = 32;
    int max_batches_per_epoch = 0;  // 0 = no cap
    double lr = 1e-3;
    nn::Loss loss = nn::Loss::SquaredError;
    nn::OptKind optimizer = nn::OptKind::Adam;
    // Self-generated training inputs, honored by train_hallucinated only: the
    // model's composed predictions up to halluc_depth steps out are paired with
    // the recorded action and next state. Per epoch, round(halluc_ratio *
    // |real h=1 samples|) such pairs are mixed in. Depth 0 disables the
    // mechanism entirely.
    int halluc_depth = 3;
    double halluc_ratio = 1.0;
};

struct HeadReport {
    bool has_data = false;
    std::vector<double> transition_loss;  // per-epoch mean over samples
    std::vector<double> reward_loss;
};

struct TrainReport {
    std::vector<HeadReport> heads;  // index h-1
};

// Deterministic learned model: predicts the state |actions| steps ahead and the
// summed reward over those steps, for any sequence length in [1, horizon].
class TransitionModel {
public:
    virtual ~TransitionModel() = default;
    virtual int horizon() const = 0;
    virtual int num_actions() const = 0;
    virtual int state_dim() const = 0;
    virtual State predict_state(const State& s, std::span<const int> actions) const = 0;
    virtual double predict_reward(const State& s, std::span<const int> actions) const = 0;
};

// One regression pair per horizon h: a transition net mapping
// (state/scale ++ hhot(actions)) to the normalized state delta from the origin,
// and a reward net mapping the same input to the h-step reward sum. Predicted
// states are origin + scale*delta, clipped to the environment bounds.
// A horizon-1 instance is the plain one-step model.
class MultiStepModel : public TransitionModel {
public:
    MultiStepModel(int horizon, const EnvSpec& spec, const TrainConfig& cfg, uint64_t seed);

    int horizon() const override { return horizon_; }
    int num_actions() const override { return spec_.num_actions; }
    int state_dim() const override { return spec_.state_dim; }
    const EnvSpec& env_spec() const { return spec_; }
    const TrainConfig& config() const { return cfg_; }

    State predict_state(const State& s, std::span<const int> actions) const override;
    double predict_reward(const State& s, std::span<const int> actions) const override;
    std::pair<State, double> predict(const State& s, std::span<const int> actions) const;

    // cfg.epochs full sweeps over every head's samples (shuffled each epoch).
    // Heads without data keep their initial weights and are flagged in the
    // report.
    TrainReport fit(const TransitionDataset& ds);

    // Online refresh: `batches` minibatches per head, sampled with replacement,
    // continuing the model's internal RNG stream where fit() left off.
    void refresh(const TransitionDataset& ds, int batches);

    const nn::Network& transition_net(int h) const;
    const nn::Network& reward_net(int h) const;
    nn::Network& transition_net(int h);
    nn::Network& reward_net(int h);

private:
    struct Head {
        nn::Network transition, reward;
        nn::OptState transition_opt, reward_opt;
        Rng rng;
    };

    struct Pair {
        State halluc_origin;  // used when halluc is set
        const State* origin = nullptr;
        const State* target = nullptr;
        std::vector<int> actions;
        double cum_reward = 0.0;
        bool halluc = false;
    };

    void check_sequence(std::span<const int> actions) const;
    std::vector<double> encode_input(const State& s, std::span<const int> actions) const;
    void delta_target(const State& origin, const State& target, std::vector<double>& out) const;
    double train_pairs(Head& head, const std::vector<Pair>& pairs, std::span<const size_t> order,
                       double* reward_loss_out);
    void hallucinated_pairs(const TransitionDataset& ds, Rng& rng, std::vector<Pair>& out) const;

    int horizon_;
    EnvSpec spec_;
    TrainConfig cfg_;
    std::vector<Head> heads_;
    nn::OptimizerConfig opt_cfg_;
};

struct TrainedModel {
    MultiStepModel model;
    TrainReport report;
};

TrainedModel train_multi_step(const TransitionDataset& ds, int horizon, const EnvSpec& spec,
                              const TrainConfig& cfg, uint64_t seed);
// Identical to train_multi_step with horizon 1 and hallucination disabled.
TrainedModel train_one_step(const TransitionDataset& ds, const EnvSpec& spec,
                            const TrainConfig& cfg, uint64_t seed);
// One-step training augmented with the model's own composed predictions as
// extra inputs; cfg.halluc_depth 0 behaves exactly like train_one_step.
TrainedModel train_hallucinated(const TransitionDataset& ds, const EnvSpec& spec,
                                const TrainConfig& cfg, uint64_t seed);

// Text snapshot embedding every head's network; round-trips predictions
// bit-exactly. Optimizer state is not saved.
void save_model(std::ostream& out, const MultiStepModel& model);
MultiStepModel load_model(std::istream& in);
void save_model_file(const std::string& path, const MultiStepModel& model);
MultiStepModel load_model_file(const std::string& path);

}  // namespace m3lab
