#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "m3lab/dataset.hpp"
#include "m3lab/env.hpp"
#include "m3lab/nn.hpp"
#include "m3lab/rng.hpp"

namespace m3lab {

struct EmConfig {
    int components = 2;  // mixture size M
    int iters = 10;      // EM alternations
    double sigma = 0.1;  // Gaussian noise scale, raw state units
    int mstep_steps = 200;  // gradient minibatches per component per M-step
    // Independent fits from different initializations; the one with the best
    // final objective wins. Small-sigma EM assigns samples almost hard, so bad
    // local optima are common from a single start.
    int restarts = 3;
    int hidden = 64;
    int hidden_layers = 1;
    int batch_size = 32;
    double lr = 1e-3;
    nn::OptKind optimizer = nn::OptKind::Adam;
};

struct EmHeadReport {
    bool fitted = false;
    // q-weighted complete-data log-likelihood after each M-step
    std::vector<double> objective;
    // objective never dropped by more than 1% of its magnitude between iterations
    bool monotone = true;
};

// Mixture-of-networks transition model: per horizon h, M component nets with
// mixing weights. Components share the deterministic model's parameterization
// (scaled input and h-hot actions in, normalized state delta out, clipped).
// The E-step posterior is proportional to the Gaussian likelihood of the
// observed successor under each component; the M-step runs a budgeted
// q-weighted regression per component, then sets the mixing weights to the
// normalized posterior mass.
class EMModel {
public:
    EMModel(int horizon, const EnvSpec& spec, const EmConfig& cfg, uint64_t seed);

    int horizon() const { return horizon_; }
    int num_actions() const { return spec_.num_actions; }
    int state_dim() const { return spec_.state_dim; }
    int components() const { return cfg_.components; }
    double sigma() const { return cfg_.sigma; }
    const EnvSpec& env_spec() const { return spec_; }
    const EmConfig& config() const { return cfg_; }

    bool head_fitted(int h) const;
    const std::vector<double>& mixing(int h) const;

    // Fits head h on the dataset's h-step samples.
    EmHeadReport fit_head(const TransitionDataset& ds, int h);
    // Fits every head that has samples; returns one report per h.
    std::vector<EmHeadReport> fit(const TransitionDataset& ds);

    State component_predict(const State& s, std::span<const int> actions, int m) const;
    // Posterior over components for an observed (s, actions, next) triple.
    std::vector<double> posterior(const State& s, std::span<const int> actions,
                                  const State& next) const;
    // Draws component ~ mixing weights, returns its prediction. Head must be fitted.
    State em_sample(const State& s, std::span<const int> actions, Rng& rng) const;

    const nn::Network& component_net(int h, int m) const;
    nn::Network& component_net(int h, int m);
    void set_mixing(int h, std::vector<double> mix);

private:
    struct Head {
        std::vector<nn::Network> nets;
        std::vector<nn::OptState> opts;
        std::vector<double> mix;
        bool fitted = false;
        Rng rng;
    };

    void check_sequence(std::span<const int> actions) const;
    std::vector<double> encode_input(const State& s, std::span<const int> actions) const;
    const Head& head_for(std::span<const int> actions) const;
    Head make_head(int h, int restart) const;
    EmHeadReport run_em(Head& head, const std::vector<std::vector<double>>& xs,
                        const std::vector<const State*>& origins,
                        const std::vector<const State*>& targets);

    int horizon_;
    EnvSpec spec_;
    EmConfig cfg_;
    uint64_t seed_;
    std::vector<Head> heads_;
    nn::OptimizerConfig opt_cfg_;
};

// Spec-shaped entry point: builds a model over the dataset's horizon and fits
// head h with mixture size M, `iters` EM alternations and noise scale sigma.
EMModel em_fit(const TransitionDataset& ds, int h, int M, int iters, double sigma,
               const EmConfig& cfg, const EnvSpec& spec, uint64_t seed,
               EmHeadReport* report = nullptr);

State em_sample(const EMModel& em, const State& s, std::span<const int> actions, Rng& rng);

// Text snapshot listing horizon, mixture size, sigma, normalization constants
// and every component net; round-trips predictions bit-exactly.
void save_em_model(std::ostream& out, const EMModel& model);
EMModel load_em_model(std::istream& in);

}  // namespace m3lab
