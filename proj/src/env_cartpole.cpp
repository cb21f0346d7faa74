#include <cmath>

#include "m3lab/env.hpp"

namespace m3lab {

namespace {

// Cart-pole balancing with the standard benchmark constants. State is
// [x, x_dot, theta, theta_dot]; both actions push the cart with +-10 N.
// Semi-implicit-free Euler at dt = 0.02; old derivatives update positions.
constexpr double kGravity = 9.8;
constexpr double kMassCart = 1.0;
constexpr double kMassPole = 0.1;
constexpr double kTotalMass = kMassCart + kMassPole;
constexpr double kHalfLength = 0.5;
constexpr double kPoleMassLength = kMassPole * kHalfLength;
constexpr double kForceMag = 10.0;
constexpr double kTau = 0.02;
constexpr double kThetaLimit = 12.0 * 2.0 * M_PI / 360.0;
constexpr double kXLimit = 2.4;

class CartPole : public Env {
public:
    CartPole() {
        spec_.name = "cartpole";
        spec_.state_dim = 4;
        spec_.num_actions = 2;
        spec_.horizon_cap = 200;
        spec_.reward_desc = "+1 per step";
        spec_.is_deterministic = true;
        spec_.scale = {kXLimit, 2.5, kThetaLimit, 2.5};
        // Plausible-state box: termination limits plus one-step overshoot for the
        // positions, and for the velocities a margin above the largest magnitude
        // observed under random, constant-push, and bang-bang policies (~3.4).
        spec_.low = {-kXLimit - 0.2, -4.0, -kThetaLimit - 0.1, -4.0};
        spec_.high = {kXLimit + 0.2, 4.0, kThetaLimit + 0.1, 4.0};
    }

    const EnvSpec& spec() const override { return spec_; }

    State reset(Rng& rng) const override {
        State s(4);
        for (auto& v : s) v = rng.uniform(-0.05, 0.05);
        return s;
    }

    StepResult step(const State& s, int action, Rng&) const override {
        check_state(s);
        check_action(action);
        double x = s[0], x_dot = s[1], theta = s[2], theta_dot = s[3];
        double force = action == 1 ? kForceMag : -kForceMag;
        double cos_t = std::cos(theta), sin_t = std::sin(theta);
        double temp = (force + kPoleMassLength * theta_dot * theta_dot * sin_t) / kTotalMass;
        double theta_acc = (kGravity * sin_t - cos_t * temp) /
                           (kHalfLength * (4.0 / 3.0 - kMassPole * cos_t * cos_t / kTotalMass));
        double x_acc = temp - kPoleMassLength * theta_acc * cos_t / kTotalMass;

        State next{x + kTau * x_dot, x_dot + kTau * x_acc, theta + kTau * theta_dot,
                   theta_dot + kTau * theta_acc};
        bool done = std::abs(next[0]) > kXLimit || std::abs(next[2]) > kThetaLimit;
        return {std::move(next), 1.0, done};
    }

    double reward(const State&, int, const State&) const override { return 1.0; }

private:
    EnvSpec spec_;
};

}  // namespace

std::unique_ptr<Env> make_cartpole() { return std::make_unique<CartPole>(); }

}  // namespace m3lab
