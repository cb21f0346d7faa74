#include <cmath>

#include "m3lab/env.hpp"

namespace m3lab {

namespace {

// Two-link underactuated pendulum with the standard benchmark constants.
// Observed state is [cos t1, sin t1, cos t2, sin t2, w1, w2]; the torque on the
// second joint is action - 1 in {-1, 0, +1}. Integration: Euler at dt = 0.02,
// ten substeps per 0.2 s control interval.
constexpr double kM1 = 1.0, kM2 = 1.0;
constexpr double kL1 = 1.0;
constexpr double kLc1 = 0.5, kLc2 = 0.5;
constexpr double kI1 = 1.0, kI2 = 1.0;
constexpr double kG = 9.8;
constexpr double kDt = 0.02;
constexpr int kSubsteps = 10;
constexpr double kMaxW1 = 4.0 * M_PI;
constexpr double kMaxW2 = 9.0 * M_PI;

double wrap_pi(double a) {
    a = std::fmod(a + M_PI, 2.0 * M_PI);
    if (a < 0) a += 2.0 * M_PI;
    return a - M_PI;
}

class Acrobot : public Env {
public:
    Acrobot() {
        spec_.name = "acrobot";
        spec_.state_dim = 6;
        spec_.num_actions = 3;
        spec_.horizon_cap = 500;
        spec_.reward_desc = "-1 per step";
        spec_.is_deterministic = true;
        spec_.scale = {1.0, 1.0, 1.0, 1.0, kMaxW1, kMaxW2};
        spec_.low = {-1.0, -1.0, -1.0, -1.0, -kMaxW1, -kMaxW2};
        spec_.high = {1.0, 1.0, 1.0, 1.0, kMaxW1, kMaxW2};
    }

    const EnvSpec& spec() const override { return spec_; }

    State reset(Rng& rng) const override {
        double t1 = rng.uniform(-0.1, 0.1);
        double t2 = rng.uniform(-0.1, 0.1);
        double w1 = rng.uniform(-0.1, 0.1);
        double w2 = rng.uniform(-0.1, 0.1);
        return observe(t1, t2, w1, w2);
    }

    StepResult step(const State& s, int action, Rng&) const override {
        check_state(s);
        check_action(action);
        double t1 = std::atan2(s[1], s[0]);
        double t2 = std::atan2(s[3], s[2]);
        double w1 = s[4], w2 = s[5];
        double torque = static_cast<double>(action - 1);

        for (int k = 0; k < kSubsteps; ++k) {
            auto [a1, a2] = accel(t1, t2, w1, w2, torque);
            t1 += kDt * w1;
            t2 += kDt * w2;
            w1 += kDt * a1;
            w2 += kDt * a2;
            w1 = std::max(-kMaxW1, std::min(kMaxW1, w1));
            w2 = std::max(-kMaxW2, std::min(kMaxW2, w2));
        }
        t1 = wrap_pi(t1);
        t2 = wrap_pi(t2);
        bool done = -std::cos(t1) - std::cos(t1 + t2) > 1.0;
        return {observe(t1, t2, w1, w2), -1.0, done};
    }

    double reward(const State&, int, const State&) const override { return -1.0; }

private:
    static State observe(double t1, double t2, double w1, double w2) {
        return {std::cos(t1), std::sin(t1), std::cos(t2), std::sin(t2), w1, w2};
    }

    static std::pair<double, double> accel(double t1, double t2, double w1, double w2, double torque) {
        double d1 = kM1 * kLc1 * kLc1 +
                    kM2 * (kL1 * kL1 + kLc2 * kLc2 + 2.0 * kL1 * kLc2 * std::cos(t2)) + kI1 + kI2;
        double d2 = kM2 * (kLc2 * kLc2 + kL1 * kLc2 * std::cos(t2)) + kI2;
        double phi2 = kM2 * kLc2 * kG * std::cos(t1 + t2 - M_PI / 2.0);
        double phi1 = -kM2 * kL1 * kLc2 * w2 * w2 * std::sin(t2) -
                      2.0 * kM2 * kL1 * kLc2 * w2 * w1 * std::sin(t2) +
                      (kM1 * kLc1 + kM2 * kL1) * kG * std::cos(t1 - M_PI / 2.0) + phi2;
        double a2 = (torque + d2 / d1 * phi1 - kM2 * kL1 * kLc2 * w1 * w1 * std::sin(t2) - phi2) /
                    (kM2 * kLc2 * kLc2 + kI2 - d2 * d2 / d1);
        double a1 = -(d2 * a2 + phi1) / d1;
        return {a1, a2};
    }

    EnvSpec spec_;
};

}  // namespace

std::unique_ptr<Env> make_acrobot() { return std::make_unique<Acrobot>(); }

}  // namespace m3lab
