#include "m3lab/em_model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <istream>
#include <numeric>
#include <optional>
#include <ostream>
#include <stdexcept>

namespace m3lab {

namespace {

constexpr double kTwoPi = 6.283185307179586;

void check_em_spec(const EnvSpec& spec) {
    if (spec.state_dim < 1 || spec.num_actions < 1)
        throw std::invalid_argument("em: bad environment spec dimensions");
    size_t d = static_cast<size_t>(spec.state_dim);
    if (spec.scale.size() != d || spec.low.size() != d || spec.high.size() != d)
        throw std::invalid_argument("em: spec scale/low/high size mismatch");
    for (int i = 0; i < spec.state_dim; ++i) {
        if (!(spec.scale[i] > 0.0)) throw std::invalid_argument("em: scale entries must be positive");
        if (!(spec.low[i] < spec.high[i])) throw std::invalid_argument("em: low must be below high");
    }
}

}  // namespace

EMModel::EMModel(int horizon, const EnvSpec& spec, const EmConfig& cfg, uint64_t seed)
    : horizon_(horizon), spec_(spec), cfg_(cfg), seed_(seed) {
    if (horizon < 1) throw std::invalid_argument("em: horizon must be at least 1");
    check_em_spec(spec_);
    if (cfg_.components < 1) throw std::invalid_argument("em: need at least one component");
    if (!(cfg_.sigma > 0.0)) throw std::invalid_argument("em: sigma must be positive");
    if (cfg_.iters < 1 || cfg_.mstep_steps < 1 || cfg_.batch_size < 1 || cfg_.restarts < 1)
        throw std::invalid_argument("em: bad fitting budget config");
    if (cfg_.hidden < 1 || cfg_.hidden_layers < 0)
        throw std::invalid_argument("em: bad network shape config");
    if (!(cfg_.lr > 0.0)) throw std::invalid_argument("em: learning rate must be positive");
    opt_cfg_.kind = cfg_.optimizer;
    opt_cfg_.lr = cfg_.lr;
    heads_.reserve(static_cast<size_t>(horizon_));
    for (int h = 1; h <= horizon_; ++h) heads_.push_back(make_head(h, 0));
}

EMModel::Head EMModel::make_head(int h, int restart) const {
    std::vector<int> sizes{spec_.state_dim + horizon_ * spec_.num_actions};
    for (int l = 0; l < cfg_.hidden_layers; ++l) sizes.push_back(cfg_.hidden);
    sizes.push_back(spec_.state_dim);
    uint64_t r = static_cast<uint64_t>(restart);
    Head head{{}, {}, std::vector<double>(cfg_.components, 1.0 / cfg_.components), false,
              Rng(derive_seed(seed_, static_cast<uint64_t>(h), 1000000007ull + r))};
    for (int m = 0; m < cfg_.components; ++m) {
        head.nets.push_back(nn::init_network(
            sizes, derive_seed(seed_, static_cast<uint64_t>(h), static_cast<uint64_t>(m) + 4096 * r)));
        head.opts.push_back(nn::make_opt_state(head.nets.back()));
    }
    return head;
}

void EMModel::check_sequence(std::span<const int> actions) const {
    if (actions.empty()) throw std::invalid_argument("em: empty action sequence");
    if (static_cast<int>(actions.size()) > horizon_)
        throw std::invalid_argument("em: action sequence longer than horizon");
    for (int a : actions)
        if (a < 0 || a >= spec_.num_actions) throw std::invalid_argument("em: action out of range");
}

std::vector<double> EMModel::encode_input(const State& s, std::span<const int> actions) const {
    if (static_cast<int>(s.size()) != spec_.state_dim)
        throw std::invalid_argument("em: state dimension mismatch");
    std::vector<double> x(static_cast<size_t>(spec_.state_dim) +
                              static_cast<size_t>(horizon_) * spec_.num_actions,
                          0.0);
    for (int i = 0; i < spec_.state_dim; ++i) x[i] = s[i] / spec_.scale[i];
    for (size_t k = 0; k < actions.size(); ++k)
        x[spec_.state_dim + k * spec_.num_actions + actions[k]] = 1.0;
    return x;
}

const EMModel::Head& EMModel::head_for(std::span<const int> actions) const {
    check_sequence(actions);
    return heads_[actions.size() - 1];
}

bool EMModel::head_fitted(int h) const {
    if (h < 1 || h > horizon_) throw std::invalid_argument("em: head index out of range");
    return heads_[static_cast<size_t>(h - 1)].fitted;
}

const std::vector<double>& EMModel::mixing(int h) const {
    if (h < 1 || h > horizon_) throw std::invalid_argument("em: head index out of range");
    return heads_[static_cast<size_t>(h - 1)].mix;
}

State EMModel::component_predict(const State& s, std::span<const int> actions, int m) const {
    const Head& head = head_for(actions);
    if (m < 0 || m >= cfg_.components) throw std::invalid_argument("em: component out of range");
    auto x = encode_input(s, actions);
    auto delta = nn::forward(head.nets[static_cast<size_t>(m)], x);
    State out(static_cast<size_t>(spec_.state_dim));
    for (int i = 0; i < spec_.state_dim; ++i)
        out[i] = std::clamp(s[i] + spec_.scale[i] * delta[i], spec_.low[i], spec_.high[i]);
    return out;
}

std::vector<double> EMModel::posterior(const State& s, std::span<const int> actions,
                                       const State& next) const {
    const Head& head = head_for(actions);
    if (next.size() != s.size()) throw std::invalid_argument("em: successor dimension mismatch");
    // likelihood ratios with the smallest distance factored out for stability
    std::vector<double> d2(head.nets.size());
    for (size_t m = 0; m < head.nets.size(); ++m) {
        State pred = component_predict(s, actions, static_cast<int>(m));
        double sum = 0.0;
        for (size_t i = 0; i < next.size(); ++i) {
            double e = next[i] - pred[i];
            sum += e * e;
        }
        d2[m] = sum;
    }
    double dmin = *std::min_element(d2.begin(), d2.end());
    std::vector<double> q(d2.size());
    double total = 0.0;
    for (size_t m = 0; m < d2.size(); ++m) {
        q[m] = std::exp(-(d2[m] - dmin) / (2.0 * cfg_.sigma * cfg_.sigma));
        total += q[m];
    }
    for (double& v : q) v /= total;
    return q;
}

State EMModel::em_sample(const State& s, std::span<const int> actions, Rng& rng) const {
    const Head& head = head_for(actions);
    if (!head.fitted) throw std::runtime_error("em: head not fitted");
    int m = rng.categorical(head.mix);
    return component_predict(s, actions, m);
}

EmHeadReport EMModel::fit_head(const TransitionDataset& ds, int h) {
    if (h < 1 || h > horizon_) throw std::invalid_argument("em: head index out of range");
    if (ds.num_actions() != spec_.num_actions)
        throw std::invalid_argument("em: dataset action count mismatch");
    if (h > ds.horizon() || ds.size(h) == 0)
        throw std::invalid_argument("em: no samples for requested head");
    size_t n = ds.size(h);

    // cache inputs and raw-space targets once
    std::vector<std::vector<double>> xs(n);
    std::vector<const State*> targets(n);
    std::vector<const State*> origins(n);
    for (size_t i = 0; i < n; ++i) {
        SequenceSample sample = ds.get(h, i);
        xs[i] = encode_input(*sample.origin, sample.actions);
        targets[i] = sample.target;
        origins[i] = sample.origin;
    }

    std::optional<Head> best;
    EmHeadReport best_report;
    for (int r = 0; r < cfg_.restarts; ++r) {
        Head candidate = make_head(h, r);
        EmHeadReport report = run_em(candidate, xs, origins, targets);
        if (!best || report.objective.back() > best_report.objective.back()) {
            best = std::move(candidate);
            best_report = std::move(report);
        }
    }
    heads_[static_cast<size_t>(h - 1)] = std::move(*best);
    return best_report;
}

EmHeadReport EMModel::run_em(Head& head, const std::vector<std::vector<double>>& xs,
                             const std::vector<const State*>& origins,
                             const std::vector<const State*>& targets) {
    size_t n = xs.size();
    int M = cfg_.components;
    double var = cfg_.sigma * cfg_.sigma;
    double log_norm = -0.5 * spec_.state_dim * std::log(kTwoPi * var);

    EmHeadReport report;
    std::vector<std::vector<double>> q(n, std::vector<double>(static_cast<size_t>(M)));
    std::vector<std::vector<double>> d2(n, std::vector<double>(static_cast<size_t>(M)));
    nn::Workspace ws;
    std::vector<double> dl_dy(static_cast<size_t>(spec_.state_dim));

    auto distances = [&](size_t i) {
        for (int m = 0; m < M; ++m) {
            auto delta = nn::forward(head.nets[static_cast<size_t>(m)], xs[i]);
            double sum = 0.0;
            for (int j = 0; j < spec_.state_dim; ++j) {
                double pred = std::clamp((*origins[i])[static_cast<size_t>(j)] +
                                             spec_.scale[static_cast<size_t>(j)] * delta[static_cast<size_t>(j)],
                                         spec_.low[static_cast<size_t>(j)],
                                         spec_.high[static_cast<size_t>(j)]);
                double e = (*targets[i])[static_cast<size_t>(j)] - pred;
                sum += e * e;
            }
            d2[i][static_cast<size_t>(m)] = sum;
        }
    };

    for (int iter = 0; iter < cfg_.iters; ++iter) {
        // E-step: posteriors proportional to the component likelihoods
        for (size_t i = 0; i < n; ++i) {
            distances(i);
            double dmin = *std::min_element(d2[i].begin(), d2[i].end());
            double total = 0.0;
            for (int m = 0; m < M; ++m) {
                q[i][static_cast<size_t>(m)] = std::exp(-(d2[i][static_cast<size_t>(m)] - dmin) / (2.0 * var));
                total += q[i][static_cast<size_t>(m)];
            }
            for (int m = 0; m < M; ++m) q[i][static_cast<size_t>(m)] /= total;
        }

        // M-step part one: budgeted q-weighted regression per component.
        // Minimizing the q-weighted squared raw-space error maximizes the
        // q-weighted Gaussian log-likelihood in the network parameters.
        for (int m = 0; m < M; ++m) {
            nn::GradientSet grads = nn::make_gradients(head.nets[static_cast<size_t>(m)]);
            for (int step = 0; step < cfg_.mstep_steps; ++step) {
                grads.zero();
                for (int b = 0; b < cfg_.batch_size; ++b) {
                    size_t i = static_cast<size_t>(head.rng.uniform_int(static_cast<int>(n)));
                    auto y = nn::forward_trace(head.nets[static_cast<size_t>(m)], xs[i], ws);
                    double w = q[i][static_cast<size_t>(m)];
                    for (int j = 0; j < spec_.state_dim; ++j) {
                        double sj = spec_.scale[static_cast<size_t>(j)];
                        double raw_err = (*origins[i])[static_cast<size_t>(j)] + sj * y[static_cast<size_t>(j)] -
                                         (*targets[i])[static_cast<size_t>(j)];
                        dl_dy[static_cast<size_t>(j)] = 2.0 * w * sj * raw_err;
                    }
                    nn::backward_from_output_grad(head.nets[static_cast<size_t>(m)], dl_dy, grads, ws);
                }
                grads.scale(1.0 / cfg_.batch_size);
                nn::optimizer_step(head.nets[static_cast<size_t>(m)], grads,
                                   head.opts[static_cast<size_t>(m)], opt_cfg_);
            }
        }

        // M-step part two: mixing weights from the posterior mass
        std::vector<double> mass(static_cast<size_t>(M), 0.0);
        for (size_t i = 0; i < n; ++i)
            for (int m = 0; m < M; ++m) mass[static_cast<size_t>(m)] += q[i][static_cast<size_t>(m)];
        for (int m = 0; m < M; ++m)
            head.mix[static_cast<size_t>(m)] = mass[static_cast<size_t>(m)] / static_cast<double>(n);

        // q-weighted complete-data log-likelihood at the new parameters
        double objective = 0.0;
        for (size_t i = 0; i < n; ++i) {
            distances(i);
            for (int m = 0; m < M; ++m) {
                double logp = std::log(std::max(head.mix[static_cast<size_t>(m)], 1e-300));
                objective += q[i][static_cast<size_t>(m)] *
                             (logp + log_norm - d2[i][static_cast<size_t>(m)] / (2.0 * var));
            }
        }
        if (!report.objective.empty()) {
            double prev = report.objective.back();
            if (objective < prev - 0.01 * std::abs(prev)) report.monotone = false;
        }
        report.objective.push_back(objective);
    }
    head.fitted = true;
    report.fitted = true;
    return report;
}

std::vector<EmHeadReport> EMModel::fit(const TransitionDataset& ds) {
    std::vector<EmHeadReport> reports;
    for (int h = 1; h <= horizon_; ++h) {
        if (h <= ds.horizon() && ds.size(h) > 0) {
            reports.push_back(fit_head(ds, h));
        } else {
            reports.emplace_back();
        }
    }
    return reports;
}

const nn::Network& EMModel::component_net(int h, int m) const {
    if (h < 1 || h > horizon_) throw std::invalid_argument("em: head index out of range");
    if (m < 0 || m >= cfg_.components) throw std::invalid_argument("em: component out of range");
    return heads_[static_cast<size_t>(h - 1)].nets[static_cast<size_t>(m)];
}

nn::Network& EMModel::component_net(int h, int m) {
    if (h < 1 || h > horizon_) throw std::invalid_argument("em: head index out of range");
    if (m < 0 || m >= cfg_.components) throw std::invalid_argument("em: component out of range");
    return heads_[static_cast<size_t>(h - 1)].nets[static_cast<size_t>(m)];
}

void EMModel::set_mixing(int h, std::vector<double> mix) {
    if (h < 1 || h > horizon_) throw std::invalid_argument("em: head index out of range");
    if (static_cast<int>(mix.size()) != cfg_.components)
        throw std::invalid_argument("em: mixing size mismatch");
    double total = 0.0;
    for (double v : mix) {
        if (v < 0.0) throw std::invalid_argument("em: mixing weights must be nonnegative");
        total += v;
    }
    if (std::abs(total - 1.0) > 1e-9) throw std::invalid_argument("em: mixing weights must sum to 1");
    Head& head = heads_[static_cast<size_t>(h - 1)];
    head.mix = std::move(mix);
    head.fitted = true;
}

EMModel em_fit(const TransitionDataset& ds, int h, int M, int iters, double sigma,
               const EmConfig& cfg, const EnvSpec& spec, uint64_t seed, EmHeadReport* report) {
    EmConfig local = cfg;
    local.components = M;
    local.iters = iters;
    local.sigma = sigma;
    EMModel model(std::max(h, 1), spec, local, seed);
    EmHeadReport r = model.fit_head(ds, h);
    if (report) *report = std::move(r);
    return model;
}

State em_sample(const EMModel& em, const State& s, std::span<const int> actions, Rng& rng) {
    return em.em_sample(s, actions, rng);
}

void save_em_model(std::ostream& out, const EMModel& model) {
    const EnvSpec& spec = model.env_spec();
    out << "m3lab-em-model 1\n";
    out << "horizon " << model.horizon() << '\n';
    out << "components " << model.components() << '\n';
    char buf[40];
    std::snprintf(buf, sizeof buf, "%a", model.sigma());
    out << "sigma " << buf << '\n';
    out << "env " << spec.name << '\n';
    out << "state_dim " << spec.state_dim << '\n';
    out << "num_actions " << spec.num_actions << '\n';
    auto write_vec = [&out](const char* tag, const std::vector<double>& v) {
        out << tag;
        char num[40];
        for (double x : v) {
            std::snprintf(num, sizeof num, " %a", x);
            out << num;
        }
        out << '\n';
    };
    write_vec("scale", spec.scale);
    write_vec("low", spec.low);
    write_vec("high", spec.high);
    for (int h = 1; h <= model.horizon(); ++h) {
        out << "head " << h << ' ' << (model.head_fitted(h) ? 1 : 0) << '\n';
        write_vec("mix", model.mixing(h));
        for (int m = 0; m < model.components(); ++m) nn::save_network(out, model.component_net(h, m));
    }
    out << "end\n";
    if (!out) throw std::runtime_error("em snapshot: write failed");
}

EMModel load_em_model(std::istream& in) {
    auto expect = [&in](const char* tag) {
        std::string got;
        if (!(in >> got) || got != tag)
            throw std::runtime_error(std::string("em snapshot: expected ") + tag);
    };
    auto read_vec = [&in, &expect](const char* tag, size_t count) {
        expect(tag);
        std::vector<double> v(count);
        for (double& x : v) {
            std::string tok;
            if (!(in >> tok)) throw std::runtime_error("em snapshot: truncated vector");
            char* end = nullptr;
            x = std::strtod(tok.c_str(), &end);
            if (end != tok.c_str() + tok.size())
                throw std::runtime_error("em snapshot: bad number");
        }
        return v;
    };
    std::string magic;
    int version = 0;
    if (!(in >> magic >> version) || magic != "m3lab-em-model" || version != 1)
        throw std::runtime_error("em snapshot: bad header");
    int horizon = 0, components = 0;
    expect("horizon");
    in >> horizon;
    expect("components");
    in >> components;
    expect("sigma");
    std::string sigma_tok;
    in >> sigma_tok;
    EnvSpec spec;
    expect("env");
    in >> spec.name;
    expect("state_dim");
    in >> spec.state_dim;
    expect("num_actions");
    in >> spec.num_actions;
    if (!in || horizon < 1 || components < 1)
        throw std::runtime_error("em snapshot: bad dimensions");
    size_t d = static_cast<size_t>(spec.state_dim);
    spec.scale = read_vec("scale", d);
    spec.low = read_vec("low", d);
    spec.high = read_vec("high", d);
    EmConfig cfg;
    cfg.components = components;
    cfg.sigma = std::strtod(sigma_tok.c_str(), nullptr);
    EMModel model(horizon, spec, cfg, 0);
    for (int h = 1; h <= horizon; ++h) {
        expect("head");
        int got_h = 0, fitted = 0;
        if (!(in >> got_h >> fitted) || got_h != h)
            throw std::runtime_error("em snapshot: head order mismatch");
        auto mix = read_vec("mix", static_cast<size_t>(components));
        for (int m = 0; m < components; ++m) {
            nn::Network net = nn::load_network(in);
            if (net.input_size() != model.component_net(h, m).input_size() ||
                net.output_size() != spec.state_dim)
                throw std::runtime_error("em snapshot: network shape mismatch");
            model.component_net(h, m) = std::move(net);
        }
        if (fitted) model.set_mixing(h, std::move(mix));
    }
    expect("end");
    return model;
}

}  // namespace m3lab
