#include "m3lab/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace m3lab {

std::vector<double> hhot_encode(std::span<const int> actions, int horizon, int num_actions) {
    if (horizon < 1 || num_actions < 1) throw std::invalid_argument("hhot: bad dimensions");
    if (actions.empty() || static_cast<int>(actions.size()) > horizon)
        throw std::invalid_argument("hhot: sequence length outside [1, horizon]");
    std::vector<double> enc(static_cast<size_t>(horizon) * num_actions, 0.0);
    for (size_t k = 0; k < actions.size(); ++k) {
        int a = actions[k];
        if (a < 0 || a >= num_actions) throw std::invalid_argument("hhot: action out of range");
        enc[k * num_actions + a] = 1.0;
    }
    return enc;
}

std::vector<int> hhot_decode(std::span<const double> encoded, int horizon, int num_actions) {
    if (horizon < 1 || num_actions < 1) throw std::invalid_argument("hhot: bad dimensions");
    if (static_cast<int>(encoded.size()) != horizon * num_actions)
        throw std::invalid_argument("hhot: encoded width mismatch");
    std::vector<int> actions;
    bool past_end = false;
    for (int k = 0; k < horizon; ++k) {
        int hit = -1;
        for (int a = 0; a < num_actions; ++a) {
            double v = encoded[static_cast<size_t>(k) * num_actions + a];
            if (v == 0.0) continue;
            if (v != 1.0) throw std::invalid_argument("hhot: entries must be 0 or 1");
            if (hit >= 0) throw std::invalid_argument("hhot: multiple ones in a block");
            hit = a;
        }
        if (hit < 0) {
            past_end = true;
        } else {
            if (past_end) throw std::invalid_argument("hhot: active block after an empty one");
            actions.push_back(hit);
        }
    }
    if (actions.empty()) throw std::invalid_argument("hhot: no active block");
    return actions;
}

namespace {

void check_spec(const EnvSpec& spec) {
    if (spec.state_dim < 1 || spec.num_actions < 1)
        throw std::invalid_argument("model: bad environment spec dimensions");
    size_t d = static_cast<size_t>(spec.state_dim);
    if (spec.scale.size() != d || spec.low.size() != d || spec.high.size() != d)
        throw std::invalid_argument("model: spec scale/low/high size mismatch");
    for (int i = 0; i < spec.state_dim; ++i) {
        if (!(spec.scale[i] > 0.0)) throw std::invalid_argument("model: scale entries must be positive");
        if (!(spec.low[i] < spec.high[i])) throw std::invalid_argument("model: low must be below high");
    }
}

std::vector<int> layer_sizes(int in, int hidden, int hidden_layers, int out) {
    std::vector<int> sizes{in};
    for (int l = 0; l < hidden_layers; ++l) sizes.push_back(hidden);
    sizes.push_back(out);
    return sizes;
}

}  // namespace

MultiStepModel::MultiStepModel(int horizon, const EnvSpec& spec, const TrainConfig& cfg,
                               uint64_t seed)
    : horizon_(horizon), spec_(spec), cfg_(cfg) {
    if (horizon < 1) throw std::invalid_argument("model: horizon must be at least 1");
    check_spec(spec_);
    if (cfg_.hidden < 1 || cfg_.hidden_layers < 0)
        throw std::invalid_argument("model: bad network shape config");
    if (cfg_.epochs < 0 || cfg_.batch_size < 1 || cfg_.max_batches_per_epoch < 0)
        throw std::invalid_argument("model: bad training budget config");
    if (!(cfg_.lr > 0.0)) throw std::invalid_argument("model: learning rate must be positive");
    if (cfg_.halluc_depth < 0 || cfg_.halluc_ratio < 0.0)
        throw std::invalid_argument("model: bad hallucination config");
    opt_cfg_.kind = cfg_.optimizer;
    opt_cfg_.lr = cfg_.lr;
    int in = spec_.state_dim + horizon_ * spec_.num_actions;
    auto tsizes = layer_sizes(in, cfg_.hidden, cfg_.hidden_layers, spec_.state_dim);
    auto rsizes = layer_sizes(in, cfg_.hidden, cfg_.hidden_layers, 1);
    heads_.reserve(static_cast<size_t>(horizon_));
    for (int h = 1; h <= horizon_; ++h) {
        Head head{nn::init_network(tsizes, derive_seed(seed, static_cast<uint64_t>(h), 0)),
                  nn::init_network(rsizes, derive_seed(seed, static_cast<uint64_t>(h), 1)),
                  {},
                  {},
                  Rng(derive_seed(seed, static_cast<uint64_t>(h), 2))};
        head.transition_opt = nn::make_opt_state(head.transition);
        head.reward_opt = nn::make_opt_state(head.reward);
        heads_.push_back(std::move(head));
    }
}

void MultiStepModel::check_sequence(std::span<const int> actions) const {
    if (actions.empty()) throw std::invalid_argument("model: empty action sequence");
    if (static_cast<int>(actions.size()) > horizon_)
        throw std::invalid_argument("model: action sequence longer than horizon");
    for (int a : actions)
        if (a < 0 || a >= spec_.num_actions)
            throw std::invalid_argument("model: action out of range");
}

std::vector<double> MultiStepModel::encode_input(const State& s,
                                                 std::span<const int> actions) const {
    if (static_cast<int>(s.size()) != spec_.state_dim)
        throw std::invalid_argument("model: state dimension mismatch");
    std::vector<double> x(static_cast<size_t>(spec_.state_dim) +
                              static_cast<size_t>(horizon_) * spec_.num_actions,
                          0.0);
    for (int i = 0; i < spec_.state_dim; ++i) x[i] = s[i] / spec_.scale[i];
    for (size_t k = 0; k < actions.size(); ++k)
        x[spec_.state_dim + k * spec_.num_actions + actions[k]] = 1.0;
    return x;
}

void MultiStepModel::delta_target(const State& origin, const State& target,
                                  std::vector<double>& out) const {
    out.resize(static_cast<size_t>(spec_.state_dim));
    for (int i = 0; i < spec_.state_dim; ++i) out[i] = (target[i] - origin[i]) / spec_.scale[i];
}

State MultiStepModel::predict_state(const State& s, std::span<const int> actions) const {
    check_sequence(actions);
    auto x = encode_input(s, actions);
    const Head& head = heads_[actions.size() - 1];
    auto delta = nn::forward(head.transition, x);
    State out(static_cast<size_t>(spec_.state_dim));
    for (int i = 0; i < spec_.state_dim; ++i)
        out[i] = std::clamp(s[i] + spec_.scale[i] * delta[i], spec_.low[i], spec_.high[i]);
    return out;
}

double MultiStepModel::predict_reward(const State& s, std::span<const int> actions) const {
    check_sequence(actions);
    auto x = encode_input(s, actions);
    return nn::forward(heads_[actions.size() - 1].reward, x)[0];
}

std::pair<State, double> MultiStepModel::predict(const State& s,
                                                 std::span<const int> actions) const {
    return {predict_state(s, actions), predict_reward(s, actions)};
}

const nn::Network& MultiStepModel::transition_net(int h) const {
    if (h < 1 || h > horizon_) throw std::invalid_argument("model: head index out of range");
    return heads_[h - 1].transition;
}

const nn::Network& MultiStepModel::reward_net(int h) const {
    if (h < 1 || h > horizon_) throw std::invalid_argument("model: head index out of range");
    return heads_[h - 1].reward;
}

nn::Network& MultiStepModel::transition_net(int h) {
    if (h < 1 || h > horizon_) throw std::invalid_argument("model: head index out of range");
    return heads_[h - 1].transition;
}

nn::Network& MultiStepModel::reward_net(int h) {
    if (h < 1 || h > horizon_) throw std::invalid_argument("model: head index out of range");
    return heads_[h - 1].reward;
}

double MultiStepModel::train_pairs(Head& head, const std::vector<Pair>& pairs,
                                   std::span<const size_t> order, double* reward_loss_out) {
    nn::GradientSet tgrads = nn::make_gradients(head.transition);
    nn::GradientSet rgrads = nn::make_gradients(head.reward);
    nn::Workspace ws;
    std::vector<double> target;
    double tsum = 0.0, rsum = 0.0;
    size_t seen = 0;
    int batches = 0;
    for (size_t begin = 0; begin < order.size(); begin += static_cast<size_t>(cfg_.batch_size)) {
        if (cfg_.max_batches_per_epoch > 0 && batches == cfg_.max_batches_per_epoch) break;
        size_t end = std::min(order.size(), begin + static_cast<size_t>(cfg_.batch_size));
        tgrads.zero();
        rgrads.zero();
        for (size_t i = begin; i < end; ++i) {
            const Pair& p = pairs[order[i]];
            const State& origin = p.halluc ? p.halluc_origin : *p.origin;
            auto x = encode_input(origin, p.actions);
            delta_target(origin, *p.target, target);
            tsum += nn::backward(head.transition, x, target, cfg_.loss, tgrads, ws);
            double rtarget[1] = {p.cum_reward};
            rsum += nn::backward(head.reward, x, rtarget, cfg_.loss, rgrads, ws);
        }
        double inv = 1.0 / static_cast<double>(end - begin);
        tgrads.scale(inv);
        rgrads.scale(inv);
        nn::optimizer_step(head.transition, tgrads, head.transition_opt, opt_cfg_);
        nn::optimizer_step(head.reward, rgrads, head.reward_opt, opt_cfg_);
        seen += end - begin;
        ++batches;
    }
    if (reward_loss_out) *reward_loss_out = seen ? rsum / static_cast<double>(seen) : 0.0;
    return seen ? tsum / static_cast<double>(seen) : 0.0;
}

void MultiStepModel::hallucinated_pairs(const TransitionDataset& ds, Rng& rng,
                                        std::vector<Pair>& out) const {
    struct Cand {
        int ep, t, k;
    };
    std::vector<Cand> cands;
    for (size_t e = 0; e < ds.num_episodes(); ++e) {
        int len = static_cast<int>(ds.episode(e).size());
        for (int t = 0; t < len; ++t)
            for (int k = 1; k <= cfg_.halluc_depth && t + k < len; ++k)
                cands.push_back({static_cast<int>(e), t, k});
    }
    size_t want = static_cast<size_t>(
        std::llround(cfg_.halluc_ratio * static_cast<double>(ds.size(1))));
    if (cands.size() > want) {
        // partial Fisher-Yates: the first `want` entries become a uniform
        // without-replacement sample
        for (size_t i = 0; i < want; ++i) {
            size_t j = i + static_cast<size_t>(rng.uniform_int(static_cast<int>(cands.size() - i)));
            std::swap(cands[i], cands[j]);
        }
        cands.resize(want);
    }
    for (const Cand& c : cands) {
        const Episode& ep = ds.episode(static_cast<size_t>(c.ep));
        State s = ep[static_cast<size_t>(c.t)].s;
        for (int k = 0; k < c.k; ++k) {
            int a = ep[static_cast<size_t>(c.t + k)].action;
            s = predict_state(s, std::span<const int>(&a, 1));
        }
        const Transition& tr = ep[static_cast<size_t>(c.t + c.k)];
        Pair p;
        p.halluc = true;
        p.halluc_origin = std::move(s);
        p.actions = {tr.action};
        p.target = &tr.next;
        p.cum_reward = tr.reward;
        out.push_back(std::move(p));
    }
}

TrainReport MultiStepModel::fit(const TransitionDataset& ds) {
    if (ds.num_actions() != spec_.num_actions)
        throw std::invalid_argument("model: dataset action count mismatch");
    TrainReport report;
    report.heads.resize(static_cast<size_t>(horizon_));
    for (int h = 1; h <= horizon_; ++h) {
        HeadReport& hr = report.heads[static_cast<size_t>(h - 1)];
        if (h > ds.horizon() || ds.size(h) == 0) continue;
        hr.has_data = true;
        Head& head = heads_[static_cast<size_t>(h - 1)];
        size_t n_real = ds.size(h);
        std::vector<Pair> pairs;
        pairs.reserve(n_real);
        for (size_t i = 0; i < n_real; ++i) {
            SequenceSample ss = ds.get(h, i);
            Pair p;
            p.origin = ss.origin;
            p.target = ss.target;
            p.actions = std::move(ss.actions);
            p.cum_reward = ss.cum_reward;
            pairs.push_back(std::move(p));
        }
        bool halluc = h == 1 && cfg_.halluc_depth > 0 && cfg_.halluc_ratio > 0.0;
        std::vector<size_t> order;
        for (int epoch = 0; epoch < cfg_.epochs; ++epoch) {
            if (halluc) {
                pairs.resize(n_real);  // drop the previous epoch's fabrications
                hallucinated_pairs(ds, head.rng, pairs);
            }
            order.resize(pairs.size());
            std::iota(order.begin(), order.end(), size_t{0});
            head.rng.shuffle(order);
            double rloss = 0.0;
            double tloss = train_pairs(head, pairs, order, &rloss);
            hr.transition_loss.push_back(tloss);
            hr.reward_loss.push_back(rloss);
        }
    }
    return report;
}

void MultiStepModel::refresh(const TransitionDataset& ds, int batches) {
    if (batches < 0) throw std::invalid_argument("model: negative batch count");
    if (ds.num_actions() != spec_.num_actions)
        throw std::invalid_argument("model: dataset action count mismatch");
    nn::Workspace ws;
    std::vector<double> target;
    for (int h = 1; h <= horizon_ && h <= ds.horizon(); ++h) {
        size_t n = ds.size(h);
        if (n == 0) continue;
        Head& head = heads_[static_cast<size_t>(h - 1)];
        nn::GradientSet tgrads = nn::make_gradients(head.transition);
        nn::GradientSet rgrads = nn::make_gradients(head.reward);
        bool halluc = h == 1 && cfg_.halluc_depth > 0 && cfg_.halluc_ratio > 0.0;
        double halluc_p = cfg_.halluc_ratio / (1.0 + cfg_.halluc_ratio);
        for (int b = 0; b < batches; ++b) {
            tgrads.zero();
            rgrads.zero();
            for (int i = 0; i < cfg_.batch_size; ++i) {
                size_t idx = static_cast<size_t>(head.rng.uniform_int(static_cast<int>(n)));
                SequenceSample ss = ds.get(h, idx);
                State origin = *ss.origin;
                std::vector<int> actions = std::move(ss.actions);
                double cum = ss.cum_reward;
                const State* tgt = ss.target;
                if (halluc && head.rng.uniform() < halluc_p) {
                    const auto& ref = ds.refs(1)[idx];
                    const Episode& ep = ds.episode(static_cast<size_t>(ref.episode));
                    int len = static_cast<int>(ep.size());
                    int kmax = std::min(cfg_.halluc_depth, len - ref.t - 1);
                    if (kmax >= 1) {
                        int k = 1 + head.rng.uniform_int(kmax);
                        State s = ep[static_cast<size_t>(ref.t)].s;
                        for (int step = 0; step < k; ++step) {
                            int a = ep[static_cast<size_t>(ref.t + step)].action;
                            s = predict_state(s, std::span<const int>(&a, 1));
                        }
                        const Transition& tr = ep[static_cast<size_t>(ref.t + k)];
                        origin = std::move(s);
                        actions = {tr.action};
                        cum = tr.reward;
                        tgt = &tr.next;
                    }
                }
                auto x = encode_input(origin, actions);
                delta_target(origin, *tgt, target);
                nn::backward(head.transition, x, target, cfg_.loss, tgrads, ws);
                double rtarget[1] = {cum};
                nn::backward(head.reward, x, rtarget, cfg_.loss, rgrads, ws);
            }
            double inv = 1.0 / static_cast<double>(cfg_.batch_size);
            tgrads.scale(inv);
            rgrads.scale(inv);
            nn::optimizer_step(head.transition, tgrads, head.transition_opt, opt_cfg_);
            nn::optimizer_step(head.reward, rgrads, head.reward_opt, opt_cfg_);
        }
    }
}

TrainedModel train_multi_step(const TransitionDataset& ds, int horizon, const EnvSpec& spec,
                              const TrainConfig& cfg, uint64_t seed) {
    if (ds.total_transitions() == 0) throw std::invalid_argument("train: empty dataset");
    TrainConfig local = cfg;
    local.halluc_depth = 0;
    MultiStepModel model(horizon, spec, local, seed);
    TrainReport report = model.fit(ds);
    return {std::move(model), std::move(report)};
}

TrainedModel train_one_step(const TransitionDataset& ds, const EnvSpec& spec,
                            const TrainConfig& cfg, uint64_t seed) {
    return train_multi_step(ds, 1, spec, cfg, seed);
}

TrainedModel train_hallucinated(const TransitionDataset& ds, const EnvSpec& spec,
                                const TrainConfig& cfg, uint64_t seed) {
    if (ds.total_transitions() == 0) throw std::invalid_argument("train: empty dataset");
    MultiStepModel model(1, spec, cfg, seed);
    TrainReport report = model.fit(ds);
    return {std::move(model), std::move(report)};
}

namespace {

void write_vec(std::ostream& out, const char* tag, const std::vector<double>& v) {
    out << tag;
    char buf[40];
    for (double x : v) {
        std::snprintf(buf, sizeof buf, " %a", x);
        out << buf;
    }
    out << '\n';
}

std::vector<double> read_vec(std::istream& in, const std::string& tag, size_t n) {
    std::string got;
    if (!(in >> got) || got != tag) throw std::runtime_error("model snapshot: expected " + tag);
    std::vector<double> v(n);
    for (double& x : v) {
        std::string tok;
        if (!(in >> tok)) throw std::runtime_error("model snapshot: truncated vector " + tag);
        char* end = nullptr;
        x = std::strtod(tok.c_str(), &end);
        if (end != tok.c_str() + tok.size())
            throw std::runtime_error("model snapshot: bad number in " + tag);
    }
    return v;
}

const char* loss_name(nn::Loss loss) {
    return loss == nn::Loss::SquaredError ? "squared" : "smooth_l1";
}

nn::Loss parse_loss(const std::string& s) {
    if (s == "squared") return nn::Loss::SquaredError;
    if (s == "smooth_l1") return nn::Loss::SmoothL1;
    throw std::runtime_error("model snapshot: unknown loss " + s);
}

}  // namespace

void save_model(std::ostream& out, const MultiStepModel& model) {
    const EnvSpec& spec = model.env_spec();
    const TrainConfig& cfg = model.config();
    out << "m3lab-model 1\n";
    out << "horizon " << model.horizon() << '\n';
    out << "env " << spec.name << '\n';
    out << "state_dim " << spec.state_dim << '\n';
    out << "num_actions " << spec.num_actions << '\n';
    out << "horizon_cap " << spec.horizon_cap << '\n';
    out << "deterministic " << (spec.is_deterministic ? 1 : 0) << '\n';
    write_vec(out, "scale", spec.scale);
    write_vec(out, "low", spec.low);
    write_vec(out, "high", spec.high);
    char lrbuf[40], ratiobuf[40];
    std::snprintf(lrbuf, sizeof lrbuf, "%a", cfg.lr);
    std::snprintf(ratiobuf, sizeof ratiobuf, "%a", cfg.halluc_ratio);
    out << "cfg " << cfg.hidden << ' ' << cfg.hidden_layers << ' ' << cfg.epochs << ' '
        << cfg.batch_size << ' ' << cfg.max_batches_per_epoch << ' ' << lrbuf << ' '
        << loss_name(cfg.loss) << ' ' << (cfg.optimizer == nn::OptKind::Adam ? "adam" : "sgd")
        << ' ' << cfg.halluc_depth << ' ' << ratiobuf << '\n';
    for (int h = 1; h <= model.horizon(); ++h) {
        out << "head " << h << " transition\n";
        nn::save_network(out, model.transition_net(h));
        out << "head " << h << " reward\n";
        nn::save_network(out, model.reward_net(h));
    }
    out << "end\n";
    if (!out) throw std::runtime_error("model snapshot: write failed");
}

MultiStepModel load_model(std::istream& in) {
    auto expect = [&in](const char* tag) {
        std::string got;
        if (!(in >> got) || got != tag)
            throw std::runtime_error(std::string("model snapshot: expected ") + tag);
    };
    std::string magic;
    int version = 0;
    if (!(in >> magic >> version) || magic != "m3lab-model" || version != 1)
        throw std::runtime_error("model snapshot: bad header");
    int horizon = 0;
    expect("horizon");
    if (!(in >> horizon) || horizon < 1) throw std::runtime_error("model snapshot: bad horizon");
    EnvSpec spec;
    expect("env");
    if (!(in >> spec.name)) throw std::runtime_error("model snapshot: bad env name");
    expect("state_dim");
    in >> spec.state_dim;
    expect("num_actions");
    in >> spec.num_actions;
    expect("horizon_cap");
    in >> spec.horizon_cap;
    expect("deterministic");
    int det = 0;
    in >> det;
    spec.is_deterministic = det != 0;
    if (!in || spec.state_dim < 1 || spec.num_actions < 1)
        throw std::runtime_error("model snapshot: bad spec fields");
    size_t d = static_cast<size_t>(spec.state_dim);
    spec.scale = read_vec(in, "scale", d);
    spec.low = read_vec(in, "low", d);
    spec.high = read_vec(in, "high", d);
    expect("cfg");
    TrainConfig cfg;
    std::string lr_tok, loss_tok, opt_tok, ratio_tok;
    if (!(in >> cfg.hidden >> cfg.hidden_layers >> cfg.epochs >> cfg.batch_size >>
          cfg.max_batches_per_epoch >> lr_tok >> loss_tok >> opt_tok >> cfg.halluc_depth >>
          ratio_tok))
        throw std::runtime_error("model snapshot: bad cfg line");
    cfg.lr = std::strtod(lr_tok.c_str(), nullptr);
    cfg.halluc_ratio = std::strtod(ratio_tok.c_str(), nullptr);
    cfg.loss = parse_loss(loss_tok);
    if (opt_tok == "adam")
        cfg.optimizer = nn::OptKind::Adam;
    else if (opt_tok == "sgd")
        cfg.optimizer = nn::OptKind::Sgd;
    else
        throw std::runtime_error("model snapshot: unknown optimizer " + opt_tok);
    MultiStepModel model(horizon, spec, cfg, 0);
    for (int h = 1; h <= horizon; ++h) {
        expect("head");
        int got_h = 0;
        in >> got_h;
        expect("transition");
        if (got_h != h) throw std::runtime_error("model snapshot: head order mismatch");
        nn::Network tnet = nn::load_network(in);
        expect("head");
        in >> got_h;
        expect("reward");
        if (got_h != h) throw std::runtime_error("model snapshot: head order mismatch");
        nn::Network rnet = nn::load_network(in);
        if (tnet.input_size() != model.transition_net(h).input_size() ||
            tnet.output_size() != spec.state_dim || rnet.output_size() != 1)
            throw std::runtime_error("model snapshot: network shape mismatch");
        model.transition_net(h) = std::move(tnet);
        model.reward_net(h) = std::move(rnet);
    }
    expect("end");
    return model;
}

void save_model_file(const std::string& path, const MultiStepModel& model) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("model snapshot: cannot open " + path);
    save_model(out, model);
}

MultiStepModel load_model_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("model snapshot: cannot open " + path);
    return load_model(in);
}

}  // namespace m3lab
