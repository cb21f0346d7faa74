#include "m3lab/config.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include "json.hpp"

namespace m3lab {

namespace {

std::string trim(std::string_view s) {
    size_t b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return "";
    size_t e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_list(const std::string& value) {
    std::vector<std::string> parts;
    std::string cur;
    for (char c : value) {
        if (c == ',') {
            parts.push_back(trim(cur));
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    parts.push_back(trim(cur));
    for (const std::string& p : parts)
        if (p.empty()) throw ConfigError("empty element in list '" + value + "'");
    return parts;
}

long long parse_i64(const std::string& v) {
    long long out = 0;
    auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || ptr != v.data() + v.size())
        throw ConfigError("expected an integer, got '" + v + "'");
    return out;
}

int parse_int(const std::string& v) { return static_cast<int>(parse_i64(v)); }

uint64_t parse_u64(const std::string& v) {
    uint64_t out = 0;
    auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || ptr != v.data() + v.size())
        throw ConfigError("expected a non-negative integer, got '" + v + "'");
    return out;
}

double parse_double(const std::string& v) {
    double out = 0.0;
    auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || ptr != v.data() + v.size())
        throw ConfigError("expected a number, got '" + v + "'");
    return out;
}

bool parse_bool(const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ConfigError("expected true or false, got '" + v + "'");
}

std::vector<int> parse_int_list(const std::string& v) {
    std::vector<int> out;
    for (const std::string& p : split_list(v)) out.push_back(parse_int(p));
    return out;
}

std::vector<uint64_t> parse_u64_list(const std::string& v) {
    std::vector<uint64_t> out;
    for (const std::string& p : split_list(v)) out.push_back(parse_u64(p));
    return out;
}

ModelKind kind_from_config(const std::string& name) {
    // "model-free" is the figure-caption name for the unassisted baseline
    if (name == "model-free") return ModelKind::None;
    return model_kind_from_name(name);
}

std::vector<ModelKind> parse_kind_list(const std::string& v) {
    std::vector<ModelKind> out;
    for (const std::string& p : split_list(v)) out.push_back(kind_from_config(p));
    return out;
}

const char* loss_name(nn::Loss loss) {
    return loss == nn::Loss::SquaredError ? "squared" : "smooth-l1";
}

nn::Loss loss_from_name(const std::string& name) {
    if (name == "squared") return nn::Loss::SquaredError;
    if (name == "smooth-l1") return nn::Loss::SmoothL1;
    throw ConfigError("unknown loss '" + name + "' (squared, smooth-l1)");
}

const char* opt_name(nn::OptKind kind) { return kind == nn::OptKind::Adam ? "adam" : "sgd"; }

nn::OptKind opt_from_name(const std::string& name) {
    if (name == "adam") return nn::OptKind::Adam;
    if (name == "sgd") return nn::OptKind::Sgd;
    throw ConfigError("unknown optimizer '" + name + "' (adam, sgd)");
}

const char* reward_source_name(RewardSource src) {
    return src == RewardSource::Learned ? "learned" : "oracle";
}

RewardSource reward_source_from_name(const std::string& name) {
    if (name == "learned") return RewardSource::Learned;
    if (name == "oracle") return RewardSource::Oracle;
    throw ConfigError("unknown reward source '" + name + "' (learned, oracle)");
}

using Setter = std::function<void(ExperimentConfig&, const std::string&)>;

// One named setter per accepted key; applying an unregistered key is an error.
const std::map<std::string, Setter>& setters() {
    static const std::map<std::string, Setter> table = {
        {"run.experiment", [](ExperimentConfig& c, const std::string& v) { c.experiment = v; }},
        {"run.env", [](ExperimentConfig& c, const std::string& v) { c.env_name = v; }},
        {"run.seeds", [](ExperimentConfig& c, const std::string& v) { c.seeds = parse_u64_list(v); }},
        {"run.episodes", [](ExperimentConfig& c, const std::string& v) { c.episodes = parse_int(v); }},
        {"run.workers", [](ExperimentConfig& c, const std::string& v) { c.workers = parse_int(v); }},
        {"run.out", [](ExperimentConfig& c, const std::string& v) { c.out_root = v; }},
        {"run.save_snapshots",
         [](ExperimentConfig& c, const std::string& v) { c.save_snapshots = parse_bool(v); }},

        {"model.kinds",
         [](ExperimentConfig& c, const std::string& v) { c.model_kinds = parse_kind_list(v); }},
        {"model.horizon", [](ExperimentConfig& c, const std::string& v) { c.horizon = parse_int(v); }},
        {"model.hidden", [](ExperimentConfig& c, const std::string& v) { c.model.hidden = parse_int(v); }},
        {"model.hidden_layers",
         [](ExperimentConfig& c, const std::string& v) { c.model.hidden_layers = parse_int(v); }},
        {"model.epochs", [](ExperimentConfig& c, const std::string& v) { c.model.epochs = parse_int(v); }},
        {"model.batch_size",
         [](ExperimentConfig& c, const std::string& v) { c.model.batch_size = parse_int(v); }},
        {"model.max_batches",
         [](ExperimentConfig& c, const std::string& v) { c.model.max_batches_per_epoch = parse_int(v); }},
        {"model.lr", [](ExperimentConfig& c, const std::string& v) { c.model.lr = parse_double(v); }},
        {"model.loss",
         [](ExperimentConfig& c, const std::string& v) { c.model.loss = loss_from_name(v); }},
        {"model.optimizer",
         [](ExperimentConfig& c, const std::string& v) { c.model.optimizer = opt_from_name(v); }},
        {"model.halluc_depth",
         [](ExperimentConfig& c, const std::string& v) { c.model.halluc_depth = parse_int(v); }},
        {"model.halluc_ratio",
         [](ExperimentConfig& c, const std::string& v) { c.model.halluc_ratio = parse_double(v); }},

        {"actor_critic.rollouts",
         [](ExperimentConfig& c, const std::string& v) { c.ac.rollouts = parse_int(v); }},
        {"actor_critic.horizons",
         [](ExperimentConfig& c, const std::string& v) { c.ac_horizons = parse_int_list(v); }},
        {"actor_critic.actor_lr",
         [](ExperimentConfig& c, const std::string& v) { c.ac.actor_lr = parse_double(v); }},
        {"actor_critic.critic_lr",
         [](ExperimentConfig& c, const std::string& v) { c.ac.critic_lr = parse_double(v); }},
        {"actor_critic.policy_hidden",
         [](ExperimentConfig& c, const std::string& v) { c.ac.policy_hidden = parse_int(v); }},
        {"actor_critic.policy_layers",
         [](ExperimentConfig& c, const std::string& v) { c.ac.policy_layers = parse_int(v); }},
        {"actor_critic.critic_hidden",
         [](ExperimentConfig& c, const std::string& v) { c.ac.critic_hidden = parse_int(v); }},
        {"actor_critic.critic_layers",
         [](ExperimentConfig& c, const std::string& v) { c.ac.critic_layers = parse_int(v); }},
        {"actor_critic.refresh_batches",
         [](ExperimentConfig& c, const std::string& v) { c.ac.refresh_batches = parse_int(v); }},
        {"actor_critic.full_retrain",
         [](ExperimentConfig& c, const std::string& v) { c.ac.full_retrain = parse_bool(v); }},
        {"actor_critic.snapshot_every",
         [](ExperimentConfig& c, const std::string& v) { c.ac.snapshot_every = parse_int(v); }},

        {"dqn.hidden", [](ExperimentConfig& c, const std::string& v) { c.dqn.hidden = parse_int(v); }},
        {"dqn.layers", [](ExperimentConfig& c, const std::string& v) { c.dqn.layers = parse_int(v); }},
        {"dqn.lr", [](ExperimentConfig& c, const std::string& v) { c.dqn.lr = parse_double(v); }},
        {"dqn.gamma", [](ExperimentConfig& c, const std::string& v) { c.dqn.gamma = parse_double(v); }},
        {"dqn.epsilon",
         [](ExperimentConfig& c, const std::string& v) { c.dqn.epsilon = parse_double(v); }},
        {"dqn.batch_size",
         [](ExperimentConfig& c, const std::string& v) { c.dqn.batch_size = parse_int(v); }},
        {"dqn.replay_capacity",
         [](ExperimentConfig& c, const std::string& v) { c.dqn.replay_capacity = parse_int(v); }},
        {"dqn.target_sync_every",
         [](ExperimentConfig& c, const std::string& v) { c.dqn.target_sync_every = parse_int(v); }},
        {"dqn.updates_per_step",
         [](ExperimentConfig& c, const std::string& v) { c.dqn.updates_per_step = parse_int(v); }},
        {"dqn.min_replay",
         [](ExperimentConfig& c, const std::string& v) { c.dqn.min_replay = parse_int(v); }},
        {"dqn.snapshot_every",
         [](ExperimentConfig& c, const std::string& v) { c.dqn.snapshot_every = parse_int(v); }},
        {"dqn.refresh_batches",
         [](ExperimentConfig& c, const std::string& v) { c.dqn.refresh_batches = parse_int(v); }},
        {"dqn.em_refit_every",
         [](ExperimentConfig& c, const std::string& v) { c.dqn.em_refit_every = parse_int(v); }},

        {"plan.horizon",
         [](ExperimentConfig& c, const std::string& v) { c.plan.horizon = parse_int(v); }},
        {"plan.expansion",
         [](ExperimentConfig& c, const std::string& v) { c.plan.expansion = expansion_from_name(v); }},
        {"plan.valuation",
         [](ExperimentConfig& c, const std::string& v) { c.plan.valuation = valuation_from_name(v); }},
        {"plan.reward_source",
         [](ExperimentConfig& c, const std::string& v) {
             c.plan.reward_source = reward_source_from_name(v);
         }},
        {"plan.em_samples",
         [](ExperimentConfig& c, const std::string& v) { c.plan.em_samples = parse_int(v); }},
        {"plan.sweep_strategies",
         [](ExperimentConfig& c, const std::string& v) { c.sweep_strategies = parse_bool(v); }},

        {"eval.episodes_per_point",
         [](ExperimentConfig& c, const std::string& v) { c.eval_episodes = parse_int(v); }},
        {"eval.max_h", [](ExperimentConfig& c, const std::string& v) { c.eval_max_h = parse_int(v); }},
        {"eval.heldout_episodes",
         [](ExperimentConfig& c, const std::string& v) { c.heldout_episodes = parse_int(v); }},
        {"eval.refresh_batches",
         [](ExperimentConfig& c, const std::string& v) { c.refresh_batches = parse_int(v); }},
        {"eval.max_windows",
         [](ExperimentConfig& c, const std::string& v) { c.max_windows = parse_int(v); }},
        {"eval.paths",
         [](ExperimentConfig& c, const std::string& v) { c.ensemble_paths = parse_int_list(v); }},
        {"eval.dqn_episodes",
         [](ExperimentConfig& c, const std::string& v) { c.dqn_episodes = parse_int(v); }},
        {"eval.plan_episodes",
         [](ExperimentConfig& c, const std::string& v) { c.plan_episodes = parse_int(v); }},

        {"em.components",
         [](ExperimentConfig& c, const std::string& v) { c.em.components = parse_int(v); }},
        {"em.iters", [](ExperimentConfig& c, const std::string& v) { c.em.iters = parse_int(v); }},
        {"em.sigma", [](ExperimentConfig& c, const std::string& v) { c.em.sigma = parse_double(v); }},
        {"em.mstep_steps",
         [](ExperimentConfig& c, const std::string& v) { c.em.mstep_steps = parse_int(v); }},
        {"em.restarts", [](ExperimentConfig& c, const std::string& v) { c.em.restarts = parse_int(v); }},
        {"em.hidden", [](ExperimentConfig& c, const std::string& v) { c.em.hidden = parse_int(v); }},
        {"em.hidden_layers",
         [](ExperimentConfig& c, const std::string& v) { c.em.hidden_layers = parse_int(v); }},
        {"em.batch_size",
         [](ExperimentConfig& c, const std::string& v) { c.em.batch_size = parse_int(v); }},
        {"em.lr", [](ExperimentConfig& c, const std::string& v) { c.em.lr = parse_double(v); }},
        {"em.optimizer",
         [](ExperimentConfig& c, const std::string& v) { c.em.optimizer = opt_from_name(v); }},

        {"grid.n", [](ExperimentConfig& c, const std::string& v) { c.grid.n = parse_int(v); }},
        {"grid.ghost_x",
         [](ExperimentConfig& c, const std::string& v) { c.grid.ghost_start_x = parse_int(v); }},
        {"grid.ghost_y",
         [](ExperimentConfig& c, const std::string& v) { c.grid.ghost_start_y = parse_int(v); }},
        {"grid.freeze_ghost",
         [](ExperimentConfig& c, const std::string& v) { c.grid.freeze_ghost = parse_bool(v); }},
        {"grid.step_reward",
         [](ExperimentConfig& c, const std::string& v) { c.grid.step_reward = parse_double(v); }},
        {"grid.goal_reward",
         [](ExperimentConfig& c, const std::string& v) { c.grid.goal_reward = parse_double(v); }},
        {"grid.capture_reward",
         [](ExperimentConfig& c, const std::string& v) { c.grid.capture_reward = parse_double(v); }},
        {"grid.horizon_cap",
         [](ExperimentConfig& c, const std::string& v) { c.grid.horizon_cap = parse_int(v); }},

        {"bound.horizons",
         [](ExperimentConfig& c, const std::string& v) { c.bound_horizons = parse_int_list(v); }},
        {"bound.corruptions",
         [](ExperimentConfig& c, const std::string& v) { c.corruptions = parse_int(v); }},
    };
    return table;
}

std::string num(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

template <typename T, typename Fn>
std::string join(const std::vector<T>& items, Fn fmt) {
    std::string out;
    for (size_t i = 0; i < items.size(); ++i) {
        if (i > 0) out += ",";
        out += fmt(items[i]);
    }
    return out;
}

void require(bool ok, const std::string& message) {
    if (!ok) throw ConfigError(message);
}

}  // namespace

const std::vector<std::string>& experiment_names() {
    static const std::vector<std::string> names = {"background_planning", "decision_time",
                                                   "model_eval",          "bound_check",
                                                   "em_demo",             "ensemble_demo"};
    return names;
}

std::vector<std::string> known_config_keys() {
    std::vector<std::string> keys;
    for (const auto& [key, setter] : setters()) keys.push_back(key);
    return keys;
}

ExperimentConfig load_config_text(const std::string& text) {
    ExperimentConfig cfg;
    std::set<std::string> seen;
    std::string section;
    std::istringstream in(text);
    std::string raw;
    int line_no = 0;
    while (std::getline(in, raw)) {
        ++line_no;
        std::string line = raw;
        if (size_t hash = line.find('#'); hash != std::string::npos) line.resize(hash);
        line = trim(line);
        if (line.empty()) continue;
        std::string where = " (line " + std::to_string(line_no) + ")";
        if (line.front() == '[') {
            require(line.back() == ']', "malformed section header '" + line + "'" + where);
            section = trim(line.substr(1, line.size() - 2));
            require(!section.empty(), "empty section header" + where);
            continue;
        }
        size_t eq = line.find('=');
        require(eq != std::string::npos, "expected 'key = value', got '" + line + "'" + where);
        std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));
        require(!key.empty(), "missing key" + where);
        require(!value.empty(), "missing value for '" + key + "'" + where);
        require(!section.empty(), "key '" + key + "' appears before any [section]" + where);
        std::string full = section + "." + key;
        auto it = setters().find(full);
        require(it != setters().end(), "unknown config key '" + full + "'" + where);
        require(seen.insert(full).second, "duplicate config key '" + full + "'" + where);
        try {
            it->second(cfg, value);
        } catch (const ConfigError& e) {
            throw ConfigError(std::string(e.what()) + " for key '" + full + "'" + where);
        } catch (const std::invalid_argument& e) {
            throw ConfigError(std::string(e.what()) + " for key '" + full + "'" + where);
        }
    }
    validate_config(cfg);
    return cfg;
}

ExperimentConfig load_config_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open config file '" + path + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    return load_config_text(buf.str());
}

void validate_config(const ExperimentConfig& cfg) {
    if (!cfg.experiment.empty()) {
        const auto& names = experiment_names();
        require(std::find(names.begin(), names.end(), cfg.experiment) != names.end(),
                "unknown experiment '" + cfg.experiment + "'");
    }
    require(cfg.env_name == "gridworld" || cfg.env_name == "cartpole" || cfg.env_name == "acrobot",
            "unknown environment '" + cfg.env_name + "'");
    require(!cfg.seeds.empty(), "run.seeds must not be empty");
    require(std::set<uint64_t>(cfg.seeds.begin(), cfg.seeds.end()).size() == cfg.seeds.size(),
            "run.seeds must be distinct");
    require(cfg.episodes >= 1, "run.episodes must be >= 1");
    require(cfg.workers >= 1, "run.workers must be >= 1");
    require(!cfg.out_root.empty(), "run.out must not be empty");

    require(!cfg.model_kinds.empty(), "model.kinds must not be empty");
    require(cfg.horizon >= 1, "model.horizon must be >= 1");
    require(cfg.model.hidden >= 1 && cfg.model.hidden_layers >= 1, "model network shape invalid");
    require(cfg.model.epochs >= 0 && cfg.model.batch_size >= 1 &&
                cfg.model.max_batches_per_epoch >= 0,
            "model training budget invalid");
    require(cfg.model.lr > 0.0, "model.lr must be positive");
    require(cfg.model.halluc_depth >= 0 && cfg.model.halluc_ratio >= 0.0,
            "model hallucination settings invalid");

    require(cfg.ac.rollouts >= 1, "actor_critic.rollouts must be >= 1");
    require(!cfg.ac_horizons.empty(), "actor_critic.horizons must not be empty");
    for (int h : cfg.ac_horizons) require(h >= 1, "actor_critic.horizons entries must be >= 1");
    require(cfg.ac.actor_lr > 0.0 && cfg.ac.critic_lr > 0.0, "actor_critic learning rates invalid");
    require(cfg.ac.policy_hidden >= 1 && cfg.ac.policy_layers >= 1 && cfg.ac.critic_hidden >= 1 &&
                cfg.ac.critic_layers >= 1,
            "actor_critic network shape invalid");
    require(cfg.ac.refresh_batches >= 0, "actor_critic.refresh_batches must be >= 0");
    require(cfg.ac.snapshot_every >= 1, "actor_critic.snapshot_every must be >= 1");

    require(cfg.dqn.hidden >= 1 && cfg.dqn.layers >= 1, "dqn network shape invalid");
    require(cfg.dqn.lr > 0.0, "dqn.lr must be positive");
    require(cfg.dqn.gamma >= 0.0 && cfg.dqn.gamma <= 1.0, "dqn.gamma must be in [0, 1]");
    require(cfg.dqn.epsilon >= 0.0 && cfg.dqn.epsilon <= 1.0, "dqn.epsilon must be in [0, 1]");
    require(cfg.dqn.batch_size >= 1 && cfg.dqn.replay_capacity >= cfg.dqn.batch_size,
            "dqn replay settings invalid");
    require(cfg.dqn.target_sync_every >= 1, "dqn.target_sync_every must be >= 1");
    require(cfg.dqn.updates_per_step >= 0, "dqn.updates_per_step must be >= 0");
    require(cfg.dqn.snapshot_every >= 1, "dqn.snapshot_every must be >= 1");
    require(cfg.dqn.refresh_batches >= 0, "dqn.refresh_batches must be >= 0");
    require(cfg.dqn.em_refit_every >= 1, "dqn.em_refit_every must be >= 1");

    require(cfg.plan.horizon >= 1, "plan.horizon must be >= 1");
    require(cfg.plan.em_samples >= 1, "plan.em_samples must be >= 1");

    require(cfg.eval_episodes >= 1, "eval.episodes_per_point must be >= 1");
    require(cfg.eval_max_h >= 1, "eval.max_h must be >= 1");
    require(cfg.heldout_episodes >= 1, "eval.heldout_episodes must be >= 1");
    require(cfg.refresh_batches >= 0, "eval.refresh_batches must be >= 0");
    require(cfg.max_windows >= 0, "eval.max_windows must be >= 0");
    require(!cfg.ensemble_paths.empty(), "eval.paths must not be empty");
    for (int p : cfg.ensemble_paths) require(p >= 1, "eval.paths entries must be >= 1");
    require(cfg.dqn_episodes >= 1, "eval.dqn_episodes must be >= 1");
    require(cfg.plan_episodes >= 1, "eval.plan_episodes must be >= 1");

    require(cfg.em.components >= 1, "em.components must be >= 1");
    require(cfg.em.iters >= 1, "em.iters must be >= 1");
    require(cfg.em.sigma > 0.0, "em.sigma must be positive");
    require(cfg.em.mstep_steps >= 0, "em.mstep_steps must be >= 0");
    require(cfg.em.restarts >= 1, "em.restarts must be >= 1");
    require(cfg.em.hidden >= 1 && cfg.em.hidden_layers >= 1, "em network shape invalid");
    require(cfg.em.batch_size >= 1, "em.batch_size must be >= 1");
    require(cfg.em.lr > 0.0, "em.lr must be positive");

    require(cfg.grid.n >= 2, "grid.n must be >= 2");
    require(cfg.grid.ghost_start_x >= 0 && cfg.grid.ghost_start_x < cfg.grid.n &&
                cfg.grid.ghost_start_y >= 0 && cfg.grid.ghost_start_y < cfg.grid.n,
            "grid ghost start out of range");
    require(cfg.grid.horizon_cap >= 1, "grid.horizon_cap must be >= 1");

    require(!cfg.bound_horizons.empty(), "bound.horizons must not be empty");
    for (int h : cfg.bound_horizons) require(h >= 1, "bound.horizons entries must be >= 1");
    require(cfg.corruptions >= 1, "bound.corruptions must be >= 1");
}

std::string ExperimentConfig::canonical() const {
    std::ostringstream out;
    out << "run.experiment=" << experiment << "\n";
    out << "run.env=" << env_name << "\n";
    out << "run.seeds=" << join(seeds, [](uint64_t s) { return std::to_string(s); }) << "\n";
    out << "run.episodes=" << episodes << "\n";
    out << "run.workers=" << workers << "\n";
    out << "run.out=" << out_root << "\n";
    out << "run.save_snapshots=" << (save_snapshots ? "true" : "false") << "\n";

    out << "model.kinds="
        << join(model_kinds, [](ModelKind k) { return std::string(model_kind_name(k)); }) << "\n";
    out << "model.horizon=" << horizon << "\n";
    out << "model.hidden=" << model.hidden << "\n";
    out << "model.hidden_layers=" << model.hidden_layers << "\n";
    out << "model.epochs=" << model.epochs << "\n";
    out << "model.batch_size=" << model.batch_size << "\n";
    out << "model.max_batches=" << model.max_batches_per_epoch << "\n";
    out << "model.lr=" << num(model.lr) << "\n";
    out << "model.loss=" << loss_name(model.loss) << "\n";
    out << "model.optimizer=" << opt_name(model.optimizer) << "\n";
    out << "model.halluc_depth=" << model.halluc_depth << "\n";
    out << "model.halluc_ratio=" << num(model.halluc_ratio) << "\n";

    out << "actor_critic.rollouts=" << ac.rollouts << "\n";
    out << "actor_critic.horizons=" << join(ac_horizons, [](int h) { return std::to_string(h); })
        << "\n";
    out << "actor_critic.actor_lr=" << num(ac.actor_lr) << "\n";
    out << "actor_critic.critic_lr=" << num(ac.critic_lr) << "\n";
    out << "actor_critic.policy_hidden=" << ac.policy_hidden << "\n";
    out << "actor_critic.policy_layers=" << ac.policy_layers << "\n";
    out << "actor_critic.critic_hidden=" << ac.critic_hidden << "\n";
    out << "actor_critic.critic_layers=" << ac.critic_layers << "\n";
    out << "actor_critic.refresh_batches=" << ac.refresh_batches << "\n";
    out << "actor_critic.full_retrain=" << (ac.full_retrain ? "true" : "false") << "\n";
    out << "actor_critic.snapshot_every=" << ac.snapshot_every << "\n";

    out << "dqn.hidden=" << dqn.hidden << "\n";
    out << "dqn.layers=" << dqn.layers << "\n";
    out << "dqn.lr=" << num(dqn.lr) << "\n";
    out << "dqn.gamma=" << num(dqn.gamma) << "\n";
    out << "dqn.epsilon=" << num(dqn.epsilon) << "\n";
    out << "dqn.batch_size=" << dqn.batch_size << "\n";
    out << "dqn.replay_capacity=" << dqn.replay_capacity << "\n";
    out << "dqn.target_sync_every=" << dqn.target_sync_every << "\n";
    out << "dqn.updates_per_step=" << dqn.updates_per_step << "\n";
    out << "dqn.min_replay=" << dqn.min_replay << "\n";
    out << "dqn.snapshot_every=" << dqn.snapshot_every << "\n";
    out << "dqn.refresh_batches=" << dqn.refresh_batches << "\n";
    out << "dqn.em_refit_every=" << dqn.em_refit_every << "\n";

    out << "plan.horizon=" << plan.horizon << "\n";
    out << "plan.expansion=" << expansion_name(plan.expansion) << "\n";
    out << "plan.valuation=" << valuation_name(plan.valuation) << "\n";
    out << "plan.reward_source=" << reward_source_name(plan.reward_source) << "\n";
    out << "plan.em_samples=" << plan.em_samples << "\n";
    out << "plan.sweep_strategies=" << (sweep_strategies ? "true" : "false") << "\n";

    out << "eval.episodes_per_point=" << eval_episodes << "\n";
    out << "eval.max_h=" << eval_max_h << "\n";
    out << "eval.heldout_episodes=" << heldout_episodes << "\n";
    out << "eval.refresh_batches=" << refresh_batches << "\n";
    out << "eval.max_windows=" << max_windows << "\n";
    out << "eval.paths=" << join(ensemble_paths, [](int p) { return std::to_string(p); }) << "\n";
    out << "eval.dqn_episodes=" << dqn_episodes << "\n";
    out << "eval.plan_episodes=" << plan_episodes << "\n";

    out << "em.components=" << em.components << "\n";
    out << "em.iters=" << em.iters << "\n";
    out << "em.sigma=" << num(em.sigma) << "\n";
    out << "em.mstep_steps=" << em.mstep_steps << "\n";
    out << "em.restarts=" << em.restarts << "\n";
    out << "em.hidden=" << em.hidden << "\n";
    out << "em.hidden_layers=" << em.hidden_layers << "\n";
    out << "em.batch_size=" << em.batch_size << "\n";
    out << "em.lr=" << num(em.lr) << "\n";
    out << "em.optimizer=" << opt_name(em.optimizer) << "\n";

    out << "grid.n=" << grid.n << "\n";
    out << "grid.ghost_x=" << grid.ghost_start_x << "\n";
    out << "grid.ghost_y=" << grid.ghost_start_y << "\n";
    out << "grid.freeze_ghost=" << (grid.freeze_ghost ? "true" : "false") << "\n";
    out << "grid.step_reward=" << num(grid.step_reward) << "\n";
    out << "grid.goal_reward=" << num(grid.goal_reward) << "\n";
    out << "grid.capture_reward=" << num(grid.capture_reward) << "\n";
    out << "grid.horizon_cap=" << grid.horizon_cap << "\n";

    out << "bound.horizons=" << join(bound_horizons, [](int h) { return std::to_string(h); })
        << "\n";
    out << "bound.corruptions=" << corruptions << "\n";
    return out.str();
}

uint64_t ExperimentConfig::hash() const { return fnv1a64(canonical()); }

uint64_t fnv1a64(std::string_view s) {
    uint64_t h = 14695981039346656037ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

std::string hash_hex(uint64_t h) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

std::string manifest_json(const RunRecord& rec) {
    nlohmann::json j;
    j["run_id"] = rec.run_id;
    j["experiment"] = rec.experiment;
    j["config_hash"] = rec.config_hash;
    j["artifact_version"] = rec.artifact_version;
    j["seeds"] = rec.seeds;
    j["outputs"] = rec.outputs;
    j["wall_ms"] = rec.wall_ms;
    j["note"] = rec.note;
    j["config"] = rec.config_canonical;
    return j.dump(2) + "\n";
}

void write_manifest(const std::string& path, const RunRecord& rec) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write manifest '" + path + "'");
    out << manifest_json(rec);
}

}  // namespace m3lab
