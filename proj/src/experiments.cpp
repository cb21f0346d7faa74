#include "m3lab/experiments.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <sstream>
#include <thread>
#include <tuple>

#include "m3lab/diagnostics.hpp"
#include "m3lab/rollout.hpp"

namespace m3lab {

namespace {

namespace fs = std::filesystem;

uint64_t seed4(uint64_t base, uint64_t a, uint64_t b, uint64_t c = 0) {
    return derive_seed(derive_seed(base, a, b), c);
}

std::string num(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

double mean_of(const std::vector<double>& xs) {
    double total = 0.0;
    for (double x : xs) total += x;
    return xs.empty() ? 0.0 : total / static_cast<double>(xs.size());
}

// standard error of the mean, sample variance with n-1; zero below two points
double stderr_of(const std::vector<double>& xs) {
    if (xs.size() < 2) return 0.0;
    double m = mean_of(xs);
    double var = 0.0;
    for (double x : xs) var += (x - m) * (x - m);
    var /= static_cast<double>(xs.size() - 1);
    return std::sqrt(var / static_cast<double>(xs.size()));
}

class Timer {
public:
    Timer() : t0_(std::chrono::steady_clock::now()) {}
    double ms() const {
        return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0_)
            .count();
    }

private:
    std::chrono::steady_clock::time_point t0_;
};

void require_cfg(bool ok, const std::string& message) {
    if (!ok) throw ConfigError(message);
}

// Index-addressed jobs over a small thread pool; results land in caller-owned
// slots, so output order never depends on scheduling.
void parallel_for(int workers, size_t n, const std::function<void(size_t)>& fn) {
    if (workers <= 1 || n <= 1) {
        for (size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    size_t width = std::min(static_cast<size_t>(workers), n);
    std::atomic<size_t> next{0};
    std::vector<std::exception_ptr> errors(width);
    std::vector<std::thread> pool;
    pool.reserve(width);
    for (size_t w = 0; w < width; ++w) {
        pool.emplace_back([&, w] {
            try {
                for (size_t i = next.fetch_add(1); i < n; i = next.fetch_add(1)) fn(i);
            } catch (...) {
                errors[w] = std::current_exception();
            }
        });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

std::unique_ptr<Env> build_env(const ExperimentConfig& cfg) {
    if (cfg.env_name == "gridworld") return std::make_unique<Gridworld>(cfg.grid);
    return make_env(cfg.env_name);
}

void write_text(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write '" + path + "'");
    out << content;
}

void write_csv(const std::string& path, const std::string& header,
               const std::vector<std::string>& rows) {
    std::ostringstream out;
    out << header << "\n";
    for (const std::string& row : rows) out << row << "\n";
    write_text(path, out.str());
}

CommandOutcome finish_command(const ExperimentConfig& cfg, const std::string& out_dir,
                              std::vector<std::string> outputs, const std::string& note,
                              double wall_ms, int exit_code) {
    RunRecord rec;
    rec.experiment = cfg.experiment;
    rec.config_hash = hash_hex(cfg.hash());
    rec.run_id = cfg.experiment + "-" + rec.config_hash;
    rec.artifact_version = "m3lab 0.1.0";
    rec.seeds = cfg.seeds;
    rec.outputs = outputs;
    rec.wall_ms = wall_ms;
    rec.note = note;
    rec.config_canonical = cfg.canonical();
    write_manifest((fs::path(out_dir) / "manifest.json").string(), rec);

    CommandOutcome out;
    out.exit_code = exit_code;
    out.out_dir = out_dir;
    out.outputs = std::move(outputs);
    out.outputs.push_back("manifest.json");
    out.summary = note;
    return out;
}

Episode run_random_episode(const Env& env, Rng& rng) {
    Episode ep;
    State s = env.reset(rng);
    for (int t = 0; t < env.spec().horizon_cap; ++t) {
        int a = rng.uniform_int(env.spec().num_actions);
        StepResult r = env.step(s, a, rng);
        ep.push_back({std::move(s), a, r.reward, r.next, r.done});
        s = std::move(r.next);
        if (r.done) break;
    }
    return ep;
}

double run_scored_episode(const Env& env, Rng& env_rng,
                          const std::function<int(const State&)>& act) {
    State s = env.reset(env_rng);
    double total = 0.0;
    for (int t = 0; t < env.spec().horizon_cap; ++t) {
        StepResult r = env.step(s, act(s), env_rng);
        total += r.reward;
        s = std::move(r.next);
        if (r.done) break;
    }
    return total;
}

void require_kinds(const ExperimentConfig& cfg, std::initializer_list<ModelKind> allowed,
                   const std::string& hint) {
    for (ModelKind kind : cfg.model_kinds) {
        bool ok = std::find(allowed.begin(), allowed.end(), kind) != allowed.end();
        require_cfg(ok, std::string("model kind '") + model_kind_name(kind) + "' is not usable by " +
                            cfg.experiment + (hint.empty() ? "" : "; " + hint));
    }
}

// One grid cell in a random direction, clamped at the walls (which can make
// the shift a no-op at a boundary).
GridState shift_agent_cell(const GridworldConfig& cfg, GridState s, int direction) {
    switch (direction) {
        case 0: s.ax = std::min(cfg.n - 1, s.ax + 1); break;
        case 1: s.ax = std::max(0, s.ax - 1); break;
        case 2: s.ay = std::min(cfg.n - 1, s.ay + 1); break;
        default: s.ay = std::max(0, s.ay - 1); break;
    }
    return s;
}

const char* plot_preamble =
    "#!/usr/bin/env python3\n"
    "\"\"\"Render the CSVs written next to this script; the data files are the\n"
    "product, this is only a convenience viewer.\"\"\"\n"
    "import csv\n"
    "import pathlib\n"
    "import sys\n"
    "\n"
    "try:\n"
    "    import matplotlib.pyplot as plt\n"
    "except ImportError:\n"
    "    sys.exit('matplotlib is not installed; the CSVs are plain text, plot them elsewhere')\n"
    "\n"
    "HERE = pathlib.Path(__file__).resolve().parent\n"
    "\n"
    "\n"
    "def rows(name):\n"
    "    with open(HERE / name, newline='') as f:\n"
    "        return list(csv.DictReader(f))\n"
    "\n";

}  // namespace

std::string resolve_out_dir(const ExperimentConfig& cfg, const std::string& cli_out) {
    require_cfg(!cfg.experiment.empty(), "no experiment selected");
    std::string root = cli_out;
    if (root.empty()) {
        const char* env_root = std::getenv("M3LAB_OUT");
        if (env_root != nullptr && *env_root != '\0') root = env_root;
    }
    if (root.empty()) root = cfg.out_root;
    fs::path dir = fs::path(root) / cfg.experiment;
    fs::create_directories(dir);
    return dir.string();
}

CommandOutcome cmd_background_planning(const ExperimentConfig& cfg, const std::string& out_dir) {
    Timer timer;
    require_kinds(cfg, {ModelKind::None, ModelKind::OneStep, ModelKind::M3, ModelKind::Hallucinated},
                  "the actor-critic never rolls out stochastic models");
    std::unique_ptr<Env> env = build_env(cfg);

    struct Job {
        ModelKind kind;
        int horizon;
        uint64_t seed;
    };
    std::vector<Job> jobs;
    for (ModelKind kind : cfg.model_kinds)
        for (int horizon : cfg.ac_horizons)
            for (uint64_t seed : cfg.seeds) jobs.push_back({kind, horizon, seed});

    std::vector<LearningCurve> curves(jobs.size());
    parallel_for(cfg.workers, jobs.size(), [&](size_t i) {
        ActorCriticConfig acc = cfg.ac;
        acc.horizon = jobs[i].horizon;
        acc.episodes = cfg.episodes;
        acc.model_cfg = cfg.model;
        curves[i] = run_actor_critic(*env, jobs[i].kind, acc, jobs[i].seed);
    });

    std::vector<std::string> curve_rows;
    for (size_t i = 0; i < jobs.size(); ++i)
        for (const EpisodeRecord& ep : curves[i].episodes)
            curve_rows.push_back(std::string(model_kind_name(jobs[i].kind)) + "," +
                                 std::to_string(jobs[i].horizon) + "," +
                                 std::to_string(cfg.ac.rollouts) + "," +
                                 std::to_string(jobs[i].seed) + "," + std::to_string(ep.episode) +
                                 "," + num(ep.ret));
    write_csv((fs::path(out_dir) / "curves.csv").string(),
              "model_kind,horizon,rollouts,seed,episode,ret", curve_rows);

    // AUC of an undiscounted learning curve is the mean episode return
    std::vector<std::string> auc_rows;
    for (ModelKind kind : cfg.model_kinds) {
        for (int horizon : cfg.ac_horizons) {
            std::vector<double> aucs;
            for (size_t i = 0; i < jobs.size(); ++i) {
                if (jobs[i].kind != kind || jobs[i].horizon != horizon) continue;
                std::vector<double> rets;
                for (const EpisodeRecord& ep : curves[i].episodes) rets.push_back(ep.ret);
                aucs.push_back(mean_of(rets));
            }
            auc_rows.push_back(std::string(model_kind_name(kind)) + "," + std::to_string(horizon) +
                               "," + std::to_string(aucs.size()) + "," + num(mean_of(aucs)) + "," +
                               num(stderr_of(aucs)));
        }
    }
    write_csv((fs::path(out_dir) / "auc.csv").string(),
              "model_kind,horizon,num_seeds,mean_auc,stderr_auc", auc_rows);

    write_text((fs::path(out_dir) / "plot.py").string(),
               std::string(plot_preamble) +
                   "by_run = {}\n"
                   "for r in rows('curves.csv'):\n"
                   "    key = (r['model_kind'], r['horizon'])\n"
                   "    by_run.setdefault(key, {}).setdefault(int(r['episode']), []).append(float(r['ret']))\n"
                   "for (kind, horizon), eps in sorted(by_run.items()):\n"
                   "    xs = sorted(eps)\n"
                   "    ys = [sum(eps[e]) / len(eps[e]) for e in xs]\n"
                   "    plt.plot(xs, ys, label=f'{kind} H={horizon}')\n"
                   "plt.xlabel('episode')\n"
                   "plt.ylabel('mean return over seeds')\n"
                   "plt.legend()\n"
                   "plt.savefig(HERE / 'curves.png', dpi=120)\n"
                   "print('wrote', HERE / 'curves.png')\n");

    std::ostringstream note;
    note << "background_planning: " << jobs.size() << " runs (" << cfg.model_kinds.size()
         << " kinds x " << cfg.ac_horizons.size() << " horizons x " << cfg.seeds.size()
         << " seeds) on " << env->spec().name;
    return finish_command(cfg, out_dir, {"curves.csv", "auc.csv", "plot.py"}, note.str(),
                          timer.ms(), 0);
}

CommandOutcome cmd_decision_time(const ExperimentConfig& cfg, const std::string& out_dir) {
    Timer timer;
    require_kinds(cfg, {ModelKind::OneStep, ModelKind::M3, ModelKind::Hallucinated},
                  "the snapshot protocol needs a deterministic learned model; the stochastic "
                  "planner demo is the em_demo experiment");
    std::unique_ptr<Env> env = build_env(cfg);
    const EnvSpec& spec = env->spec();

    std::vector<std::pair<Expansion, Valuation>> combos;
    if (cfg.sweep_strategies) {
        combos = {{Expansion::Full, Valuation::LeafSum},
                  {Expansion::Full, Valuation::Ensemble},
                  {Expansion::Greedy, Valuation::LeafSum},
                  {Expansion::Greedy, Valuation::Ensemble}};
    } else {
        combos = {{cfg.plan.expansion, cfg.plan.valuation}};
    }

    struct Job {
        ModelKind kind;
        uint64_t seed;
    };
    struct JobResult {
        std::vector<EpisodeRecord> episodes;
        std::vector<std::pair<int, size_t>> snaps;  // (episode, episodes_collected)
        std::vector<nn::Network> nets;
        std::vector<SnapshotEvalRow> rows;  // all combos, combo-major
    };
    std::vector<Job> jobs;
    for (ModelKind kind : cfg.model_kinds)
        for (uint64_t seed : cfg.seeds) jobs.push_back({kind, seed});
    std::vector<JobResult> results(jobs.size());

    parallel_for(cfg.workers, jobs.size(), [&](size_t i) {
        const Job& job = jobs[i];
        DqnRunConfig dc = cfg.dqn;
        dc.plan = cfg.plan;
        dc.model_cfg = cfg.model;
        dc.em_cfg = cfg.em;
        if (dc.plan.reward_source == RewardSource::Oracle) dc.plan.oracle_env = env.get();
        DqnRunResult run = run_model_based_dqn(*env, job.kind, dc, cfg.episodes, job.seed);

        JobResult& res = results[i];
        res.episodes = run.episodes;

        // one model per snapshot, retrained from scratch on the episodes that
        // had been collected when the snapshot was stored
        int model_h = job.kind == ModelKind::M3 ? cfg.plan.horizon : 1;
        std::vector<TrainedModel> trained;
        trained.reserve(run.snapshots.size());
        for (size_t k = 0; k < run.snapshots.size(); ++k) {
            const DqnSnapshot& snap = run.snapshots[k];
            res.snaps.emplace_back(snap.episode, snap.episodes_collected);
            res.nets.push_back(snap.q);
            TransitionDataset sub(model_h, spec.num_actions);
            for (size_t e = 0; e < snap.episodes_collected; ++e)
                sub.add_episode(run.data.episode(e));
            uint64_t model_seed = seed4(job.seed, 21, k);
            if (job.kind == ModelKind::M3)
                trained.push_back(train_multi_step(sub, model_h, spec, cfg.model, model_seed));
            else if (job.kind == ModelKind::Hallucinated)
                trained.push_back(train_hallucinated(sub, spec, cfg.model, model_seed));
            else
                trained.push_back(train_one_step(sub, spec, cfg.model, model_seed));
        }
        std::vector<const TransitionModel*> models;
        for (const TrainedModel& tm : trained) models.push_back(&tm.model);

        for (const auto& [expansion, valuation] : combos) {
            PlanConfig pc = cfg.plan;
            pc.kind = job.kind;
            pc.expansion = expansion;
            pc.valuation = valuation;
            if (pc.reward_source == RewardSource::Oracle) pc.oracle_env = env.get();
            std::vector<SnapshotEvalRow> rows = snapshot_evaluation(
                *env, res.nets, models, pc, cfg.eval_episodes, seed4(job.seed, 23, 0));
            res.rows.insert(res.rows.end(), rows.begin(), rows.end());
        }
    });

    std::vector<std::string> behavior_rows;
    std::vector<std::string> gain_rows;
    std::vector<std::string> outputs = {"behavior_curve.csv", "snapshot_gains.csv", "plot.py"};
    for (size_t i = 0; i < jobs.size(); ++i) {
        const Job& job = jobs[i];
        const JobResult& res = results[i];
        for (const EpisodeRecord& ep : res.episodes)
            behavior_rows.push_back(std::string(model_kind_name(job.kind)) + "," +
                                    std::to_string(job.seed) + "," + std::to_string(ep.episode) +
                                    "," + num(ep.ret));
        for (const SnapshotEvalRow& row : res.rows) {
            const auto& [episode, collected] = res.snaps.at(static_cast<size_t>(row.snapshot_index));
            gain_rows.push_back(row.model_kind + "," + std::to_string(job.seed) + "," +
                                std::to_string(row.snapshot_index) + "," + std::to_string(episode) +
                                "," + std::to_string(collected) + "," + row.strategy + "," +
                                row.valuation + "," + num(row.mean_gain) + "," +
                                num(row.stderr_gain));
        }
        if (cfg.save_snapshots) {
            fs::create_directories(fs::path(out_dir) / "snapshots");
            for (size_t k = 0; k < res.nets.size(); ++k) {
                std::string name = std::string("snapshots/") + model_kind_name(job.kind) + "-s" +
                                   std::to_string(job.seed) + "-e" +
                                   std::to_string(res.snaps[k].first) + ".net";
                nn::save_network_file((fs::path(out_dir) / name).string(), res.nets[k]);
                outputs.push_back(name);
            }
        }
    }
    write_csv((fs::path(out_dir) / "behavior_curve.csv").string(), "model_kind,seed,episode,ret",
              behavior_rows);
    write_csv((fs::path(out_dir) / "snapshot_gains.csv").string(),
              "model_kind,seed,snapshot_index,episode,episodes_collected,strategy,valuation,"
              "mean_gain,stderr",
              gain_rows);

    write_text((fs::path(out_dir) / "plot.py").string(),
               std::string(plot_preamble) +
                   "by_combo = {}\n"
                   "for r in rows('snapshot_gains.csv'):\n"
                   "    key = (r['model_kind'], r['strategy'], r['valuation'])\n"
                   "    by_combo.setdefault(key, {}).setdefault(int(r['episode']), []).append(float(r['mean_gain']))\n"
                   "for key, eps in sorted(by_combo.items()):\n"
                   "    xs = sorted(eps)\n"
                   "    ys = [sum(eps[e]) / len(eps[e]) for e in xs]\n"
                   "    plt.plot(xs, ys, marker='o', label='/'.join(key))\n"
                   "plt.axhline(0.0, color='gray', lw=0.5)\n"
                   "plt.xlabel('training episode of the stored critic')\n"
                   "plt.ylabel('mean planned-minus-greedy return')\n"
                   "plt.legend()\n"
                   "plt.savefig(HERE / 'snapshot_gains.png', dpi=120)\n"
                   "print('wrote', HERE / 'snapshot_gains.png')\n");

    std::ostringstream note;
    note << "decision_time: " << jobs.size() << " runs, " << combos.size()
         << " strategy combination" << (combos.size() == 1 ? "" : "s") << " on " << spec.name;
    return finish_command(cfg, out_dir, outputs, note.str(), timer.ms(), 0);
}

CommandOutcome cmd_model_eval(const ExperimentConfig& cfg, const std::string& out_dir) {
    Timer timer;
    require_kinds(cfg, {ModelKind::OneStep, ModelKind::M3, ModelKind::Hallucinated},
                  "prediction error needs a learned deterministic model");
    bool wants_m3 = std::find(cfg.model_kinds.begin(), cfg.model_kinds.end(), ModelKind::M3) !=
                    cfg.model_kinds.end();
    require_cfg(!wants_m3 || cfg.eval_max_h <= cfg.horizon,
                "eval.max_h exceeds model.horizon; deep heads would be undefined");
    std::unique_ptr<Env> env = build_env(cfg);
    const EnvSpec& spec = env->spec();

    struct SeedResult {
        std::vector<HStepErrorReport> reports;  // parallel to cfg.model_kinds
    };
    std::vector<SeedResult> results(cfg.seeds.size());

    parallel_for(cfg.workers, cfg.seeds.size(), [&](size_t si) {
        uint64_t seed = cfg.seeds[si];
        TrainConfig plain = cfg.model;
        plain.halluc_depth = 0;

        std::vector<std::unique_ptr<MultiStepModel>> models;
        for (size_t ki = 0; ki < cfg.model_kinds.size(); ++ki) {
            ModelKind kind = cfg.model_kinds[ki];
            int h = kind == ModelKind::M3 ? cfg.horizon : 1;
            const TrainConfig& tc = kind == ModelKind::Hallucinated ? cfg.model : plain;
            models.push_back(std::make_unique<MultiStepModel>(h, spec, tc, seed4(seed, 31, ki)));
        }

        // online protocol: grow the dataset one uniform-policy episode at a
        // time and give every model the same per-episode refresh budget
        TransitionDataset ds(cfg.horizon, spec.num_actions);
        Rng env_rng(seed4(seed, 30, 0));
        for (int ep = 0; ep < cfg.episodes; ++ep) {
            ds.add_episode(run_random_episode(*env, env_rng));
            for (auto& model : models) model->refresh(ds, cfg.refresh_batches);
        }

        Rng heldout_rng(seed4(seed, 9, 0));
        std::vector<Episode> heldout;
        for (int e = 0; e < cfg.heldout_episodes; ++e)
            heldout.push_back(run_random_episode(*env, heldout_rng));

        for (size_t ki = 0; ki < cfg.model_kinds.size(); ++ki)
            results[si].reports.push_back(h_step_error(*models[ki], heldout, cfg.eval_max_h,
                                                       model_kind_name(cfg.model_kinds[ki])));
    });

    std::vector<std::string> error_rows;
    for (size_t ki = 0; ki < cfg.model_kinds.size(); ++ki)
        for (size_t si = 0; si < cfg.seeds.size(); ++si) {
            const HStepErrorReport& rep = results[si].reports[ki];
            for (int h = 1; h <= cfg.eval_max_h; ++h)
                error_rows.push_back(rep.model_name + "," + std::to_string(cfg.seeds[si]) + "," +
                                     std::to_string(h) + "," +
                                     num(rep.mean_l1[static_cast<size_t>(h - 1)]) + "," +
                                     std::to_string(rep.counts[static_cast<size_t>(h - 1)]));
        }
    write_csv((fs::path(out_dir) / "errors.csv").string(), "model_kind,seed,h,mean_l1,windows",
              error_rows);

    std::vector<std::string> summary_rows;
    for (size_t ki = 0; ki < cfg.model_kinds.size(); ++ki)
        for (int h = 1; h <= cfg.eval_max_h; ++h) {
            std::vector<double> errs;
            for (size_t si = 0; si < cfg.seeds.size(); ++si)
                errs.push_back(results[si].reports[ki].mean_l1[static_cast<size_t>(h - 1)]);
            summary_rows.push_back(std::string(model_kind_name(cfg.model_kinds[ki])) + "," +
                                   std::to_string(h) + "," + std::to_string(errs.size()) + "," +
                                   num(mean_of(errs)) + "," + num(stderr_of(errs)));
        }
    write_csv((fs::path(out_dir) / "summary.csv").string(),
              "model_kind,h,num_seeds,mean_l1,stderr", summary_rows);

    write_text((fs::path(out_dir) / "plot.py").string(),
               std::string(plot_preamble) +
                   "by_kind = {}\n"
                   "for r in rows('summary.csv'):\n"
                   "    by_kind.setdefault(r['model_kind'], []).append((int(r['h']), float(r['mean_l1'])))\n"
                   "for kind, pts in sorted(by_kind.items()):\n"
                   "    pts.sort()\n"
                   "    plt.plot([h for h, _ in pts], [e for _, e in pts], marker='o', label=kind)\n"
                   "plt.xlabel('prediction depth h')\n"
                   "plt.ylabel('mean L1 error')\n"
                   "plt.legend()\n"
                   "plt.savefig(HERE / 'errors.png', dpi=120)\n"
                   "print('wrote', HERE / 'errors.png')\n");

    std::ostringstream note;
    note << "model_eval: " << cfg.model_kinds.size() << " kinds x " << cfg.seeds.size()
         << " seeds, " << cfg.episodes << " online episodes on " << spec.name;
    return finish_command(cfg, out_dir, {"errors.csv", "summary.csv", "plot.py"}, note.str(),
                          timer.ms(), 0);
}

CommandOutcome cmd_bound_check(const ExperimentConfig& cfg, const std::string& out_dir) {
    Timer timer;
    require_cfg(cfg.env_name == "gridworld", "bound_check runs on the gridworld");
    require_cfg(cfg.grid.freeze_ghost,
                "bound_check needs grid.freeze_ghost = true; the bounds assume deterministic "
                "dynamics");
    Gridworld grid(cfg.grid);
    Policy policy = uniform_policy(grid.spec().num_actions);
    const double lip = lipschitz_reward_constant(grid);
    const int num_actions = grid.spec().num_actions;
    const uint64_t base = cfg.seeds.front();

    std::ostringstream reports;
    std::vector<std::string> side_rows;
    struct Tally {
        int trials = 0;
        int violations = 0;
        double worst_slack = std::numeric_limits<double>::infinity();
    };
    std::vector<std::pair<std::string, Tally>> tallies;
    auto tally = [&](const std::string& bound, int horizon) -> Tally& {
        std::string key = bound + "," + std::to_string(horizon);
        for (auto& [k, t] : tallies)
            if (k == key) return t;
        tallies.emplace_back(key, Tally{});
        return tallies.back().second;
    };
    auto record = [&](const BoundReport& rep, const std::string& label, const char* bound_key) {
        append_bound_report_csv(reports, rep, label);
        Tally& t = tally(bound_key, rep.horizon);
        ++t.trials;
        if (!rep.holds) ++t.violations;
        t.worst_slack = std::min(t.worst_slack, rep.rhs - rep.lhs);
    };

    for (int horizon : cfg.bound_horizons) {
        for (int trial = 0; trial < cfg.corruptions; ++trial) {
            std::string suffix = "-h" + std::to_string(horizon) + "-t" + std::to_string(trial);

            // one-step law with one random entry shifted by one cell
            Rng rng1(seed4(base, static_cast<uint64_t>(horizon), static_cast<uint64_t>(trial), 1));
            GridState cs = grid.state_at(rng1.uniform_int(grid.num_states()));
            int ca = rng1.uniform_int(num_actions);
            GridState cnext =
                shift_agent_cell(cfg.grid, grid.enumerate(cs, ca).front().first, rng1.uniform_int(4));
            GridLawModel one(cfg.grid, 1);
            std::vector<int> one_action{ca};
            one.set_entry(1, cs, one_action, cnext);
            BoundReport rep1 = check_theorem1(grid, one, policy, horizon, lip);
            record(rep1, "thm1" + suffix, "one-step");

            // the same corrupted one-step law rolled out as composed heads:
            // identical model value, so the two right-hand sides are directly
            // comparable
            GridLawModel composed(cfg.grid, horizon, true);
            composed.set_entry(1, cs, one_action, cnext);
            BoundReport rep_tr = check_theorem2(grid, composed, policy, horizon, lip);
            record(rep_tr, "translated" + suffix, "multi-step");
            side_rows.push_back(std::to_string(horizon) + "," + std::to_string(trial) + "," +
                                num(rep1.lhs) + "," + num(rep1.rhs) + "," + num(rep_tr.rhs));

            // an independent deep head corrupted at the start state
            Rng rng2(seed4(base, static_cast<uint64_t>(horizon), static_cast<uint64_t>(trial), 2));
            int heads = std::max(1, horizon - 1);
            GridLawModel deep(cfg.grid, heads);
            int ch = 1 + rng2.uniform_int(heads);
            std::vector<int> seq;
            for (int k = 0; k < ch; ++k) seq.push_back(rng2.uniform_int(num_actions));
            GridState landing =
                grid.decode(deep.predict_state(grid.encode(grid.start_state()), seq));
            deep.set_entry(ch, grid.start_state(), seq,
                           shift_agent_cell(cfg.grid, landing, rng2.uniform_int(4)));
            BoundReport rep2 = check_theorem2(grid, deep, policy, horizon, lip);
            record(rep2, "thm2" + suffix, "multi-step");
        }
    }

    write_text((fs::path(out_dir) / "reports.csv").string(),
               bound_report_csv_header() + "\n" + reports.str());
    write_csv((fs::path(out_dir) / "side_by_side.csv").string(),
              "horizon,trial,lhs,rhs_one_step,rhs_multi_step", side_rows);

    int violations = 0;
    std::vector<std::string> summary_rows;
    for (const auto& [key, t] : tallies) {
        violations += t.violations;
        summary_rows.push_back(key + "," + std::to_string(t.trials) + "," +
                               std::to_string(t.violations) + "," + num(t.worst_slack));
    }
    write_csv((fs::path(out_dir) / "summary.csv").string(),
              "bound,horizon,trials,violations,worst_slack", summary_rows);

    write_text((fs::path(out_dir) / "plot.py").string(),
               std::string(plot_preamble) +
                   "data = rows('side_by_side.csv')\n"
                   "for horizon in sorted({r['horizon'] for r in data}, key=int):\n"
                   "    sub = [r for r in data if r['horizon'] == horizon]\n"
                   "    plt.scatter([float(r['rhs_one_step']) for r in sub],\n"
                   "                [float(r['rhs_multi_step']) for r in sub],\n"
                   "                s=12, label=f'H={horizon}')\n"
                   "lim = max(float(r['rhs_one_step']) for r in data) or 1.0\n"
                   "plt.plot([0, lim], [0, lim], color='gray', lw=0.5)\n"
                   "plt.xlabel('weighted one-step bound')\n"
                   "plt.ylabel('unweighted multi-step bound')\n"
                   "plt.legend()\n"
                   "plt.savefig(HERE / 'side_by_side.png', dpi=120)\n"
                   "print('wrote', HERE / 'side_by_side.png')\n");

    std::ostringstream note;
    int total = static_cast<int>(cfg.bound_horizons.size()) * cfg.corruptions;
    note << "bound_check: " << total << " corruption trials per bound (lip " << num(lip) << "); ";
    if (violations == 0)
        note << "every bound held";
    else
        note << violations << " bound violation" << (violations == 1 ? "" : "s");
    return finish_command(cfg, out_dir,
                          {"reports.csv", "side_by_side.csv", "summary.csv", "plot.py"},
                          note.str(), timer.ms(), violations == 0 ? 0 : 1);
}

CommandOutcome cmd_em_demo(const ExperimentConfig& cfg, const std::string& out_dir) {
    Timer timer;
    require_cfg(cfg.env_name == "gridworld", "em_demo runs on the gridworld");
    require_cfg(!cfg.grid.freeze_ghost, "em_demo needs a wandering ghost (grid.freeze_ghost = false)");
    Gridworld grid(cfg.grid);
    const EnvSpec& spec = grid.spec();
    GridState start = grid.start_state();
    require_cfg(!grid.terminal(start), "ghost start overlaps the agent start");
    require_cfg(grid.ghost_neighbors(start.gx, start.gy).size() == 2,
                "the mode table expects the ghost to start in a corner (two neighbor cells)");
    require_cfg(cfg.plan.horizon <= cfg.grid.horizon_cap, "plan.horizon exceeds grid.horizon_cap");
    require_cfg(cfg.dqn_episodes >= cfg.dqn.snapshot_every,
                "eval.dqn_episodes must reach dqn.snapshot_every to store a critic");

    // mixture fit for the mode table, on the first seed's data
    uint64_t seed0 = cfg.seeds.front();
    Rng mode_rng(seed4(seed0, 41, 0));
    std::vector<Episode> mode_eps;
    for (int e = 0; e < cfg.episodes; ++e) mode_eps.push_back(run_random_episode(grid, mode_rng));
    TransitionDataset mode_ds = build_dataset(std::move(mode_eps), cfg.plan.horizon,
                                              spec.num_actions);
    EMModel mode_em(cfg.plan.horizon, spec, cfg.em, seed4(seed0, 42, 0));
    std::vector<EmHeadReport> fit_reports = mode_em.fit(mode_ds);

    std::vector<std::string> fit_rows;
    for (size_t h = 0; h < fit_reports.size(); ++h) {
        const EmHeadReport& rep = fit_reports[h];
        fit_rows.push_back(std::to_string(h + 1) + "," + (rep.fitted ? "1" : "0") + "," +
                           (rep.monotone ? "1" : "0") + "," + std::to_string(rep.objective.size()) +
                           "," + num(rep.objective.empty() ? 0.0 : rep.objective.back()));
    }
    write_csv((fs::path(out_dir) / "em_fit.csv").string(),
              "h,fitted,monotone,iters,final_objective", fit_rows);

    State start_enc = grid.encode(start);
    std::vector<std::string> mode_rows;
    for (int a = 0; a < spec.num_actions; ++a) {
        auto outcomes = grid.enumerate(start, a);
        std::vector<int> one_action{a};
        for (int m = 0; m < cfg.em.components; ++m) {
            State pred = mode_em.component_predict(start_enc, one_action, m);
            double best = std::numeric_limits<double>::infinity();
            State best_succ;
            for (const auto& [succ, prob] : outcomes) {
                State enc = grid.encode(succ);
                double d = 0.0;
                for (size_t i = 0; i < enc.size(); ++i) d += std::abs(enc[i] - pred[i]);
                if (d < best) {
                    best = d;
                    best_succ = enc;
                }
            }
            std::string row = std::to_string(a) + "," + std::to_string(m) + "," +
                              num(mode_em.mixing(1)[static_cast<size_t>(m)]);
            for (double v : pred) row += "," + num(v);
            for (double v : best_succ) row += "," + num(v);
            row += "," + num(best);
            mode_rows.push_back(row);
        }
    }
    write_csv((fs::path(out_dir) / "em_modes.csv").string(),
              "action,component,mix,pred_ax,pred_ay,pred_gx,pred_gy,nearest_ax,nearest_ay,"
              "nearest_gx,nearest_gy,dist_cells",
              mode_rows);

    // planning comparison: the same critic and data back a sampled-tree
    // mixture planner and a deterministic-model planner; both price edges
    // with the oracle reward so the contrast is purely about transitions
    struct SeedOutcome {
        std::vector<double> means;    // [em, deterministic]
        std::vector<double> stderrs;
    };
    std::vector<SeedOutcome> outcomes(cfg.seeds.size());
    parallel_for(cfg.workers, cfg.seeds.size(), [&](size_t si) {
        uint64_t seed = cfg.seeds[si];
        Rng data_rng(seed4(seed, 41, 0));
        std::vector<Episode> eps;
        for (int e = 0; e < cfg.episodes; ++e) eps.push_back(run_random_episode(grid, data_rng));
        TransitionDataset ds = build_dataset(std::move(eps), cfg.plan.horizon, spec.num_actions);

        EMModel em(cfg.plan.horizon, spec, cfg.em, seed4(seed, 42, 0));
        em.fit(ds);
        MultiStepModel det =
            train_multi_step(ds, cfg.plan.horizon, spec, cfg.model, seed4(seed, 43, 0)).model;

        DqnRunConfig dc = cfg.dqn;
        dc.plan = cfg.plan;
        dc.model_cfg = cfg.model;
        dc.em_cfg = cfg.em;
        DqnRunResult dqn =
            run_model_based_dqn(grid, ModelKind::None, dc, cfg.dqn_episodes, seed4(seed, 44, 0));
        const nn::Network& q = dqn.snapshots.back().q;

        PlanConfig pem = cfg.plan;
        pem.kind = ModelKind::Em;
        pem.reward_source = RewardSource::Oracle;
        pem.oracle_env = &grid;
        PlanConfig pdet = cfg.plan;
        pdet.kind = ModelKind::M3;
        pdet.reward_source = RewardSource::Oracle;
        pdet.oracle_env = &grid;

        for (int arm = 0; arm < 2; ++arm) {
            Rng env_rng(seed4(seed, 45, 0));
            Rng plan_rng(seed4(seed, 46, 0));
            std::vector<double> returns;
            for (int e = 0; e < cfg.plan_episodes; ++e)
                returns.push_back(run_scored_episode(grid, env_rng, [&](const State& s) {
                    return arm == 0 ? plan_action_em(s, em, q, pem, plan_rng)
                                    : plan_action(s, det, q, pdet);
                }));
            outcomes[si].means.push_back(mean_of(returns));
            outcomes[si].stderrs.push_back(stderr_of(returns));
        }
    });

    const char* arm_names[2] = {"em-tree", "deterministic"};
    std::vector<std::string> plan_rows;
    for (size_t si = 0; si < cfg.seeds.size(); ++si)
        for (int arm = 0; arm < 2; ++arm)
            plan_rows.push_back(std::to_string(cfg.seeds[si]) + "," + arm_names[arm] + "," +
                                std::to_string(cfg.plan_episodes) + "," +
                                num(outcomes[si].means[static_cast<size_t>(arm)]) + "," +
                                num(outcomes[si].stderrs[static_cast<size_t>(arm)]));
    write_csv((fs::path(out_dir) / "em_planning.csv").string(),
              "seed,arm,episodes,mean_return,stderr", plan_rows);

    std::vector<std::string> summary_rows;
    double arm_means[2] = {0.0, 0.0};
    for (int arm = 0; arm < 2; ++arm) {
        std::vector<double> means;
        for (const SeedOutcome& o : outcomes) means.push_back(o.means[static_cast<size_t>(arm)]);
        arm_means[arm] = mean_of(means);
        summary_rows.push_back(std::string(arm_names[arm]) + "," + std::to_string(means.size()) +
                               "," + num(mean_of(means)) + "," + num(stderr_of(means)));
    }
    write_csv((fs::path(out_dir) / "summary.csv").string(), "arm,num_seeds,mean_return,stderr",
              summary_rows);

    write_text((fs::path(out_dir) / "plot.py").string(),
               std::string(plot_preamble) +
                   "modes = rows('em_modes.csv')\n"
                   "plt.scatter([float(r['pred_gx']) for r in modes], [float(r['pred_gy']) for r in modes],\n"
                   "            marker='x', label='component ghost predictions')\n"
                   "plt.scatter([float(r['nearest_gx']) for r in modes], [float(r['nearest_gy']) for r in modes],\n"
                   "            facecolors='none', edgecolors='tab:green', label='true ghost cells')\n"
                   "plt.xlabel('ghost x')\n"
                   "plt.ylabel('ghost y')\n"
                   "plt.legend()\n"
                   "plt.savefig(HERE / 'em_modes.png', dpi=120)\n"
                   "plt.figure()\n"
                   "summary = rows('summary.csv')\n"
                   "plt.bar([r['arm'] for r in summary], [float(r['mean_return']) for r in summary],\n"
                   "        yerr=[float(r['stderr']) for r in summary])\n"
                   "plt.ylabel('mean return')\n"
                   "plt.savefig(HERE / 'em_planning.png', dpi=120)\n"
                   "print('wrote', HERE / 'em_modes.png', 'and', HERE / 'em_planning.png')\n");

    std::ostringstream note;
    note << "em_demo: mixture planner " << num(arm_means[0]) << " vs deterministic "
         << num(arm_means[1]) << " mean return over " << cfg.seeds.size() << " seeds x "
         << cfg.plan_episodes << " episodes";
    return finish_command(cfg, out_dir,
                          {"em_fit.csv", "em_modes.csv", "em_planning.csv", "summary.csv",
                           "plot.py"},
                          note.str(), timer.ms(), 0);
}

CommandOutcome cmd_ensemble_demo(const ExperimentConfig& cfg, const std::string& out_dir) {
    Timer timer;
    std::unique_ptr<Env> env = build_env(cfg);
    const EnvSpec& spec = env->spec();
    const int depth = cfg.horizon;

    struct ModeKey {
        std::string mode;
        int num_paths;
    };
    std::vector<ModeKey> modes = {{"direct", 0}, {"composed", 0}};
    for (int p : cfg.ensemble_paths) modes.push_back({"ensemble", p});

    struct SeedResult {
        std::vector<double> mean_l1;  // parallel to modes
        long windows = 0;
    };
    std::vector<SeedResult> results(cfg.seeds.size());

    parallel_for(cfg.workers, cfg.seeds.size(), [&](size_t si) {
        uint64_t seed = cfg.seeds[si];
        Rng data_rng(seed4(seed, 51, 0));
        std::vector<Episode> eps;
        for (int e = 0; e < cfg.episodes; ++e) eps.push_back(run_random_episode(*env, data_rng));
        TransitionDataset ds = build_dataset(std::move(eps), depth, spec.num_actions);
        MultiStepModel model = train_multi_step(ds, depth, spec, cfg.model, seed4(seed, 52, 0)).model;

        Rng heldout_rng(seed4(seed, 53, 0));
        std::vector<Episode> heldout;
        for (int e = 0; e < cfg.heldout_episodes; ++e)
            heldout.push_back(run_random_episode(*env, heldout_rng));

        struct Window {
            const Episode* ep;
            int t;
        };
        std::vector<Window> windows;
        for (const Episode& ep : heldout) {
            int len = static_cast<int>(ep.size());
            for (int t = 0; t + depth <= len; ++t) {
                windows.push_back({&ep, t});
                if (cfg.max_windows > 0 &&
                    windows.size() == static_cast<size_t>(cfg.max_windows))
                    break;
            }
            if (cfg.max_windows > 0 && windows.size() == static_cast<size_t>(cfg.max_windows))
                break;
        }
        results[si].windows = static_cast<long>(windows.size());

        PathPartition whole{depth};
        PathPartition stepwise(static_cast<size_t>(depth), 1);
        for (size_t mi = 0; mi < modes.size(); ++mi) {
            Rng ens_rng(seed4(seed, 54, static_cast<uint64_t>(modes[mi].num_paths)));
            std::vector<double> errs;
            errs.reserve(windows.size());
            for (const Window& w : windows) {
                const State& origin = (*w.ep)[static_cast<size_t>(w.t)].s;
                const State& realized = (*w.ep)[static_cast<size_t>(w.t + depth - 1)].next;
                std::vector<int> actions;
                for (int k = 0; k < depth; ++k)
                    actions.push_back((*w.ep)[static_cast<size_t>(w.t + k)].action);
                State pred;
                if (modes[mi].mode == "direct")
                    pred = chain_predict(model, origin, actions, whole);
                else if (modes[mi].mode == "composed")
                    pred = chain_predict(model, origin, actions, stepwise);
                else
                    pred = ensemble_predict(model, origin, actions, modes[mi].num_paths, ens_rng);
                double err = 0.0;
                for (size_t d = 0; d < pred.size(); ++d) err += std::abs(pred[d] - realized[d]);
                errs.push_back(err);
            }
            results[si].mean_l1.push_back(mean_of(errs));
        }
    });

    std::vector<std::string> rows;
    for (size_t si = 0; si < cfg.seeds.size(); ++si)
        for (size_t mi = 0; mi < modes.size(); ++mi)
            rows.push_back(std::to_string(cfg.seeds[si]) + "," + modes[mi].mode + "," +
                           std::to_string(modes[mi].num_paths) + "," +
                           num(results[si].mean_l1[mi]) + "," +
                           std::to_string(results[si].windows));
    write_csv((fs::path(out_dir) / "ensemble.csv").string(),
              "seed,mode,num_paths,mean_l1,windows", rows);

    std::vector<std::string> summary_rows;
    for (size_t mi = 0; mi < modes.size(); ++mi) {
        std::vector<double> errs;
        for (const SeedResult& r : results) errs.push_back(r.mean_l1[mi]);
        summary_rows.push_back(modes[mi].mode + "," + std::to_string(modes[mi].num_paths) + "," +
                               std::to_string(errs.size()) + "," + num(mean_of(errs)) + "," +
                               num(stderr_of(errs)));
    }
    write_csv((fs::path(out_dir) / "summary.csv").string(),
              "mode,num_paths,num_seeds,mean_l1,stderr", summary_rows);

    write_text((fs::path(out_dir) / "plot.py").string(),
               std::string(plot_preamble) +
                   "summary = rows('summary.csv')\n"
                   "ens = [(int(r['num_paths']), float(r['mean_l1'])) for r in summary if r['mode'] == 'ensemble']\n"
                   "ens.sort()\n"
                   "plt.plot([n for n, _ in ens], [e for _, e in ens], marker='o', label='ensemble')\n"
                   "for r in summary:\n"
                   "    if r['mode'] in ('direct', 'composed'):\n"
                   "        plt.axhline(float(r['mean_l1']), ls='--', lw=0.8, label=r['mode'])\n"
                   "plt.xscale('log', base=2)\n"
                   "plt.xlabel('sampled paths')\n"
                   "plt.ylabel('mean L1 error at full depth')\n"
                   "plt.legend()\n"
                   "plt.savefig(HERE / 'ensemble.png', dpi=120)\n"
                   "print('wrote', HERE / 'ensemble.png')\n");

    std::ostringstream note;
    note << "ensemble_demo: depth " << depth << ", paths {";
    for (size_t i = 0; i < cfg.ensemble_paths.size(); ++i)
        note << (i > 0 ? "," : "") << cfg.ensemble_paths[i];
    note << "} x " << cfg.seeds.size() << " seeds on " << spec.name;
    return finish_command(cfg, out_dir, {"ensemble.csv", "summary.csv", "plot.py"}, note.str(),
                          timer.ms(), 0);
}

CommandOutcome run_experiment(const ExperimentConfig& cfg, const std::string& out_dir) {
    if (cfg.experiment == "background_planning") return cmd_background_planning(cfg, out_dir);
    if (cfg.experiment == "decision_time") return cmd_decision_time(cfg, out_dir);
    if (cfg.experiment == "model_eval") return cmd_model_eval(cfg, out_dir);
    if (cfg.experiment == "bound_check") return cmd_bound_check(cfg, out_dir);
    if (cfg.experiment == "em_demo") return cmd_em_demo(cfg, out_dir);
    if (cfg.experiment == "ensemble_demo") return cmd_ensemble_demo(cfg, out_dir);
    throw ConfigError("unknown experiment '" + cfg.experiment + "'");
}

}  // namespace m3lab
