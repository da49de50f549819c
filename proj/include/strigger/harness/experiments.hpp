#pragma once

#include <iostream>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "strigger/envsim/builders.hpp"
#include "strigger/harness/report.hpp"

namespace strigger::harness {

using envsim::WorldSpec;
using replay::Strategy;

inline std::uint64_t mix(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  return seed * 1000003ULL + a * 7919ULL + b * 104729ULL;
}

namespace detail {

inline std::mutex &log_mutex() {
  static std::mutex m;
  return m;
}

inline void progress(const std::string &msg) {
  std::lock_guard lock(log_mutex());
  std::clog << msg << std::endl;
}

} // namespace detail

// "exp1:<0|1>" or "maze:<sequence>:<0..2>".
inline WorldSpec resolve_env(const ExperimentConfig &cfg, const std::string &spec) {
  std::vector<std::string> f;
  {
    std::stringstream ss(spec);
    std::string tok;
    while (std::getline(ss, tok, ':')) f.push_back(tok);
  }
  try {
    if (f.size() == 2 && f[0] == "exp1") {
      auto [w1, w2] = envsim::build_experiment1_pair(cfg.exp1_env_seed);
      const int k = std::stoi(f[1]);
      if (k == 0) return w1;
      if (k == 1) return w2;
    } else if (f.size() == 3 && f[0] == "maze") {
      const int k = std::stoi(f[2]);
      if (k >= 0 && k < 3) return envsim::maze_sequence(cfg.maze_seed + std::stoull(f[1]))[static_cast<std::size_t>(k)];
    }
  } catch (const std::logic_error &) {
  }
  throw ConfigError("bad environment '" + spec + "' (expected exp1:<0|1> or maze:<sequence>:<0..2>)");
}

inline replay::LifecycleConfig lifecycle_for(const ExperimentConfig &cfg, std::uint64_t seed) {
  auto L = cfg.lifecycle;
  L.seed = seed;
  L.vae.seed = seed;
  L.train.seed = seed;
  return L;
}

struct TransitionRow {
  std::uint64_t seed = 0;
  int sequence_id = 0;
  int transition_id = 0;
  int from = 0, to = 0;
  bool is_change = false;
  detector::WelchResult welch;
  bool decision = false;
};

// Labeled transitions over one environment sequence. models[k] is the learner after
// environment k. A change pairs models[k] with environment k+1; a non-change pairs it
// with environment k. Each transition draws its own reference and recent batches, and
// the `count` transitions are spread round-robin over the k -> k+1 boundaries.
inline std::vector<TransitionRow> benchmark_sequence(const std::vector<WorldSpec> &envs,
                                                     const std::vector<vae::VaeModel> &models, std::size_t count,
                                                     double change_fraction, const detector::DetectorConfig &det,
                                                     std::uint64_t seed, int sequence_id) {
  if (envs.size() < 2) throw std::invalid_argument("benchmark_sequence: need at least two environments");
  const std::size_t G = envs.size() - 1;
  if (models.size() < G) throw std::invalid_argument("benchmark_sequence: missing models");
  const auto changes = static_cast<std::size_t>(std::llround(static_cast<double>(count) * change_fraction));
  struct Plan {
    std::size_t group;
    bool change;
  };
  std::vector<Plan> plan;
  for (std::size_t i = 0; i < changes; ++i) plan.push_back({i % G, true});
  for (std::size_t i = 0; i < count - changes; ++i) plan.push_back({i % G, false});

  std::vector<TransitionRow> rows;
  constexpr std::size_t kChunk = 100;
  for (std::size_t lo = 0; lo < plan.size(); lo += kChunk) {
    const std::size_t hi = std::min(plan.size(), lo + kChunk);
    std::vector<detector::ErrorSample> refs;
    std::vector<vae::Dataset> recents;
    refs.reserve(hi - lo);
    recents.reserve(hi - lo);
    std::vector<detector::Transition> trs;
    for (std::size_t i = lo; i < hi; ++i) {
      const auto g = plan[i].group;
      const auto salt = static_cast<std::uint64_t>(sequence_id) * 1000000ULL + i;
      auto ref = envsim::collect_random_states(envs[g], det.batch, mix(seed, salt, 1));
      refs.push_back(detector::error_sample(models[g], ref, det));
      recents.push_back(envsim::collect_random_states(envs[plan[i].change ? g + 1 : g], det.batch, mix(seed, salt, 2)));
    }
    for (std::size_t i = lo; i < hi; ++i)
      trs.push_back({&models[plan[i].group], &refs[i - lo], recents[i - lo], plan[i].change, sequence_id,
                     static_cast<int>(i)});
    auto res = detector::detection_benchmark(trs, det);
    for (std::size_t i = lo; i < hi; ++i) {
      const auto &r = res.rows[i - lo];
      const int g = static_cast<int>(plan[i].group);
      rows.push_back({seed, sequence_id, r.transition_id, g, plan[i].change ? g + 1 : g, r.is_change, r.welch,
                      r.decision});
    }
  }
  return rows;
}

inline void write_detection_header(std::ostream &os) {
  csv_row(os, "config_hash", "seed", "sequence_id", "transition_id", "from", "to", "is_change", "t", "nu", "p",
          "decision");
}

inline void write_detection_rows(std::ostream &os, const std::string &hash, const std::vector<TransitionRow> &rows) {
  for (const auto &r : rows)
    csv_row(os, hash, r.seed, r.sequence_id, r.transition_id, r.from, r.to, int(r.is_change), r.welch.t, r.welch.nu,
            r.welch.p, int(r.decision));
}

struct RlTask {
  std::string strategy; // a replay strategy, "raw_pixels" or "random"
  std::string task;
  std::size_t task_index = 0;
  const WorldSpec *env = nullptr;
  std::optional<rl::FeatureExtractor> features; // absent for the random policy
  std::uint64_t seed = 0;
};

struct RlOutcome {
  rl::Evaluation eval;
  std::vector<rl::CurvePoint> curve;
};

// The PPO seed depends on (seed, task) only, so strategies are compared on common noise.
inline RlOutcome run_rl_task(const RlTask &t, const ExperimentConfig &cfg) {
  RlOutcome out;
  const auto eval_seed = mix(t.seed, t.task_index, 13);
  if (!t.features) {
    out.eval = rl::evaluate_random_policy(*t.env, cfg.rl.eval_episodes, eval_seed);
    return out;
  }
  auto tr = rl::train_policy(*t.env, *t.features, cfg.ppo, mix(t.seed, t.task_index, 11));
  out.eval = rl::evaluate_policy(tr.policy, *t.features, *t.env, cfg.rl.eval_episodes, eval_seed);
  out.curve = std::move(tr.curve);
  return out;
}

inline std::string file_safe(std::string s) {
  for (auto &c : s)
    if (c == ':' || c == '/' || c == ' ') c = '_';
  return s;
}

inline void run_rl_stage(Bundle &b, const ExperimentConfig &cfg, const std::vector<RlTask> &tasks) {
  std::vector<RlOutcome> outs(tasks.size());
  parallel_for(tasks.size(), cfg.workers, [&](std::size_t i) {
    outs[i] = run_rl_task(tasks[i], cfg);
    detail::progress("[rl] " + tasks[i].strategy + " " + tasks[i].task + " seed " + std::to_string(tasks[i].seed) +
                     " -> " + detail::fmt(outs[i].eval.mean));
  });
  auto os = b.open("rl_final.csv");
  csv_row(os, "config_hash", "seed", "strategy", "task", "mean", "stderr", "episodes", "curve");
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    const auto &t = tasks[i];
    std::string curve;
    if (!outs[i].curve.empty()) {
      curve = "curves/" + t.strategy + "__" + file_safe(t.task) + "__seed" + std::to_string(t.seed) + ".csv";
      std::vector<double> raw;
      for (const auto &p : outs[i].curve) raw.push_back(p.mean_reward);
      auto norm = smoothed_normalized(raw, cfg.rl.smoothing_window);
      auto cs = b.open(curve);
      csv_row(cs, "timestep", "raw_mean_reward", "smoothed_normalized");
      for (std::size_t k = 0; k < raw.size(); ++k) csv_row(cs, outs[i].curve[k].timestep, raw[k], norm[k]);
    }
    csv_row(os, b.hash(), t.seed, t.strategy, t.task, outs[i].eval.mean, outs[i].eval.stderr_,
            outs[i].eval.returns.size(), curve);
  }
}

struct LifecycleRun {
  std::uint64_t seed = 0;
  int sequence = 0;
  Strategy strategy = Strategy::s_trigger;
  replay::LifecycleResult result;
  std::vector<vae::VaeModel> snapshots; // learner after each environment
};

// Runs every (sequence, strategy) lifecycle and writes their logs, checkpoints and
// recon rows (final learner, every environment of the sequence).
inline std::vector<LifecycleRun> run_lifecycles(Bundle &b, const ExperimentConfig &cfg,
                                                const std::vector<std::vector<WorldSpec>> &sequences,
                                                const std::vector<std::uint64_t> &seeds) {
  std::vector<LifecycleRun> runs;
  for (std::size_t q = 0; q < sequences.size(); ++q)
    for (auto s : cfg.strategies) runs.push_back({seeds[q], static_cast<int>(q), s, {}, {}});
  const bool multi = sequences.size() > 1;
  auto tag = [&](const LifecycleRun &r) {
    return replay::to_string(r.strategy) + (multi ? "_seq" + std::to_string(r.sequence) : "") + "_seed" +
           std::to_string(r.seed);
  };
  parallel_for(runs.size(), cfg.workers, [&](std::size_t i) {
    auto &r = runs[i];
    auto L = lifecycle_for(cfg, r.seed);
    L.persist_dir = b.dir() / "models" / tag(r);
    L.on_env = [&](int, const replay::ContinualState &st) { r.snapshots.push_back(st.model); };
    r.result = replay::run_lifecycle(sequences[static_cast<std::size_t>(r.sequence)], r.strategy, L);
    detail::progress("[lifecycle] " + tag(r) + " done");
  });
  auto os = b.open("recon.csv");
  csv_row(os, "config_hash", "seed", "sequence", "strategy", "env_index", "env_name", "mse");
  for (const auto &r : runs) {
    b.open("lifecycle/" + tag(r) + ".json") << replay::to_json(r.result.log).dump(1) << '\n';
    const auto &last = r.result.log.envs.back();
    const auto &envs = sequences[static_cast<std::size_t>(r.sequence)];
    for (std::size_t k = 0; k < last.post_mse.size(); ++k)
      csv_row(os, b.hash(), r.seed, r.sequence, replay::to_string(r.strategy), k, envs[k].name, last.post_mse[k]);
  }
  return runs;
}

struct RunResult {
  bool partial = false;
  std::vector<StageRecord> stages;
  ReportResult report;
};

inline RunResult finish(Bundle &b) {
  RunResult r;
  r.report = cmd_report(b.dir());
  r.partial = b.partial();
  r.stages = b.stages();
  return r;
}

// Experiment 1: one pair of rooms differing only in edible colours.
inline RunResult cmd_exp1(const ExperimentConfig &cfg) {
  validate(cfg);
  Bundle b(cfg.out, cfg);
  auto [w1, w2] = envsim::build_experiment1_pair(cfg.exp1_env_seed);
  const std::vector<WorldSpec> envs{w1, w2};
  std::vector<LifecycleRun> runs;

  b.stage("lifecycles", [&] {
    runs = run_lifecycles(b, cfg, std::vector<std::vector<WorldSpec>>(cfg.seeds.size(), envs), cfg.seeds);
  });
  b.stage("detection", [&] {
    auto os = b.open("detection.csv");
    write_detection_header(os);
    for (const auto &r : runs) {
      if (r.strategy != cfg.strategies.front()) continue;
      auto rows = benchmark_sequence(envs, {r.snapshots.front()}, 2 * cfg.detection.repetitions, 0.5,
                                     cfg.lifecycle.detector, r.seed, 0);
      write_detection_rows(os, b.hash(), rows);
    }
  });
  if (cfg.rl.enabled)
    b.stage("rl", [&] {
      std::vector<RlTask> tasks;
      const std::vector<std::string> names{"env1", "env2"};
      for (std::size_t k = 0; k < envs.size(); ++k)
        for (auto seed : cfg.seeds) {
          for (const auto &r : runs)
            if (r.seed == seed)
              tasks.push_back({replay::to_string(r.strategy), names[k], k, &envs[k],
                               rl::FeatureExtractor::from_vae(r.result.state.model), seed});
          if (cfg.rl.raw_baseline)
            tasks.push_back({"raw_pixels", names[k], k, &envs[k],
                             rl::FeatureExtractor::raw(envs[k].observation_size()), seed});
          if (cfg.rl.random_baseline) tasks.push_back({"random", names[k], k, &envs[k], std::nullopt, seed});
        }
      run_rl_stage(b, cfg, tasks);
    });
  return finish(b);
}

// Experiment 2: sequences of three procedurally generated mazes. Recon and detection
// statistics use every sequence; RL uses sequence 0 with every seed.
inline RunResult cmd_exp2(const ExperimentConfig &cfg) {
  validate(cfg);
  Bundle b(cfg.out, cfg);
  std::vector<std::vector<WorldSpec>> sequences;
  std::vector<LifecycleRun> runs;

  b.stage("environments", [&] {
    for (std::size_t q = 0; q < cfg.maze_sequences; ++q) sequences.push_back(envsim::maze_sequence(cfg.maze_seed + q));
  });
  b.stage("lifecycles", [&] {
    runs = run_lifecycles(b, cfg, sequences, std::vector<std::uint64_t>(sequences.size(), cfg.seeds.front()));
  });
  b.stage("detection", [&] {
    auto os = b.open("detection.csv");
    write_detection_header(os);
    for (const auto &r : runs) {
      if (r.strategy != cfg.strategies.front()) continue;
      auto rows = benchmark_sequence(sequences[static_cast<std::size_t>(r.sequence)], r.snapshots,
                                     cfg.detection.transitions_per_sequence, cfg.detection.change_fraction,
                                     cfg.lifecycle.detector, r.seed, r.sequence);
      write_detection_rows(os, b.hash(), rows);
    }
  });
  if (cfg.rl.enabled)
    b.stage("rl", [&] {
      std::vector<RlTask> tasks;
      const auto &mazes = sequences.front();
      for (std::size_t k = 0; k < mazes.size(); ++k)
        for (auto seed : cfg.seeds) {
          for (const auto &r : runs)
            if (r.sequence == 0)
              tasks.push_back({replay::to_string(r.strategy), "maze" + std::to_string(k + 1), k, &mazes[k],
                               rl::FeatureExtractor::from_vae(r.result.state.model), seed});
          if (cfg.rl.random_baseline)
            tasks.push_back({"random", "maze" + std::to_string(k + 1), k, &mazes[k], std::nullopt, seed});
        }
      run_rl_stage(b, cfg, tasks);
    });
  return finish(b);
}

// Labeled change/no-change transitions over maze sequences, each learned with s_trigger.
inline RunResult cmd_detect_bench(const ExperimentConfig &cfg) {
  validate(cfg);
  Bundle b(cfg.out, cfg);
  b.stage("detection", [&] {
    const auto seed = cfg.seeds.front();
    std::vector<std::vector<TransitionRow>> rows(cfg.detection.sequences);
    parallel_for(rows.size(), cfg.workers, [&](std::size_t q) {
      auto envs = envsim::maze_sequence(cfg.maze_seed + q);
      auto L = lifecycle_for(cfg, seed);
      L.eval_states = 0;
      std::vector<vae::VaeModel> models;
      L.on_env = [&](int, const replay::ContinualState &st) { models.push_back(st.model); };
      replay::run_lifecycle(envs, Strategy::s_trigger, L);
      rows[q] = benchmark_sequence(envs, models, cfg.detection.transitions_per_sequence, cfg.detection.change_fraction,
                                   cfg.lifecycle.detector, seed, static_cast<int>(q));
      detail::progress("[detect-bench] sequence " + std::to_string(q) + " done");
    });
    auto os = b.open("detection.csv");
    write_detection_header(os);
    for (const auto &r : rows) write_detection_rows(os, b.hash(), r);
  });
  return finish(b);
}

// One VAE on cfg.env with the first seed; writes model.json and training.json.
inline RunResult cmd_train_vae(const ExperimentConfig &cfg) {
  validate(cfg);
  Bundle b(cfg.out, cfg);
  b.stage("train", [&] {
    const auto env = resolve_env(cfg, cfg.env);
    const auto seed = cfg.seeds.front();
    auto L = lifecycle_for(cfg, seed);
    auto states = envsim::collect_random_states(env, L.m, mix(seed, 0, 1));
    vae::VaeModel model(L.vae);
    auto log = vae::train(model, states, L.schedule, L.train);
    auto held_out = envsim::collect_random_states(env, std::max<std::size_t>(L.eval_states, 1), mix(seed, 0, 2));
    const double mse = vae::recon_errors(model, held_out).mean;
    b.open("training.json") << nlohmann::json{{"env", cfg.env}, {"seed", seed}, {"held_out_mse", mse},
                                              {"training", vae::to_json(log)}}
                                   .dump(1)
                            << '\n';
    b.open("model.json") << vae::to_json(model, {{"env", cfg.env}, {"seed", seed}, {"config_hash", b.hash()}}).dump()
                         << '\n';
    detail::progress("[train-vae] " + cfg.env + " held-out MSE " + detail::fmt(mse));
  });
  return finish(b);
}

// PPO on cfg.env per seed, with features from cfg.checkpoint (raw pixels when empty).
inline RunResult cmd_train_rl(const ExperimentConfig &cfg) {
  validate(cfg);
  Bundle b(cfg.out, cfg);
  b.stage("rl", [&] {
    const auto env = resolve_env(cfg, cfg.env);
    auto features = rl::FeatureExtractor::raw(env.observation_size());
    std::string label = "raw_pixels";
    if (!cfg.checkpoint.empty()) {
      std::ifstream in(cfg.checkpoint);
      if (!in) throw std::runtime_error("cannot open checkpoint " + cfg.checkpoint);
      nlohmann::json j;
      in >> j;
      features = rl::FeatureExtractor::from_vae(vae::vae_from_json(j));
      label = "vae";
    }
    std::vector<RlTask> tasks;
    for (auto seed : cfg.seeds) {
      tasks.push_back({label, cfg.env, 0, &env, features, seed});
      if (cfg.rl.random_baseline) tasks.push_back({"random", cfg.env, 0, &env, std::nullopt, seed});
    }
    run_rl_stage(b, cfg, tasks);
  });
  return finish(b);
}

} // namespace strigger::harness
