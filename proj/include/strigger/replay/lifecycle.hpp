#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "strigger/detector/detect.hpp"
#include "strigger/vae/train.hpp"

namespace strigger::replay {

using envsim::Observation;
using envsim::WorldSpec;
using vae::Dataset;

enum class Strategy { s_trigger, fine_tune, source_only, upperbound };

inline std::string to_string(Strategy s) {
  switch (s) {
  case Strategy::s_trigger: return "s_trigger";
  case Strategy::fine_tune: return "fine_tune";
  case Strategy::source_only: return "source_only";
  case Strategy::upperbound: return "upperbound";
  }
  return "?";
}

inline Strategy strategy_from_string(const std::string &s) {
  for (auto k : {Strategy::s_trigger, Strategy::fine_tune, Strategy::source_only, Strategy::upperbound})
    if (to_string(k) == s) return k;
  throw std::invalid_argument("unknown strategy '" + s + "'");
}

// Where a training state came from: a real state collected in environment `env`, or a
// sample decoded by the checkpoint `checkpoint`.
struct Provenance {
  bool generated = false;
  int env = -1;
  std::string checkpoint;

  static Provenance real(int env) { return {false, env, {}}; }
  static Provenance from_model(const std::string &id) { return {true, -1, id}; }
};

inline nlohmann::json to_json(const Provenance &p) {
  if (p.generated) return {{"generated", p.checkpoint}};
  return {{"real", p.env}};
}

struct TaggedDataset {
  Dataset states;
  std::vector<Provenance> tags;

  std::size_t size() const { return states.size(); }
  void add(Observation s, Provenance p) {
    states.push_back(std::move(s));
    tags.push_back(std::move(p));
  }
  void append(const Dataset &xs, const Provenance &p) {
    for (const auto &x : xs) add(x, p);
  }
  std::size_t count_real() const {
    return static_cast<std::size_t>(std::count_if(tags.begin(), tags.end(), [](auto &t) { return !t.generated; }));
  }
  std::size_t count_real_before(int env) const {
    return static_cast<std::size_t>(
        std::count_if(tags.begin(), tags.end(), [&](auto &t) { return !t.generated && t.env < env; }));
  }
};

inline void shuffle(TaggedDataset &d, std::uint64_t seed) {
  std::vector<std::size_t> order(d.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  TaggedDataset out;
  for (auto i : order) out.add(std::move(d.states[i]), std::move(d.tags[i]));
  d = std::move(out);
}

// New real states joined with n samples generated by the current model, shuffled.
inline TaggedDataset assemble_replay_dataset(const vae::VaeModel &model, const TaggedDataset &new_states,
                                             std::size_t n, std::uint64_t seed,
                                             const std::string &checkpoint_id = "current") {
  TaggedDataset d = new_states;
  if (n > 0) d.append(vae::generate(model, n, seed), Provenance::from_model(checkpoint_id));
  shuffle(d, seed ^ 0x9E3779B97F4A7C15ULL);
  return d;
}

struct ContinualState;

struct LifecycleConfig {
  std::size_t m = 2000;                 // states collected per environment
  std::optional<std::size_t> n;         // generated states per change; defaults to m
  detector::DetectorConfig detector{};
  vae::VaeConfig vae{};
  vae::AnnealSchedule schedule{};
  vae::TrainConfig train{};
  std::size_t monitor_budget = 20;      // batches of detector.batch states streamed before giving up
  bool force_trigger = false;           // retrain even if no change was detected
  std::size_t eval_states = 1000;       // per environment, for the post-training report
  std::uint64_t seed = 1;
  std::optional<std::filesystem::path> persist_dir;
  std::function<void(int, const ContinualState &)> on_env; // after each environment is processed

  std::size_t replay_count() const { return n.value_or(m); }
};

// The learner state carried between environments: one model and one reference sample.
struct ContinualState {
  vae::VaeModel model;
  detector::ErrorSample reference;
  Strategy strategy = Strategy::s_trigger;
  int envs_seen = 0;
  std::size_t m = 0;
  std::size_t n = 0;
  std::string checkpoint_id;
};

inline void persist(const ContinualState &s, const std::filesystem::path &dir) {
  std::filesystem::create_directories(dir);
  // Nothing here changes unless the model does, so an untouched checkpoint stays byte-identical.
  nlohmann::json manifest{
      {"strategy", to_string(s.strategy)}, {"m", s.m}, {"n", s.n}, {"checkpoint_id", s.checkpoint_id}};
  std::ofstream(dir / "model.json") << vae::to_json(s.model, manifest).dump();
  std::ofstream(dir / "reference.json")
      << nlohmann::json{{"values", std::vector<double>(s.reference.values().begin(), s.reference.values().end())}}
             .dump();
}

struct Composition {
  std::size_t collected = 0;
  std::size_t generated = 0;
  std::size_t real_past = 0; // real states from earlier environments
};

struct EnvRecord {
  int index = 0;
  std::string name;
  bool detected = false;
  bool forced = false;
  bool retrained = false;
  std::size_t batches_monitored = 0;
  std::optional<detector::WelchResult> detection; // the triggering (or last) test
  Composition composition;
  std::vector<nlohmann::json> provenance_summary;
  std::optional<vae::TrainingLog> training;
  std::vector<double> post_mse; // per environment seen so far
};

struct LifecycleLog {
  Strategy strategy = Strategy::s_trigger;
  std::vector<EnvRecord> envs;
  std::size_t detection_failures = 0;
};

inline nlohmann::json to_json(const EnvRecord &r) {
  nlohmann::json j{{"index", r.index},
                   {"name", r.name},
                   {"detected", r.detected},
                   {"forced", r.forced},
                   {"retrained", r.retrained},
                   {"batches_monitored", r.batches_monitored},
                   {"composition",
                    {{"collected", r.composition.collected},
                     {"generated", r.composition.generated},
                     {"real_past", r.composition.real_past}}},
                   {"provenance", r.provenance_summary},
                   {"post_mse", r.post_mse}};
  if (r.detection) j["detection"] = {{"t", r.detection->t}, {"nu", r.detection->nu}, {"p", r.detection->p}};
  if (r.training) j["training"] = vae::to_json(*r.training);
  return j;
}

inline nlohmann::json to_json(const LifecycleLog &log) {
  nlohmann::json envs = nlohmann::json::array();
  for (const auto &e : log.envs) envs.push_back(to_json(e));
  return {{"strategy", to_string(log.strategy)}, {"detection_failures", log.detection_failures}, {"envs", envs}};
}

// Mean reconstruction MSE of `model` on k fresh random states of each environment.
inline std::vector<double> forgetting_report(const vae::VaeModel &model, const std::vector<WorldSpec> &envs,
                                             std::size_t k, std::uint64_t seed) {
  std::vector<double> out;
  for (std::size_t i = 0; i < envs.size(); ++i)
    out.push_back(vae::recon_errors(model, envsim::collect_random_states(envs[i], k, seed + 7919 * i)).mean);
  return out;
}

namespace detail {

// Per-source counts, e.g. [{"real": 1, "count": 2000}, {"generated": "env0", "count": 2000}].
inline std::vector<nlohmann::json> summarize(const TaggedDataset &d) {
  std::map<std::string, std::pair<nlohmann::json, std::size_t>> groups;
  for (const auto &t : d.tags) {
    auto j = to_json(t);
    auto &g = groups[j.dump()];
    g.first = j;
    ++g.second;
  }
  std::vector<nlohmann::json> out;
  for (auto &[_, g] : groups) {
    auto j = g.first;
    j["count"] = g.second;
    out.push_back(j);
  }
  return out;
}

inline std::uint64_t mix(std::uint64_t seed, std::uint64_t env, std::uint64_t salt) {
  return seed * 1000003ULL + env * 7919ULL + salt;
}

} // namespace detail

struct LifecycleResult {
  ContinualState state;
  LifecycleLog log;
};

// Runs one strategy over a sequence of environments.
inline LifecycleResult run_lifecycle(const std::vector<WorldSpec> &envs, Strategy strategy,
                                     const LifecycleConfig &cfg = {}) {
  if (envs.empty()) throw std::invalid_argument("run_lifecycle: empty environment sequence");
  detector::validate(cfg.detector);
  const std::size_t N = cfg.detector.batch;

  LifecycleResult res;
  auto &st = res.state;
  auto &log = res.log;
  st.strategy = log.strategy = strategy;
  st.m = cfg.m;
  st.n = strategy == Strategy::s_trigger ? cfg.replay_count() : 0;
  st.model = vae::VaeModel(cfg.vae);

  TaggedDataset all_real; // only the upperbound baseline keeps real data around

  auto refresh_reference = [&](int env) {
    auto held_out = envsim::collect_random_states(envs[env], N, detail::mix(cfg.seed, env, 3));
    st.reference = detector::error_sample(st.model, held_out, cfg.detector);
  };
  auto train_on = [&](const TaggedDataset &d, int env) {
    auto tc = cfg.train;
    tc.seed = detail::mix(cfg.train.seed, env, 5);
    return vae::train(st.model, d.states, cfg.schedule, tc);
  };

  for (int k = 0; k < static_cast<int>(envs.size()); ++k) {
    EnvRecord rec;
    rec.index = k;
    rec.name = envs[k].name;

    bool trigger = k == 0;
    if (k > 0) {
      for (std::size_t b = 0; b < cfg.monitor_budget && !rec.detected; ++b) {
        auto batch = envsim::collect_random_states(envs[k], N, detail::mix(cfg.seed, k, 100 + b));
        auto d = detector::detect_change(st.model, batch, st.reference, cfg.detector);
        rec.batches_monitored = b + 1;
        rec.detection = d.welch;
        rec.detected = d.changed;
      }
      if (!rec.detected) {
        ++log.detection_failures;
        rec.forced = cfg.force_trigger;
      }
      trigger = rec.detected || cfg.force_trigger;
    }

    if (trigger) {
      TaggedDataset fresh;
      fresh.append(envsim::collect_random_states(envs[k], cfg.m, detail::mix(cfg.seed, k, 1)), Provenance::real(k));
      if (strategy == Strategy::upperbound) all_real.append(fresh.states, Provenance::real(k));

      std::optional<TaggedDataset> data;
      if (k == 0) {
        data = fresh;
      } else {
        switch (strategy) {
        case Strategy::s_trigger:
          data = assemble_replay_dataset(st.model, fresh, st.n, detail::mix(cfg.seed, k, 2), st.checkpoint_id);
          break;
        case Strategy::fine_tune: data = fresh; break;
        case Strategy::source_only: break;
        case Strategy::upperbound: data = all_real; break;
        }
      }
      if (data) {
        rec.composition.collected = fresh.size();
        rec.composition.generated = data->size() - data->count_real();
        rec.composition.real_past = data->count_real_before(k);
        rec.provenance_summary = detail::summarize(*data);
        rec.training = train_on(*data, k);
        rec.retrained = true;
        st.checkpoint_id = "env" + std::to_string(k) + "-" + to_string(strategy);
        refresh_reference(k);
      }
    }
    st.envs_seen = k + 1;
    if (cfg.eval_states > 0)
      rec.post_mse = forgetting_report(
          st.model, std::vector<WorldSpec>(envs.begin(), envs.begin() + k + 1), cfg.eval_states,
          detail::mix(cfg.seed, k, 9));
    if (cfg.persist_dir) persist(st, *cfg.persist_dir);
    if (cfg.on_env) cfg.on_env(k, st);
    log.envs.push_back(std::move(rec));
  }
  return res;
}

} // namespace strigger::replay
