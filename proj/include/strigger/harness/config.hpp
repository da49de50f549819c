#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "strigger/replay/lifecycle.hpp"
#include "strigger/rl/ppo.hpp"

namespace strigger::harness {

struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

enum class Scale { desk, paper };

inline std::string to_string(Scale s) { return s == Scale::desk ? "desk" : "paper"; }
inline Scale scale_from_string(const std::string &s) {
  if (s == "desk") return Scale::desk;
  if (s == "paper") return Scale::paper;
  throw ConfigError("unknown scale '" + s + "' (expected desk or paper)");
}

struct DetectionProtocol {
  std::size_t repetitions = 500;              // Experiment 1: trials per direction
  std::size_t sequences = 5;                  // detect-bench: maze sequences
  std::size_t transitions_per_sequence = 100; // split evenly over the maze-to-maze transitions
  double change_fraction = 0.5;
};

struct RlProtocol {
  bool enabled = true;
  int eval_episodes = 20;
  std::size_t smoothing_window = 11; // curve points, centered
  bool raw_baseline = true;          // Experiment 1 only
  bool random_baseline = true;
};

struct ExperimentConfig {
  std::string experiment = "exp1"; // exp1, exp2, detect-bench, train-vae, train-rl
  Scale scale = Scale::desk;
  std::vector<std::uint64_t> seeds{1, 2, 3};
  std::vector<replay::Strategy> strategies;
  replay::LifecycleConfig lifecycle;
  rl::PpoConfig ppo;
  DetectionProtocol detection;
  RlProtocol rl;
  std::uint64_t exp1_env_seed = 1;
  std::size_t maze_sequences = 5;
  std::uint64_t maze_seed = 1;
  std::string env = "exp1:0";  // train-vae / train-rl target, "exp1:<0|1>" or "maze:<sequence>:<0..2>"
  std::string checkpoint;      // train-rl features; empty means raw pixels
  std::filesystem::path out = "runs";
  std::size_t workers = 1;
};

inline std::vector<replay::Strategy> default_strategies(const std::string &experiment) {
  using replay::Strategy;
  if (experiment == "exp2")
    return {Strategy::s_trigger, Strategy::fine_tune, Strategy::upperbound};
  return {Strategy::s_trigger, Strategy::fine_tune, Strategy::source_only, Strategy::upperbound};
}

inline ExperimentConfig preset(Scale scale, const std::string &experiment = "exp1") {
  ExperimentConfig c;
  c.experiment = experiment;
  c.scale = scale;
  c.strategies = default_strategies(experiment);
  c.lifecycle.m = 2000;
  c.lifecycle.eval_states = 500;
  if (scale == Scale::paper) {
    c.seeds = {1, 2, 3, 4, 5};
    c.ppo.total_timesteps = 2000000;
    c.detection.repetitions = 5000;
    c.detection.sequences = 100;
    c.detection.transitions_per_sequence = 400;
    c.maze_sequences = 100;
  }
  return c;
}

inline nlohmann::json to_json(const ExperimentConfig &c) {
  using nlohmann::json;
  json strategies = json::array();
  for (auto s : c.strategies) strategies.push_back(replay::to_string(s));
  const auto &L = c.lifecycle;
  const auto &P = c.ppo;
  return {
      {"experiment", c.experiment},
      {"scale", to_string(c.scale)},
      {"seeds", c.seeds},
      {"strategies", strategies},
      {"lifecycle",
       {{"m", L.m},
        {"n", L.n ? json(*L.n) : json(nullptr)},
        {"monitor_budget", L.monitor_budget},
        {"eval_states", L.eval_states}}},
      {"detector", {{"alpha", L.detector.alpha}, {"batch", L.detector.batch}, {"variance_floor", L.detector.variance_floor}}},
      {"vae", {{"latent_dim", L.vae.latent_dim}, {"hidden", L.vae.hidden}}},
      {"schedule",
       {{"initial_beta", L.schedule.initial_beta},
        {"decay", L.schedule.decay},
        {"patience", L.schedule.patience},
        {"min_beta", L.schedule.min_beta},
        {"stop_patience", L.schedule.stop_patience},
        {"min_rel_improvement", L.schedule.min_rel_improvement},
        {"max_epochs", L.schedule.max_epochs}}},
      {"vae_train",
       {{"lr", L.train.adam.lr}, {"batch_size", L.train.batch_size}, {"validation_fraction", L.train.validation_fraction}}},
      {"ppo",
       {{"clip", P.clip},
        {"gamma", P.gamma},
        {"lambda", P.lambda},
        {"epochs", P.epochs},
        {"minibatch", P.minibatch},
        {"horizon", P.horizon},
        {"entropy_coef", P.entropy_coef},
        {"value_coef", P.value_coef},
        {"max_grad_norm", P.max_grad_norm},
        {"lr", P.lr},
        {"total_timesteps", P.total_timesteps},
        {"hidden", P.hidden}}},
      {"detection",
       {{"repetitions", c.detection.repetitions},
        {"sequences", c.detection.sequences},
        {"transitions_per_sequence", c.detection.transitions_per_sequence},
        {"change_fraction", c.detection.change_fraction}}},
      {"rl",
       {{"enabled", c.rl.enabled},
        {"eval_episodes", c.rl.eval_episodes},
        {"smoothing_window", c.rl.smoothing_window},
        {"raw_baseline", c.rl.raw_baseline},
        {"random_baseline", c.rl.random_baseline}}},
      {"exp1_env_seed", c.exp1_env_seed},
      {"maze_sequences", c.maze_sequences},
      {"maze_seed", c.maze_seed},
      {"env", c.env},
      {"checkpoint", c.checkpoint},
      {"force_trigger", L.force_trigger},
      {"out", c.out.string()},
      {"workers", c.workers},
  };
}

inline void validate(const ExperimentConfig &c) {
  if (c.seeds.empty()) throw ConfigError("seeds must be non-empty");
  if (c.strategies.empty()) throw ConfigError("strategies must be non-empty");
  if (c.workers == 0) throw ConfigError("workers must be at least 1");
  if (c.lifecycle.m == 0) throw ConfigError("lifecycle.m must be positive");
  if (c.detection.change_fraction < 0.0 || c.detection.change_fraction > 1.0)
    throw ConfigError("detection.change_fraction must lie in [0, 1]");
  if (c.rl.eval_episodes < 1) throw ConfigError("rl.eval_episodes must be at least 1");
  if (c.rl.smoothing_window == 0) throw ConfigError("rl.smoothing_window must be positive");
  if (c.maze_sequences == 0 || c.detection.sequences == 0) throw ConfigError("sequence counts must be positive");
  detector::validate(c.lifecycle.detector);
  rl::validate(c.ppo);
}

namespace detail {

// Every key in `user` must exist in `shape`; catches typos before hours of compute.
inline void check_keys(const nlohmann::json &user, const nlohmann::json &shape, const std::string &path) {
  if (!user.is_object()) return;
  for (auto it = user.begin(); it != user.end(); ++it) {
    if (!shape.contains(it.key())) throw ConfigError("unknown config key '" + path + it.key() + "'");
    if (shape.at(it.key()).is_object()) check_keys(it.value(), shape.at(it.key()), path + it.key() + ".");
  }
}

} // namespace detail

// Overlays `user` on the preset selected by its scale (or `scale_override`).
inline ExperimentConfig config_from_json(const nlohmann::json &user, std::optional<Scale> scale_override = {},
                                         std::optional<std::string> experiment_override = {}) {
  if (!user.is_object()) throw ConfigError("config must be a JSON object");
  const auto experiment = experiment_override.value_or(user.value("experiment", std::string("exp1")));
  const auto scale = scale_override.value_or(scale_from_string(user.value("scale", std::string("desk"))));
  auto base = to_json(preset(scale, experiment));
  detail::check_keys(user, base, "");
  auto j = base;
  j.merge_patch(user);
  j["experiment"] = experiment;
  j["scale"] = to_string(scale);

  ExperimentConfig c = preset(scale, experiment);
  try {
    c.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    c.strategies.clear();
    for (const auto &s : j.at("strategies")) c.strategies.push_back(replay::strategy_from_string(s.get<std::string>()));
    auto &L = c.lifecycle;
    const auto &jl = j.at("lifecycle");
    L.m = jl.at("m");
    if (!jl.at("n").is_null()) L.n = jl.at("n").get<std::size_t>();
    L.monitor_budget = jl.at("monitor_budget");
    L.eval_states = jl.at("eval_states");
    L.detector.alpha = j.at("detector").at("alpha");
    L.detector.batch = j.at("detector").at("batch");
    L.detector.variance_floor = j.at("detector").at("variance_floor");
    L.vae.latent_dim = j.at("vae").at("latent_dim");
    L.vae.hidden = j.at("vae").at("hidden").get<std::vector<std::size_t>>();
    const auto &js = j.at("schedule");
    L.schedule.initial_beta = js.at("initial_beta");
    L.schedule.decay = js.at("decay");
    L.schedule.patience = js.at("patience");
    L.schedule.min_beta = js.at("min_beta");
    L.schedule.stop_patience = js.at("stop_patience");
    L.schedule.min_rel_improvement = js.at("min_rel_improvement");
    L.schedule.max_epochs = js.at("max_epochs");
    L.train.adam.lr = j.at("vae_train").at("lr");
    L.train.batch_size = j.at("vae_train").at("batch_size");
    L.train.validation_fraction = j.at("vae_train").at("validation_fraction");
    L.force_trigger = j.at("force_trigger");
    auto &P = c.ppo;
    const auto &jp = j.at("ppo");
    P.clip = jp.at("clip");
    P.gamma = jp.at("gamma");
    P.lambda = jp.at("lambda");
    P.epochs = jp.at("epochs");
    P.minibatch = jp.at("minibatch");
    P.horizon = jp.at("horizon");
    P.entropy_coef = jp.at("entropy_coef");
    P.value_coef = jp.at("value_coef");
    P.max_grad_norm = jp.at("max_grad_norm");
    P.lr = jp.at("lr");
    P.total_timesteps = jp.at("total_timesteps");
    P.hidden = jp.at("hidden").get<std::vector<std::size_t>>();
    const auto &jd = j.at("detection");
    c.detection.repetitions = jd.at("repetitions");
    c.detection.sequences = jd.at("sequences");
    c.detection.transitions_per_sequence = jd.at("transitions_per_sequence");
    c.detection.change_fraction = jd.at("change_fraction");
    const auto &jr = j.at("rl");
    c.rl.enabled = jr.at("enabled");
    c.rl.eval_episodes = jr.at("eval_episodes");
    c.rl.smoothing_window = jr.at("smoothing_window");
    c.rl.raw_baseline = jr.at("raw_baseline");
    c.rl.random_baseline = jr.at("random_baseline");
    c.exp1_env_seed = j.at("exp1_env_seed");
    c.maze_sequences = j.at("maze_sequences");
    c.maze_seed = j.at("maze_seed");
    c.env = j.at("env");
    c.checkpoint = j.at("checkpoint");
    c.out = j.at("out").get<std::string>();
    c.workers = j.at("workers");
  } catch (const nlohmann::json::exception &e) {
    throw ConfigError(std::string("malformed config: ") + e.what());
  }
  validate(c);
  return c;
}

inline ExperimentConfig load_config(const std::filesystem::path &path, std::optional<Scale> scale_override = {},
                                    std::optional<std::string> experiment_override = {}) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception &e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return config_from_json(j, scale_override, experiment_override);
}

// FNV-1a over the canonical dump, leaving out fields that cannot change results.
inline std::string config_hash(const ExperimentConfig &c) {
  auto j = to_json(c);
  j.erase("out");
  j.erase("workers");
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : j.dump()) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  std::ostringstream os;
  os << std::hex;
  os.width(16);
  os.fill('0');
  os << h;
  return os.str();
}

// "1,2,5" or "1-5" or a mix of both.
inline std::vector<std::uint64_t> parse_seeds(const std::string &s) {
  std::vector<std::uint64_t> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (tok.empty()) continue;
    try {
      auto dash = tok.find('-');
      if (dash == std::string::npos) {
        out.push_back(std::stoull(tok));
      } else {
        auto lo = std::stoull(tok.substr(0, dash)), hi = std::stoull(tok.substr(dash + 1));
        if (hi < lo) throw ConfigError("descending seed range '" + tok + "'");
        for (auto v = lo; v <= hi; ++v) out.push_back(v);
      }
    } catch (const std::logic_error &) {
      throw ConfigError("bad seed list '" + s + "'");
    }
  }
  if (out.empty()) throw ConfigError("seed list '" + s + "' is empty");
  return out;
}

} // namespace strigger::harness
