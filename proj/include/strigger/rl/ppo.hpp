#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "strigger/envsim/simulator.hpp"
#include "strigger/nn/adam.hpp"
#include "strigger/nn/mlp.hpp"
#include "strigger/vae/vae.hpp"

namespace strigger::rl {

using envsim::Observation;
using nn::Tensor;

struct TrainingFault : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Policy input: raw pixels, or the mean of a frozen VAE encoder.
class FeatureExtractor {
public:
  static FeatureExtractor raw(std::size_t obs_dim) {
    FeatureExtractor f;
    f.dim_ = obs_dim;
    return f;
  }
  static FeatureExtractor from_vae(vae::VaeModel model) {
    FeatureExtractor f;
    f.dim_ = model.latent_dim();
    f.model_ = std::move(model);
    return f;
  }

  bool is_vae() const { return model_.has_value(); }
  std::size_t dim() const { return dim_; }
  const vae::VaeModel *model() const { return model_ ? &*model_ : nullptr; }
  std::string mode() const { return is_vae() ? "vae" : "raw"; }

  std::vector<double> operator()(const Observation &obs) const {
    if (!model_) {
      if (obs.size() != dim_) throw nn::DimensionError("featurize: observation width mismatch");
      return obs;
    }
    return vae::encode(*model_, obs).mu;
  }

private:
  std::size_t dim_ = 0;
  std::optional<vae::VaeModel> model_;
};

struct PolicyOutput {
  Tensor logits; // [n x actions]
  Tensor value;  // [n x 1]
};

// Shared tanh trunk with an actor head (action logits) and a critic head (state value).
struct PolicyParams {
  nn::Mlp trunk;
  nn::Mlp actor;
  nn::Mlp critic;

  PolicyParams() = default;
  PolicyParams(std::size_t input_dim, std::vector<std::size_t> hidden, std::size_t actions, std::uint64_t seed) {
    std::vector<std::size_t> sizes{input_dim};
    sizes.insert(sizes.end(), hidden.begin(), hidden.end());
    trunk = nn::Mlp(sizes, std::vector<nn::Activation>(hidden.size(), nn::Activation::tanh), seed);
    actor = nn::Mlp({hidden.back(), actions}, {nn::Activation::identity}, seed + 1);
    critic = nn::Mlp({hidden.back(), 1}, {nn::Activation::identity}, seed + 2);
    // Small initial logits keep the starting policy close to uniform.
    for (auto &w : actor.layers().back().weight.mutable_values()) w *= 0.01;
  }

  std::size_t input_dim() const { return trunk.in_dim(); }
  std::size_t actions() const { return actor.out_dim(); }

  std::vector<Tensor> parameters() const {
    auto ps = trunk.parameters();
    for (const auto *net : {&actor, &critic})
      for (auto &p : net->parameters()) ps.push_back(p);
    return ps;
  }

  PolicyOutput forward(const Tensor &features) const {
    auto h = trunk.forward(features);
    return {actor.forward(h), critic.forward(h)};
  }

  // Tape-free evaluation for a single feature vector.
  void act_values(std::span<const double> features, std::vector<double> &probs, double &value) const {
    auto h = trunk.infer(features, 1);
    auto logits = actor.infer(h, 1);
    value = critic.infer(h, 1)[0];
    const double mx = *std::max_element(logits.begin(), logits.end());
    probs.resize(logits.size());
    double z = 0.0;
    for (std::size_t a = 0; a < logits.size(); ++a) z += probs[a] = std::exp(logits[a] - mx);
    for (auto &p : probs) p /= z;
  }
};

struct PpoConfig {
  double clip = 0.2;
  double gamma = 0.99;
  double lambda = 0.95;
  int epochs = 4;
  std::size_t minibatch = 64;
  std::size_t horizon = 2048;
  double entropy_coef = 0.01;
  double value_coef = 0.5;
  double max_grad_norm = 0.5;
  double lr = 1e-3;
  std::uint64_t total_timesteps = 200000;
  std::vector<std::size_t> hidden{64, 64};
};

inline void validate(const PpoConfig &c) {
  if (!(c.gamma > 0.0 && c.gamma <= 1.0)) throw std::invalid_argument("PPO gamma must lie in (0, 1]");
  if (!(c.lambda >= 0.0 && c.lambda <= 1.0)) throw std::invalid_argument("PPO lambda must lie in [0, 1]");
  if (!(c.clip > 0.0)) throw std::invalid_argument("PPO clip must be positive");
  if (c.epochs < 1 || c.minibatch == 0 || c.horizon == 0) throw std::invalid_argument("PPO sizes must be positive");
}

// On-policy storage. starts[t] is true when observation t opens a new episode.
struct RolloutBuffer {
  std::size_t feature_dim = 0;
  std::vector<double> features; // [T x feature_dim]
  std::vector<std::size_t> actions;
  std::vector<double> rewards, log_probs, values;
  std::vector<char> starts;
  double last_value = 0.0; // V of the observation following the last step
  bool last_start = false; // whether that observation opens a new episode
  std::vector<double> advantages, returns;

  std::size_t size() const { return actions.size(); }

  void add(std::span<const double> f, std::size_t a, double r, double logp, double v, bool start) {
    if (feature_dim == 0) feature_dim = f.size();
    if (f.size() != feature_dim) throw nn::DimensionError("RolloutBuffer: feature width changed");
    features.insert(features.end(), f.begin(), f.end());
    actions.push_back(a);
    rewards.push_back(r);
    log_probs.push_back(logp);
    values.push_back(v);
    starts.push_back(start);
    advantages.clear();
    returns.clear();
  }
};

// A_t = delta_t + gamma * lambda * (1 - start_{t+1}) * A_{t+1}, with
// delta_t = r_t + gamma * V_{t+1} * (1 - start_{t+1}) - V_t; returns R_t = A_t + V_t.
inline void gae_advantages(RolloutBuffer &buf, double gamma, double lambda) {
  const std::size_t T = buf.size();
  buf.advantages.assign(T, 0.0);
  buf.returns.assign(T, 0.0);
  double next_adv = 0.0;
  for (std::size_t i = T; i-- > 0;) {
    const bool next_start = i + 1 < T ? buf.starts[i + 1] : buf.last_start;
    const double next_value = i + 1 < T ? buf.values[i + 1] : buf.last_value;
    const double live = next_start ? 0.0 : 1.0;
    const double delta = buf.rewards[i] + gamma * next_value * live - buf.values[i];
    next_adv = delta + gamma * lambda * live * next_adv;
    buf.advantages[i] = next_adv;
    buf.returns[i] = next_adv + buf.values[i];
  }
}

inline std::vector<double> normalized(const std::vector<double> &x) {
  const double n = static_cast<double>(x.size());
  const double mean = std::accumulate(x.begin(), x.end(), 0.0) / n;
  double ss = 0.0;
  for (double v : x) ss += (v - mean) * (v - mean);
  const double sd = x.size() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = (x[i] - mean) / (sd + 1e-8);
  return out;
}

struct PpoLoss {
  Tensor total;
  double surrogate = 0.0; // E[min(rho A, clip(rho) A)]
  double value_loss = 0.0;
  double entropy = 0.0;
  double approx_kl = 0.0;
  double clip_fraction = 0.0;
};

// Loss to minimize on the rows `idx` of the buffer, using `adv` as advantages.
inline PpoLoss ppo_loss(const PolicyParams &policy, const RolloutBuffer &buf, std::span<const std::size_t> idx,
                        std::span<const double> adv, const PpoConfig &cfg) {
  const std::size_t n = idx.size(), d = buf.feature_dim;
  std::vector<double> x(n * d), a_old(n), logp_old(n), ret(n);
  std::vector<std::size_t> acts(n);
  for (std::size_t k = 0; k < n; ++k) {
    const auto i = idx[k];
    std::copy_n(buf.features.begin() + i * d, d, x.begin() + k * d);
    acts[k] = buf.actions[i];
    logp_old[k] = buf.log_probs[i];
    a_old[k] = adv[i];
    ret[k] = buf.returns[i];
  }
  auto out = policy.forward(Tensor({n, d}, x));
  auto logp_all = nn::log_softmax_rows(out.logits);
  auto logp = nn::gather_cols(logp_all, acts);
  auto ratio = nn::exp(logp - Tensor({n}, logp_old));
  Tensor A({n}, a_old);
  auto surr = nn::mean(nn::minimum(ratio * A, nn::clamp(ratio, 1.0 - cfg.clip, 1.0 + cfg.clip) * A));
  auto vloss = nn::mean(nn::square(nn::reshape(out.value, {n}) - Tensor({n}, ret)));
  auto entropy = -nn::sum(nn::exp(logp_all) * logp_all) * (1.0 / static_cast<double>(n));

  PpoLoss L;
  L.total = -surr + vloss * cfg.value_coef - entropy * cfg.entropy_coef;
  L.surrogate = surr.item();
  L.value_loss = vloss.item();
  L.entropy = entropy.item();
  double kl = 0.0, clipped = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    const double r = ratio[k];
    kl += (r - 1.0) - std::log(r);
    clipped += std::abs(r - 1.0) > cfg.clip;
  }
  L.approx_kl = kl / static_cast<double>(n);
  L.clip_fraction = clipped / static_cast<double>(n);
  if (!std::isfinite(L.total.item())) throw TrainingFault("non-finite PPO loss");
  return L;
}

struct UpdateStats {
  double first_surrogate = 0.0; // before any parameter step
  double surrogate = 0.0, value_loss = 0.0, entropy = 0.0, approx_kl = 0.0, clip_fraction = 0.0;
  std::size_t steps = 0;
};

// Epochs of shuffled minibatch Adam steps on the clipped objective. Advantages are
// normalized over the whole buffer first.
inline UpdateStats ppo_update(PolicyParams &policy, RolloutBuffer &buf, const PpoConfig &cfg, nn::AdamState &adam,
                              std::mt19937_64 &rng) {
  if (buf.advantages.size() != buf.size()) throw std::logic_error("ppo_update: run gae_advantages first");
  const auto adv = normalized(buf.advantages);
  auto params = policy.parameters();
  std::vector<std::size_t> order(buf.size());
  std::iota(order.begin(), order.end(), 0);
  UpdateStats st;
  for (int e = 0; e < cfg.epochs; ++e) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t s = 0; s < order.size(); s += cfg.minibatch) {
      const auto n = std::min(cfg.minibatch, order.size() - s);
      for (auto &p : params) p.zero_grad();
      auto L = ppo_loss(policy, buf, std::span(order).subspan(s, n), adv, cfg);
      if (st.steps == 0) st.first_surrogate = L.surrogate;
      L.total.backward();
      if (cfg.max_grad_norm > 0.0) nn::clip_grad_norm(params, cfg.max_grad_norm);
      nn::adam_step(params, adam);
      st.surrogate = L.surrogate;
      st.value_loss = L.value_loss;
      st.entropy = L.entropy;
      st.approx_kl = L.approx_kl;
      st.clip_fraction = L.clip_fraction;
      ++st.steps;
    }
  }
  return st;
}

inline std::size_t sample_action(std::span<const double> probs, std::mt19937_64 &rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double x = u(rng), c = 0.0;
  for (std::size_t a = 0; a + 1 < probs.size(); ++a) {
    c += probs[a];
    if (x < c) return a;
  }
  return probs.size() - 1;
}

struct CurvePoint {
  std::uint64_t timestep = 0;
  double mean_reward = 0.0; // mean return of episodes finished during the rollout
  std::size_t episodes = 0;
};

struct TrainResult {
  PolicyParams policy;
  std::vector<CurvePoint> curve;
};

inline TrainResult train_policy(const envsim::WorldSpec &env, const FeatureExtractor &features,
                                const PpoConfig &cfg, std::uint64_t seed) {
  validate(cfg);
  std::mt19937_64 rng(seed);
  TrainResult res;
  res.policy = PolicyParams(features.dim(), cfg.hidden, envsim::kActionCount, seed * 2654435761ULL + 17);
  nn::AdamConfig ac;
  ac.lr = cfg.lr;
  nn::AdamState adam(ac);

  envsim::Simulator sim(env);
  auto obs = sim.reset(rng);
  bool start = true;
  double episode_return = 0.0;
  std::uint64_t t = 0;
  std::vector<double> probs;
  double last_mean = 0.0;

  while (t < cfg.total_timesteps) {
    RolloutBuffer buf;
    double finished_sum = 0.0;
    std::size_t finished = 0;
    auto f = features(obs);
    for (std::size_t k = 0; k < cfg.horizon && t < cfg.total_timesteps; ++k, ++t) {
      double v;
      res.policy.act_values(f, probs, v);
      const auto a = sample_action(probs, rng);
      auto step = sim.step(static_cast<envsim::Action>(a));
      buf.add(f, a, step.reward, std::log(probs[a]), v, start);
      episode_return += step.reward;
      start = step.done;
      if (step.done) {
        finished_sum += episode_return;
        ++finished;
        episode_return = 0.0;
        obs = sim.reset(rng);
      } else {
        obs = std::move(step.observation);
      }
      f = features(obs);
    }
    double v_last;
    res.policy.act_values(f, probs, v_last);
    buf.last_value = v_last;
    buf.last_start = start;
    gae_advantages(buf, cfg.gamma, cfg.lambda);
    ppo_update(res.policy, buf, cfg, adam, rng);
    if (finished > 0) last_mean = finished_sum / static_cast<double>(finished);
    res.curve.push_back({t, last_mean, finished});
  }
  return res;
}

struct Evaluation {
  double mean = 0.0;
  double stderr_ = 0.0;
  std::vector<double> returns;
};

inline Evaluation summarize(std::vector<double> returns) {
  Evaluation e;
  const double n = static_cast<double>(returns.size());
  e.mean = std::accumulate(returns.begin(), returns.end(), 0.0) / n;
  if (returns.size() > 1) {
    double ss = 0.0;
    for (double r : returns) ss += (r - e.mean) * (r - e.mean);
    e.stderr_ = std::sqrt(ss / (n - 1.0)) / std::sqrt(n);
  }
  e.returns = std::move(returns);
  return e;
}

// Full episodes with actions sampled from the policy.
inline Evaluation evaluate_policy(const PolicyParams &policy, const FeatureExtractor &features,
                                  const envsim::WorldSpec &env, int episodes, std::uint64_t seed) {
  if (episodes < 1) throw std::invalid_argument("evaluate_policy: episodes must be at least 1");
  std::mt19937_64 rng(seed);
  envsim::Simulator sim(env);
  std::vector<double> returns;
  std::vector<double> probs;
  for (int e = 0; e < episodes; ++e) {
    auto obs = sim.reset(rng);
    double total = 0.0;
    while (!sim.done()) {
      double v;
      policy.act_values(features(obs), probs, v);
      auto step = sim.step(static_cast<envsim::Action>(sample_action(probs, rng)));
      total += step.reward;
      obs = std::move(step.observation);
    }
    returns.push_back(total);
  }
  return summarize(std::move(returns));
}

// Uniform-random actions; the baseline for the learning sanity check.
inline Evaluation evaluate_random_policy(const envsim::WorldSpec &env, int episodes, std::uint64_t seed) {
  if (episodes < 1) throw std::invalid_argument("evaluate_random_policy: episodes must be at least 1");
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> pick(0, static_cast<int>(envsim::kActionCount) - 1);
  envsim::Simulator sim(env);
  std::vector<double> returns;
  for (int e = 0; e < episodes; ++e) {
    sim.reset(rng);
    double total = 0.0;
    while (!sim.done()) total += sim.act(static_cast<envsim::Action>(pick(rng)));
    returns.push_back(total);
  }
  return summarize(std::move(returns));
}

// Trailing moving average over `window` points.
inline std::vector<double> smooth(std::span<const double> xs, std::size_t window) {
  if (window == 0) throw std::invalid_argument("smooth: window must be positive");
  std::vector<double> out(xs.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    acc += xs[i];
    if (i >= window) acc -= xs[i - window];
    out[i] = acc / static_cast<double>(std::min(i + 1, window));
  }
  return out;
}

// Divides by the maximum absolute value (identity for an all-zero curve).
inline std::vector<double> normalize_by_max(std::span<const double> xs) {
  double mx = 0.0;
  for (double x : xs) mx = std::max(mx, std::abs(x));
  std::vector<double> out(xs.begin(), xs.end());
  if (mx > 0.0)
    for (auto &x : out) x /= mx;
  return out;
}

} // namespace strigger::rl
