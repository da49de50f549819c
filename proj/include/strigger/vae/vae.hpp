#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "strigger/envsim/simulator.hpp"
#include "strigger/nn/adam.hpp"
#include "strigger/nn/checkpoint.hpp"
#include "strigger/nn/mlp.hpp"

namespace strigger::vae {

using envsim::Observation;
using nn::Tensor;
using Dataset = std::vector<Observation>;

struct TrainingFault : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct VaeConfig {
  std::size_t input_dim = 192;
  std::size_t latent_dim = 16;
  std::vector<std::size_t> hidden{128, 64};
  nn::Activation hidden_activation = nn::Activation::tanh;
  std::uint64_t seed = 1;
};

struct Encoding {
  std::vector<double> mu;
  std::vector<double> logvar;
};

// Encoder maps x -> (mu, logvar) packed as 2d outputs; decoder maps z -> sigmoid pixels.
class VaeModel {
public:
  VaeModel() = default;

  explicit VaeModel(const VaeConfig &cfg) : latent_dim_(cfg.latent_dim) {
    std::vector<std::size_t> enc{cfg.input_dim};
    enc.insert(enc.end(), cfg.hidden.begin(), cfg.hidden.end());
    enc.push_back(2 * cfg.latent_dim);
    std::vector<nn::Activation> enc_act(cfg.hidden.size(), cfg.hidden_activation);
    enc_act.push_back(nn::Activation::identity);
    encoder_ = nn::Mlp(enc, enc_act, cfg.seed);

    std::vector<std::size_t> dec{cfg.latent_dim};
    dec.insert(dec.end(), cfg.hidden.rbegin(), cfg.hidden.rend());
    dec.push_back(cfg.input_dim);
    std::vector<nn::Activation> dec_act(cfg.hidden.size(), cfg.hidden_activation);
    dec_act.push_back(nn::Activation::sigmoid);
    decoder_ = nn::Mlp(dec, dec_act, cfg.seed ^ 0xD1B54A32D192ED03ULL);
  }

  VaeModel(nn::Mlp encoder, nn::Mlp decoder)
      : encoder_(std::move(encoder)), decoder_(std::move(decoder)) {
    if (encoder_.out_dim() % 2 != 0) throw nn::DimensionError("encoder output width must be 2d");
    latent_dim_ = encoder_.out_dim() / 2;
    if (decoder_.in_dim() != latent_dim_ || decoder_.out_dim() != encoder_.in_dim())
      throw nn::DimensionError("decoder does not match encoder dimensions");
  }

  std::size_t input_dim() const { return encoder_.in_dim(); }
  std::size_t latent_dim() const { return latent_dim_; }
  const nn::Mlp &encoder() const { return encoder_; }
  const nn::Mlp &decoder() const { return decoder_; }
  nn::Mlp &encoder() { return encoder_; }
  nn::Mlp &decoder() { return decoder_; }

  std::vector<Tensor> parameters() const {
    auto ps = encoder_.parameters();
    auto dp = decoder_.parameters();
    ps.insert(ps.end(), dp.begin(), dp.end());
    return ps;
  }

private:
  nn::Mlp encoder_;
  nn::Mlp decoder_;
  std::size_t latent_dim_ = 0;
};

// Row-major [n x dim] copy of a set of observations.
inline std::vector<double> flatten(std::span<const Observation> states, std::size_t dim) {
  std::vector<double> flat;
  flat.reserve(states.size() * dim);
  for (const auto &s : states) {
    if (s.size() != dim)
      throw nn::DimensionError("observation of length " + std::to_string(s.size()) + ", expected " +
                               std::to_string(dim));
    flat.insert(flat.end(), s.begin(), s.end());
  }
  return flat;
}

inline std::vector<Encoding> encode_batch(const VaeModel &model, std::span<const Observation> states) {
  const auto d = model.latent_dim();
  auto out = model.encoder().infer(flatten(states, model.input_dim()), states.size());
  std::vector<Encoding> codes(states.size());
  for (std::size_t i = 0; i < states.size(); ++i) {
    const double *row = out.data() + i * 2 * d;
    codes[i].mu.assign(row, row + d);
    codes[i].logvar.assign(row + d, row + 2 * d);
  }
  return codes;
}

inline Encoding encode(const VaeModel &model, const Observation &obs) {
  return encode_batch(model, std::span<const Observation>(&obs, 1)).front();
}

// Decodes [n x d] latent rows into n observations.
inline std::vector<Observation> decode_batch(const VaeModel &model, std::span<const double> latents,
                                             std::size_t n) {
  auto out = model.decoder().infer(latents, n);
  const auto dim = model.input_dim();
  std::vector<Observation> xs(n);
  for (std::size_t i = 0; i < n; ++i) xs[i].assign(out.begin() + i * dim, out.begin() + (i + 1) * dim);
  return xs;
}

// z = mu + exp(logvar / 2) * eps, differentiable in mu and logvar.
inline Tensor reparameterize(const Tensor &mu, const Tensor &logvar, const Tensor &eps) {
  return mu + nn::exp(logvar * 0.5) * eps;
}

inline std::vector<double> reparameterize(std::span<const double> mu, std::span<const double> logvar,
                                          std::span<const double> eps) {
  if (mu.size() != logvar.size() || mu.size() != eps.size())
    throw nn::DimensionError("reparameterize: dimension mismatch");
  std::vector<double> z(mu.size());
  for (std::size_t j = 0; j < z.size(); ++j) z[j] = mu[j] + std::exp(logvar[j] / 2.0) * eps[j];
  return z;
}

// Batch mean of KL(N(mu, exp(logvar)) || N(0, I)).
inline double kl_divergence(std::span<const double> mu, std::span<const double> logvar, std::size_t batch) {
  double s = 0.0;
  for (std::size_t i = 0; i < mu.size(); ++i)
    s += -0.5 * (1.0 + logvar[i] - mu[i] * mu[i] - std::exp(logvar[i]));
  return s / static_cast<double>(batch);
}

struct LossTerms {
  Tensor total;
  double recon = 0.0;
  double kl = 0.0;
};

// Reconstruction term is the per-sample sum of squared pixel errors averaged over the batch
// (Gaussian log-likelihood with fixed variance, up to constants).
inline LossTerms loss_with_noise(const VaeModel &model, const Tensor &batch, const Tensor &eps, double beta) {
  if (beta < 0.0) throw std::invalid_argument("loss: beta must be non-negative");
  const auto n = batch.rows();
  const auto d = model.latent_dim();
  auto enc = model.encoder().forward(batch);
  auto mu = nn::slice_cols(enc, 0, d);
  auto logvar = nn::slice_cols(enc, d, 2 * d);
  auto z = reparameterize(mu, logvar, eps);
  auto xhat = model.decoder().forward(z);
  const double inv_n = 1.0 / static_cast<double>(n);
  auto recon = nn::sum(nn::square(xhat - batch)) * inv_n;
  auto kl = nn::sum(nn::square(mu) + nn::exp(logvar) - logvar + (-1.0)) * (0.5 * inv_n);
  LossTerms out;
  out.recon = recon.item();
  out.kl = kl.item();
  out.total = beta == 0.0 ? recon : recon + kl * beta;
  if (!std::isfinite(out.total.item())) {
    std::ostringstream os;
    os << "non-finite VAE loss (recon=" << out.recon << ", kl=" << out.kl << ", beta=" << beta << ")";
    throw TrainingFault(os.str());
  }
  return out;
}

inline LossTerms loss(const VaeModel &model, const Tensor &batch, double beta, std::mt19937_64 &rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> eps(batch.rows() * model.latent_dim());
  for (auto &e : eps) e = normal(rng);
  return loss_with_noise(model, batch, Tensor({batch.rows(), model.latent_dim()}, eps), beta);
}

struct ReconReport {
  std::vector<double> per_sample;
  double mean = 0.0;
};

// Per-state mean squared pixel error of the deterministic pass z = mu.
inline ReconReport recon_errors(const VaeModel &model, std::span<const Observation> states) {
  if (states.empty()) throw std::invalid_argument("recon_errors: no states");
  const auto dim = model.input_dim();
  const auto d = model.latent_dim();
  ReconReport rep;
  rep.per_sample.reserve(states.size());
  constexpr std::size_t chunk = 512;
  for (std::size_t start = 0; start < states.size(); start += chunk) {
    const auto n = std::min(chunk, states.size() - start);
    auto part = states.subspan(start, n);
    auto flat = flatten(part, dim);
    auto enc = model.encoder().infer(flat, n);
    std::vector<double> mu(n * d);
    for (std::size_t i = 0; i < n; ++i)
      std::copy_n(enc.begin() + i * 2 * d, d, mu.begin() + i * d);
    auto xhat = model.decoder().infer(mu, n);
    for (std::size_t i = 0; i < n; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < dim; ++j) {
        const double e = xhat[i * dim + j] - flat[i * dim + j];
        s += e * e;
      }
      rep.per_sample.push_back(s / static_cast<double>(dim));
    }
  }
  rep.mean = std::accumulate(rep.per_sample.begin(), rep.per_sample.end(), 0.0) /
             static_cast<double>(rep.per_sample.size());
  return rep;
}

// n observations decoded from z ~ N(0, I).
inline std::vector<Observation> generate(const VaeModel &model, std::size_t n, std::uint64_t seed) {
  if (n == 0) throw std::invalid_argument("generate: n must be at least 1");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> z(n * model.latent_dim());
  for (auto &v : z) v = normal(rng);
  return decode_batch(model, z, n);
}

// ---- checkpoints -------------------------------------------------------------

inline nlohmann::json to_json(const VaeModel &model, const nlohmann::json &manifest = nlohmann::json::object()) {
  return {{"format", "strigger-vae/1"},
          {"rays", model.input_dim() / 3},
          {"latent_dim", model.latent_dim()},
          {"manifest", manifest},
          {"encoder", nn::to_json(model.encoder())},
          {"decoder", nn::to_json(model.decoder())}};
}

inline VaeModel vae_from_json(const nlohmann::json &j) {
  if (j.value("format", std::string{}) != "strigger-vae/1")
    throw nn::UsageError("not a VAE checkpoint");
  VaeModel m(nn::mlp_from_json(j.at("encoder")), nn::mlp_from_json(j.at("decoder")));
  if (m.latent_dim() != j.at("latent_dim").get<std::size_t>())
    throw nn::DimensionError("VAE checkpoint latent_dim disagrees with its networks");
  return m;
}

} // namespace strigger::vae
