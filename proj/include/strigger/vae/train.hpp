#pragma once

#include <algorithm>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "strigger/vae/vae.hpp"

namespace strigger::vae {

// Inverse KL annealing: beta starts at 1 and is multiplied by `decay` each time the
// validation reconstruction error stalls for `patience` epochs, never going below `min_beta`.
struct AnnealSchedule {
  double initial_beta = 1.0;
  double decay = 0.5;
  int patience = 3;
  double min_beta = 1e-3;
  int stop_patience = 6;
  // An epoch "improves" when validation error drops below best * (1 - min_rel_improvement).
  double min_rel_improvement = 1e-3;
  int max_epochs = 400;
};

struct TrainConfig {
  nn::AdamConfig adam{};
  std::size_t batch_size = 64;
  double validation_fraction = 0.1;
  std::uint64_t seed = 1;
};

struct EpochLog {
  int epoch = 0;
  double beta = 1.0;
  double recon = 0.0; // mean training reconstruction term
  double kl = 0.0;    // mean training KL term
  double val_mse = 0.0;
};

struct TrainingLog {
  std::vector<EpochLog> epochs;
  std::string stop_reason;
  double final_val_mse = 0.0;
};

inline nlohmann::json to_json(const TrainingLog &log) {
  nlohmann::json epochs = nlohmann::json::array();
  for (const auto &e : log.epochs)
    epochs.push_back({{"epoch", e.epoch}, {"beta", e.beta}, {"recon", e.recon}, {"kl", e.kl}, {"val_mse", e.val_mse}});
  return {{"epochs", epochs}, {"stop_reason", log.stop_reason}, {"final_val_mse", log.final_val_mse}};
}

// Trains `model` in place. A deterministic shuffle holds out `validation_fraction` of the
// dataset (at least one state) for the plateau test; with a single state it is used for both.
inline TrainingLog train(VaeModel &model, const Dataset &dataset, const AnnealSchedule &schedule = {},
                         const TrainConfig &cfg = {}) {
  if (dataset.empty()) throw std::invalid_argument("train: empty dataset");
  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);

  std::size_t n_val = static_cast<std::size_t>(cfg.validation_fraction * static_cast<double>(dataset.size()));
  n_val = std::clamp<std::size_t>(n_val, 1, dataset.size());
  Dataset val, tr;
  for (std::size_t i = 0; i < order.size(); ++i)
    (i < n_val ? val : tr).push_back(dataset[order[i]]);
  if (tr.empty()) tr = val;

  const auto dim = model.input_dim();
  for (const auto &s : dataset)
    if (s.size() != dim) throw nn::DimensionError("train: observation width does not match the model");

  auto params = model.parameters();
  nn::AdamState adam(cfg.adam);
  TrainingLog log;
  double beta = schedule.initial_beta;
  double best = std::numeric_limits<double>::infinity();
  double first_recon = -1.0;
  int stalled = 0, diverging = 0;

  std::vector<std::size_t> idx(tr.size());
  std::iota(idx.begin(), idx.end(), 0);
  for (int epoch = 1; epoch <= schedule.max_epochs; ++epoch) {
    std::shuffle(idx.begin(), idx.end(), rng);
    double recon_sum = 0.0, kl_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < idx.size(); start += cfg.batch_size) {
      const auto n = std::min(cfg.batch_size, idx.size() - start);
      nn::Buffer flat;
      flat.reserve(n * dim);
      for (std::size_t k = 0; k < n; ++k) {
        const auto &s = tr[idx[start + k]];
        flat.insert(flat.end(), s.begin(), s.end());
      }
      Tensor batch({n, dim}, std::move(flat));
      for (auto &p : params) p.zero_grad();
      auto terms = loss(model, batch, beta, rng);
      terms.total.backward();
      nn::adam_step(params, adam);
      recon_sum += terms.recon;
      kl_sum += terms.kl;
      ++batches;
    }

    EpochLog e;
    e.epoch = epoch;
    e.beta = beta;
    e.recon = recon_sum / static_cast<double>(batches);
    e.kl = kl_sum / static_cast<double>(batches);
    e.val_mse = recon_errors(model, val).mean;
    log.epochs.push_back(e);
    if (!std::isfinite(e.val_mse)) throw TrainingFault("validation error became non-finite");

    if (first_recon < 0.0) first_recon = e.recon;
    diverging = e.recon > 10.0 * first_recon ? diverging + 1 : 0;
    if (diverging >= 3)
      throw TrainingFault("VAE training diverged: recon " + std::to_string(e.recon) +
                          " exceeds 10x the first epoch (" + std::to_string(first_recon) + ")");

    if (e.val_mse < best * (1.0 - schedule.min_rel_improvement)) {
      best = e.val_mse;
      stalled = 0;
    } else {
      ++stalled;
    }

    const bool at_floor = beta <= schedule.min_beta;
    if (at_floor && stalled >= schedule.stop_patience) {
      log.stop_reason = "plateau";
      break;
    }
    if (!at_floor && stalled >= schedule.patience) {
      beta = std::max(schedule.min_beta, beta * schedule.decay);
      stalled = 0;
    }
  }
  if (log.stop_reason.empty()) log.stop_reason = "max_epochs";
  log.final_val_mse = log.epochs.back().val_mse;
  return log;
}

} // namespace strigger::vae
