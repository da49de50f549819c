#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "strigger/nn/tensor.hpp"

namespace strigger::nn {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  AdamConfig config;
  std::uint64_t step = 0;
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;

  AdamState() = default;
  explicit AdamState(AdamConfig cfg) : config(cfg) {}
};

// Bias-corrected Adam update over `params` (in a stable order), then zeroes their grads.
inline void adam_step(std::span<Tensor> params, AdamState &adam) {
  for (const auto &p : params)
    if (!p.has_grad()) throw UsageError("adam_step: parameter without gradient");

  if (adam.first_moment.empty()) {
    for (const auto &p : params) {
      adam.first_moment.emplace_back(p.size(), 0.0);
      adam.second_moment.emplace_back(p.size(), 0.0);
    }
  }
  if (adam.first_moment.size() != params.size())
    throw UsageError("adam_step: parameter list changed between steps");

  ++adam.step;
  const auto &c = adam.config;
  const double t = static_cast<double>(adam.step);
  const double bc1 = 1.0 - std::pow(c.beta1, t);
  const double bc2 = 1.0 - std::pow(c.beta2, t);

  for (std::size_t k = 0; k < params.size(); ++k) {
    auto &p = params[k];
    auto &m = adam.first_moment[k];
    auto &v = adam.second_moment[k];
    if (m.size() != p.size()) throw UsageError("adam_step: moment shape mismatch");
    auto w = p.mutable_values();
    auto g = p.mutable_grad();
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
      v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      w[i] -= c.lr * mhat / (std::sqrt(vhat) + c.eps);
      g[i] = 0.0;
    }
  }
}

// Rescales gradients so their joint L2 norm is at most `max_norm`; returns the pre-clip norm.
inline double clip_grad_norm(std::span<Tensor> params, double max_norm) {
  double sq = 0.0;
  for (const auto &p : params)
    if (p.has_grad())
      for (double g : p.grad()) sq += g * g;
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const double s = max_norm / norm;
    for (auto &p : params)
      if (p.has_grad())
        for (double &g : p.mutable_grad()) g *= s;
  }
  return norm;
}

} // namespace strigger::nn
