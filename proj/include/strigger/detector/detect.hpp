#pragma once

#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "strigger/detector/welch.hpp"
#include "strigger/vae/vae.hpp"

namespace strigger::detector {

struct DetectorConfig {
  double alpha = 0.01;
  std::size_t batch = 128;
  double variance_floor = 0.0;
};

inline void validate(const DetectorConfig &cfg) {
  if (!(cfg.alpha > 0.0 && cfg.alpha < 1.0)) throw DetectorUsageError("alpha must lie in (0, 1)");
  if (cfg.batch < 2) throw DetectorUsageError("detector batch must be at least 2");
  if (!(cfg.variance_floor >= 0.0)) throw DetectorUsageError("variance floor must be non-negative");
}

// Reconstruction errors of the first `cfg.batch` states, as a sample for the test.
inline ErrorSample error_sample(const vae::VaeModel &model, std::span<const envsim::Observation> states,
                                const DetectorConfig &cfg) {
  if (states.size() < cfg.batch)
    throw DetectorUsageError("need " + std::to_string(cfg.batch) + " states, got " +
                             std::to_string(states.size()));
  return ErrorSample(vae::recon_errors(model, states.first(cfg.batch)).per_sample);
}

struct Detection {
  bool changed = false;
  WelchResult welch;
};

inline Detection detect_change(const vae::VaeModel &model, std::span<const envsim::Observation> recent,
                               const ErrorSample &reference, const DetectorConfig &cfg = {}) {
  validate(cfg);
  if (reference.size() != cfg.batch)
    throw DetectorUsageError("reference sample has " + std::to_string(reference.size()) +
                             " values, detector batch is " + std::to_string(cfg.batch));
  const auto current = error_sample(model, recent, cfg);
  const auto w = welch_t(current, reference, cfg.variance_floor);
  return {w.p < cfg.alpha, w};
}

// One labeled transition: the model and reference describe the environment before the
// transition, `recent` holds states observed after it.
struct Transition {
  const vae::VaeModel *model = nullptr;
  const ErrorSample *reference = nullptr;
  std::span<const envsim::Observation> recent;
  bool is_change = false;
  int sequence_id = 0;
  int transition_id = 0;
};

struct BenchmarkRow {
  int sequence_id = 0;
  int transition_id = 0;
  bool is_change = false;
  WelchResult welch;
  bool decision = false;
};

struct BenchmarkResult {
  std::vector<BenchmarkRow> rows;
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
  // Absent when the denominator is zero (no detections, or no true changes).
  std::optional<double> precision;
  std::optional<double> recall;
  std::size_t positives() const { return tp + fn; }
};

inline void tally(BenchmarkResult &r, const BenchmarkRow &row) {
  if (row.is_change) (row.decision ? r.tp : r.fn) += 1;
  else (row.decision ? r.fp : r.tn) += 1;
  r.rows.push_back(row);
  r.precision = r.tp + r.fp ? std::optional<double>(double(r.tp) / double(r.tp + r.fp)) : std::nullopt;
  r.recall = r.tp + r.fn ? std::optional<double>(double(r.tp) / double(r.tp + r.fn)) : std::nullopt;
}

inline BenchmarkResult detection_benchmark(std::span<const Transition> transitions, const DetectorConfig &cfg = {}) {
  if (transitions.empty()) throw DetectorUsageError("detection_benchmark: no transitions");
  BenchmarkResult result;
  for (const auto &tr : transitions) {
    if (!tr.model || !tr.reference) throw DetectorUsageError("transition without model or reference");
    const auto d = detect_change(*tr.model, tr.recent, *tr.reference, cfg);
    tally(result, {tr.sequence_id, tr.transition_id, tr.is_change, d.welch, d.changed});
  }
  return result;
}

inline void write_csv_header(std::ostream &os) {
  os << "sequence_id,transition_id,is_change,t,nu,p,decision\n";
}

inline void write_csv(std::ostream &os, const BenchmarkResult &r, bool header = true) {
  if (header) write_csv_header(os);
  const auto old = os.precision(17);
  for (const auto &row : r.rows)
    os << row.sequence_id << ',' << row.transition_id << ',' << int(row.is_change) << ',' << row.welch.t
       << ',' << row.welch.nu << ',' << row.welch.p << ',' << int(row.decision) << '\n';
  os.precision(old);
}

} // namespace strigger::detector
