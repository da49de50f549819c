#pragma once

#include <cmath>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "strigger/detector/student_t.hpp"

namespace strigger::detector {

struct DegenerateVariance : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DetectorUsageError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// A batch of per-state reconstruction errors with its summary statistics.
class ErrorSample {
public:
  ErrorSample() = default;

  explicit ErrorSample(std::vector<double> values) : values_(std::move(values)) {
    if (values_.size() < 2) throw DetectorUsageError("ErrorSample needs at least two values");
    const double n = static_cast<double>(values_.size());
    mean_ = std::accumulate(values_.begin(), values_.end(), 0.0) / n;
    double ss = 0.0;
    for (double v : values_) ss += (v - mean_) * (v - mean_);
    variance_ = ss / (n - 1.0);
  }

  std::span<const double> values() const { return values_; }
  std::size_t size() const { return values_.size(); }
  double mean() const { return mean_; }
  double variance() const { return variance_; }
  double stddev() const { return std::sqrt(variance_); }

private:
  std::vector<double> values_;
  double mean_ = 0.0;
  double variance_ = 0.0;
};

struct WelchResult {
  double t = 0.0;
  double nu = 0.0;
  double p = 1.0;
};

// Welch's t-test for two equally sized samples with the Welch-Satterthwaite
// degrees of freedom. Sample variances below `variance_floor` are raised to it.
inline WelchResult welch_t(const ErrorSample &x1, const ErrorSample &x2, double variance_floor = 0.0) {
  if (x1.size() != x2.size())
    throw DetectorUsageError("welch_t: sample sizes differ (" + std::to_string(x1.size()) + " vs " +
                             std::to_string(x2.size()) + ")");
  if (x1.size() < 2) throw DetectorUsageError("welch_t: need at least two values per sample");
  const double n = static_cast<double>(x1.size());
  const double v1 = std::max(x1.variance(), variance_floor);
  const double v2 = std::max(x2.variance(), variance_floor);
  const double diff = x1.mean() - x2.mean();

  if (v1 == 0.0 && v2 == 0.0) {
    if (diff == 0.0) return WelchResult{0.0, 2.0 * (n - 1.0), 1.0};
    throw DegenerateVariance("welch_t: both samples have zero variance but different means");
  }

  WelchResult r;
  r.t = diff / std::sqrt((v1 + v2) / n);
  r.nu = (n - 1.0) * (v1 + v2) * (v1 + v2) / (v1 * v1 + v2 * v2);
  r.p = student_two_sided_p(r.t, r.nu);
  return r;
}

} // namespace strigger::detector
