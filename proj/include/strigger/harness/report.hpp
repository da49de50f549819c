#pragma once

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "strigger/detector/welch.hpp"
#include "strigger/harness/bundle.hpp"

namespace strigger::harness {

// Moving average over [i - w/2, i + w/2], truncated at the ends.
inline std::vector<double> smooth_centered(std::span<const double> xs, std::size_t window) {
  if (window == 0) throw std::invalid_argument("smooth_centered: window must be positive");
  const std::size_t half = window / 2;
  std::vector<double> prefix(xs.size() + 1, 0.0);
  for (std::size_t i = 0; i < xs.size(); ++i) prefix[i + 1] = prefix[i] + xs[i];
  std::vector<double> out(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const std::size_t lo = i >= half ? i - half : 0;
    const std::size_t hi = std::min(xs.size(), i + half + 1);
    out[i] = (prefix[hi] - prefix[lo]) / static_cast<double>(hi - lo);
  }
  return out;
}

inline std::vector<double> smoothed_normalized(std::span<const double> raw, std::size_t window) {
  auto s = smooth_centered(raw, window);
  return rl::normalize_by_max(s);
}

struct Summary {
  std::size_t n = 0;
  double mean = 0.0, median = 0.0, stderr_ = 0.0;
};

inline Summary summarize(std::vector<double> xs) {
  Summary s;
  s.n = xs.size();
  if (xs.empty()) return s;
  const double n = static_cast<double>(xs.size());
  for (double x : xs) s.mean += x;
  s.mean /= n;
  if (xs.size() > 1) {
    double ss = 0.0;
    for (double x : xs) ss += (x - s.mean) * (x - s.mean);
    s.stderr_ = std::sqrt(ss / (n - 1.0) / n);
  }
  std::sort(xs.begin(), xs.end());
  const auto m = xs.size() / 2;
  s.median = xs.size() % 2 ? xs[m] : 0.5 * (xs[m - 1] + xs[m]);
  return s;
}

// P(T > t): evidence that the first sample's mean exceeds the second's.
inline double one_sided_p(const detector::WelchResult &w) { return w.t > 0 ? w.p / 2.0 : 1.0 - w.p / 2.0; }

// Two-sided Welch test of per-seed values; absent when the test is undefined (fewer than
// two values per side, unequal counts, or two constant samples with different means).
inline std::optional<detector::WelchResult> welch_compare(const std::vector<double> &a, const std::vector<double> &b) {
  if (a.size() < 2 || a.size() != b.size()) return std::nullopt;
  try {
    return detector::welch_t(detector::ErrorSample(a), detector::ErrorSample(b));
  } catch (const std::exception &) {
    return std::nullopt;
  }
}

inline constexpr double kSignificanceAlpha = 0.05;

struct ReportResult {
  std::vector<std::string> missing; // "<file> (stage <name>)"
  std::string text;
  bool complete() const { return missing.empty(); }
};

namespace detail {

inline std::ofstream open_out(const fs::path &p) {
  fs::create_directories(p.parent_path());
  std::ofstream os(p);
  if (!os) throw std::runtime_error("cannot write " + p.string());
  os.precision(17);
  return os;
}

inline std::string fmt(double x, int prec = 4) {
  std::ostringstream os;
  os << std::setprecision(prec) << x;
  return os.str();
}

inline void report_recon(const fs::path &dir, const std::string &hash, std::ostringstream &text) {
  auto t = read_csv(dir / "recon.csv");
  // key (strategy, env) -> values; ratios matched on (seed, sequence, env)
  std::map<std::pair<std::string, int>, std::vector<double>> by;
  std::map<std::pair<std::string, int>, std::string> names;
  std::map<std::tuple<std::string, std::string, int>, double> fine;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const int env = std::stoi(t.str(r, "env_index"));
    by[{t.str(r, "strategy"), env}].push_back(t.num(r, "mse"));
    names[{t.str(r, "strategy"), env}] = t.str(r, "env_name");
    if (t.str(r, "strategy") == "fine_tune") fine[{t.str(r, "seed"), t.str(r, "sequence"), env}] = t.num(r, "mse");
  }
  auto os = open_out(dir / "report" / "recon_summary.csv");
  csv_row(os, "strategy", "env_index", "env_name", "n", "mean", "median", "stderr", "median_ratio_fine_tune_over",
          "config_hash");
  text << "reconstruction MSE (per-pixel, mean over runs)\n";
  for (const auto &[key, vals] : by) {
    std::vector<double> ratios;
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
      if (t.str(r, "strategy") != key.first || std::stoi(t.str(r, "env_index")) != key.second) continue;
      auto it = fine.find({t.str(r, "seed"), t.str(r, "sequence"), key.second});
      if (it != fine.end()) ratios.push_back(it->second / t.num(r, "mse"));
    }
    const auto s = summarize(vals);
    const std::string ratio = ratios.empty() ? "" : fmt(summarize(ratios).median, 17);
    csv_row(os, key.first, key.second, names[key], s.n, s.mean, s.median, s.stderr_, ratio, hash);
    text << "  " << std::left << std::setw(12) << key.first << " env " << key.second << "  " << fmt(s.mean) << " +- "
         << fmt(s.stderr_, 2) << (ratio.empty() ? "" : "  ft/this " + fmt(std::stod(ratio), 3)) << '\n';
  }
}

inline void report_detection(const fs::path &dir, const std::string &hash, std::ostringstream &text) {
  auto t = read_csv(dir / "detection.csv");
  struct Counts {
    std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
  };
  std::map<int, Counts> by; // boundary k -> k+1: changes and non-changes judged by the learner after k
  Counts all;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const bool change = t.str(r, "is_change") == "1", decision = t.str(r, "decision") == "1";
    for (auto *c : {&by[std::stoi(t.str(r, "from"))], &all}) {
      if (change) (decision ? c->tp : c->fn) += 1;
      else (decision ? c->fp : c->tn) += 1;
    }
  }
  auto ratio = [](std::size_t a, std::size_t b) { return b ? fmt(double(a) / double(b), 17) : std::string(); };
  auto os = open_out(dir / "report" / "detection_summary.csv");
  csv_row(os, "transition", "n", "tp", "fp", "tn", "fn", "precision", "recall", "false_alarm_rate", "config_hash");
  text << "change detection\n";
  auto emit = [&](const std::string &name, const Counts &c) {
    const auto p = ratio(c.tp, c.tp + c.fp), rc = ratio(c.tp, c.tp + c.fn), fa = ratio(c.fp, c.fp + c.tn);
    csv_row(os, name, c.tp + c.fp + c.tn + c.fn, c.tp, c.fp, c.tn, c.fn, p, rc, fa, hash);
    text << "  " << std::left << std::setw(8) << name << " precision " << (p.empty() ? "n/a" : fmt(std::stod(p)))
         << "  recall " << (rc.empty() ? "n/a" : fmt(std::stod(rc))) << "  false alarms "
         << (fa.empty() ? "n/a" : fmt(std::stod(fa))) << '\n';
  };
  for (const auto &[k, c] : by) emit(std::to_string(k) + "->" + std::to_string(k + 1), c);
  emit("all", all);
}

inline void report_rl(const fs::path &dir, const std::string &hash, std::size_t window, std::ostringstream &text) {
  auto t = read_csv(dir / "rl_final.csv");
  // (strategy, task) -> seed -> final mean
  std::map<std::pair<std::string, std::string>, std::map<std::uint64_t, double>> finals;
  std::map<std::pair<std::string, std::string>, std::vector<std::string>> curves;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    std::pair key{t.str(r, "strategy"), t.str(r, "task")};
    finals[key][std::stoull(t.str(r, "seed"))] = t.num(r, "mean");
    if (!t.str(r, "curve").empty()) curves[key].push_back(t.str(r, "curve"));
  }
  auto values = [](const std::map<std::uint64_t, double> &m) {
    std::vector<double> v;
    for (auto &[_, x] : m) v.push_back(x);
    return v;
  };
  auto os = open_out(dir / "report" / "rl_summary.csv");
  csv_row(os, "strategy", "task", "n", "mean", "stderr", "welch_t_vs_fine_tune", "welch_p_vs_fine_tune", "significant",
          "config_hash");
  text << "final RL reward (mean over seeds; * = Welch p < 0.05 vs fine_tune)\n";
  for (const auto &[key, per_seed] : finals) {
    const auto s = summarize(values(per_seed));
    std::optional<detector::WelchResult> w;
    auto ft = finals.find({"fine_tune", key.second});
    if (key.first != "fine_tune" && ft != finals.end()) w = welch_compare(values(per_seed), values(ft->second));
    const bool sig = w && w->p < kSignificanceAlpha;
    csv_row(os, key.first, key.second, s.n, s.mean, s.stderr_, w ? fmt(w->t, 17) : "", w ? fmt(w->p, 17) : "",
            w ? (sig ? "1" : "0") : "", hash);
    text << "  " << std::left << std::setw(12) << key.first << ' ' << std::setw(12) << key.second << ' ' << fmt(s.mean)
         << " +- " << fmt(s.stderr_, 2) << (sig ? " *" : "") << '\n';
  }

  for (const auto &[key, files] : curves) {
    std::vector<std::vector<double>> raws;
    std::vector<double> steps;
    for (const auto &f : files) {
      auto c = read_csv(dir / f);
      std::vector<double> raw;
      for (std::size_t r = 0; r < c.rows.size(); ++r) raw.push_back(c.num(r, "raw_mean_reward"));
      if (steps.empty())
        for (std::size_t r = 0; r < c.rows.size(); ++r) steps.push_back(c.num(r, "timestep"));
      raws.push_back(std::move(raw));
    }
    std::size_t len = steps.size();
    for (const auto &r : raws) len = std::min(len, r.size());
    std::vector<double> mean(len), se(len);
    for (std::size_t i = 0; i < len; ++i) {
      std::vector<double> col;
      for (const auto &r : raws) col.push_back(r[i]);
      auto s = summarize(col);
      mean[i] = s.mean;
      se[i] = s.stderr_;
    }
    auto norm = smoothed_normalized(mean, window);
    auto cos = open_out(dir / "report" / "curves" / (key.first + "__" + key.second + ".csv"));
    csv_row(cos, "timestep", "mean_raw_reward", "stderr_raw_reward", "smoothed_normalized");
    for (std::size_t i = 0; i < len; ++i) csv_row(cos, static_cast<std::uint64_t>(steps[i]), mean[i], se[i], norm[i]);
  }
}

} // namespace detail

// Aggregates the raw per-seed files of a bundle into report/*.csv and a text summary.
inline ReportResult cmd_report(const fs::path &dir) {
  if (!fs::exists(dir / "config.json")) throw std::runtime_error("no bundle at " + dir.string() + " (config.json missing)");
  nlohmann::json cfg;
  std::ifstream(dir / "config.json") >> cfg;
  const std::string hash = cfg.at("config_hash");
  const std::string exp = cfg.at("experiment");
  const bool rl_on = cfg.at("rl").at("enabled");

  std::vector<std::pair<std::string, std::string>> expected; // file, stage
  if (exp == "exp1" || exp == "exp2") {
    expected = {{"recon.csv", "lifecycles"}, {"detection.csv", "detection"}};
    if (rl_on) expected.emplace_back("rl_final.csv", "rl");
  } else if (exp == "detect-bench") {
    expected = {{"detection.csv", "detection"}};
  } else if (exp == "train-vae") {
    expected = {{"model.json", "train"}};
  } else if (exp == "train-rl") {
    expected = {{"rl_final.csv", "rl"}};
  }

  ReportResult res;
  std::ostringstream text;
  text << exp << " [" << hash << "] " << dir.string() << '\n';
  for (const auto &[file, stage] : expected) {
    if (!fs::exists(dir / file)) {
      res.missing.push_back(file + " (stage " + stage + ")");
      continue;
    }
    if (file == "recon.csv") detail::report_recon(dir, hash, text);
    if (file == "detection.csv") detail::report_detection(dir, hash, text);
    if (file == "rl_final.csv") detail::report_rl(dir, hash, cfg.at("rl").at("smoothing_window"), text);
  }
  for (const auto &m : res.missing) text << "absent: " << m << '\n';
  res.text = text.str();
  auto os = detail::open_out(dir / "report" / "summary.txt");
  os << res.text;
  return res;
}

} // namespace strigger::harness
