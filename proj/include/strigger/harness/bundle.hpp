#pragma once

#include <atomic>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "strigger/harness/config.hpp"

namespace strigger::harness {

namespace fs = std::filesystem;

struct StageRecord {
  std::string name;
  std::string status; // ok, failed, skipped
  std::string error;
};

// An output directory plus a record of which pipeline stages completed. A failing stage
// marks the bundle partial and every later stage is skipped.
class Bundle {
public:
  Bundle(fs::path dir, const ExperimentConfig &cfg) : dir_(std::move(dir)), hash_(config_hash(cfg)) {
    experiment_ = cfg.experiment;
    fs::create_directories(dir_);
    auto j = to_json(cfg);
    j["config_hash"] = hash_;
    std::ofstream(dir_ / "config.json") << j.dump(2) << '\n';
    write_status();
  }

  const fs::path &dir() const { return dir_; }
  const std::string &hash() const { return hash_; }
  bool partial() const { return partial_; }
  const std::vector<StageRecord> &stages() const { return stages_; }

  bool stage(const std::string &name, const std::function<void()> &body) {
    if (partial_) {
      stages_.push_back({name, "skipped", {}});
      write_status();
      return false;
    }
    try {
      body();
      stages_.push_back({name, "ok", {}});
    } catch (const std::exception &e) {
      stages_.push_back({name, "failed", e.what()});
      partial_ = true;
    }
    write_status();
    return !partial_;
  }

  std::ofstream open(const fs::path &rel) const {
    auto p = dir_ / rel;
    fs::create_directories(p.parent_path());
    std::ofstream os(p);
    if (!os) throw std::runtime_error("cannot write " + p.string());
    os.precision(17);
    return os;
  }

private:
  void write_status() const {
    nlohmann::json st = nlohmann::json::array();
    for (const auto &s : stages_) {
      nlohmann::json r{{"name", s.name}, {"status", s.status}};
      if (!s.error.empty()) r["error"] = s.error;
      st.push_back(r);
    }
    std::ofstream(dir_ / "status.json")
        << nlohmann::json{{"experiment", experiment_}, {"config_hash", hash_}, {"partial", partial_}, {"stages", st}}
               .dump(2)
        << '\n';
  }

  fs::path dir_;
  std::string hash_;
  std::string experiment_;
  bool partial_ = false;
  std::vector<StageRecord> stages_;
};

// Runs fn(0..n-1) on up to `workers` threads. Results must go to per-index slots; the
// first failure (by index) is rethrown after all workers stop.
inline void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)> &fn) {
  if (workers <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(n);
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < std::min(workers, n); ++w)
    pool.emplace_back([&] {
      for (std::size_t i; (i = next.fetch_add(1)) < n;) {
        try {
          fn(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  for (auto &t : pool) t.join();
  for (auto &e : errors)
    if (e) std::rethrow_exception(e);
}

// Comma-separated table as written by this harness (no quoting needed: fields never
// contain commas).
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t col(const std::string &name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return i;
    throw std::runtime_error("csv: no column '" + name + "'");
  }
  double num(std::size_t row, const std::string &name) const { return std::stod(rows[row][col(name)]); }
  const std::string &str(std::size_t row, const std::string &name) const { return rows[row][col(name)]; }
};

inline std::vector<std::string> split_csv_line(const std::string &line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string f;
  while (std::getline(ss, f, ',')) out.push_back(f);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline CsvTable read_csv(const fs::path &p) {
  std::ifstream in(p);
  if (!in) throw std::runtime_error("cannot read " + p.string());
  CsvTable t;
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error(p.string() + " is empty");
  t.header = split_csv_line(line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto row = split_csv_line(line);
    if (row.size() != t.header.size()) throw std::runtime_error(p.string() + ": ragged row");
    t.rows.push_back(std::move(row));
  }
  return t;
}

template <class... Ts>
void csv_row(std::ostream &os, const Ts &...xs) {
  bool first = true;
  ((os << (first ? "" : ",") << xs, first = false), ...);
  os << '\n';
}

} // namespace strigger::harness
