// Acceptance run: one PASS/FAIL line per criterion. Criterion 10 is the long RL
// comparison and only runs when asked for with --only.
#include <algorithm>
#include <chrono>
#include <cstdio>
#include <iostream>
#include <optional>
#include <random>
#include <set>
#include <sstream>

#include <CLI11.hpp>

#include "strigger/detector/student_t.hpp"
#include "strigger/harness/experiments.hpp"

#include "../oracles.hpp"

using namespace strigger;
using namespace strigger::harness;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string num(double x, int prec = 4) {
  std::ostringstream os;
  os.precision(prec);
  os << x;
  return os.str();
}

double median(std::vector<double> xs) { return summarize(std::move(xs)).median; }

fs::path g_out = "acceptance_out";

// Experiment 1 (s_trigger and fine_tune over env1 -> env2, 500 detection trials per
// direction) and the maze run (5 sequences) are shared by several criteria.
std::optional<CsvTable> g_exp1_recon, g_exp1_det;
std::optional<RunResult> g_exp2;

ExperimentConfig exp1_config() {
  auto c = preset(Scale::desk, "exp1");
  c.seeds = {1};
  c.strategies = {Strategy::s_trigger, Strategy::fine_tune};
  c.rl.enabled = false;
  c.out = g_out / "exp1";
  return c;
}

void ensure_exp1() {
  if (g_exp1_recon) return;
  auto r = cmd_exp1(exp1_config());
  if (r.partial) throw std::runtime_error("exp1 run partial:\n" + r.report.text);
  g_exp1_recon = read_csv(g_out / "exp1" / "recon.csv");
  g_exp1_det = read_csv(g_out / "exp1" / "detection.csv");
}

ExperimentConfig exp2_config() {
  auto c = preset(Scale::desk, "exp2");
  c.seeds = {1};
  c.strategies = {Strategy::s_trigger, Strategy::fine_tune};
  c.rl.enabled = false;
  c.out = g_out / "exp2";
  return c;
}

void ensure_exp2() {
  if (g_exp2) return;
  g_exp2 = cmd_exp2(exp2_config());
  if (g_exp2->partial) throw std::runtime_error("exp2 run partial:\n" + g_exp2->report.text);
}

double mse_of(const CsvTable &t, const std::string &strategy, int sequence, int env) {
  for (std::size_t r = 0; r < t.rows.size(); ++r)
    if (t.str(r, "strategy") == strategy && std::stoi(t.str(r, "sequence")) == sequence &&
        std::stoi(t.str(r, "env_index")) == env)
      return t.num(r, "mse");
  throw std::runtime_error("no recon row for " + strategy);
}

struct Rates {
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
  double precision() const { return tp + fp ? double(tp) / double(tp + fp) : 0.0; }
  double recall() const { return tp + fn ? double(tp) / double(tp + fn) : 0.0; }
  double false_alarm() const { return fp + tn ? double(fp) / double(fp + tn) : 1.0; }
};

Rates rates(const CsvTable &t) {
  Rates r;
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    const bool change = t.str(i, "is_change") == "1", d = t.str(i, "decision") == "1";
    if (change) (d ? r.tp : r.fn) += 1;
    else (d ? r.fp : r.tn) += 1;
  }
  return r;
}

// 1. Analytic gradients of random networks against central differences.
Outcome gradients() {
  std::mt19937_64 rng(101);
  std::uniform_int_distribution<int> depth(1, 3), width(1, 8), act(0, 2), rows(1, 5);
  std::normal_distribution<double> g;
  const nn::Activation acts[] = {nn::Activation::tanh, nn::Activation::sigmoid, nn::Activation::identity};
  double worst = 0.0;
  for (int k = 0; k < 100; ++k) {
    std::vector<std::size_t> sizes{static_cast<std::size_t>(width(rng))};
    std::vector<nn::Activation> a;
    for (int l = depth(rng); l > 0; --l) {
      sizes.push_back(static_cast<std::size_t>(width(rng)));
      a.push_back(acts[act(rng)]);
    }
    nn::Mlp net(sizes, a, rng());
    const auto n = static_cast<std::size_t>(rows(rng));
    std::vector<double> xv(n * sizes.front()), yv(n * sizes.back());
    for (auto &v : xv) v = g(rng);
    for (auto &v : yv) v = g(rng);
    nn::Tensor x({n, sizes.front()}, xv), y({n, sizes.back()}, yv);
    auto loss = [&] { return nn::mean(nn::square(net.forward(x) - y)); };
    worst = std::max(worst, oracle::max_fd_relative_error(net.parameters(), loss, 1e-5));
  }
  return {worst <= 1e-4, "100 nets, max relative error " + num(worst, 3) + " (<= 1e-4)"};
}

// 2. Student-t CDF against adaptive quadrature, plus the Cauchy closed form.
Outcome student_cdf() {
  double worst = 0.0;
  for (double nu : {1.0, 2.0, 6.0, 30.0, 120.0})
    for (int i = -40; i <= 40; ++i) {
      const double t = 0.25 * i;
      worst = std::max(worst, std::abs(detector::student_cdf(t, nu) - oracle::student_cdf_quadrature(t, nu)));
    }
  const double cauchy = std::abs(detector::student_cdf(1.0, 1.0) - 0.75);
  return {worst <= 1e-8 && cauchy <= 1e-12,
          "max |cdf - quadrature| " + num(worst, 3) + " (<= 1e-8), |CDF(1,1) - 0.75| " + num(cauchy, 3) + " (<= 1e-12)"};
}

// 3. Rejection rate of Welch's test on same-distribution samples.
Outcome welch_calibration() {
  std::mt19937_64 rng(303);
  std::normal_distribution<double> g(0.05, 0.01);
  const int trials = 10000;
  int rejected = 0;
  for (int k = 0; k < trials; ++k) {
    std::vector<double> a(128), b(128);
    for (auto &v : a) v = g(rng);
    for (auto &v : b) v = g(rng);
    rejected += detector::welch_t(detector::ErrorSample(a), detector::ErrorSample(b)).p < 0.01;
  }
  const double rate = double(rejected) / trials;
  return {rate >= 0.005 && rate <= 0.02, "rejection rate " + num(rate) + " over 1e4 trials (in [0.005, 0.02])"};
}

// 4. Experiment-1 detection: 500 changed and 500 unchanged trials.
Outcome exp1_detection() {
  ensure_exp1();
  auto r = rates(*g_exp1_det);
  const double detect = r.recall(), fa = r.false_alarm();
  return {detect >= 0.99 && fa <= 0.02 && r.tp + r.fn == 500 && r.fp + r.tn == 500,
          "detect rate " + num(detect) + " (>= 0.99), false-alarm rate " + num(fa) + " (<= 0.02), " +
              std::to_string(r.tp + r.fn) + "+" + std::to_string(r.fp + r.tn) + " trials"};
}

// 5. Maze sequences: 5 x 100 labeled transitions.
Outcome maze_detection() {
  ensure_exp2();
  auto t = read_csv(g_out / "exp2" / "detection.csv");
  auto r = rates(t);
  return {r.precision() >= 0.95 && r.recall() >= 0.95 && t.rows.size() == 500,
          "precision " + num(r.precision()) + ", recall " + num(r.recall()) + " (both >= 0.95) over " +
              std::to_string(t.rows.size()) + " transitions"};
}

// 6. Forgetting in Experiment 1.
Outcome exp1_forgetting() {
  ensure_exp1();
  const auto &t = *g_exp1_recon;
  const double ft1 = mse_of(t, "fine_tune", 0, 0), st1 = mse_of(t, "s_trigger", 0, 0);
  const double ft2 = mse_of(t, "fine_tune", 0, 1), st2 = mse_of(t, "s_trigger", 0, 1);
  const double ratio = ft1 / st1, spread = std::max(ft2, st2) / std::min(ft2, st2);
  return {ratio >= 3.0 && spread <= 2.0, "env1 fine_tune/s_trigger " + num(ratio, 3) + " (>= 3), env2 spread " +
                                             num(spread, 3) + "x (<= 2); env1 " + num(ft1, 3) + " vs " + num(st1, 3)};
}

// 7. Forgetting across maze sequences.
Outcome maze_forgetting() {
  ensure_exp2();
  auto t = read_csv(g_out / "exp2" / "recon.csv");
  const auto cfg = exp2_config();
  bool pass = true;
  std::string detail;
  for (int k = 0; k < 2; ++k) {
    std::vector<double> ratios, past_vs_current;
    for (int q = 0; q < static_cast<int>(cfg.maze_sequences); ++q) {
      ratios.push_back(mse_of(t, "fine_tune", q, k) / mse_of(t, "s_trigger", q, k));
      past_vs_current.push_back(mse_of(t, "s_trigger", q, k) / mse_of(t, "s_trigger", q, 2));
    }
    const double mr = median(ratios), mp = median(past_vs_current);
    pass = pass && mr >= 3.0 && mp <= 10.0;
    detail += (k ? "; " : "") + std::string("maze ") + std::to_string(k + 1) + ": median ratio " + num(mr, 3) +
              " (>= 3), s_trigger past/current " + num(mp, 3) + " (<= 10)";
  }
  return {pass, detail};
}

// 8. Bounded memory: one checkpoint and one reference on disk, no real past states.
Outcome bounded_size() {
  auto dir = g_out / "bounded";
  fs::remove_all(dir);
  auto L = lifecycle_for(preset(Scale::desk, "exp2"), 8);
  L.m = 300;
  L.eval_states = 0;
  L.schedule.max_epochs = 10;
  L.persist_dir = dir / "state";
  std::vector<std::vector<std::string>> listings;
  L.on_env = [&](int, const replay::ContinualState &) {
    std::vector<std::string> files;
    for (const auto &e : fs::directory_iterator(dir / "state")) files.push_back(e.path().filename().string());
    std::sort(files.begin(), files.end());
    listings.push_back(files);
  };
  auto res = replay::run_lifecycle(envsim::maze_sequence(8), Strategy::s_trigger, L);
  const std::vector<std::string> want{"model.json", "reference.json"};
  bool files_ok = listings.size() == 3;
  for (const auto &l : listings) files_ok = files_ok && l == want;
  std::size_t real_past = 0, foreign = 0, replayed = 0;
  for (const auto &e : res.log.envs) {
    replayed += e.composition.generated;
    real_past += e.composition.real_past;
    for (const auto &p : e.provenance_summary)
      if (p.contains("real") && p.at("real").get<int>() != e.index) ++foreign;
  }
  return {files_ok && real_past == 0 && foreign == 0 && replayed == 2 * L.m,
          "persisted {model.json, reference.json} after each of 3 environments: " + std::string(files_ok ? "yes" : "no") +
              "; real past states in s_trigger datasets: " + std::to_string(real_past + foreign) +
              "; generated states replayed: " + std::to_string(replayed)};
}

// 9. PPO on VAE features beats a random policy by 2x on Experiment-1 env 1, every seed.
Outcome rl_sanity() {
  auto cfg = preset(Scale::desk, "exp1");
  auto [w1, w2] = envsim::build_experiment1_pair(cfg.exp1_env_seed);
  auto L = lifecycle_for(cfg, 1);
  L.eval_states = 0;
  auto lc = replay::run_lifecycle({w1}, Strategy::s_trigger, L);
  auto features = rl::FeatureExtractor::from_vae(lc.state.model);
  bool pass = true;
  std::string detail;
  for (std::uint64_t seed : {1, 2, 3}) {
    auto ppo = run_rl_task({"s_trigger", "env1", 0, &w1, features, seed}, cfg);
    auto rnd = run_rl_task({"random", "env1", 0, &w1, std::nullopt, seed}, cfg);
    const bool ok = ppo.eval.mean >= 2.0 * rnd.eval.mean;
    pass = pass && ok;
    detail += (seed > 1 ? "; " : "") + std::string("seed ") + std::to_string(seed) + " " + num(ppo.eval.mean) +
              " vs random " + num(rnd.eval.mean) + (ok ? "" : " (below 2x)");
  }
  return {pass, detail};
}

// 10. Retention ordering on maze 1: RL with s_trigger features vs fine_tune features.
Outcome rl_retention() {
  ensure_exp2();
  const auto cfg = exp2_config();
  auto mazes = envsim::maze_sequence(cfg.maze_seed);
  std::map<std::string, rl::FeatureExtractor> features;
  for (auto s : {Strategy::s_trigger, Strategy::fine_tune}) {
    std::ifstream in(g_out / "exp2" / "models" / (replay::to_string(s) + "_seq0_seed1") / "model.json");
    nlohmann::json j;
    in >> j;
    features.emplace(replay::to_string(s), rl::FeatureExtractor::from_vae(vae::vae_from_json(j)));
  }
  std::vector<double> st, ft;
  for (std::uint64_t seed : {1, 2, 3}) {
    st.push_back(run_rl_task({"s_trigger", "maze1", 0, &mazes[0], features.at("s_trigger"), seed}, cfg).eval.mean);
    ft.push_back(run_rl_task({"fine_tune", "maze1", 0, &mazes[0], features.at("fine_tune"), seed}, cfg).eval.mean);
  }
  const double ms = summarize(st).mean, mf = summarize(ft).mean;
  auto w = welch_compare(st, ft);
  const double p = w ? one_sided_p(*w) : 1.0;
  const bool ratio_ok = mf > 0 ? ms >= 1.3 * mf : ms > mf;
  return {ratio_ok && p < 0.2, "s_trigger " + num(ms) + " vs fine_tune " + num(mf) + " (>= 1.3x), one-sided Welch p " +
                                   num(p, 3) + " (< 0.2)"};
}

// 11. Oracle equivalences: GAE, raycasts, KL.
Outcome oracles() {
  std::mt19937_64 rng(1111);
  std::normal_distribution<double> g;
  std::bernoulli_distribution start(0.15);
  double gae_worst = 0.0;
  for (std::size_t T = 1; T <= 50; ++T)
    for (int rep = 0; rep < 4; ++rep) {
      rl::RolloutBuffer b;
      for (std::size_t t = 0; t < T; ++t) b.add(std::vector<double>{g(rng)}, t % 3, g(rng), -1.0, g(rng), t == 0 || start(rng));
      b.last_value = g(rng);
      b.last_start = start(rng);
      rl::gae_advantages(b, 0.99, 0.95);
      auto want = oracle::gae_double_loop(b, 0.99, 0.95);
      for (std::size_t t = 0; t < T; ++t) gae_worst = std::max(gae_worst, std::abs(b.advantages[t] - want[t]));
    }

  const double step = 1e-3;
  std::uniform_real_distribution<double> pos(2, 18), size(0.2, 2.5), jitter(-0.4, 0.4);
  double ray_worst = 0.0;
  int rays = 0, false_miss = 0;
  for (int k = 0; k < 400; ++k) {
    envsim::Geometry geo;
    envsim::Vec2 c{pos(rng), pos(rng)};
    if (k % 2) geo = envsim::Circle{c, size(rng)};
    else geo = envsim::Rect{c, {c.x + size(rng), c.y + size(rng)}};
    envsim::Vec2 o{pos(rng), pos(rng)};
    if (envsim::disc_intersects(o, 0.0, geo)) continue;
    const double a = std::atan2(c.y - o.y, c.x - o.x) + jitter(rng);
    envsim::Vec2 d{std::cos(a), std::sin(a)};
    const double analytic = envsim::ray_hit(o, d, geo), marched = oracle::march(o, d, geo, step, 30.0);
    if (std::isinf(analytic) && !std::isinf(marched)) ++false_miss;
    if (std::isinf(analytic) || std::isinf(marched)) continue;
    ++rays;
    ray_worst = std::max(ray_worst, std::abs(analytic - marched));
  }

  double kl_worst = 0.0;
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int trial = 0; trial < 5; ++trial) {
    std::vector<double> mu(4), lv(4);
    for (std::size_t j = 0; j < 4; ++j) {
      mu[j] = 1.5 * u(rng);
      lv[j] = u(rng);
    }
    const double mc = oracle::kl_monte_carlo(mu, lv, 400000, rng);
    kl_worst = std::max(kl_worst, std::abs(vae::kl_divergence(mu, lv, 1) - mc) / mc);
  }
  return {gae_worst <= 1e-10 && ray_worst <= step && false_miss == 0 && rays > 100 && kl_worst <= 0.01,
          "GAE max diff " + num(gae_worst, 3) + " (<= 1e-10), raycast max diff " + num(ray_worst, 3) + " over " +
              std::to_string(rays) + " rays (<= one step " + num(step) + "), KL relative error " + num(kl_worst, 3) +
              " (<= 0.01)"};
}

struct Criterion {
  int id;
  std::string name;
  double budget_min;
  Outcome (*run)();
};

} // namespace

int main(int argc, char **argv) {
  CLI::App app{"Acceptance criteria"};
  std::string only;
  std::string out = g_out.string();
  app.add_option("--only", only, "comma-separated criterion numbers (10 runs only when listed)");
  app.add_option("--out", out, "scratch directory for experiment bundles");
  CLI11_PARSE(app, argc, argv);
  g_out = out;
  fs::create_directories(g_out);

  const std::vector<Criterion> all{
      {1, "gradient correctness", 1, gradients},
      {2, "student-t cdf", 1, student_cdf},
      {3, "welch calibration", 2, welch_calibration},
      {4, "detection, experiment 1", 10, exp1_detection},
      {5, "detection, maze sequences", 30, maze_detection},
      {6, "forgetting, experiment 1", 20, exp1_forgetting},
      {7, "forgetting, mazes", 40, maze_forgetting},
      {8, "bounded-size audit", 1, bounded_size},
      {9, "rl sanity", 60, rl_sanity},
      {10, "rl retention ordering (extended)", 240, rl_retention},
      {11, "oracle equivalences", 5, oracles},
  };
  std::set<int> chosen;
  if (only.empty()) {
    for (const auto &c : all)
      if (c.id != 10) chosen.insert(c.id);
  } else {
    try {
      for (auto s : parse_seeds(only)) chosen.insert(static_cast<int>(s));
    } catch (const std::exception &e) {
      std::cerr << "bad --only: " << e.what() << '\n';
      return 64;
    }
  }

  int failures = 0;
  nlohmann::json results = nlohmann::json::array();
  for (const auto &c : all) {
    if (!chosen.count(c.id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception &e) {
      o = {false, std::string("error: ") + e.what()};
    }
    const double minutes = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() / 60.0;
    const bool in_time = minutes < c.budget_min;
    const bool pass = o.pass && in_time;
    failures += !pass;
    std::cout << (pass ? "PASS" : "FAIL") << " [" << c.id << "] " << c.name << ": " << o.detail << "; "
              << num(minutes, 3) << " min (< " << c.budget_min << ")" << (in_time ? "" : " OVER BUDGET") << std::endl;
    results.push_back({{"id", c.id}, {"name", c.name}, {"pass", pass}, {"detail", o.detail}, {"minutes", minutes}});
  }
  std::ofstream(g_out / "results.json") << results.dump(2) << '\n';
  return failures ? 1 : 0;
}
