// Command-line driver for the continual state-representation experiments.
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "strigger/harness/experiments.hpp"

using namespace strigger::harness;

namespace {

struct Flags {
  std::string config;
  std::string scale;
  std::string seeds;
  std::string out;
  std::size_t workers = 0;
  bool force_trigger = false;
  std::string env;
  std::string checkpoint;
};

void add_common(CLI::App *cmd, Flags &f) {
  cmd->add_option("--config", f.config, "JSON config; fields not given come from the scale preset")
      ->check(CLI::ExistingFile);
  cmd->add_option("--scale", f.scale, "budget preset")->check(CLI::IsMember({"desk", "paper"}));
  cmd->add_option("--seeds", f.seeds, "seed list, e.g. 1,2,3 or 1-5");
  cmd->add_option("--out", f.out, "output directory");
  cmd->add_option("--workers", f.workers, "concurrent runs")->check(CLI::PositiveNumber);
  cmd->add_flag("--force-trigger", f.force_trigger, "retrain on every environment even without a detected change");
}

ExperimentConfig resolve(const std::string &experiment, const Flags &f) {
  std::optional<Scale> scale;
  if (!f.scale.empty()) scale = scale_from_string(f.scale);
  auto cfg = f.config.empty() ? config_from_json(nlohmann::json::object(), scale, experiment)
                              : load_config(f.config, scale, experiment);
  if (!f.seeds.empty()) cfg.seeds = parse_seeds(f.seeds);
  cfg.out = f.out.empty() ? fs::path("runs") / experiment : fs::path(f.out);
  if (f.workers) cfg.workers = f.workers;
  if (f.force_trigger) cfg.lifecycle.force_trigger = true;
  if (!f.env.empty()) cfg.env = f.env;
  if (!f.checkpoint.empty()) cfg.checkpoint = f.checkpoint;
  validate(cfg);
  return cfg;
}

int finish(const RunResult &r) {
  std::cout << r.report.text;
  for (const auto &s : r.stages)
    if (s.status == "failed") std::cerr << "stage " << s.name << " failed: " << s.error << '\n';
  return r.partial ? 2 : 0;
}

} // namespace

int main(int argc, char **argv) {
  CLI::App app{"Self-triggered generative replay for continual state-representation learning"};
  app.require_subcommand(1);

  Flags f;
  auto *exp1 = app.add_subcommand("exp1", "two rooms that differ in edible colours");
  auto *exp2 = app.add_subcommand("exp2", "sequences of procedurally generated mazes");
  auto *bench = app.add_subcommand("detect-bench", "labeled change/no-change transitions over maze sequences");
  auto *tvae = app.add_subcommand("train-vae", "train one VAE on one environment");
  auto *trl = app.add_subcommand("train-rl", "train PPO on one environment");
  for (auto *c : {exp1, exp2, bench, tvae, trl}) add_common(c, f);
  for (auto *c : {tvae, trl}) c->add_option("--env", f.env, "exp1:<0|1> or maze:<sequence>:<0..2>");
  trl->add_option("--checkpoint", f.checkpoint, "VAE model.json for features (raw pixels if omitted)");

  std::string bundle;
  auto *report = app.add_subcommand("report", "aggregate a finished (or partial) run directory");
  report->add_option("bundle", bundle, "run directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*exp1) return finish(cmd_exp1(resolve("exp1", f)));
    if (*exp2) return finish(cmd_exp2(resolve("exp2", f)));
    if (*bench) return finish(cmd_detect_bench(resolve("detect-bench", f)));
    if (*tvae) return finish(cmd_train_vae(resolve("train-vae", f)));
    if (*trl) return finish(cmd_train_rl(resolve("train-rl", f)));
    if (*report) {
      auto r = cmd_report(bundle);
      std::cout << r.text;
      return r.complete() ? 0 : 1;
    }
  } catch (const ConfigError &e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 64;
  } catch (const std::exception &e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
