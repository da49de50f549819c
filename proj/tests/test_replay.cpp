#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iterator>

#include <gtest/gtest.h>

#include "strigger/envsim/builders.hpp"
#include "strigger/replay/lifecycle.hpp"

using namespace strigger;
using namespace strigger::replay;

namespace {

LifecycleConfig quick_config(std::uint64_t seed = 1) {
  LifecycleConfig cfg;
  cfg.m = 300;
  cfg.eval_states = 100;
  cfg.schedule.max_epochs = 6;
  cfg.seed = seed;
  return cfg;
}

std::vector<WorldSpec> three_mazes() {
  return envsim::maze_sequence(3);
}

TaggedDataset some_real(std::size_t n, int env) {
  auto [w1, w2] = envsim::build_experiment1_pair(2);
  TaggedDataset d;
  d.append(envsim::collect_random_states(w1, n, 4), Provenance::real(env));
  return d;
}

} // namespace

TEST(Assemble, ZeroReplayIsShuffledInput) {
  vae::VaeModel m{vae::VaeConfig{}};
  auto fresh = some_real(50, 1);
  auto d = assemble_replay_dataset(m, fresh, 0, 3);
  ASSERT_EQ(d.size(), 50u);
  auto a = fresh.states, b = d.states;
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  EXPECT_EQ(a, b);
  EXPECT_EQ(d.count_real(), 50u);
}

TEST(Assemble, SizeAndGeneratedFraction) {
  vae::VaeModel m{vae::VaeConfig{}};
  auto fresh = some_real(40, 1);
  for (std::size_t n : {1u, 40u, 120u}) {
    auto d = assemble_replay_dataset(m, fresh, n, 5, "ckpt");
    ASSERT_EQ(d.size(), 40 + n);
    EXPECT_EQ(d.size() - d.count_real(), n);
    for (const auto &t : d.tags) {
      if (t.generated) {
        EXPECT_EQ(t.checkpoint, "ckpt");
      }
    }
  }
}

TEST(Assemble, DeterministicUnderSeed) {
  vae::VaeModel m{vae::VaeConfig{}};
  auto fresh = some_real(30, 1);
  EXPECT_EQ(assemble_replay_dataset(m, fresh, 30, 8).states, assemble_replay_dataset(m, fresh, 30, 8).states);
}

TEST(Lifecycle, SingleEnvironmentTrainsOnceWithoutDetection) {
  auto [w1, w2] = envsim::build_experiment1_pair(3);
  auto r = run_lifecycle({w1}, Strategy::s_trigger, quick_config());
  ASSERT_EQ(r.log.envs.size(), 1u);
  EXPECT_FALSE(r.log.envs[0].detection.has_value());
  EXPECT_TRUE(r.log.envs[0].retrained);
  EXPECT_EQ(r.log.envs[0].composition.collected, 300u);
  EXPECT_EQ(r.log.envs[0].composition.generated, 0u);
  EXPECT_EQ(r.state.envs_seen, 1);
  EXPECT_EQ(r.state.reference.size(), 128u);
  EXPECT_THROW(run_lifecycle({}, Strategy::s_trigger), std::invalid_argument);
}

TEST(Lifecycle, ZeroReplayMatchesFineTuneComposition) {
  auto envs = three_mazes();
  auto cfg = quick_config();
  cfg.n = 0;
  auto st = run_lifecycle(envs, Strategy::s_trigger, cfg);
  auto ft = run_lifecycle(envs, Strategy::fine_tune, cfg);
  for (std::size_t k = 0; k < envs.size(); ++k) {
    EXPECT_EQ(st.log.envs[k].composition.collected, ft.log.envs[k].composition.collected);
    EXPECT_EQ(st.log.envs[k].composition.generated, ft.log.envs[k].composition.generated);
    EXPECT_EQ(st.log.envs[k].composition.real_past, 0u);
  }
}

TEST(Lifecycle, StrategyCompositions) {
  auto envs = three_mazes();
  auto cfg = quick_config(2);
  auto st = run_lifecycle(envs, Strategy::s_trigger, cfg);
  auto ub = run_lifecycle(envs, Strategy::upperbound, cfg);
  auto so = run_lifecycle(envs, Strategy::source_only, cfg);
  for (int k = 1; k < 3; ++k) {
    ASSERT_TRUE(st.log.envs[k].detected) << k;
    EXPECT_EQ(st.log.envs[k].composition.generated, 300u);
    EXPECT_EQ(ub.log.envs[k].composition.generated, 0u);
    EXPECT_EQ(ub.log.envs[k].composition.real_past, 300u * k);
    EXPECT_FALSE(so.log.envs[k].retrained);
    EXPECT_FALSE(so.log.envs[k].training.has_value());
  }
  EXPECT_EQ(so.state.checkpoint_id, "env0-source_only");
}

TEST(LifecycleProperty, BoundedMemoryAndNoPastRealData) {
  auto dir = std::filesystem::temp_directory_path() / "strigger_bounded_audit";
  std::filesystem::remove_all(dir);
  auto cfg = quick_config(4);
  cfg.persist_dir = dir;
  auto r = run_lifecycle(three_mazes(), Strategy::s_trigger, cfg);
  std::vector<std::string> files;
  for (const auto &e : std::filesystem::directory_iterator(dir)) files.push_back(e.path().filename().string());
  std::sort(files.begin(), files.end());
  EXPECT_EQ(files, (std::vector<std::string>{"model.json", "reference.json"}));
  for (const auto &env : r.log.envs) {
    EXPECT_EQ(env.composition.real_past, 0u);
    for (const auto &p : env.provenance_summary) {
      if (p.contains("real")) {
        EXPECT_EQ(p.at("real").get<int>(), env.index);
      }
    }
  }
  std::filesystem::remove_all(dir);
}

TEST(Lifecycle, UnchangedEnvironmentIsAMissedDetection) {
  auto [w1, w2] = envsim::build_experiment1_pair(6);
  auto cfg = quick_config(5);
  cfg.monitor_budget = 3;
  auto r = run_lifecycle({w1, w1}, Strategy::s_trigger, cfg);
  EXPECT_FALSE(r.log.envs[1].detected);
  EXPECT_FALSE(r.log.envs[1].retrained);
  EXPECT_EQ(r.log.detection_failures, 1u);
  EXPECT_EQ(r.log.envs[1].batches_monitored, 3u);

  cfg.force_trigger = true;
  auto f = run_lifecycle({w1, w1}, Strategy::s_trigger, cfg);
  EXPECT_TRUE(f.log.envs[1].forced);
  EXPECT_TRUE(f.log.envs[1].retrained);
}

TEST(Lifecycle, LogSerializes) {
  auto [w1, w2] = envsim::build_experiment1_pair(3);
  auto r = run_lifecycle({w1, w2}, Strategy::s_trigger, quick_config());
  auto j = nlohmann::json::parse(to_json(r.log).dump());
  EXPECT_EQ(j.at("strategy"), "s_trigger");
  ASSERT_EQ(j.at("envs").size(), 2u);
  EXPECT_EQ(j.at("envs")[1].at("post_mse").size(), 2u);
  EXPECT_TRUE(j.at("envs")[1].contains("detection"));
  EXPECT_EQ(strategy_from_string("upperbound"), Strategy::upperbound);
  EXPECT_THROW(strategy_from_string("rehearsal"), std::invalid_argument);
}

TEST(LifecycleProperty, SourceOnlyCheckpointIsByteIdentical) {
  auto dir = std::filesystem::temp_directory_path() / "strigger_source_only";
  std::filesystem::remove_all(dir);
  auto cfg = quick_config(6);
  cfg.persist_dir = dir;
  cfg.eval_states = 0;
  std::vector<std::string> snapshots;
  cfg.on_env = [&](int, const ContinualState &) {
    std::ifstream in(dir / "model.json");
    snapshots.emplace_back(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  };
  run_lifecycle(three_mazes(), Strategy::source_only, cfg);
  ASSERT_EQ(snapshots.size(), 3u);
  EXPECT_FALSE(snapshots[0].empty());
  EXPECT_EQ(snapshots[0], snapshots[1]);
  EXPECT_EQ(snapshots[0], snapshots[2]);
  std::filesystem::remove_all(dir);
}
