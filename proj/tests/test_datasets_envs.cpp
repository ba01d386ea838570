#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>

#include "support.hpp"
#include "tracer/env/batch.hpp"
#include "tracer/env/collect.hpp"
#include "tracer/eval/evaluate.hpp"

using namespace tracer;
using namespace tracer::env;

namespace {

std::string read_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_bytes(const std::filesystem::path& p, const std::string& s) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out << s;
}

Transitions column(std::vector<float> values) {
  Transitions t;
  t.state_dim = 1;
  t.action_dim = 1;
  for (float v : values) t.push({v}, {0.0}, 0.0, {v}, false);
  return t;
}

template <typename T>
concept ReadsLabels = requires(const T& v) { v.labels(); } || requires(const T& v) { v.has_labels(); };

}  // namespace

TEST(PointMass, ZeroActionAtRestIsAFixedPoint) {
  Environment e(EnvId::point_mass);
  const State s{0.25, -0.5, 0.0, 0.0};
  const StepResult r = e.step(s, {0.0, 0.0});
  EXPECT_EQ(r.next_state, s);
  EXPECT_FALSE(r.done);
}

TEST(PointMass, RewardIsZeroAtGoalWithoutAction) {
  Environment e(EnvId::point_mass);
  EXPECT_EQ(e.step({0.8, 0.8, 0.0, 0.0}, {0.0, 0.0}).reward, 0.0);
}

TEST(PointMass, DynamicsAndRewardMatchHandComputation) {
  Environment e(EnvId::point_mass);
  const StepResult r = e.step({0.0, 0.0, 1.0, -2.0}, {0.5, 2.0});  // ay clipped to 1
  EXPECT_NEAR(r.next_state[0], 0.05, 1e-15);
  EXPECT_NEAR(r.next_state[1], -0.1, 1e-15);
  EXPECT_NEAR(r.next_state[2], 1.0 + 0.05 * (0.5 - 0.1), 1e-15);
  EXPECT_NEAR(r.next_state[3], -2.0 + 0.05 * (1.0 + 0.2), 1e-15);
  EXPECT_NEAR(r.reward, -std::sqrt(2 * 0.64) - 0.01 * (0.25 + 1.0), 1e-15);
}

TEST(PointMass, ResetIsSeedDeterministic) {
  Environment a(EnvId::point_mass), b(EnvId::point_mass);
  EXPECT_EQ(a.reset(17), b.reset(17));
  EXPECT_NE(a.reset(17), a.reset(18));
}

TEST(GaussianBandit, RewardMomentsAtBestAction) {
  Environment e(EnvId::gaussian_bandit);
  const int n = 100000;
  double sum = 0.0, sum2 = 0.0;
  for (int i = 0; i < n; ++i) {
    const State s = e.reset(static_cast<std::uint64_t>(i));
    const double r = e.step(s, {0.3}).reward;
    sum += r;
    sum2 += r * r;
  }
  const double mean = sum / n;
  const double sd = std::sqrt(sum2 / n - mean * mean);
  EXPECT_LT(std::abs(mean), 3.0 * 0.5 / std::sqrt(n));
  EXPECT_LT(std::abs(sd - 0.5) / 0.5, 0.02);
}

TEST(CollectDataset, ExactCountAndActionBounds) {
  for (EnvId id : {EnvId::point_mass, EnvId::gaussian_bandit}) {
    const Dataset ds = collect_dataset(id, {}, 1000, 3);
    ASSERT_EQ(ds.size(), 1000u);
    for (float a : ds.transitions().actions) {
      EXPECT_GE(a, -1.0f);
      EXPECT_LE(a, 1.0f);
    }
    EXPECT_FALSE(ds.has_labels());
  }
}

TEST(CollectDataset, NoiselessPdBeatsUniformNoise) {
  const eval::PolicyFn pd = [](const State& s) { return pd_action(s); };
  nn::Rng rng = nn::make_rng(5);
  const eval::PolicyFn noise = [&](const State&) {
    return Action{nn::uniform(rng, -1.0, 1.0), nn::uniform(rng, -1.0, 1.0)};
  };
  EXPECT_GT(eval::mean_return(EnvId::point_mass, pd, 200, 1), eval::mean_return(EnvId::point_mass, noise, 200, 1));
}

TEST(CollectDataset, SameSeedGivesByteIdenticalFiles) {
  const auto dir = tracer::testing::scratch_dir("collect_bytes");
  save_dataset(collect_dataset(EnvId::point_mass, {}, 2500, 99), dir / "a");
  save_dataset(collect_dataset(EnvId::point_mass, {}, 2500, 99), dir / "b");
  save_dataset(collect_dataset(EnvId::point_mass, {}, 2500, 100), dir / "c");
  EXPECT_EQ(read_bytes(dir / "a" / "data.bin"), read_bytes(dir / "b" / "data.bin"));
  EXPECT_EQ(read_bytes(dir / "a" / "meta.json"), read_bytes(dir / "b" / "meta.json"));
  EXPECT_NE(read_bytes(dir / "a" / "data.bin"), read_bytes(dir / "c" / "data.bin"));
}

TEST(ComputeStats, HandComputedColumns) {
  EXPECT_EQ(compute_stats(column({-1.0f, 1.0f})).state_std[0], 1.0);
  EXPECT_EQ(compute_stats(column({2.5f, 2.5f, 2.5f})).state_std[0], 0.0);
  EXPECT_THROW(compute_stats(column({1.0f})), ConfigError);
}

TEST(ComputeStats, InvariantUnderRowPermutation) {
  const Dataset ds = collect_dataset(EnvId::point_mass, {}, 500, 4);
  const Transitions& t = ds.transitions();
  std::mt19937_64 gen(8);
  for (int trial = 0; trial < 5; ++trial) {
    std::vector<std::size_t> order = all_indices(t.size());
    std::shuffle(order.begin(), order.end(), gen);
    Transitions p;
    p.state_dim = t.state_dim;
    p.action_dim = t.action_dim;
    for (std::size_t i : order) {
      p.push(State(t.state(i), t.state(i) + t.state_dim), Action(t.action(i), t.action(i) + t.action_dim),
             t.rewards[i], State(t.next_state(i), t.next_state(i) + t.state_dim), t.dones[i] != 0);
    }
    const DatasetStats a = compute_stats(t), b = compute_stats(p);
    for (std::size_t d = 0; d < a.state_std.size(); ++d) EXPECT_NEAR(a.state_std[d], b.state_std[d], 1e-12);
    for (std::size_t d = 0; d < a.action_std.size(); ++d) EXPECT_NEAR(a.action_std[d], b.action_std[d], 1e-12);
  }
}

TEST(DatasetFiles, RoundTripPreservesEveryLabelMask) {
  const auto dir = tracer::testing::scratch_dir("roundtrip");
  Dataset ds = collect_dataset(EnvId::point_mass, {}, 320, 6);
  std::vector<std::uint8_t> labels(ds.size());
  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = static_cast<std::uint8_t>(i % 16);
  ds.set_labels(labels);
  ds.set_corruption_spec({{"mode", "random"}, {"rate", 0.3}});
  save_dataset(ds, dir);
  const Dataset back = load_dataset(dir);
  EXPECT_TRUE(back == ds);
  EXPECT_EQ(back.labels(), labels);
  EXPECT_EQ(back.stats(), ds.stats());
}

TEST(DatasetFiles, CleanRoundTripHasNoLabels) {
  const auto dir = tracer::testing::scratch_dir("roundtrip_clean");
  const Dataset ds = collect_dataset(EnvId::gaussian_bandit, {}, 50, 6);
  save_dataset(ds, dir);
  const Dataset back = load_dataset(dir);
  EXPECT_TRUE(back == ds);
  EXPECT_FALSE(back.has_labels());
}

TEST(DatasetFiles, CorruptedHeaderByteIsAnError) {
  const auto dir = tracer::testing::scratch_dir("bad_header");
  save_dataset(collect_dataset(EnvId::point_mass, {}, 40, 1), dir);
  const std::string meta = read_bytes(dir / "meta.json");
  for (const std::string& needle : {std::string("{"), std::string("format_version"), std::string("\"env\""),
                                    std::string("\"point_mass\""), std::string("state_dim")}) {
    std::string bad = meta;
    const auto pos = bad.find(needle);
    ASSERT_NE(pos, std::string::npos);
    bad[pos + needle.size() / 2] ^= 0x5a;
    write_bytes(dir / "meta.json", bad);
    EXPECT_THROW(load_dataset(dir), FormatError) << needle;
  }
}

TEST(DatasetFiles, TruncatedBlobIsAnError) {
  const auto dir = tracer::testing::scratch_dir("truncated");
  save_dataset(collect_dataset(EnvId::point_mass, {}, 40, 1), dir);
  std::filesystem::resize_file(dir / "data.bin", std::filesystem::file_size(dir / "data.bin") - 4);
  try {
    load_dataset(dir);
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("truncated"), std::string::npos);
  }
}

TEST(TrainingView, ExposesNoLabelColumn) {
  static_assert(!ReadsLabels<TransitionView>);
  static_assert(ReadsLabels<Dataset>);
  Dataset ds = collect_dataset(EnvId::point_mass, {}, 10, 1);
  ds.set_labels(std::vector<std::uint8_t>(10, 4));
  const std::size_t reads = ds.label_reads();
  const TransitionView view = ds.training_view();
  const Batch b = gather(view, all_indices(view.size()));
  EXPECT_EQ(b.size(), 10);
  EXPECT_EQ(ds.label_reads(), reads);
}
