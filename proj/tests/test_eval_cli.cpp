#include <gtest/gtest.h>

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <numeric>
#include <random>

#include "support.hpp"
#include "tracer/tracer.hpp"

using namespace tracer;
using namespace tracer::eval;
using nn::Tensor;

namespace {

train::TrainConfig tiny_tracer(std::uint64_t seed) {
  train::TrainConfig c;
  c.quantiles = 8;
  c.next_quantiles = 6;
  c.ensemble = 2;
  c.hidden = 16;
  c.embed_dim = 16;
  c.tau_basis = 8;
  c.obs_hidden = 16;
  c.batch = 32;
  c.epochs = 1;
  c.updates_per_epoch = 1;
  c.seed = seed;
  return c;
}

void write_text(const fs::path& p, const std::string& s) {
  std::ofstream out(p);
  out << s;
}

std::string read_text(const fs::path& p) {
  std::ifstream in(p);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

// A run directory with only the files the report reads.
void synthetic_run(const fs::path& dir, const std::string& algorithm, const std::string& corruption,
                   std::optional<double> score, const std::vector<double>& entropies) {
  fs::create_directories(dir);
  write_text(dir / "config.txt", "algorithm = " + algorithm + "\n");
  std::string metrics = std::string(train::kMetricsHeader) + "\n";
  for (std::size_t e = 0; e < entropies.size(); ++e) {
    train::EpochMetrics m{static_cast<int>(e + 1), {}};
    m.mean.mean_entropy = entropies[e];
    metrics += train::format_metrics_row(m) + "\n";
  }
  write_text(dir / "metrics.csv", metrics);
  write_text(dir / "run_info.json", nlohmann::json{{"corruption", corruption}}.dump());
  if (score) write_text(dir / "eval.json", nlohmann::json{{"normalized_score", *score}}.dump());
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(TRACER_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST(NormalizedScore, ReferencePoliciesMapToZeroAndHundred) {
  for (EnvId id : {EnvId::point_mass, EnvId::gaussian_bandit}) {
    const ReferenceReturns ref = reference_returns(id);
    EXPECT_NEAR(normalized_score(ref.expert, ref), 100.0, 1e-12);
    EXPECT_NEAR(normalized_score(ref.random, ref), 0.0, 1e-12);
    EXPECT_NEAR(normalized_score(0.5 * (ref.expert + ref.random), ref), 50.0, 1e-9);
  }
}

TEST(ReferenceReturns, FrozenPointMassConstantsReproduce) {
  const ReferenceReturns ref = reference_returns(EnvId::point_mass);
  EXPECT_NEAR(measure_reference(EnvId::point_mass, ReferenceKind::expert, 100000, 20240901), ref.expert,
              1e-9 * std::abs(ref.expert));
  EXPECT_NEAR(measure_reference(EnvId::point_mass, ReferenceKind::random, 100000, 20240901), ref.random,
              1e-9 * std::abs(ref.random));
}

TEST(ReferenceReturns, BanditClosedFormAgreesWithMonteCarlo) {
  const ReferenceReturns ref = reference_returns(EnvId::gaussian_bandit);
  // reward noise sd 0.5 plus action spread: per-episode sd well below 1
  const int n = 100000;
  EXPECT_NEAR(measure_reference(EnvId::gaussian_bandit, ReferenceKind::expert, n, 3), ref.expert, 5.0 / std::sqrt(n));
  EXPECT_NEAR(measure_reference(EnvId::gaussian_bandit, ReferenceKind::random, n, 3), ref.random, 5.0 / std::sqrt(n));
}

TEST(SampleStderr, HandComputed) {
  EXPECT_NEAR(sample_stderr({1.0, 2.0, 3.0}), 1.0 / std::sqrt(3.0), 1e-15);
  EXPECT_EQ(sample_stderr({4.0}), 0.0);
  EXPECT_EQ(sample_stderr({}), 0.0);
}

TEST(EvaluatePolicy, DeterministicPerSeedScores) {
  const PolicyFn pd = [](const State& s) { return env::pd_action(s); };
  const EvalReport a = evaluate_policy(pd, EnvId::point_mass, 10, {1, 2, 3});
  const EvalReport b = evaluate_policy(pd, EnvId::point_mass, 10, {1, 2, 3});
  ASSERT_EQ(a.seed_scores.size(), 3u);
  EXPECT_EQ(a.seed_scores, b.seed_scores);
  EXPECT_GT(a.normalized_score, 80.0);
  EXPECT_EQ(to_json(a)["normalized_score"], a.normalized_score);
}

TEST(EvaluatePolicy, BehaviorClonedPolicyBeatsRandom) {
  const auto data = env::collect_dataset(EnvId::point_mass, env::BehaviorPolicy{env::BehaviorKind::pd, {}}, 5000, 4);
  const auto& tr = data.transitions();
  nn::Rng rng = nn::make_rng(5);
  policy::GaussianPolicy pi("pi", tr.state_dim, tr.action_dim, 32, 3, rng);
  auto params = pi.parameters();
  nn::Adam adam(params, {});
  nn::Rng batch_rng = nn::make_rng(6);
  for (int step = 0; step < 1000; ++step) {
    const env::Batch b = env::gather(tr, env::sample_indices(batch_rng, tr.size(), 128));
    nn::zero_grads(params);
    nn::Tape t;
    t.backward(policy::awr_loss(pi, t, b.states, b.actions, Tensor::Zero(b.size(), 1), 1.0));
    adam.step(params);
  }
  const PolicyFn bc = [&](const State& s) { return pi.act(s); };
  nn::Rng act_rng = nn::make_rng(7);
  const PolicyFn uniform = [&](const State&) {
    return Action{nn::uniform(act_rng, -1.0, 1.0), nn::uniform(act_rng, -1.0, 1.0)};
  };
  const double bc_score = evaluate_policy(bc, EnvId::point_mass, 20, {1, 2}).normalized_score;
  const double random_score = evaluate_policy(uniform, EnvId::point_mass, 20, {1, 2}).normalized_score;
  EXPECT_GT(bc_score, random_score + 30.0);
}

class ProbeTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    const auto clean = env::collect_dataset(EnvId::point_mass, env::BehaviorPolicy{}, 3000, 8);
    corruption::CorruptionSpec spec;
    spec.mode = corruption::Mode::random;
    spec.elements = corruption::parse_elements("r");
    spec.rate = 0.3;
    spec.scale = 1.0;
    spec.seed = 9;
    data_ = new env::Dataset(corruption::corrupt(clean, spec));
    clean_ = new env::Dataset(clean);
  }
  static void TearDownTestSuite() {
    delete data_;
    delete clean_;
  }
  static train::Learner learner() {
    const auto& t = data_->transitions();
    return train::Learner(tiny_tracer(10), t.state_dim, t.action_dim);
  }
  static inline env::Dataset* data_ = nullptr;
  static inline env::Dataset* clean_ = nullptr;
};

TEST_F(ProbeTest, NullSplitIsNearChance) {
  train::Learner l = learner();
  // row parity tracks the time step, so split by a random permutation
  std::vector<std::size_t> rows(data_->size());
  std::iota(rows.begin(), rows.end(), 0);
  std::mt19937_64 gen(14);
  std::shuffle(rows.begin(), rows.end(), gen);
  const std::vector<std::size_t> a(rows.begin(), rows.begin() + rows.size() / 2), b(rows.begin() + rows.size() / 2, rows.end());
  ProbeOptions opts;
  opts.seed = 11;
  const ProbeResult r = entropy_probe_rows(l, data_->transitions(), a, b, opts);
  EXPECT_EQ(r.comparisons, 500);
  EXPECT_NEAR(r.accuracy, 0.5, 0.1);
}

TEST_F(ProbeTest, IdenticalPoolsAreAllTiesResolvedByCoin) {
  train::Learner l = learner();
  const std::vector<std::size_t> one{17};
  ProbeOptions opts;
  opts.seed = 12;
  const ProbeResult r = entropy_probe_rows(l, data_->transitions(), one, one, opts);
  EXPECT_EQ(r.ties, 500);
  EXPECT_NEAR(r.accuracy, 0.5, 0.1);
}

TEST_F(ProbeTest, DeterministicForAFixedSeed) {
  train::Learner l = learner();
  ProbeOptions opts;
  opts.seed = 13;
  opts.batches = 50;
  const ProbeResult a = entropy_probe(l, *data_, opts), b = entropy_probe(l, *data_, opts);
  EXPECT_EQ(a.accuracy, b.accuracy);
  EXPECT_EQ(a.clean_mean_entropy, b.clean_mean_entropy);
  EXPECT_EQ(a.comparisons, 50);
}

TEST_F(ProbeTest, RequiresLabels) {
  train::Learner l = learner();
  EXPECT_THROW(entropy_probe(l, *clean_, ProbeOptions{}), ConfigError);
  EXPECT_THROW(entropy_probe_rows(l, data_->transitions(), {}, {1}, ProbeOptions{}), ConfigError);
}

TEST(Report, AggregatesSyntheticRuns) {
  const fs::path root = tracer::testing::scratch_dir("report");
  synthetic_run(root / "a", "tracer", "random:r:c=0.3:eps=1", 10.0, {1.0, 2.0});
  synthetic_run(root / "b", "tracer", "random:r:c=0.3:eps=1", 20.0, {1.0, 3.0, 5.0});
  synthetic_run(root / "c", "tracer", "random:r:c=0.3:eps=1", 40.0, {1.0, 4.0});
  synthetic_run(root / "d", "iql", "clean", std::nullopt, {0.5});
  fs::create_directories(root / "broken");
  const ReportResult r = report({root / "a", root / "b", root / "c", root / "d", root / "broken"}, root / "out");

  ASSERT_EQ(r.rows.size(), 2u);
  const SummaryRow& iql = r.rows[0];
  EXPECT_EQ(iql.algorithm, "iql");
  EXPECT_EQ(iql.runs, 1);
  const SummaryRow& t = r.rows[1];
  EXPECT_EQ(t.runs, 3);
  EXPECT_NEAR(t.score_mean, 70.0 / 3.0, 1e-12);
  const double m = 70.0 / 3.0;
  const double sd = std::sqrt(((10 - m) * (10 - m) + (20 - m) * (20 - m) + (40 - m) * (40 - m)) / 2.0);
  EXPECT_NEAR(t.score_stderr, sd / std::sqrt(3.0), 1e-12);
  EXPECT_NEAR(t.final_entropy_mean, 11.0 / 3.0, 1e-12);

  ASSERT_EQ(r.missing.size(), 1u);
  EXPECT_NE(r.missing[0].find("broken"), std::string::npos);
  EXPECT_NE(read_text(root / "out" / "missing_runs.txt").find("broken"), std::string::npos);

  // epoch 3 is reached by one run only
  const std::string curve =
      read_text(root / "out" / "curves" / "tracer__random_r_c_0.3_eps_1__mean_entropy.csv");
  EXPECT_EQ(curve.substr(0, 9), "x,y,err\n1");
  EXPECT_NE(curve.find("\n3,5,0\n"), std::string::npos) << curve;
  const std::string summary = read_text(root / "out" / "summary.csv");
  EXPECT_NE(summary.find("iql,clean,1,,,0.5,0"), std::string::npos) << summary;
}

TEST(Report, NoRunsGivesHeaderOnly) {
  const fs::path root = tracer::testing::scratch_dir("report_empty");
  const ReportResult r = report({}, root / "out");
  EXPECT_TRUE(r.rows.empty());
  EXPECT_EQ(read_text(root / "out" / "summary.csv"), std::string(kSummaryHeader) + "\n");
}

TEST(Cli, ExitCodes) {
  const fs::path root = tracer::testing::scratch_dir("cli");
  const std::string data = (root / "data").string();
  EXPECT_EQ(run_cli("gen-data --env point_mass --n 500 --out " + data), 1);
  EXPECT_EQ(run_cli("gen-data --env point_mass --n 500 --seed 1 --out " + data), 0);
  EXPECT_NE(run_cli("no-such-command"), 0);
  EXPECT_NE(run_cli(""), 0);
  EXPECT_EQ(run_cli("gen-data --env nowhere --n 10 --seed 1 --out " + (root / "x").string()), 1);

  write_text(root / "bad.cfg", "env = point_mass\nno_such_key = 3\n");
  EXPECT_EQ(run_cli("gen-data --config " + (root / "bad.cfg").string() + " --seed 1 --out " + data), 1);

  const std::string run = (root / "run").string();
  const std::string small =
      " --set quantiles=4 --set next_quantiles=4 --set ensemble=2 --set hidden=8 --set embed_dim=8"
      " --set tau_basis=4 --set obs_hidden=8";
  EXPECT_EQ(run_cli("train --data " + data + " --run " + run + " --seed 2 --epochs 1 --updates-per-epoch 2 --batch 16" +
                    small),
            0);
  EXPECT_TRUE(fs::exists(root / "run" / "metrics.csv"));
  EXPECT_EQ(run_cli("train --data " + data + " --run " + run + " --epochs 1"), 1);
  EXPECT_EQ(run_cli("eval --run " + run + " --episodes 2 --seed 3"), 0);
  EXPECT_TRUE(fs::exists(root / "run" / "eval.json"));
  EXPECT_EQ(run_cli("entropy-probe --run " + run + " --data " + data + " --seed 4"), 1);
  EXPECT_EQ(run_cli("report --out " + (root / "rep").string() + " " + run), 0);
  EXPECT_TRUE(fs::exists(root / "rep" / "summary.csv"));
}
