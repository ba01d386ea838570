#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "support.hpp"
#include "tracer/corruption/attacker.hpp"
#include "tracer/corruption/corrupt.hpp"
#include "tracer/env/batch.hpp"
#include "tracer/env/collect.hpp"

using namespace tracer;
using namespace tracer::corruption;
using env::Dataset;
using env::EnvId;

namespace {

const Dataset& point_mass_data() {
  static const Dataset ds = env::collect_dataset(EnvId::point_mass, {}, 10000, 1);
  return ds;
}

CorruptionSpec spec_for(std::vector<Element> elements, double rate, double scale, std::uint64_t seed,
                        Mode mode = Mode::random) {
  CorruptionSpec s;
  s.mode = mode;
  s.elements = std::move(elements);
  s.rate = rate;
  s.scale = scale;
  s.seed = seed;
  return s;
}

std::set<std::size_t> rows_with(const Dataset& ds, std::uint8_t bit) {
  std::set<std::size_t> out;
  const auto& labels = ds.labels();
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] & bit) out.insert(i);
  }
  return out;
}

AttackerConfig small_attacker(std::uint64_t seed) {
  AttackerConfig c;
  c.epochs = 4;
  c.steps_per_epoch = 50;
  c.hidden = 32;
  c.seed = seed;
  return c;
}

AttackerCritic& point_mass_attacker() {
  static AttackerCritic a = pretrain_attacker(point_mass_data(), small_attacker(3));
  return a;
}

}  // namespace

TEST(RandomCorruption, ZeroScaleLeavesValuesButSetsLabels) {
  const Dataset& clean = point_mass_data();
  for (Element e : {Element::state, Element::action, Element::dynamics}) {
    const Dataset out = corrupt_random(clean, spec_for({e}, 0.3, 0.0, 5));
    EXPECT_EQ(out.transitions(), clean.transitions());
    EXPECT_EQ(rows_with(out, detail::label_bit(e)).size(), 3000u);
  }
}

TEST(RandomCorruption, RewardsLieInScaledBox) {
  for (double eps : {1.0, 0.5, 2.0}) {
    const Dataset out = corrupt_random(point_mass_data(), spec_for({Element::reward}, 0.3, eps, 9));
    for (std::size_t i : rows_with(out, env::kRewardCorrupted)) {
      const double r = out.transitions().rewards[i];
      EXPECT_GE(r, -30.0 * eps);
      EXPECT_LE(r, 30.0 * eps);
    }
  }
}

TEST(RandomCorruption, ExactCountAndSeedDependentSelection) {
  const Dataset a = corrupt_random(point_mass_data(), spec_for({Element::state}, 0.3, 1.0, 1));
  const Dataset b = corrupt_random(point_mass_data(), spec_for({Element::state}, 0.3, 1.0, 2));
  const auto ra = rows_with(a, env::kStateCorrupted), rb = rows_with(b, env::kStateCorrupted);
  EXPECT_EQ(ra.size(), 3000u);
  EXPECT_EQ(rb.size(), 3000u);
  EXPECT_NE(ra, rb);
  EXPECT_EQ(detail::selection_count(0.3, 10000), 3000u);
  EXPECT_EQ(detail::selection_count(0.3, 7), 3u);  // ceil(2.1)
}

TEST(RandomCorruption, NoiseStaysWithinStdBoxAndOnlyOnLabeledRows) {
  const Dataset& clean = point_mass_data();
  const Dataset out = corrupt_random(clean, spec_for({Element::state, Element::action, Element::dynamics}, 0.4, 0.7, 4));
  const auto& c = clean.transitions();
  const auto& o = out.transitions();
  const auto& st = clean.stats();
  const auto& labels = out.labels();
  for (std::size_t i = 0; i < c.size(); ++i) {
    for (int d = 0; d < c.state_dim; ++d) {
      const double ds = std::abs(double(o.state(i)[d]) - c.state(i)[d]);
      const double dn = std::abs(double(o.next_state(i)[d]) - c.next_state(i)[d]);
      EXPECT_LE(ds, 0.7 * st.state_std[d]);
      EXPECT_LE(dn, 0.7 * st.next_state_std[d]);
      if (!(labels[i] & env::kStateCorrupted)) {
        EXPECT_EQ(ds, 0.0);
      }
      if (!(labels[i] & env::kNextStateCorrupted)) {
        EXPECT_EQ(dn, 0.0);
      }
    }
    for (int d = 0; d < c.action_dim; ++d) {
      const double da = std::abs(double(o.action(i)[d]) - c.action(i)[d]);
      EXPECT_LE(da, 0.7 * st.action_std[d]);
      if (!(labels[i] & env::kActionCorrupted)) {
        EXPECT_EQ(da, 0.0);
      }
    }
    EXPECT_EQ(o.rewards[i], c.rewards[i]);
  }
  EXPECT_EQ(out.stats(), clean.stats());
}

TEST(RandomCorruption, DeterministicGivenSeed) {
  const auto spec = spec_for({Element::state, Element::reward}, 0.3, 1.0, 77);
  EXPECT_TRUE(corrupt_random(point_mass_data(), spec) == corrupt_random(point_mass_data(), spec));
}

TEST(SimultaneousCorruption, CoverageMatchesIndependentPasses) {
  const Dataset clean = env::collect_dataset(EnvId::point_mass, {}, 100000, 2);
  const Dataset out = corrupt_simultaneous(clean, spec_for({Element::state, Element::action, Element::reward,
                                                            Element::dynamics},
                                                           0.3, 1.0, 3));
  std::size_t any = 0;
  for (std::uint8_t l : out.labels()) any += l != 0;
  const double expected = 1.0 - std::pow(0.7, 4);
  EXPECT_NEAR(static_cast<double>(any) / 100000.0, expected, 0.01 * expected);
  for (std::uint8_t bit : {env::kStateCorrupted, env::kActionCorrupted, env::kRewardCorrupted,
                           env::kNextStateCorrupted}) {
    EXPECT_EQ(rows_with(out, bit).size(), 30000u);
  }
}

TEST(SimultaneousCorruption, RateEndpoints) {
  const Dataset& clean = point_mass_data();
  const std::vector<Element> all{Element::state, Element::action, Element::reward, Element::dynamics};
  const Dataset none = corrupt_simultaneous(clean, spec_for(all, 0.0, 1.0, 1));
  for (std::uint8_t l : none.labels()) EXPECT_EQ(l, 0);
  EXPECT_EQ(none.transitions(), clean.transitions());
  const Dataset every = corrupt_simultaneous(clean, spec_for(all, 1.0, 1.0, 1));
  for (std::uint8_t l : every.labels()) EXPECT_EQ(l, 0x0f);
  EXPECT_THROW(corrupt_simultaneous(clean, spec_for({Element::state}, 0.3, 1.0, 1)), ConfigError);
}

TEST(AdversarialCorruption, RewardIsNegatedAndScaled) {
  const Dataset& clean = point_mass_data();
  for (double eps : {1.0, 0.5}) {
    const Dataset out = corrupt_adversarial(clean, spec_for({Element::reward}, 0.3, eps, 8), nullptr);
    const auto rows = rows_with(out, env::kRewardCorrupted);
    EXPECT_EQ(rows.size(), 3000u);
    for (std::size_t i : rows) {
      const float expected = static_cast<float>(-eps * static_cast<double>(clean.transitions().rewards[i]));
      EXPECT_EQ(out.transitions().rewards[i], expected);
    }
  }
  // hand case r = 2, eps = 1
  env::Transitions t;
  t.state_dim = 1;
  t.action_dim = 1;
  t.push({0.0}, {0.0}, 2.0, {0.0}, true);
  t.push({1.0}, {0.5}, 2.0, {1.0}, true);
  const Dataset tiny(EnvId::gaussian_bandit, t);
  const Dataset hit = corrupt_adversarial(tiny, spec_for({Element::reward}, 1.0, 1.0, 0), nullptr);
  EXPECT_EQ(hit.transitions().rewards[0], -2.0f);
}

TEST(AdversarialCorruption, MissingAttackerIsAnError) {
  for (Element e : {Element::state, Element::action, Element::dynamics}) {
    EXPECT_THROW(corrupt_adversarial(point_mass_data(), spec_for({e}, 0.3, 1.0, 1), nullptr), ConfigError);
  }
}

TEST(AdversarialCorruption, PgdRespectsBoxAndNeverRaisesObjective) {
  const Dataset& clean = point_mass_data();
  AttackerCritic& attacker = point_mass_attacker();
  const auto& st = clean.stats();
  for (Element e : {Element::state, Element::action, Element::dynamics}) {
    auto spec = spec_for({e}, 0.05, 0.5, 12, Mode::adversarial);
    spec.pgd_steps = 30;
    const Dataset out = corrupt_adversarial(clean, spec, &attacker);
    std::vector<std::size_t> rows;
    for (std::size_t i : rows_with(out, detail::label_bit(e))) rows.push_back(i);
    ASSERT_EQ(rows.size(), 500u);
    const env::Batch before = env::gather(clean.transitions(), rows);
    const env::Batch after = env::gather(out.transitions(), rows);
    const nn::Tensor& cb = e == Element::state ? before.states : (e == Element::action ? before.actions : before.next_states);
    const nn::Tensor& ab = e == Element::state ? after.states : (e == Element::action ? after.actions : after.next_states);
    const auto& sd = e == Element::state ? st.state_std : (e == Element::action ? st.action_std : st.next_state_std);
    for (Eigen::Index r = 0; r < cb.rows(); ++r) {
      for (Eigen::Index d = 0; d < cb.cols(); ++d) EXPECT_LE(std::abs(ab(r, d) - cb(r, d)), 0.5 * sd[d]);
    }
    nn::Tensor q_clean, q_attacked;
    if (e != Element::dynamics) {
      q_clean = attacker.q_mean(before.states, before.actions);
      q_attacked = attacker.q_mean(after.states, after.actions);
    } else {
      q_clean = attacker.q_mean(before.next_states, attacker.act(before.next_states));
      q_attacked = attacker.q_mean(after.next_states, attacker.act(before.next_states));
    }
    int lowered = 0;
    for (Eigen::Index r = 0; r < q_clean.rows(); ++r) {
      EXPECT_LE(q_attacked(r, 0), q_clean(r, 0));
      lowered += q_attacked(r, 0) < q_clean(r, 0);
    }
    EXPECT_GT(lowered, 250) << element_code(e);
  }
}

TEST(Attacker, LearnsBanditRewardOrdering) {
  const Dataset clean = env::collect_dataset(EnvId::gaussian_bandit, {.kind = env::BehaviorKind::uniform}, 4000, 5);
  AttackerConfig cfg = small_attacker(1);
  cfg.epochs = 10;
  AttackerCritic a = pretrain_attacker(clean, cfg);
  nn::Tensor s = nn::Tensor::Zero(1, 1);
  nn::Tensor best = nn::Tensor::Constant(1, 1, 0.3), worst = nn::Tensor::Constant(1, 1, -1.0);
  EXPECT_GT(a.q_mean(s, best)(0, 0), a.q_mean(s, worst)(0, 0));
}

TEST(Attacker, SameSeedGivesIdenticalCheckpoints) {
  const Dataset clean = env::collect_dataset(EnvId::point_mass, {}, 2000, 5);
  AttackerConfig cfg = small_attacker(42);
  cfg.epochs = 2;
  const nn::Checkpoint a = pretrain_attacker(clean, cfg).to_checkpoint();
  const nn::Checkpoint b = pretrain_attacker(clean, cfg).to_checkpoint();
  ASSERT_EQ(a.entries.size(), b.entries.size());
  for (std::size_t i = 0; i < a.entries.size(); ++i) EXPECT_EQ(a.entries[i].value, b.entries[i].value);
  const auto dir = tracer::testing::scratch_dir("attacker_ckpt");
  AttackerCritic c = pretrain_attacker(clean, cfg);
  c.save(dir);
  const nn::Checkpoint back = AttackerCritic::load(dir).to_checkpoint();
  for (std::size_t i = 0; i < a.entries.size(); ++i) EXPECT_EQ(back.entries[i].value, a.entries[i].value);
}

TEST(Attacker, BehaviorCloningHoldoutErrorDecreases) {
  AttackerTrainingLog log;
  AttackerConfig cfg = small_attacker(7);
  cfg.epochs = 6;
  pretrain_attacker(point_mass_data(), cfg, &log);
  ASSERT_EQ(log.bc_holdout_mse.size(), 6u);
  EXPECT_LT(log.bc_holdout_mse.back(), log.bc_holdout_mse.front());
}

TEST(Attacker, RefusesCorruptedData) {
  const Dataset out = corrupt_random(point_mass_data(), spec_for({Element::reward}, 0.3, 1.0, 1));
  EXPECT_THROW(pretrain_attacker(out, small_attacker(1)), ConfigError);
}

TEST(CorruptionSpec, ParsingAndValidation) {
  EXPECT_EQ(parse_elements("r,d"), (std::vector<Element>{Element::reward, Element::dynamics}));
  EXPECT_EQ(parse_mode("adversarial"), Mode::adversarial);
  EXPECT_THROW(parse_elements("x"), ConfigError);
  EXPECT_THROW(spec_for({Element::state}, 1.5, 1.0, 0).validate(), ConfigError);
  EXPECT_THROW(spec_for({Element::state}, 0.3, -1.0, 0).validate(), ConfigError);
  EXPECT_THROW(spec_for({}, 0.3, 1.0, 0).validate(), ConfigError);
}
