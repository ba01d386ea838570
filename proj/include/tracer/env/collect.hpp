#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <vector>

#include "tracer/env/dataset.hpp"

namespace tracer::env {

enum class BehaviorKind {
  mixed_pd,  // PD controller, Gaussian noise with per-episode sigma from noise_levels
  pd,        // noiseless PD controller
  uniform,   // uniform random actions
};

struct BehaviorPolicy {
  BehaviorKind kind = BehaviorKind::mixed_pd;
  std::vector<double> noise_levels{0.1, 0.3, 1.0};
};

inline constexpr double kPdPositionGain = 3.0;
inline constexpr double kPdVelocityGain = 2.5;

// Saturated PD controller steering the point mass toward its goal.
inline Action pd_action(const State& s) {
  const double ax = kPdPositionGain * (PointMass::kGoalX - s[0]) - kPdVelocityGain * s[2];
  const double ay = kPdPositionGain * (PointMass::kGoalY - s[1]) - kPdVelocityGain * s[3];
  return {std::clamp(ax, -1.0, 1.0), std::clamp(ay, -1.0, 1.0)};
}

inline Action behavior_action(const BehaviorPolicy& policy, const State& s, double noise_sigma, int action_dim, Rng& rng) {
  Action a(static_cast<std::size_t>(action_dim), 0.0);
  if (policy.kind == BehaviorKind::uniform) {
    for (double& v : a) v = nn::uniform(rng, -1.0, 1.0);
    return a;
  }
  if (action_dim == PointMass::kActionDim && s.size() == PointMass::kStateDim) a = pd_action(s);
  if (policy.kind == BehaviorKind::mixed_pd) {
    for (double& v : a) v = std::clamp(v + noise_sigma * nn::standard_normal(rng), -1.0, 1.0);
  }
  return a;
}

// Rolls out the behavior policy until exactly n transitions are recorded.
// Statistics are computed here, on clean data, and frozen.
inline Dataset collect_dataset(EnvId id, const BehaviorPolicy& policy, std::size_t n, std::uint64_t seed) {
  if (n == 0) throw ConfigError("collect_dataset: n must be positive");
  Environment env(id);
  Rng rng = nn::make_rng(seed, 0x636f6c6c);
  Transitions t;
  t.state_dim = env.state_dim();
  t.action_dim = env.action_dim();
  std::uint64_t episode = 0;
  while (t.size() < n) {
    State s = env.reset(nn::make_rng(seed, 0x65706973, episode)());
    double sigma = 0.0;
    if (policy.kind == BehaviorKind::mixed_pd && !policy.noise_levels.empty()) {
      std::uniform_int_distribution<std::size_t> pick(0, policy.noise_levels.size() - 1);
      sigma = policy.noise_levels[pick(rng)];
    }
    for (int step = 0; step < env.horizon() && t.size() < n; ++step) {
      const Action a = behavior_action(policy, s, sigma, env.action_dim(), rng);
      StepResult r = env.step(s, a);
      t.push(s, a, r.reward, r.next_state, r.done);
      if (r.done) break;
      s = std::move(r.next_state);
    }
    ++episode;
  }
  return Dataset(id, std::move(t));
}

}  // namespace tracer::env
