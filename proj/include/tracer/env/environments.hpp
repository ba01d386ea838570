#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "tracer/error.hpp"
#include "tracer/nn/tensor.hpp"

namespace tracer::env {

using nn::Rng;
using State = std::vector<double>;
using Action = std::vector<double>;

struct StepResult {
  State next_state;
  double reward = 0.0;
  bool done = false;
};

// 2-D point mass chasing a fixed goal. State (px, py, vx, vy).
struct PointMass {
  static constexpr int kStateDim = 4;
  static constexpr int kActionDim = 2;
  static constexpr int kHorizon = 100;
  static constexpr double kDt = 0.05;
  static constexpr double kDrag = 0.1;
  static constexpr double kGoalX = 0.8;
  static constexpr double kGoalY = 0.8;
  static constexpr double kActionCost = 0.01;

  static State reset(Rng& rng) { return {nn::uniform(rng, -1.0, 1.0), nn::uniform(rng, -1.0, 1.0), 0.0, 0.0}; }

  static double reward(const State& s, const Action& a) {
    const double dx = s[0] - kGoalX, dy = s[1] - kGoalY;
    return -std::sqrt(dx * dx + dy * dy) - kActionCost * (a[0] * a[0] + a[1] * a[1]);
  }

  // Reward is charged on the pre-transition position. Timeouts are not
  // terminal, so done stays false.
  static StepResult step(const State& s, const Action& raw) {
    const Action a{std::clamp(raw[0], -1.0, 1.0), std::clamp(raw[1], -1.0, 1.0)};
    StepResult r;
    r.reward = reward(s, a);
    r.next_state = {s[0] + kDt * s[2], s[1] + kDt * s[3], s[2] + kDt * (a[0] - kDrag * s[2]),
                    s[3] + kDt * (a[1] - kDrag * s[3])};
    r.done = false;
    return r;
  }
};

// One fixed state, scalar action, Gaussian reward centered on -(a - 0.3)^2.
struct GaussianBandit {
  static constexpr int kStateDim = 1;
  static constexpr int kActionDim = 1;
  static constexpr int kHorizon = 1;
  static constexpr double kBestAction = 0.3;
  static constexpr double kRewardStd = 0.5;

  static State reset(Rng&) { return {0.0}; }

  static double mean_reward(double a) { return -(a - kBestAction) * (a - kBestAction); }

  static StepResult step(const State& s, const Action& raw, Rng& rng) {
    const double a = std::clamp(raw[0], -1.0, 1.0);
    StepResult r;
    r.reward = mean_reward(a) + kRewardStd * nn::standard_normal(rng);
    r.next_state = s;
    r.done = true;
    return r;
  }
};

enum class EnvId { point_mass, gaussian_bandit };

inline std::string env_name(EnvId id) { return id == EnvId::point_mass ? "point_mass" : "gaussian_bandit"; }

inline EnvId parse_env(const std::string& name) {
  if (name == "point_mass" || name == "pointmass") return EnvId::point_mass;
  if (name == "gaussian_bandit" || name == "bandit") return EnvId::gaussian_bandit;
  throw ConfigError("unknown environment '" + name + "'");
}

// Seeded handle over either toy environment.
class Environment {
 public:
  explicit Environment(EnvId id) : id_(id) {}

  EnvId id() const { return id_; }
  int state_dim() const { return id_ == EnvId::point_mass ? PointMass::kStateDim : GaussianBandit::kStateDim; }
  int action_dim() const { return id_ == EnvId::point_mass ? PointMass::kActionDim : GaussianBandit::kActionDim; }
  int horizon() const { return id_ == EnvId::point_mass ? PointMass::kHorizon : GaussianBandit::kHorizon; }

  State reset(std::uint64_t seed) {
    rng_ = nn::make_rng(seed, 0x656e76);
    return id_ == EnvId::point_mass ? PointMass::reset(rng_) : GaussianBandit::reset(rng_);
  }

  StepResult step(const State& s, const Action& a) {
    if (static_cast<int>(a.size()) != action_dim()) throw DimensionError("env step: wrong action dimension");
    return id_ == EnvId::point_mass ? PointMass::step(s, a) : GaussianBandit::step(s, a, rng_);
  }

 private:
  EnvId id_;
  Rng rng_;
};

}  // namespace tracer::env
