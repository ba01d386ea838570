#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "tracer/nn/layers.hpp"

namespace tracer::policy {

using nn::Parameter;
using nn::Rng;
using nn::Tape;
using nn::Tensor;
using nn::Var;

inline constexpr double kLogStdMin = -5.0;
inline constexpr double kLogStdMax = 2.0;
inline constexpr double kActionEdge = 1.0 - 1e-6;

// Tanh-squashed diagonal Gaussian. The network emits the pre-squash mean;
// the log-std is a free, state-independent vector clamped to
// [kLogStdMin, kLogStdMax].
class GaussianPolicy {
 public:
  GaussianPolicy() = default;
  GaussianPolicy(const std::string& name, Eigen::Index state_dim, Eigen::Index action_dim, Eigen::Index hidden,
                 Eigen::Index layers, Rng& rng)
      : log_std_(name + ".log_std", Tensor::Zero(1, action_dim)) {
    std::vector<Eigen::Index> dims{state_dim};
    for (Eigen::Index i = 0; i + 1 < layers; ++i) dims.push_back(hidden);
    dims.push_back(action_dim);
    mean_net_ = nn::Mlp(name + ".mean", dims, rng);
  }

  Eigen::Index action_dim() const { return mean_net_.out_dim(); }
  Eigen::Index state_dim() const { return mean_net_.in_dim(); }

  // Per-row log density of actions (B x da) under the squashed policy:
  // log N(atanh(a); m, sigma^2) - sum_d log(1 - a_d^2). Returns (B x 1).
  Var log_prob(Tape& tape, const Var& states, const Tensor& actions) {
    if (actions.cols() != action_dim() || actions.rows() != states.rows()) {
      throw DimensionError("log_prob: action batch shape mismatch");
    }
    const Tensor clipped = actions.cwiseMax(-kActionEdge).cwiseMin(kActionEdge);
    const Tensor pre = clipped.unaryExpr([](double x) { return std::atanh(x); });
    const Tensor jac = (1.0 - clipped.array().square()).log().matrix();

    Var mean = mean_net_.forward(tape, states);
    Var log_std = nn::clamp(tape.param(log_std_), kLogStdMin, kLogStdMax);
    Var log_std_rows = nn::tile_rows(log_std, states.rows());
    Var z = nn::div(nn::sub(tape.constant(pre), mean), nn::exp(log_std_rows));
    const double log_norm = 0.5 * std::log(2.0 * std::numbers::pi);
    Var per_dim = nn::sub(nn::scale(nn::square(z), -0.5), log_std_rows);
    per_dim = nn::sub(per_dim, tape.constant(jac));
    return nn::add_scalar(nn::row_sum(per_dim), -log_norm * static_cast<double>(action_dim()));
  }

  // Deterministic evaluation action: tanh of the pre-squash mean.
  Tensor act(const Tensor& states) {
    Tape tape;
    return mean_net_.forward(tape, tape.constant(states)).value().array().tanh();
  }

  std::vector<double> act(const std::vector<double>& state) {
    Tensor s(1, static_cast<Eigen::Index>(state.size()));
    for (std::size_t i = 0; i < state.size(); ++i) s(0, static_cast<Eigen::Index>(i)) = state[i];
    const Tensor a = act(s);
    return std::vector<double>(a.data(), a.data() + a.size());
  }

  Tensor log_std() const {
    return log_std_.value.cwiseMax(kLogStdMin).cwiseMin(kLogStdMax);
  }

  std::vector<Parameter*> parameters() {
    std::vector<Parameter*> out;
    mean_net_.collect(out);
    out.push_back(&log_std_);
    return out;
  }

 private:
  nn::Mlp mean_net_;
  Parameter log_std_;
};

inline constexpr double kMaxAdvantageWeight = 100.0;

// min(exp(beta * advantage), w_max) per row.
inline Tensor advantage_weights(const Tensor& advantage, double beta, double w_max = kMaxAdvantageWeight) {
  return (beta * advantage.array()).exp().min(w_max).matrix();
}

// Advantage-weighted regression: -mean_b w_b log pi(a_b | s_b), with the
// weights held fixed.
inline Var awr_loss(GaussianPolicy& policy, Tape& tape, const Tensor& states, const Tensor& actions,
                    const Tensor& advantage, double beta, double w_max = kMaxAdvantageWeight) {
  const Tensor w = advantage_weights(advantage, beta, w_max);
  Var lp = policy.log_prob(tape, tape.constant(states), actions);
  return nn::scale(nn::mean(nn::mul(lp, tape.constant(w))), -1.0);
}

}  // namespace tracer::policy
