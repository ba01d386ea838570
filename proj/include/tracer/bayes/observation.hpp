#pragma once

#include <span>
#include <string>
#include <vector>

#include "tracer/critic/losses.hpp"
#include "tracer/critic/quantile_net.hpp"
#include "tracer/nn/layers.hpp"

namespace tracer::bayes {

using nn::Parameter;
using nn::Rng;
using nn::Tape;
using nn::Tensor;
using nn::Var;

inline constexpr double kMinVariance = 1e-3;

struct Gaussian {
  Var mean;
  Var variance;  // diagonal of Sigma
};

struct HeadOutputs {
  Gaussian action;
  Gaussian reward;
  Gaussian state;
};

// Three diagonal-Gaussian observation models over a shared, masked input
//   [d_repr (N) | s (ds) | a (da) | r (1) | s' (ds)]
// Condition sets:  action <- (d_repr, s, r, s')
//                  reward <- (d_repr, s, a)
//                  state  <- (d_repr, a, r)
// Each model is two fully connected layers emitting (mean, raw scale) and
// Sigma = softplus(raw) + kMinVariance.
class ObservationHeads {
 public:
  ObservationHeads() = default;
  ObservationHeads(const std::string& name, Eigen::Index quantiles, Eigen::Index state_dim, Eigen::Index action_dim,
                   Eigen::Index hidden, Rng& rng)
      : n_(quantiles), ds_(state_dim), da_(action_dim) {
    const Eigen::Index in = width();
    action_net_ = nn::Mlp(name + ".action", {in, hidden, 2 * da_}, rng);
    reward_net_ = nn::Mlp(name + ".reward", {in, hidden, 2}, rng);
    state_net_ = nn::Mlp(name + ".state", {in, hidden, 2 * ds_}, rng);
    build_masks();
  }

  Eigen::Index width() const { return n_ + ds_ + da_ + 1 + ds_; }
  Eigen::Index quantiles() const { return n_; }
  const nn::RowVector& action_mask() const { return action_mask_; }
  const nn::RowVector& reward_mask() const { return reward_mask_; }
  const nn::RowVector& state_mask() const { return state_mask_; }

  HeadOutputs forward(Tape& tape, const Var& d_repr, const Var& s, const Var& a, const Var& r, const Var& s_next) {
    if (d_repr.cols() != n_) throw DimensionError("observation heads: d_repr width differs from N");
    const Var cond = nn::concat_cols({d_repr, s, a, r, s_next});
    return {head(tape, action_net_, nn::mul_row_const(cond, action_mask_), da_),
            head(tape, reward_net_, nn::mul_row_const(cond, reward_mask_), 1),
            head(tape, state_net_, nn::mul_row_const(cond, state_mask_), ds_)};
  }

  std::vector<Parameter*> parameters() {
    std::vector<Parameter*> out;
    action_net_.collect(out);
    reward_net_.collect(out);
    state_net_.collect(out);
    return out;
  }

 private:
  static Gaussian head(Tape&, nn::Mlp& net, const Var& input, Eigen::Index dim) {
    Var out = net.forward(input.tape(), input);
    Var mean = nn::slice_cols(out, 0, dim);
    Var variance = nn::add_scalar(nn::softplus(nn::slice_cols(out, dim, dim)), kMinVariance);
    return {mean, variance};
  }

  void build_masks() {
    const Eigen::Index s0 = n_, a0 = n_ + ds_, r0 = a0 + da_, sn0 = r0 + 1;
    auto mask = [&](bool s, bool a, bool r, bool sn) {
      nn::RowVector m = nn::RowVector::Zero(width());
      m.head(n_).setOnes();
      if (s) m.segment(s0, ds_).setOnes();
      if (a) m.segment(a0, da_).setOnes();
      if (r) m(r0) = 1.0;
      if (sn) m.segment(sn0, ds_).setOnes();
      return m;
    };
    action_mask_ = mask(true, false, true, true);
    reward_mask_ = mask(true, true, false, false);
    state_mask_ = mask(false, true, true, false);
  }

  Eigen::Index n_ = 0, ds_ = 0, da_ = 0;
  nn::Mlp action_net_, reward_net_, state_net_;
  nn::RowVector action_mask_, reward_mask_, state_mask_;
};

// Per-sample Gaussian reconstruction term:
// 1/2 sum_heads [ sum_d (mu_d - x_d)^2 / sigma_d^2 + sum_d log sigma_d^2 ].
inline Var loss_first(const HeadOutputs& h, const Var& s, const Var& a, const Var& r) {
  auto term = [](const Gaussian& g, const Var& x) {
    Var quad = nn::div(nn::square(nn::sub(g.mean, x)), g.variance);
    return nn::add(nn::row_sum(quad), nn::row_sum(nn::log(g.variance)));
  };
  Var total = nn::add(nn::add(term(h.action, a), term(h.reward, r)), term(h.state, s));
  return nn::scale(total, 0.5);
}

// mu + sqrt(Sigma) * noise
inline Var reparam_sample(const Gaussian& g, const Tensor& noise) {
  Tape& t = g.mean.tape();
  return nn::add(g.mean, nn::mul(nn::sqrt(g.variance), t.constant(noise)));
}

struct Reconstructions {
  Var state;
  Var action;
  Var reward;
};

// Per-sample Huber consistency between the member's clean-input quantiles
// (held fixed) and its quantiles at reconstructed inputs:
// sum_n [ l_H(D(s,a^,r) - D) + l_H(D(s,a,r^) - D) + l_H(D(s^,a,r) - D) ].
inline Var loss_second(critic::QuantileNet& member, const Var& s, const Var& a, const Var& r,
                       const Reconstructions& rec, std::span<const double> taus, const Tensor& clean_quantiles,
                       double kappa) {
  Tape& t = s.tape();
  const Eigen::Index b = s.rows();
  const Var inputs = nn::concat_rows({nn::concat_cols({s, rec.action, r}), nn::concat_cols({s, a, rec.reward}),
                                      nn::concat_cols({rec.state, a, r})});
  const Var values = member.forward(t, inputs, taus);  // (3B x N)
  Tensor target(3 * b, clean_quantiles.cols());
  target << clean_quantiles, clean_quantiles, clean_quantiles;
  const Var gaps = critic::huber(nn::sub(values, t.constant(target)), kappa);
  const Var per_row = nn::row_sum(gaps);  // (3B x 1)
  return nn::add(nn::add(nn::slice_rows(per_row, 0, b), nn::slice_rows(per_row, b, b)),
                 nn::slice_rows(per_row, 2 * b, b));
}

// Linear schedule from start (step 0) to end (step total - 1).
inline double eta_at(std::int64_t step, std::int64_t total_steps, double start = 1e-4, double end = 1e-2) {
  if (total_steps <= 1) return start;
  const double f = std::clamp(static_cast<double>(step) / static_cast<double>(total_steps - 1), 0.0, 1.0);
  return start + (end - start) * f;
}

}  // namespace tracer::bayes
