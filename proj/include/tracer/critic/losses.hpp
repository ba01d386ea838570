#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "tracer/nn/autodiff.hpp"

namespace tracer::critic {

using nn::Tape;
using nn::Tensor;
using nn::Var;

// l_H(x) = x^2 / (2 kappa) for |x| <= kappa, |x| - kappa / 2 otherwise.
inline double huber(double x, double kappa) {
  const double ax = std::abs(x);
  return ax <= kappa ? x * x / (2.0 * kappa) : ax - 0.5 * kappa;
}

inline double huber_derivative(double x, double kappa) {
  if (std::abs(x) <= kappa) return x / kappa;
  return x > 0 ? 1.0 : -1.0;
}

// L2^nu(x) = |nu - 1{x < 0}| x^2
inline double expectile(double x, double nu) { return std::abs(nu - (x < 0 ? 1.0 : 0.0)) * x * x; }

inline Var huber(const Var& a, double kappa) {
  const std::size_t ia = a.index();
  Tensor out = a.value().unaryExpr([kappa](double x) { return huber(x, kappa); });
  return a.tape().record(std::move(out), {ia}, [ia, kappa](Tape& tp, const Tensor& g) {
    Tensor d = tp.value(ia).unaryExpr([kappa](double x) { return huber_derivative(x, kappa); });
    tp.accumulate(ia, g.cwiseProduct(d));
  });
}

inline Var expectile(const Var& a, double nu) {
  const std::size_t ia = a.index();
  Tensor out = a.value().unaryExpr([nu](double x) { return expectile(x, nu); });
  return a.tape().record(std::move(out), {ia}, [ia, nu](Tape& tp, const Tensor& g) {
    Tensor d = tp.value(ia).unaryExpr([nu](double x) { return 2.0 * std::abs(nu - (x < 0 ? 1.0 : 0.0)) * x; });
    tp.accumulate(ia, g.cwiseProduct(d));
  });
}

// Quantile-Huber TD loss per sample.
//   pred    (B x N)  online quantile values D^{tau_n}
//   target  (B x N') r + gamma (1 - done) Z^{tau'_m}(s'), no gradient
//   taus    N quantile levels of pred
// Returns (B x 1): (1/N') sum_n sum_m |tau_n - 1{delta < 0}| l_H(delta),
// delta = target_m - pred_n.
inline Var quantile_huber_loss(const Var& pred, const Tensor& target, std::span<const double> taus, double kappa) {
  const Eigen::Index b = pred.rows(), n = pred.cols(), m = target.cols();
  if (target.rows() != b) throw DimensionError("quantile_huber_loss: batch mismatch");
  if (static_cast<Eigen::Index>(taus.size()) != n) throw DimensionError("quantile_huber_loss: tau count mismatch");
  const Tensor& p = pred.value();
  Tensor out(b, 1);
  Tensor dpred(b, n);
  const double inv_m = 1.0 / static_cast<double>(m);
  for (Eigen::Index r = 0; r < b; ++r) {
    double total = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double tau = taus[static_cast<std::size_t>(i)];
      double gi = 0.0;
      for (Eigen::Index j = 0; j < m; ++j) {
        const double delta = target(r, j) - p(r, i);
        const double w = std::abs(tau - (delta < 0 ? 1.0 : 0.0));
        total += w * huber(delta, kappa);
        gi -= w * huber_derivative(delta, kappa);
      }
      dpred(r, i) = gi * inv_m;
    }
    out(r, 0) = total * inv_m;
  }
  const std::size_t ip = pred.index();
  return pred.tape().record(std::move(out), {ip}, [ip, dpred](Tape& tp, const Tensor& g) {
    Tensor d = dpred.array().colwise() * g.col(0).array();
    tp.accumulate(ip, d);
  });
}

// Expectile value-distribution loss per sample:
// sum_n L2^nu(d_alpha_n - z_n). d_alpha carries no gradient.
inline Var value_expectile_loss(const Var& z, const Tensor& d_alpha, double nu) {
  nn::require_same_shape(z.value(), d_alpha, "value_expectile_loss");
  Tape& t = z.tape();
  return nn::row_sum(expectile(nn::sub(t.constant(d_alpha), z), nu));
}

// Order statistic at position alpha * (K - 1) with linear interpolation.
inline double alpha_quantile(std::span<const double> values, double alpha) {
  if (values.empty()) throw DimensionError("alpha_quantile: no values");
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("alpha_quantile: alpha outside [0, 1]");
  std::vector<double> v(values.begin(), values.end());
  std::sort(v.begin(), v.end());
  const double pos = alpha * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return v[lo] + frac * (v[hi] - v[lo]);
}

// Element-wise alpha-quantile across K equally shaped member tensors.
inline Tensor alpha_quantile(const std::vector<Tensor>& members, double alpha) {
  if (members.empty()) throw DimensionError("alpha_quantile: no members");
  Tensor out(members.front().rows(), members.front().cols());
  std::vector<double> buf(members.size());
  for (Eigen::Index i = 0; i < out.size(); ++i) {
    for (std::size_t k = 0; k < members.size(); ++k) buf[k] = members[k].data()[i];
    out.data()[i] = alpha_quantile(buf, alpha);
  }
  return out;
}

}  // namespace tracer::critic
