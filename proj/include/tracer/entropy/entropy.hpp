#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <vector>

#include "tracer/nn/tensor.hpp"

namespace tracer::entropy {

using nn::Tensor;

enum class EntropyVariant {
  mass,     // -sum mid_mass * dD * log(mid_mass)
  density,  // -sum mid_mass * log(mid_mass / dD), the Riemann-sum reading
};

inline constexpr double kNormalizerGuard = 1e-6;

// Differential-entropy estimate from N (tau, value) pairs.
//
// Values are sorted ascending and paired with the ascending tau levels
// (monotone rearrangement, identical to sorting the pairs whenever the
// quantile curve is non-decreasing). With sorted levels t_1..t_N:
//   mass_1 = t_1, mass_n = t_n - t_{n-1}
//   mid_n  = (mass_{n-1} + mass_n) / 2,  dD_n = D_n - D_{n-1}
//   H      = -sum_{n=2}^N mid_n * dD_n * log(mid_n)
inline double estimate_entropy(std::span<const double> taus, std::span<const double> values,
                               EntropyVariant variant = EntropyVariant::mass) {
  if (taus.size() != values.size()) throw DimensionError("estimate_entropy: tau/value count mismatch");
  if (taus.size() < 2) throw DimensionError("estimate_entropy: need N >= 2");
  std::vector<double> t(taus.begin(), taus.end());
  std::vector<double> v(values.begin(), values.end());
  std::sort(t.begin(), t.end());
  std::sort(v.begin(), v.end());
  double h = 0.0;
  double prev_mass = t[0];
  for (std::size_t n = 1; n < t.size(); ++n) {
    const double mass = t[n] - t[n - 1];
    const double mid = 0.5 * (prev_mass + mass);
    const double dd = v[n] - v[n - 1];
    prev_mass = mass;
    if (mid <= 0.0 || dd == 0.0) continue;
    if (variant == EntropyVariant::mass) {
      h -= mid * dd * std::log(mid);
    } else {
      h -= mid * std::log(mid / dd);
    }
  }
  return h;
}

// Row-wise entropy of a (B x N) quantile matrix sharing one tau grid.
inline std::vector<double> estimate_entropy_rows(std::span<const double> taus, const Tensor& quantiles,
                                                 EntropyVariant variant = EntropyVariant::mass) {
  std::vector<double> out(static_cast<std::size_t>(quantiles.rows()));
  std::vector<double> row(static_cast<std::size_t>(quantiles.cols()));
  for (Eigen::Index r = 0; r < quantiles.rows(); ++r) {
    for (Eigen::Index c = 0; c < quantiles.cols(); ++c) row[static_cast<std::size_t>(c)] = quantiles(r, c);
    out[static_cast<std::size_t>(r)] = estimate_entropy(taus, row, variant);
  }
  return out;
}

// H / (|batch mean of quantile samples| + guard)
inline double normalize_entropy(double h, double batch_mean) {
  return h / (std::abs(batch_mean) + kNormalizerGuard);
}

// Mean over every quantile sample of every member in the batch.
inline double batch_sample_mean(std::span<const Tensor> member_quantiles) {
  double total = 0.0;
  double count = 0.0;
  for (const Tensor& q : member_quantiles) {
    total += q.sum();
    count += static_cast<double>(q.size());
  }
  if (count == 0.0) throw DimensionError("batch_sample_mean: empty batch");
  return total / count;
}

// 1 / exp(H~). Treated as a constant by every loss that uses it.
inline double entropy_weight(double normalized_entropy) { return std::exp(-normalized_entropy); }

}  // namespace tracer::entropy
