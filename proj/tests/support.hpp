#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "tracer/nn/autodiff.hpp"

namespace tracer::testing {

using nn::Parameter;
using nn::Tape;
using nn::Tensor;
using nn::Var;

// Builds a scalar loss on a fresh tape from the current parameter values.
using LossBuilder = std::function<Var(Tape&)>;

struct GradCheck {
  double relative_error = 0.0;  // ||analytic - numeric|| / max(||analytic||, ||numeric||)
  double analytic_norm = 0.0;
  std::size_t entries = 0;
};

// Central finite differences over every entry of every parameter, compared
// with reverse-mode gradients as one vector.
inline GradCheck check_gradients(const LossBuilder& build, const std::vector<Parameter*>& params, double h = 1e-6) {
  for (Parameter* p : params) p->zero_grad();
  {
    Tape tape;
    Var loss = build(tape);
    tape.backward(loss);
  }
  double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
  GradCheck out;
  for (Parameter* p : params) {
    for (Eigen::Index i = 0; i < p->value.size(); ++i) {
      const double orig = p->value.data()[i];
      p->value.data()[i] = orig + h;
      double up, down;
      {
        Tape t;
        up = build(t).value()(0, 0);
      }
      p->value.data()[i] = orig - h;
      {
        Tape t;
        down = build(t).value()(0, 0);
      }
      p->value.data()[i] = orig;
      const double numeric = (up - down) / (2.0 * h);
      const double analytic = p->grad.data()[i];
      diff2 += (analytic - numeric) * (analytic - numeric);
      a2 += analytic * analytic;
      n2 += numeric * numeric;
      ++out.entries;
    }
  }
  const double scale = std::max(std::sqrt(a2), std::sqrt(n2));
  out.analytic_norm = std::sqrt(a2);
  out.relative_error = scale > 0.0 ? std::sqrt(diff2) / scale : 0.0;
  return out;
}

inline Tensor random_tensor(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols, double lo = -1.0,
                            double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(rows, cols);
  for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = u(rng);
  return t;
}

// Fresh, empty scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("tracer_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace tracer::testing
