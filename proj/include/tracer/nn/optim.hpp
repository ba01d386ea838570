#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "tracer/nn/autodiff.hpp"

namespace tracer::nn {

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam with bias correction. Moments are indexed in the order of the
// parameter list the optimizer was built for.
class Adam {
 public:
  Adam() = default;
  Adam(const std::vector<Parameter*>& params, AdamOptions opts = {}) : opts_(opts) {
    for (const Parameter* p : params) {
      m_.push_back(Tensor::Zero(p->value.rows(), p->value.cols()));
      v_.push_back(Tensor::Zero(p->value.rows(), p->value.cols()));
    }
  }

  void step(const std::vector<Parameter*>& params) {
    if (params.size() != m_.size()) throw DimensionError("adam: parameter count changed");
    ++t_;
    const double bc1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      Parameter& p = *params[i];
      require_same_shape(p.value, m_[i], "adam");
      require_same_shape(p.value, p.grad, "adam grad");
      m_[i] = opts_.beta1 * m_[i] + (1.0 - opts_.beta1) * p.grad;
      v_[i] = opts_.beta2 * v_[i] + (1.0 - opts_.beta2) * p.grad.cwiseProduct(p.grad);
      p.value.array() -= opts_.lr * (m_[i].array() / bc1) / ((v_[i].array() / bc2).sqrt() + opts_.eps);
    }
  }

  std::int64_t steps() const { return t_; }
  const AdamOptions& options() const { return opts_; }
  std::vector<Tensor>& first_moments() { return m_; }
  std::vector<Tensor>& second_moments() { return v_; }
  void set_steps(std::int64_t t) { t_ = t; }

 private:
  AdamOptions opts_;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
  std::int64_t t_ = 0;
};

// target <- (1 - mix) * target + mix * online, element-wise.
inline void polyak_update(const std::vector<Parameter*>& target, const std::vector<Parameter*>& online, double mix) {
  if (mix < 0.0 || mix > 1.0) throw ConfigError("polyak_update: mix must lie in [0, 1]");
  if (target.size() != online.size()) throw DimensionError("polyak_update: parameter count mismatch");
  for (std::size_t i = 0; i < target.size(); ++i) {
    require_same_shape(target[i]->value, online[i]->value, "polyak_update");
    target[i]->value = (1.0 - mix) * target[i]->value + mix * online[i]->value;
  }
}

inline void copy_values(const std::vector<Parameter*>& dst, const std::vector<Parameter*>& src) {
  if (dst.size() != src.size()) throw DimensionError("copy_values: parameter count mismatch");
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i]->value = src[i]->value;
}

}  // namespace tracer::nn
