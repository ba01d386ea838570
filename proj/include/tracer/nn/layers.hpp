#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "tracer/nn/autodiff.hpp"

namespace tracer::nn {

// Affine map x W + b. Weight is (in x out), bias (1 x out).
struct Linear {
  Parameter weight;
  Parameter bias;

  Linear() = default;

  // He-style uniform fan-in initialization, zero bias.
  Linear(const std::string& name, Eigen::Index in, Eigen::Index out, Rng& rng) {
    const double bound = std::sqrt(6.0 / static_cast<double>(in));
    Tensor w(in, out);
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = uniform(rng, -bound, bound);
    weight = Parameter(name + ".weight", std::move(w));
    bias = Parameter(name + ".bias", Tensor::Zero(1, out));
  }

  Eigen::Index in_dim() const { return weight.value.rows(); }
  Eigen::Index out_dim() const { return weight.value.cols(); }

  Var forward(Tape& tape, const Var& x) {
    if (x.cols() != in_dim()) {
      throw DimensionError(weight.name + ": input width " + std::to_string(x.cols()) + ", expected " +
                           std::to_string(in_dim()));
    }
    return add_bias(matmul(x, tape.param(weight)), tape.param(bias));
  }

  void collect(std::vector<Parameter*>& out) {
    out.push_back(&weight);
    out.push_back(&bias);
  }
};

// Chain of Linear layers, rectified-linear between them. The last layer is
// identity unless relu_output is set (used for feature trunks).
struct Mlp {
  std::vector<Linear> layers;
  bool relu_output = false;

  Mlp() = default;

  // dims = {in, hidden..., out}
  Mlp(const std::string& name, const std::vector<Eigen::Index>& dims, Rng& rng, bool relu_out = false)
      : relu_output(relu_out) {
    if (dims.size() < 2) throw DimensionError(name + ": an MLP needs at least input and output extents");
    for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
      layers.emplace_back(name + "." + std::to_string(i), dims[i], dims[i + 1], rng);
    }
  }

  Eigen::Index in_dim() const { return layers.front().in_dim(); }
  Eigen::Index out_dim() const { return layers.back().out_dim(); }

  Var forward(Tape& tape, Var x) {
    for (std::size_t i = 0; i < layers.size(); ++i) {
      x = layers[i].forward(tape, x);
      if (i + 1 < layers.size() || relu_output) x = relu(x);
    }
    return x;
  }

  Tensor predict(const Tensor& input) {
    Tape tape;
    return forward(tape, tape.constant(input)).value();
  }

  void collect(std::vector<Parameter*>& out) {
    for (Linear& l : layers) l.collect(out);
  }
};

inline void zero_grads(const std::vector<Parameter*>& params) {
  for (Parameter* p : params) p->zero_grad();
}

}  // namespace tracer::nn
