#pragma once

#include <cmath>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "tracer/nn/layers.hpp"

namespace tracer::nn {

// Cosine features cos(k * pi * tau), k = 0..basis-1, one row per tau.
inline Tensor cosine_features(std::span<const double> taus, Eigen::Index basis) {
  Tensor f(static_cast<Eigen::Index>(taus.size()), basis);
  for (Eigen::Index r = 0; r < f.rows(); ++r) {
    const double tau = taus[static_cast<std::size_t>(r)];
    if (!(tau >= 0.0 && tau <= 1.0)) {
      throw DimensionError("tau_embed: quantile level " + std::to_string(tau) + " outside [0, 1]");
    }
    for (Eigen::Index k = 0; k < basis; ++k) f(r, k) = std::cos(static_cast<double>(k) * std::numbers::pi * tau);
  }
  return f;
}

// Quantile-level embedding [0,1] -> R^d: cosine basis, one affine layer, ReLU.
struct TauEmbedding {
  Eigen::Index basis = 64;
  Linear affine;

  TauEmbedding() = default;
  TauEmbedding(const std::string& name, Eigen::Index basis_size, Eigen::Index dim, Rng& rng)
      : basis(basis_size), affine(name, basis_size, dim, rng) {}

  Eigen::Index dim() const { return affine.out_dim(); }

  Var forward(Tape& tape, std::span<const double> taus) {
    return relu(affine.forward(tape, tape.constant(cosine_features(taus, basis))));
  }

  void collect(std::vector<Parameter*>& out) { affine.collect(out); }
};

}  // namespace tracer::nn
