#pragma once

#include <span>
#include <string>
#include <vector>

#include "tracer/nn/tau_embedding.hpp"

namespace tracer::critic {

using nn::Parameter;
using nn::Rng;

struct QuantileNetShape {
  Eigen::Index hidden = 256;
  Eigen::Index trunk_layers = 3;
  Eigen::Index embed_dim = 256;
  Eigen::Index tau_basis = 64;
  Eigen::Index head_hidden_layers = 0;
};

// Implicit quantile network: value(x, tau) = f(g(x) * h(tau)).
//   g  trunk MLP with ReLU output, x -> R^d
//   h  cosine tau embedding, [0,1] -> R^d
//   f  head MLP, R^d -> R
// Used for the critic members D(s, a, r; tau) and the value
// distribution Z(s; tau).
struct QuantileNet {
  nn::Mlp trunk;
  nn::TauEmbedding tau_embed;
  nn::Mlp head;

  QuantileNet() = default;
  QuantileNet(const std::string& name, Eigen::Index input_dim, const QuantileNetShape& shape, Rng& rng) {
    std::vector<Eigen::Index> dims{input_dim};
    for (Eigen::Index i = 0; i + 1 < shape.trunk_layers; ++i) dims.push_back(shape.hidden);
    dims.push_back(shape.embed_dim);
    trunk = nn::Mlp(name + ".trunk", dims, rng, /*relu_out=*/true);
    tau_embed = nn::TauEmbedding(name + ".tau", shape.tau_basis, shape.embed_dim, rng);
    std::vector<Eigen::Index> head_dims{shape.embed_dim};
    for (Eigen::Index i = 0; i < shape.head_hidden_layers; ++i) head_dims.push_back(shape.hidden);
    head_dims.push_back(1);
    head = nn::Mlp(name + ".head", head_dims, rng);
  }

  Eigen::Index input_dim() const { return trunk.in_dim(); }

  // input (B x in) -> quantile values (B x N), column n at taus[n].
  nn::Var forward(nn::Tape& tape, const nn::Var& input, std::span<const double> taus) {
    const auto n = static_cast<Eigen::Index>(taus.size());
    const Eigen::Index b = input.rows();
    nn::Var g = trunk.forward(tape, input);
    nn::Var h = tau_embed.forward(tape, taus);
    if (head.layers.size() == 1) {
      nn::Linear& out = head.layers[0];
      return nn::mix_readout(g, h, tape.param(out.weight), tape.param(out.bias));
    }
    nn::Var mixed = nn::mul(nn::repeat_rows(g, n), nn::tile_rows(h, b));
    return nn::reshape(head.forward(tape, mixed), b, n);
  }

  nn::Tensor predict(const nn::Tensor& input, std::span<const double> taus) {
    nn::Tape tape;
    return forward(tape, tape.constant(input), taus).value();
  }

  std::vector<Parameter*> parameters() {
    std::vector<Parameter*> out;
    trunk.collect(out);
    tau_embed.collect(out);
    head.collect(out);
    return out;
  }
};

// Mean over the tau grid: (B x N) -> (B x 1).
inline nn::Tensor grid_mean(const nn::Tensor& quantiles) { return quantiles.rowwise().mean(); }

// N levels drawn from Uniform(0, 1), excluding the endpoints.
inline std::vector<double> sample_taus(Rng& rng, std::size_t n) {
  std::vector<double> taus(n);
  for (double& t : taus) {
    do {
      t = nn::uniform(rng, 0.0, 1.0);
    } while (t <= 0.0);
  }
  return taus;
}

}  // namespace tracer::critic
