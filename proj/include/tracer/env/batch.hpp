#pragma once

#include <cstddef>
#include <vector>

#include "tracer/env/dataset.hpp"

namespace tracer::env {

// Dense minibatch of transitions in float64.
struct Batch {
  nn::Tensor states;       // B x ds
  nn::Tensor actions;      // B x da
  nn::Tensor rewards;      // B x 1
  nn::Tensor next_states;  // B x ds
  nn::Tensor dones;        // B x 1

  Eigen::Index size() const { return rewards.rows(); }
};

inline Batch gather(const Transitions& t, const std::vector<std::size_t>& rows) {
  const auto b = static_cast<Eigen::Index>(rows.size());
  Batch out{nn::Tensor(b, t.state_dim), nn::Tensor(b, t.action_dim), nn::Tensor(b, 1), nn::Tensor(b, t.state_dim),
            nn::Tensor(b, 1)};
  for (Eigen::Index k = 0; k < b; ++k) {
    const std::size_t i = rows[static_cast<std::size_t>(k)];
    if (i >= t.size()) throw DimensionError("gather: row index out of range");
    for (int d = 0; d < t.state_dim; ++d) {
      out.states(k, d) = t.state(i)[d];
      out.next_states(k, d) = t.next_state(i)[d];
    }
    for (int d = 0; d < t.action_dim; ++d) out.actions(k, d) = t.action(i)[d];
    out.rewards(k, 0) = t.rewards[i];
    out.dones(k, 0) = t.dones[i];
  }
  return out;
}

inline Batch gather(const TransitionView& view, const std::vector<std::size_t>& rows) {
  return gather(view.transitions(), rows);
}

// B indices drawn uniformly with replacement.
inline std::vector<std::size_t> sample_indices(nn::Rng& rng, std::size_t n, std::size_t b) {
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);
  std::vector<std::size_t> out(b);
  for (auto& i : out) i = pick(rng);
  return out;
}

inline std::vector<std::size_t> all_indices(std::size_t n) {
  std::vector<std::size_t> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = i;
  return out;
}

}  // namespace tracer::env
