#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

#include "tracer/corruption/attacker.hpp"
#include "tracer/corruption/spec.hpp"
#include "tracer/env/dataset.hpp"

namespace tracer::corruption {

namespace detail {

inline constexpr std::uint64_t kSelectStream = 0x73656c;
inline constexpr std::uint64_t kNoiseStream = 0x6e6f6973;

inline std::uint8_t label_bit(Element e) {
  switch (e) {
    case Element::state: return env::kStateCorrupted;
    case Element::action: return env::kActionCorrupted;
    case Element::reward: return env::kRewardCorrupted;
    case Element::dynamics: return env::kNextStateCorrupted;
  }
  return 0;
}

// Smallest integer >= c * n, tolerant of binary rounding in c * n.
inline std::size_t selection_count(double rate, std::size_t n) {
  const double x = rate * static_cast<double>(n);
  const double r = std::round(x);
  if (std::abs(x - r) < 1e-7) return static_cast<std::size_t>(r);
  return static_cast<std::size_t>(std::ceil(x));
}

// ceil(c * n) distinct rows, uniformly without replacement. Each element
// pass draws independently.
inline std::vector<std::size_t> select_rows(std::size_t n, double rate, std::uint64_t seed, Element e) {
  nn::Rng rng = nn::make_rng(seed, kSelectStream, static_cast<std::uint64_t>(e));
  std::vector<std::size_t> idx = env::all_indices(n);
  const std::size_t k = selection_count(rate, n);
  for (std::size_t i = 0; i < k; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, n - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  idx.resize(k);
  std::sort(idx.begin(), idx.end());
  return idx;
}

// Rounds x to float while staying inside [lo, hi] (both computed in double).
inline float round_into_box(double x, double lo, double hi) {
  float f = static_cast<float>(x);
  while (static_cast<double>(f) > hi) f = std::nextafter(f, -std::numeric_limits<float>::infinity());
  while (static_cast<double>(f) < lo) f = std::nextafter(f, std::numeric_limits<float>::infinity());
  return f;
}

// x + lambda * std with lambda ~ U[-eps, eps]^d, one generator per row.
inline void perturb_uniform(float* x, const std::vector<double>& stdev, double eps, nn::Rng& rng) {
  for (std::size_t d = 0; d < stdev.size(); ++d) {
    const double lambda = eps * nn::uniform(rng, -1.0, 1.0);
    const double lo = x[d] - eps * stdev[d], hi = x[d] + eps * stdev[d];
    x[d] = round_into_box(x[d] + lambda * stdev[d], lo, hi);
  }
}

inline void random_pass(env::Dataset& ds, const CorruptionSpec& spec, Element e) {
  env::Transitions& t = ds.mutable_transitions();
  const env::DatasetStats& st = ds.stats();
  const std::vector<std::size_t> rows = select_rows(t.size(), spec.rate, spec.seed, e);
  auto& labels = ds.mutable_labels();
  for (std::size_t i : rows) {
    nn::Rng rng = nn::make_rng(spec.seed, kNoiseStream + static_cast<std::uint64_t>(e), i);
    switch (e) {
      case Element::state: perturb_uniform(t.state(i), st.state_std, spec.scale, rng); break;
      case Element::action: perturb_uniform(t.action(i), st.action_std, spec.scale, rng); break;
      case Element::reward:
        t.rewards[i] = round_into_box(30.0 * spec.scale * nn::uniform(rng, -1.0, 1.0), -30.0 * spec.scale,
                                      30.0 * spec.scale);
        break;
      case Element::dynamics: perturb_uniform(t.next_state(i), st.next_state_std, spec.scale, rng); break;
    }
    labels[i] |= label_bit(e);
  }
}

// Projected sign-gradient descent on z in [-eps, eps]^d for
// x^ = x + z * std, minimizing the attacker's Q. The best (lowest
// objective) iterate per row is kept, starting from the clean input.
inline void adversarial_pass(env::Dataset& ds, const CorruptionSpec& spec, Element e, AttackerCritic& attacker) {
  env::Transitions& t = ds.mutable_transitions();
  const env::DatasetStats& st = ds.stats();
  const std::vector<std::size_t> rows = select_rows(t.size(), spec.rate, spec.seed, e);
  auto& labels = ds.mutable_labels();
  for (std::size_t i : rows) labels[i] |= label_bit(e);
  if (rows.empty()) return;

  if (e == Element::reward) {
    for (std::size_t i : rows) t.rewards[i] = static_cast<float>(-spec.scale * static_cast<double>(t.rewards[i]));
    return;
  }

  const env::Batch b = env::gather(t, rows);
  const auto m = static_cast<Eigen::Index>(rows.size());
  const bool attack_action = e == Element::action;
  const Tensor clean = e == Element::state ? b.states : (attack_action ? b.actions : b.next_states);
  const std::vector<double>& stdev =
      e == Element::state ? st.state_std : (attack_action ? st.action_std : st.next_state_std);
  const Tensor fixed_action = e == Element::dynamics ? attacker.act(b.next_states) : b.actions;
  const Eigen::Index dim = clean.cols();

  auto materialize = [&](const Tensor& z) {
    Tensor x(m, dim);
    for (Eigen::Index r = 0; r < m; ++r) {
      for (Eigen::Index d = 0; d < dim; ++d) {
        const double sd = stdev[static_cast<std::size_t>(d)];
        const double c = clean(r, d);
        x(r, d) = round_into_box(c + z(r, d) * sd, c - spec.scale * sd, c + spec.scale * sd);
      }
    }
    return x;
  };
  auto objective = [&](const Tensor& x, bool want_grad) {
    const Tensor& s = attack_action ? b.states : x;
    const Tensor& a = attack_action ? x : fixed_action;
    return attacker.q_mean_and_grad(
        s, a, want_grad ? std::optional(attack_action ? AttackInput::action : AttackInput::state) : std::nullopt);
  };

  Tensor best = clean;
  Tensor best_value = objective(clean, false).first;
  Tensor z = Tensor::Zero(m, dim);
  Tensor x = clean;
  for (int step = 0; step < spec.pgd_steps; ++step) {
    const Tensor grad = objective(x, true).second;
    for (Eigen::Index r = 0; r < m; ++r) {
      for (Eigen::Index d = 0; d < dim; ++d) {
        const double g = grad(r, d) * stdev[static_cast<std::size_t>(d)];
        const double sign = g > 0 ? 1.0 : (g < 0 ? -1.0 : 0.0);
        z(r, d) = std::clamp(z(r, d) - spec.pgd_step_size * sign, -spec.scale, spec.scale);
      }
    }
    x = materialize(z);
    const Tensor value = objective(x, false).first;
    for (Eigen::Index r = 0; r < m; ++r) {
      if (value(r, 0) < best_value(r, 0)) {
        best_value(r, 0) = value(r, 0);
        best.row(r) = x.row(r);
      }
    }
  }

  for (Eigen::Index r = 0; r < m; ++r) {
    const std::size_t i = rows[static_cast<std::size_t>(r)];
    float* dst = e == Element::state ? t.state(i) : (attack_action ? t.action(i) : t.next_state(i));
    for (Eigen::Index d = 0; d < dim; ++d) dst[d] = static_cast<float>(best(r, d));
  }
}

}  // namespace detail

// Applies every element pass in canonical order (state, action, reward,
// dynamics), each with its own ceil(c * n) selection. Statistics stay the
// clean ones; labels accumulate.
inline env::Dataset corrupt(const env::Dataset& clean, const CorruptionSpec& spec, AttackerCritic* attacker = nullptr) {
  spec.validate();
  if (clean.size() == 0) throw ConfigError("corrupt: empty dataset");
  if (spec.mode == Mode::adversarial && attacker == nullptr) {
    for (Element e : spec.elements) {
      if (e != Element::reward) throw ConfigError("adversarial " + element_code(e) + " corruption requires an attacker");
    }
  }
  env::Dataset out = clean;
  out.mutable_labels();
  for (Element e : kAllElements) {
    if (!spec.has(e)) continue;
    if (spec.mode == Mode::random) {
      detail::random_pass(out, spec, e);
    } else {
      detail::adversarial_pass(out, spec, e, *attacker);
    }
  }
  out.set_corruption_spec(to_json(spec));
  return out;
}

inline env::Dataset corrupt_random(const env::Dataset& clean, CorruptionSpec spec) {
  spec.mode = Mode::random;
  return corrupt(clean, spec);
}

inline env::Dataset corrupt_adversarial(const env::Dataset& clean, CorruptionSpec spec, AttackerCritic* attacker) {
  spec.mode = Mode::adversarial;
  return corrupt(clean, spec, attacker);
}

inline env::Dataset corrupt_simultaneous(const env::Dataset& clean, const CorruptionSpec& spec,
                                         AttackerCritic* attacker = nullptr) {
  for (Element e : kAllElements) {
    if (!spec.has(e)) throw ConfigError("simultaneous corruption needs all four elements");
  }
  return corrupt(clean, spec, attacker);
}

}  // namespace tracer::corruption
