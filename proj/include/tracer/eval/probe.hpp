#pragma once

#include <numeric>
#include <vector>

#include <json.hpp>

#include "tracer/train/learner.hpp"

namespace tracer::eval {

struct ProbeOptions {
  int batches = 500;
  int per_group = 32;  // rows drawn from each of the clean and corrupted pools
  std::uint64_t seed = 0;
};

struct ProbeResult {
  double accuracy = 0.0;
  int comparisons = 0;
  int ties = 0;
  std::vector<double> clean_mean_entropy;      // one per batch
  std::vector<double> corrupted_mean_entropy;  // one per batch
};

inline nlohmann::json to_json(const ProbeResult& r) {
  const auto mean = [](const std::vector<double>& v) {
    return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  };
  return {{"accuracy", r.accuracy},
          {"comparisons", r.comparisons},
          {"ties", r.ties},
          {"tie_rule", "fair coin under the probe seed"},
          {"clean_mean_entropy", mean(r.clean_mean_entropy)},
          {"corrupted_mean_entropy", mean(r.corrupted_mean_entropy)}};
}

// Fraction of batches whose corrupted rows have a higher mean entropy than
// the clean rows. Pools are row indices; the learner sees only transitions.
inline ProbeResult entropy_probe_rows(train::Learner& learner, const env::Transitions& data,
                                      const std::vector<std::size_t>& clean_pool,
                                      const std::vector<std::size_t>& corrupted_pool, const ProbeOptions& opts) {
  if (clean_pool.empty() || corrupted_pool.empty()) throw ConfigError("entropy probe: need clean and corrupted rows");
  if (opts.batches < 1 || opts.per_group < 1) throw ConfigError("entropy probe: batches and group size must be positive");
  nn::Rng rng = nn::make_rng(opts.seed, 0x70726f6265);
  const auto n_taus = static_cast<std::size_t>(learner.config().quantiles);
  ProbeResult out;
  int wins = 0;
  for (int b = 0; b < opts.batches; ++b) {
    std::vector<std::size_t> rows;
    for (const auto* pool : {&clean_pool, &corrupted_pool}) {
      std::uniform_int_distribution<std::size_t> pick(0, pool->size() - 1);
      for (int k = 0; k < opts.per_group; ++k) rows.push_back((*pool)[pick(rng)]);
    }
    const auto taus = critic::sample_taus(rng, n_taus);
    const auto h = learner.row_entropy(env::gather(data, rows), taus);
    const auto half = static_cast<std::ptrdiff_t>(opts.per_group);
    const double clean = std::accumulate(h.begin(), h.begin() + half, 0.0) / opts.per_group;
    const double corrupted = std::accumulate(h.begin() + half, h.end(), 0.0) / opts.per_group;
    out.clean_mean_entropy.push_back(clean);
    out.corrupted_mean_entropy.push_back(corrupted);
    if (corrupted > clean) {
      ++wins;
    } else if (corrupted == clean) {
      ++out.ties;
      if (std::bernoulli_distribution(0.5)(rng)) ++wins;
    }
    ++out.comparisons;
  }
  out.accuracy = static_cast<double>(wins) / out.comparisons;
  return out;
}

// Partitions rows by their corruption labels (any bit set = corrupted).
// Labels only choose rows; they never enter a forward pass.
inline ProbeResult entropy_probe(train::Learner& learner, const env::Dataset& labeled, const ProbeOptions& opts) {
  if (!labeled.has_labels()) throw ConfigError("entropy probe: dataset carries no corruption labels");
  const auto& labels = labeled.labels();
  std::vector<std::size_t> clean, corrupted;
  for (std::size_t i = 0; i < labels.size(); ++i) (labels[i] == 0 ? clean : corrupted).push_back(i);
  return entropy_probe_rows(learner, labeled.transitions(), clean, corrupted, opts);
}

}  // namespace tracer::eval
