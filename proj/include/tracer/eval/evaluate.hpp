#pragma once

#include <cmath>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include <json.hpp>

#include "tracer/env/collect.hpp"
#include "tracer/env/environments.hpp"

namespace tracer::eval {

using env::Action;
using env::EnvId;
using env::State;
using PolicyFn = std::function<Action(const State&)>;

// Per-episode returns of the reference policies, used to normalize scores.
struct ReferenceReturns {
  double random = 0.0;
  double expert = 0.0;
  const char* provenance = "";
};

inline constexpr int kReferenceVersion = 1;

inline ReferenceReturns reference_returns(EnvId id) {
  switch (id) {
    case EnvId::point_mass:
      // 10^5 episodes each of the noiseless PD controller and the uniform
      // policy (measure_reference, seed 20240901).
      return {-135.80960749102715, -33.258685868400931,
              "Monte Carlo, 1e5 episodes, PD controller vs uniform actions"};
    case EnvId::gaussian_bandit:
      // Exact: E[-(a - 0.3)^2] at a = 0.3, and under a ~ U[-1, 1].
      return {-(1.0 / 3.0 + 0.09), 0.0, "closed form"};
  }
  return {};
}

inline double normalized_score(double score, const ReferenceReturns& ref) {
  return 100.0 * (score - ref.random) / (ref.expert - ref.random);
}

inline std::uint64_t episode_seed(std::uint64_t seed, std::size_t episode) {
  return nn::make_rng(seed, 0x6576616c, episode)();
}

// Undiscounted return of one episode in the clean environment.
inline double episode_return(EnvId id, const PolicyFn& policy, std::uint64_t reset_seed) {
  env::Environment e(id);
  State s = e.reset(reset_seed);
  double total = 0.0;
  for (int t = 0; t < e.horizon(); ++t) {
    env::StepResult r = e.step(s, policy(s));
    total += r.reward;
    if (r.done) break;
    s = std::move(r.next_state);
  }
  return total;
}

inline double mean_return(EnvId id, const PolicyFn& policy, int episodes, std::uint64_t seed) {
  double sum = 0.0;
  for (int k = 0; k < episodes; ++k) sum += episode_return(id, policy, episode_seed(seed, static_cast<std::size_t>(k)));
  return sum / episodes;
}

enum class ReferenceKind { expert, random };

// Reference policy returns as frozen in reference_returns().
inline double measure_reference(EnvId id, ReferenceKind kind, int episodes, std::uint64_t seed) {
  nn::Rng rng = nn::make_rng(seed, 0x726566);
  const int da = env::Environment(id).action_dim();
  PolicyFn policy;
  if (kind == ReferenceKind::random) {
    policy = [&](const State&) {
      Action a(static_cast<std::size_t>(da));
      for (double& v : a) v = nn::uniform(rng, -1.0, 1.0);
      return a;
    };
  } else if (id == EnvId::point_mass) {
    policy = [](const State& s) { return env::pd_action(s); };
  } else {
    policy = [](const State&) { return Action{env::GaussianBandit::kBestAction}; };
  }
  return mean_return(id, policy, episodes, seed);
}

inline double sample_stderr(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(v.size() - 1)) / std::sqrt(static_cast<double>(v.size()));
}

struct EvalReport {
  std::string env;
  std::vector<double> seed_returns;  // mean episode return per seed
  std::vector<double> seed_scores;   // normalized, per seed
  double mean_return = 0.0;
  double stderr_return = 0.0;
  double normalized_score = 0.0;
  double stderr_score = 0.0;
  int episodes = 0;
  nlohmann::json fingerprint;
};

// Mean +- standard error over seeds of the per-seed mean return.
inline EvalReport evaluate_policy(const PolicyFn& policy, EnvId id, int episodes, const std::vector<std::uint64_t>& seeds) {
  if (episodes < 1 || seeds.empty()) throw ConfigError("evaluate_policy: need episodes >= 1 and at least one seed");
  const ReferenceReturns ref = reference_returns(id);
  EvalReport rep;
  rep.env = env::env_name(id);
  rep.episodes = episodes;
  for (std::uint64_t s : seeds) {
    const double r = mean_return(id, policy, episodes, s);
    rep.seed_returns.push_back(r);
    rep.seed_scores.push_back(normalized_score(r, ref));
  }
  const double n = static_cast<double>(seeds.size());
  rep.mean_return = std::accumulate(rep.seed_returns.begin(), rep.seed_returns.end(), 0.0) / n;
  rep.stderr_return = sample_stderr(rep.seed_returns);
  rep.normalized_score = normalized_score(rep.mean_return, ref);
  rep.stderr_score = sample_stderr(rep.seed_scores);
  return rep;
}

inline nlohmann::json to_json(const EvalReport& r) {
  return {{"env", r.env},
          {"episodes", r.episodes},
          {"seed_returns", r.seed_returns},
          {"seed_scores", r.seed_scores},
          {"mean_return", r.mean_return},
          {"stderr_return", r.stderr_return},
          {"normalized_score", r.normalized_score},
          {"stderr_score", r.stderr_score},
          {"reference_version", kReferenceVersion},
          {"fingerprint", r.fingerprint}};
}

}  // namespace tracer::eval
