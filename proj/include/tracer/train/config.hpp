#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "tracer/entropy/entropy.hpp"
#include "tracer/error.hpp"

namespace tracer::train {

enum class Algorithm {
  tracer,  // distributional critics + Bayesian observation losses + entropy weights
  driql,   // distributional critics alone (TRACER without the observation losses)
  riql,    // Huber-regression scalar ensemble with alpha-quantile aggregation
  iql,     // twin scalar critics, squared TD loss, min aggregation
};

// How eta enters the critic objective.
enum class EtaMode {
  joint,  // L_D + eta * (L_first + L_second)
  split,  // L_D + eta * L_first + (1 - eta) * L_second
};

inline std::string algorithm_name(Algorithm a) {
  switch (a) {
    case Algorithm::tracer: return "tracer";
    case Algorithm::driql: return "driql";
    case Algorithm::riql: return "riql";
    case Algorithm::iql: return "iql";
  }
  return "?";
}

inline Algorithm parse_algorithm(const std::string& s) {
  if (s == "tracer") return Algorithm::tracer;
  if (s == "driql") return Algorithm::driql;
  if (s == "riql") return Algorithm::riql;
  if (s == "iql") return Algorithm::iql;
  throw ConfigError("unknown algorithm '" + s + "'");
}

struct TrainConfig {
  Algorithm algorithm = Algorithm::tracer;

  // distributional critic
  int quantiles = 32;       // N
  int next_quantiles = 32;  // N'
  int ensemble = 5;         // K
  double alpha = 0.25;
  double kappa = 0.1;
  double nu = 0.7;
  double beta = 3.0;
  double gamma = 0.99;

  // optimization
  double lr = 1e-3;
  double polyak = 0.05;
  int batch = 256;
  int target_update_every = 2;
  int epochs = 3000;
  int updates_per_epoch = 1000;
  int checkpoint_every = 50;

  // observation losses and entropy weighting
  double eta_start = 1e-4;
  double eta_end = 1e-2;
  EtaMode eta_mode = EtaMode::joint;
  bool entropy_weighting = true;
  entropy::EntropyVariant entropy_variant = entropy::EntropyVariant::mass;

  // architecture
  int hidden = 256;
  int embed_dim = 256;
  int tau_basis = 64;
  int trunk_layers = 3;
  int head_hidden_layers = 0;
  int obs_hidden = 256;
  int policy_layers = 3;
  int iql_critics = 2;

  bool normalize_observations = false;
  std::uint64_t seed = 0;

  std::int64_t total_steps() const { return static_cast<std::int64_t>(epochs) * updates_per_epoch; }

  bool distributional() const { return algorithm == Algorithm::tracer || algorithm == Algorithm::driql; }

  int critic_count() const { return algorithm == Algorithm::iql ? iql_critics : ensemble; }

  void validate() const {
    if (quantiles < 2 || next_quantiles < 1) throw ConfigError("need N >= 2 and N' >= 1");
    if (ensemble < 1 || iql_critics < 1) throw ConfigError("ensemble size must be positive");
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("alpha must lie in [0, 1]");
    if (!(kappa > 0.0)) throw ConfigError("kappa must be positive");
    if (!(nu > 0.0 && nu < 1.0)) throw ConfigError("nu must lie in (0, 1)");
    if (!(beta > 0.0)) throw ConfigError("beta must be positive");
    if (!(gamma >= 0.0 && gamma <= 1.0)) throw ConfigError("gamma must lie in [0, 1]");
    if (!(lr > 0.0)) throw ConfigError("lr must be positive");
    if (!(polyak >= 0.0 && polyak <= 1.0)) throw ConfigError("polyak must lie in [0, 1]");
    if (batch < 1 || target_update_every < 1 || epochs < 1 || updates_per_epoch < 1 || checkpoint_every < 1) {
      throw ConfigError("batch, epochs, updates and frequencies must be positive");
    }
    if (eta_start < 0.0 || eta_end < 0.0) throw ConfigError("eta must be non-negative");
    if (hidden < 1 || embed_dim < 1 || tau_basis < 1 || trunk_layers < 1 || obs_hidden < 1 || policy_layers < 1 ||
        head_hidden_layers < 0) {
      throw ConfigError("layer sizes must be positive");
    }
  }

  // Desk-scale preset: 50 epochs x 200 updates, batch 64, narrow networks.
  void apply_desk_preset() {
    epochs = 50;
    updates_per_epoch = 200;
    batch = 64;
    hidden = 64;
    embed_dim = 64;
    obs_hidden = 64;
    checkpoint_every = 10;
  }

  void set(const std::string& key, const std::string& value);
  std::map<std::string, std::string> to_map() const;
};

namespace detail {

inline bool parse_bool(const std::string& v) {
  if (v == "1" || v == "true" || v == "on" || v == "yes") return true;
  if (v == "0" || v == "false" || v == "off" || v == "no") return false;
  throw ConfigError("expected a boolean, got '" + v + "'");
}

template <typename T>
T parse_number(const std::string& key, const std::string& v) {
  std::istringstream in(v);
  T out{};
  in >> out;
  if (in.fail() || !in.eof()) throw ConfigError("config key '" + key + "': cannot parse '" + v + "'");
  return out;
}

inline std::string format_double(double v) {
  std::ostringstream out;
  out.precision(17);
  out << v;
  return out.str();
}

}  // namespace detail

inline void TrainConfig::set(const std::string& key, const std::string& value) {
  using detail::parse_number;
  if (key == "preset") {
    if (value == "desk") {
      apply_desk_preset();
    } else if (value != "full") {
      throw ConfigError("unknown preset '" + value + "'");
    }
  } else if (key == "algorithm") algorithm = parse_algorithm(value);
  else if (key == "quantiles" || key == "N") quantiles = parse_number<int>(key, value);
  else if (key == "next_quantiles" || key == "N_prime") next_quantiles = parse_number<int>(key, value);
  else if (key == "ensemble" || key == "K") ensemble = parse_number<int>(key, value);
  else if (key == "alpha") alpha = parse_number<double>(key, value);
  else if (key == "kappa") kappa = parse_number<double>(key, value);
  else if (key == "nu") nu = parse_number<double>(key, value);
  else if (key == "beta") beta = parse_number<double>(key, value);
  else if (key == "gamma") gamma = parse_number<double>(key, value);
  else if (key == "lr") lr = parse_number<double>(key, value);
  else if (key == "polyak") polyak = parse_number<double>(key, value);
  else if (key == "batch") batch = parse_number<int>(key, value);
  else if (key == "target_update_every") target_update_every = parse_number<int>(key, value);
  else if (key == "epochs") epochs = parse_number<int>(key, value);
  else if (key == "updates_per_epoch") updates_per_epoch = parse_number<int>(key, value);
  else if (key == "checkpoint_every") checkpoint_every = parse_number<int>(key, value);
  else if (key == "eta_start") eta_start = parse_number<double>(key, value);
  else if (key == "eta_end") eta_end = parse_number<double>(key, value);
  else if (key == "eta_mode") {
    if (value == "joint") eta_mode = EtaMode::joint;
    else if (value == "split") eta_mode = EtaMode::split;
    else throw ConfigError("eta_mode must be joint or split");
  } else if (key == "entropy_weighting") entropy_weighting = detail::parse_bool(value);
  else if (key == "entropy_variant") {
    if (value == "mass") entropy_variant = entropy::EntropyVariant::mass;
    else if (value == "density") entropy_variant = entropy::EntropyVariant::density;
    else throw ConfigError("entropy_variant must be mass or density");
  } else if (key == "hidden") hidden = parse_number<int>(key, value);
  else if (key == "embed_dim") embed_dim = parse_number<int>(key, value);
  else if (key == "tau_basis") tau_basis = parse_number<int>(key, value);
  else if (key == "trunk_layers") trunk_layers = parse_number<int>(key, value);
  else if (key == "head_hidden_layers") head_hidden_layers = parse_number<int>(key, value);
  else if (key == "obs_hidden") obs_hidden = parse_number<int>(key, value);
  else if (key == "policy_layers") policy_layers = parse_number<int>(key, value);
  else if (key == "iql_critics") iql_critics = parse_number<int>(key, value);
  else if (key == "normalize_observations") normalize_observations = detail::parse_bool(value);
  else if (key == "seed") seed = parse_number<std::uint64_t>(key, value);
  else throw ConfigError("unknown config key '" + key + "'");
}

inline std::map<std::string, std::string> TrainConfig::to_map() const {
  using detail::format_double;
  return {{"algorithm", algorithm_name(algorithm)},
          {"quantiles", std::to_string(quantiles)},
          {"next_quantiles", std::to_string(next_quantiles)},
          {"ensemble", std::to_string(ensemble)},
          {"alpha", format_double(alpha)},
          {"kappa", format_double(kappa)},
          {"nu", format_double(nu)},
          {"beta", format_double(beta)},
          {"gamma", format_double(gamma)},
          {"lr", format_double(lr)},
          {"polyak", format_double(polyak)},
          {"batch", std::to_string(batch)},
          {"target_update_every", std::to_string(target_update_every)},
          {"epochs", std::to_string(epochs)},
          {"updates_per_epoch", std::to_string(updates_per_epoch)},
          {"checkpoint_every", std::to_string(checkpoint_every)},
          {"eta_start", format_double(eta_start)},
          {"eta_end", format_double(eta_end)},
          {"eta_mode", eta_mode == EtaMode::joint ? "joint" : "split"},
          {"entropy_weighting", entropy_weighting ? "true" : "false"},
          {"entropy_variant", entropy_variant == entropy::EntropyVariant::mass ? "mass" : "density"},
          {"hidden", std::to_string(hidden)},
          {"embed_dim", std::to_string(embed_dim)},
          {"tau_basis", std::to_string(tau_basis)},
          {"trunk_layers", std::to_string(trunk_layers)},
          {"head_hidden_layers", std::to_string(head_hidden_layers)},
          {"obs_hidden", std::to_string(obs_hidden)},
          {"policy_layers", std::to_string(policy_layers)},
          {"iql_critics", std::to_string(iql_critics)},
          {"normalize_observations", normalize_observations ? "true" : "false"},
          {"seed", std::to_string(seed)}};
}

// Flat UTF-8 "key = value" lines; '#' starts a comment.
inline std::map<std::string, std::string> read_key_values(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  std::map<std::string, std::string> out;
  std::string line;
  int lineno = 0;
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    const auto e = s.find_last_not_of(" \t\r");
    return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(path + ":" + std::to_string(lineno) + ": expected key = value");
    out[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return out;
}

inline void write_key_values(const std::string& path, const std::map<std::string, std::string>& kv) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path);
  for (const auto& [k, v] : kv) out << k << " = " << v << '\n';
}

// Applies "preset" before every other key so explicit values win.
inline TrainConfig config_from_map(const std::map<std::string, std::string>& kv, TrainConfig base = {}) {
  if (auto it = kv.find("preset"); it != kv.end()) base.set("preset", it->second);
  for (const auto& [k, v] : kv) {
    if (k != "preset") base.set(k, v);
  }
  return base;
}

}  // namespace tracer::train
