#pragma once

#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <optional>
#include <string>
#include <vector>

#include "tracer/train/learner.hpp"

namespace tracer::train {

namespace fs = std::filesystem;

inline const char* const kMetricsHeader = "epoch,td_loss,bayes_loss,value_loss,policy_loss,mean_entropy,mean_weight,eta";

struct EpochMetrics {
  int epoch = 0;
  StepTelemetry mean;
};

inline std::string format_metrics_row(const EpochMetrics& m) {
  std::ostringstream out;
  out << std::setprecision(17) << m.epoch << ',' << m.mean.td_loss << ',' << m.mean.bayes_loss << ','
      << m.mean.value_loss << ',' << m.mean.policy_loss << ',' << m.mean.mean_entropy << ',' << m.mean.mean_weight
      << ',' << m.mean.eta;
  return out.str();
}

inline std::vector<EpochMetrics> read_metrics(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open metrics log " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != kMetricsHeader) throw FormatError(path.string() + ": unexpected header");
  std::vector<EpochMetrics> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    std::vector<double> v;
    std::string cell;
    while (std::getline(row, cell, ',')) v.push_back(std::stod(cell));
    if (v.size() != 8) throw FormatError(path.string() + ": expected 8 columns in '" + line + "'");
    out.push_back({static_cast<int>(v[0]), {v[1], v[2], v[3], v[4], v[5], v[6], v[7]}});
  }
  return out;
}

inline fs::path checkpoint_dir(const fs::path& run_dir, int epoch) {
  return run_dir / ("ckpt_" + std::to_string(epoch));
}

// Highest-epoch checkpoint in a run directory, if any.
inline std::optional<int> latest_checkpoint_epoch(const fs::path& run_dir) {
  std::optional<int> best;
  if (!fs::exists(run_dir)) return best;
  for (const auto& entry : fs::directory_iterator(run_dir)) {
    const std::string name = entry.path().filename().string();
    if (!entry.is_directory() || name.rfind("ckpt_", 0) != 0) continue;
    try {
      const int e = std::stoi(name.substr(5));
      if (!best || e > *best) best = e;
    } catch (const std::exception&) {
    }
  }
  return best;
}

struct RunOptions {
  bool resume = false;  // continue from the latest checkpoint in run_dir
  std::function<void(const EpochMetrics&)> on_epoch;
};

struct RunResult {
  std::vector<EpochMetrics> metrics;  // rows written by this call
  fs::path final_checkpoint;
};

// Trains for cfg.epochs x cfg.updates_per_epoch steps on the label-free
// view. Writes config.txt, metrics.csv (one row per epoch) and
// ckpt_<epoch>/ every checkpoint_every epochs and after the last one.
inline RunResult run_training(const env::TransitionView& view, const TrainConfig& cfg, const fs::path& run_dir,
                              const RunOptions& opts = {}) {
  cfg.validate();
  fs::create_directories(run_dir);
  Learner learner(cfg, view.transitions().state_dim, view.transitions().action_dim);
  if (cfg.normalize_observations) learner.set_normalizer(StateNormalizer::fit(view));

  int start_epoch = 0;
  const fs::path metrics_path = run_dir / "metrics.csv";
  std::vector<std::string> kept_rows;
  if (opts.resume) {
    if (const auto e = latest_checkpoint_epoch(run_dir)) {
      const nn::Checkpoint c = nn::load_checkpoint(checkpoint_dir(run_dir, *e));
      if (c.metadata.at("config") != nlohmann::json(cfg.to_map())) {
        throw ConfigError("resume: configuration differs from the checkpointed run");
      }
      learner.restore(c);
      start_epoch = *e;
      for (const EpochMetrics& m : read_metrics(metrics_path)) {
        if (m.epoch <= start_epoch) kept_rows.push_back(format_metrics_row(m));
      }
    }
  }
  write_key_values((run_dir / "config.txt").string(), cfg.to_map());
  std::ofstream metrics(metrics_path, std::ios::trunc);
  if (!metrics) throw ConfigError("cannot write " + metrics_path.string());
  metrics << kMetricsHeader << '\n';
  for (const auto& row : kept_rows) metrics << row << '\n';
  metrics.flush();

  RunResult result;
  for (int epoch = start_epoch + 1; epoch <= cfg.epochs; ++epoch) {
    StepTelemetry sum{0, 0, 0, 0, 0, 0, 0};
    for (int u = 0; u < cfg.updates_per_epoch; ++u) {
      const StepTelemetry t = learner.step(learner.sample_batch(view));
      sum.td_loss += t.td_loss;
      sum.bayes_loss += t.bayes_loss;
      sum.value_loss += t.value_loss;
      sum.policy_loss += t.policy_loss;
      sum.mean_entropy += t.mean_entropy;
      sum.mean_weight += t.mean_weight;
      sum.eta += t.eta;
    }
    const double n = cfg.updates_per_epoch;
    EpochMetrics m{epoch,
                   {sum.td_loss / n, sum.bayes_loss / n, sum.value_loss / n, sum.policy_loss / n,
                    sum.mean_entropy / n, sum.mean_weight / n, sum.eta / n}};
    metrics << format_metrics_row(m) << '\n';
    metrics.flush();
    result.metrics.push_back(m);
    if (opts.on_epoch) opts.on_epoch(m);
    if (epoch % cfg.checkpoint_every == 0 || epoch == cfg.epochs) {
      result.final_checkpoint = checkpoint_dir(run_dir, epoch);
      nn::Checkpoint c = learner.to_checkpoint();
      c.metadata["epoch"] = epoch;
      c.metadata["env"] = env::env_name(view.env());
      nn::save_checkpoint(c, result.final_checkpoint);
    }
  }
  if (result.final_checkpoint.empty()) result.final_checkpoint = checkpoint_dir(run_dir, cfg.epochs);
  return result;
}

}  // namespace tracer::train
