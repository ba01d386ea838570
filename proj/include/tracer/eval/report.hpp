#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "tracer/eval/evaluate.hpp"
#include "tracer/train/run.hpp"

namespace tracer::eval {

namespace fs = std::filesystem;

inline const char* const kSummaryHeader =
    "algorithm,corruption,runs,score_mean,score_stderr,final_entropy_mean,final_entropy_stderr";

struct SummaryRow {
  std::string algorithm;
  std::string corruption;
  int runs = 0;
  double score_mean = 0.0;
  double score_stderr = 0.0;
  double final_entropy_mean = 0.0;
  double final_entropy_stderr = 0.0;
};

struct ReportResult {
  std::vector<SummaryRow> rows;
  std::vector<std::string> missing;  // run directories without a readable metrics log
  std::vector<fs::path> curve_files;
};

// Short setting label for a dataset's corruption spec, e.g.
// "random:sard:c=0.3:eps=1" or "clean". Contains no commas.
inline std::string corruption_label(const nlohmann::json& spec) {
  if (spec.is_null()) return "clean";
  std::string elements = spec.at("elements").get<std::string>();
  std::erase(elements, ',');
  std::ostringstream out;
  out << spec.at("mode").get<std::string>() << ':' << elements
      << ":c=" << spec.at("rate").get<double>() << ":eps=" << spec.at("scale").get<double>();
  return out.str();
}

// Corruption setting label of a run: run_info.json "corruption" or "clean".
inline std::string run_corruption(const fs::path& run_dir) {
  std::ifstream in(run_dir / "run_info.json");
  if (!in) return "clean";
  const auto j = nlohmann::json::parse(in, nullptr, false);
  if (j.is_discarded() || !j.contains("corruption")) return "clean";
  return j["corruption"].get<std::string>();
}

namespace detail {

struct RunData {
  std::vector<train::EpochMetrics> metrics;
  std::optional<double> score;
};

inline double mean_of(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

inline std::string file_safe(std::string s) {
  for (char& c : s) {
    if (!std::isalnum(static_cast<unsigned char>(c)) && c != '-' && c != '.') c = '_';
  }
  return s;
}

inline double column(const train::EpochMetrics& m, int c) {
  switch (c) {
    case 0: return m.mean.td_loss;
    case 1: return m.mean.bayes_loss;
    case 2: return m.mean.value_loss;
    case 3: return m.mean.policy_loss;
    case 4: return m.mean.mean_entropy;
    case 5: return m.mean.mean_weight;
    default: return m.mean.eta;
  }
}

inline constexpr const char* kColumnNames[] = {"td_loss",      "bayes_loss",  "value_loss", "policy_loss",
                                                "mean_entropy", "mean_weight", "eta"};

}  // namespace detail

// Groups runs by (algorithm, corruption) and writes summary.csv, one
// x,y,err curve file per group and metric under curves/, and
// missing_runs.txt. Standard errors use the sample std over runs (0 for a
// single run).
inline ReportResult report(const std::vector<fs::path>& run_dirs, const fs::path& out_dir) {
  fs::create_directories(out_dir / "curves");
  ReportResult result;
  std::map<std::pair<std::string, std::string>, std::vector<detail::RunData>> groups;
  for (const fs::path& dir : run_dirs) {
    detail::RunData run;
    std::string algorithm;
    try {
      run.metrics = train::read_metrics(dir / "metrics.csv");
      algorithm = train::read_key_values((dir / "config.txt").string()).at("algorithm");
    } catch (const std::exception&) {
      result.missing.push_back(dir.string());
      continue;
    }
    if (std::ifstream in(dir / "eval.json"); in) {
      const auto j = nlohmann::json::parse(in, nullptr, false);
      if (!j.is_discarded() && j.contains("normalized_score")) run.score = j["normalized_score"].get<double>();
    }
    groups[{algorithm, run_corruption(dir)}].push_back(std::move(run));
  }

  std::ofstream summary(out_dir / "summary.csv");
  summary << kSummaryHeader << '\n' << std::setprecision(17);
  for (const auto& [key, runs] : groups) {
    SummaryRow row{key.first, key.second, static_cast<int>(runs.size())};
    std::vector<double> scores, entropies;
    for (const auto& r : runs) {
      if (r.score) scores.push_back(*r.score);
      if (!r.metrics.empty()) entropies.push_back(r.metrics.back().mean.mean_entropy);
    }
    row.score_mean = detail::mean_of(scores);
    row.score_stderr = sample_stderr(scores);
    row.final_entropy_mean = detail::mean_of(entropies);
    row.final_entropy_stderr = sample_stderr(entropies);
    summary << row.algorithm << ',' << row.corruption << ',' << row.runs << ',';
    if (scores.empty()) {
      summary << ",,";
    } else {
      summary << row.score_mean << ',' << row.score_stderr << ',';
    }
    summary << row.final_entropy_mean << ',' << row.final_entropy_stderr << '\n';
    result.rows.push_back(row);

    // Per-epoch curves, averaged over the runs that reached each epoch.
    for (int c = 0; c < 7; ++c) {
      std::map<int, std::vector<double>> by_epoch;
      for (const auto& r : runs) {
        for (const auto& m : r.metrics) by_epoch[m.epoch].push_back(detail::column(m, c));
      }
      const fs::path path = out_dir / "curves" /
                            (detail::file_safe(key.first) + "__" + detail::file_safe(key.second) + "__" +
                             detail::kColumnNames[c] + ".csv");
      std::ofstream curve(path);
      curve << "x,y,err\n" << std::setprecision(17);
      for (const auto& [epoch, values] : by_epoch) {
        curve << epoch << ',' << detail::mean_of(values) << ',' << sample_stderr(values) << '\n';
      }
      result.curve_files.push_back(path);
    }
  }

  std::ofstream missing(out_dir / "missing_runs.txt");
  for (const auto& m : result.missing) missing << m << '\n';

  std::ofstream notes(out_dir / "report_notes.txt");
  notes << "normalized score = 100 * (score - random) / (expert - random), reference returns version "
        << kReferenceVersion << "\n"
        << "standard errors: sample std over runs / sqrt(runs); 0 for a single run\n"
        << "critic Q and value V reduce the quantile grid by the mean over tau levels\n"
        << "entropy probe ties (equal clean and corrupted mean entropy) are broken by a fair coin under the probe seed\n";
  return result;
}

}  // namespace tracer::eval
