#pragma once

// Columnar offline dataset and its on-disk format.
//
//   <dir>/meta.json   env, n, dims, frozen statistics, corruption spec, version
//   <dir>/data.bin    row-major little-endian float32 records s | a | r | s' | done
//   <dir>/labels.bin  optional, one byte per transition; bits 0..3 flag
//                     state / action / reward / next-state corruption

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "tracer/env/environments.hpp"

namespace tracer::env {

inline constexpr int kDatasetFormatVersion = 1;

enum LabelBit : std::uint8_t {
  kStateCorrupted = 1u << 0,
  kActionCorrupted = 1u << 1,
  kRewardCorrupted = 1u << 2,
  kNextStateCorrupted = 1u << 3,
};

struct DatasetStats {
  std::vector<double> state_std;
  std::vector<double> action_std;
  std::vector<double> next_state_std;

  bool operator==(const DatasetStats&) const = default;
};

// The transition columns only. This is everything a learner may read.
struct Transitions {
  int state_dim = 0;
  int action_dim = 0;
  std::vector<float> states;       // n x state_dim
  std::vector<float> actions;      // n x action_dim
  std::vector<float> rewards;      // n
  std::vector<float> next_states;  // n x state_dim
  std::vector<std::uint8_t> dones; // n

  std::size_t size() const { return rewards.size(); }
  const float* state(std::size_t i) const { return states.data() + i * state_dim; }
  const float* action(std::size_t i) const { return actions.data() + i * action_dim; }
  const float* next_state(std::size_t i) const { return next_states.data() + i * state_dim; }
  float* state(std::size_t i) { return states.data() + i * state_dim; }
  float* action(std::size_t i) { return actions.data() + i * action_dim; }
  float* next_state(std::size_t i) { return next_states.data() + i * state_dim; }

  void push(const State& s, const Action& a, double r, const State& s2, bool done) {
    for (double v : s) states.push_back(static_cast<float>(v));
    for (double v : a) actions.push_back(static_cast<float>(v));
    rewards.push_back(static_cast<float>(r));
    for (double v : s2) next_states.push_back(static_cast<float>(v));
    dones.push_back(done ? 1 : 0);
  }

  bool operator==(const Transitions&) const = default;
};

namespace detail {

inline std::vector<double> column_std(const std::vector<float>& data, std::size_t n, int dim) {
  std::vector<double> out(static_cast<std::size_t>(dim), 0.0);
  for (int d = 0; d < dim; ++d) {
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean += data[i * dim + d];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double x = data[i * dim + d] - mean;
      var += x * x;
    }
    out[static_cast<std::size_t>(d)] = std::sqrt(var / static_cast<double>(n));
  }
  return out;
}

}  // namespace detail

// Population (divide-by-n) standard deviation per dimension.
inline DatasetStats compute_stats(const Transitions& t) {
  if (t.size() < 2) throw ConfigError("compute_stats: need at least two transitions");
  return {detail::column_std(t.states, t.size(), t.state_dim), detail::column_std(t.actions, t.size(), t.action_dim),
          detail::column_std(t.next_states, t.size(), t.state_dim)};
}

class Dataset;

// Learner-facing view: columns and frozen statistics, no corruption labels.
class TransitionView {
 public:
  const Transitions& transitions() const { return *data_; }
  const DatasetStats& stats() const { return *stats_; }
  EnvId env() const { return env_; }
  std::size_t size() const { return data_->size(); }
  int state_dim() const { return data_->state_dim; }
  int action_dim() const { return data_->action_dim; }

 private:
  friend class Dataset;
  TransitionView(const Transitions* d, const DatasetStats* s, EnvId e) : data_(d), stats_(s), env_(e) {}
  const Transitions* data_;
  const DatasetStats* stats_;
  EnvId env_;
};

class Dataset {
 public:
  Dataset() = default;
  Dataset(EnvId env, Transitions t) : env_(env), data_(std::move(t)) {
    if (data_.size() >= 2) stats_ = compute_stats(data_);
  }

  EnvId env() const { return env_; }
  std::size_t size() const { return data_.size(); }
  const Transitions& transitions() const { return data_; }
  Transitions& mutable_transitions() { return data_; }
  const DatasetStats& stats() const { return stats_; }
  void set_stats(DatasetStats s) { stats_ = std::move(s); }

  const nlohmann::json& corruption_spec() const { return corruption_; }
  void set_corruption_spec(nlohmann::json j) { corruption_ = std::move(j); }

  TransitionView training_view() const { return TransitionView(&data_, &stats_, env_); }

  bool has_labels() const { return labels_.has_value(); }

  // Every read of the label column is counted so tests can audit that a
  // training run never touched it.
  const std::vector<std::uint8_t>& labels() const {
    if (!labels_) throw ConfigError("dataset has no corruption labels");
    ++label_reads_;
    return *labels_;
  }
  std::vector<std::uint8_t>& mutable_labels() {
    if (!labels_) labels_ = std::vector<std::uint8_t>(size(), 0);
    ++label_reads_;
    return *labels_;
  }
  void set_labels(std::optional<std::vector<std::uint8_t>> l) { labels_ = std::move(l); }
  std::size_t label_reads() const { return label_reads_; }

  bool operator==(const Dataset& o) const {
    return env_ == o.env_ && data_ == o.data_ && stats_ == o.stats_ && corruption_ == o.corruption_ &&
           labels_ == o.labels_;
  }

 private:
  EnvId env_ = EnvId::point_mass;
  Transitions data_;
  DatasetStats stats_;
  nlohmann::json corruption_;  // null when clean
  std::optional<std::vector<std::uint8_t>> labels_;
  mutable std::size_t label_reads_ = 0;
};

namespace detail {

inline void write_f32(std::ostream& out, float v) {
  std::uint32_t bits = std::bit_cast<std::uint32_t>(v);
  unsigned char b[4] = {static_cast<unsigned char>(bits), static_cast<unsigned char>(bits >> 8),
                        static_cast<unsigned char>(bits >> 16), static_cast<unsigned char>(bits >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

inline float read_f32(const unsigned char* b) {
  const std::uint32_t bits = static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
                             (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
  return std::bit_cast<float>(bits);
}

}  // namespace detail

inline void save_dataset(const Dataset& ds, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const Transitions& t = ds.transitions();
  nlohmann::json meta;
  meta["format_version"] = kDatasetFormatVersion;
  meta["env"] = env_name(ds.env());
  meta["n"] = t.size();
  meta["state_dim"] = t.state_dim;
  meta["action_dim"] = t.action_dim;
  meta["stats"] = {{"state_std", ds.stats().state_std},
                   {"action_std", ds.stats().action_std},
                   {"next_state_std", ds.stats().next_state_std}};
  meta["corruption"] = ds.corruption_spec();
  meta["has_labels"] = ds.has_labels();
  {
    std::ofstream out(dir / "meta.json");
    if (!out) throw FormatError("save_dataset: cannot write " + (dir / "meta.json").string());
    out << meta.dump(2) << '\n';
  }
  std::ofstream data(dir / "data.bin", std::ios::binary);
  if (!data) throw FormatError("save_dataset: cannot write data.bin");
  for (std::size_t i = 0; i < t.size(); ++i) {
    for (int d = 0; d < t.state_dim; ++d) detail::write_f32(data, t.state(i)[d]);
    for (int d = 0; d < t.action_dim; ++d) detail::write_f32(data, t.action(i)[d]);
    detail::write_f32(data, t.rewards[i]);
    for (int d = 0; d < t.state_dim; ++d) detail::write_f32(data, t.next_state(i)[d]);
    detail::write_f32(data, t.dones[i] ? 1.0f : 0.0f);
  }
  const auto labels_path = dir / "labels.bin";
  if (ds.has_labels()) {
    const auto& labels = ds.labels();
    std::ofstream lb(labels_path, std::ios::binary);
    lb.write(reinterpret_cast<const char*>(labels.data()), static_cast<std::streamsize>(labels.size()));
  } else if (std::filesystem::exists(labels_path)) {
    std::filesystem::remove(labels_path);
  }
}

inline Dataset load_dataset(const std::filesystem::path& dir) {
  std::ifstream in(dir / "meta.json");
  if (!in) throw FormatError("load_dataset: missing " + (dir / "meta.json").string());
  nlohmann::json meta;
  try {
    in >> meta;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("load_dataset: malformed header meta.json: ") + e.what());
  }
  Transitions t;
  std::size_t n = 0;
  EnvId env;
  DatasetStats stats;
  bool has_labels = false;
  try {
    if (meta.at("format_version").get<int>() != kDatasetFormatVersion) {
      throw FormatError("load_dataset: header format_version unsupported");
    }
    env = parse_env(meta.at("env").get<std::string>());
    n = meta.at("n").get<std::size_t>();
    t.state_dim = meta.at("state_dim").get<int>();
    t.action_dim = meta.at("action_dim").get<int>();
    stats.state_std = meta.at("stats").at("state_std").get<std::vector<double>>();
    stats.action_std = meta.at("stats").at("action_std").get<std::vector<double>>();
    stats.next_state_std = meta.at("stats").at("next_state_std").get<std::vector<double>>();
    has_labels = meta.at("has_labels").get<bool>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("load_dataset: malformed header field: ") + e.what());
  } catch (const ConfigError& e) {
    throw FormatError(std::string("load_dataset: malformed header: ") + e.what());
  }
  if (t.state_dim <= 0 || t.action_dim <= 0 || stats.state_std.size() != static_cast<std::size_t>(t.state_dim) ||
      stats.action_std.size() != static_cast<std::size_t>(t.action_dim) ||
      stats.next_state_std.size() != static_cast<std::size_t>(t.state_dim)) {
    throw FormatError("load_dataset: header dimensions inconsistent");
  }

  const std::size_t record = static_cast<std::size_t>(2 * t.state_dim + t.action_dim + 2);
  std::ifstream data(dir / "data.bin", std::ios::binary);
  if (!data) throw FormatError("load_dataset: missing data.bin");
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(data)), std::istreambuf_iterator<char>());
  if (bytes.size() != n * record * 4) {
    throw FormatError("load_dataset: data.bin holds " + std::to_string(bytes.size()) + " bytes, header implies " +
                      std::to_string(n * record * 4) + " (truncated or mismatched blob)");
  }
  const unsigned char* p = bytes.data();
  auto next = [&p] {
    const float v = detail::read_f32(p);
    p += 4;
    return v;
  };
  for (std::size_t i = 0; i < n; ++i) {
    for (int d = 0; d < t.state_dim; ++d) t.states.push_back(next());
    for (int d = 0; d < t.action_dim; ++d) t.actions.push_back(next());
    t.rewards.push_back(next());
    for (int d = 0; d < t.state_dim; ++d) t.next_states.push_back(next());
    t.dones.push_back(next() != 0.0f ? 1 : 0);
  }

  Dataset ds(env, std::move(t));
  ds.set_stats(std::move(stats));
  ds.set_corruption_spec(meta.value("corruption", nlohmann::json()));
  if (has_labels) {
    std::ifstream lb(dir / "labels.bin", std::ios::binary);
    if (!lb) throw FormatError("load_dataset: header declares labels but labels.bin is missing");
    std::vector<std::uint8_t> labels((std::istreambuf_iterator<char>(lb)), std::istreambuf_iterator<char>());
    if (labels.size() != n) throw FormatError("load_dataset: labels.bin length does not match n");
    for (std::uint8_t l : labels) {
      if (l > 0x0f) throw FormatError("load_dataset: labels.bin uses bits above the low four");
    }
    ds.set_labels(std::move(labels));
  }
  return ds;
}

}  // namespace tracer::env
