#pragma once

// Parameter checkpoints: manifest.json (module identity, names, shapes, step
// counter, free-form metadata) plus params.bin, a little-endian float64 blob
// holding every tensor in manifest order.

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "tracer/nn/autodiff.hpp"

namespace tracer::nn {

inline constexpr int kCheckpointFormatVersion = 1;

namespace detail {

template <typename T>
T to_little_endian(T v) {
  if constexpr (std::endian::native == std::endian::little) {
    return v;
  } else {
    unsigned char bytes[sizeof(T)];
    std::memcpy(bytes, &v, sizeof(T));
    std::reverse(bytes, bytes + sizeof(T));
    std::memcpy(&v, bytes, sizeof(T));
    return v;
  }
}

inline void write_f64(std::ostream& out, double v) {
  const double le = to_little_endian(v);
  out.write(reinterpret_cast<const char*>(&le), sizeof(le));
}

inline double read_f64(std::istream& in) {
  double v = 0.0;
  in.read(reinterpret_cast<char*>(&v), sizeof(v));
  return to_little_endian(v);
}

}  // namespace detail

struct CheckpointEntry {
  std::string module;
  std::string name;
  Tensor value;
};

struct Checkpoint {
  std::int64_t step = 0;
  nlohmann::json metadata = nlohmann::json::object();
  std::vector<CheckpointEntry> entries;

  void add(const std::string& module, const std::string& name, const Tensor& value) {
    entries.push_back({module, name, value});
  }

  void add_params(const std::string& module, const std::vector<Parameter*>& params) {
    for (const Parameter* p : params) add(module, p->name, p->value);
  }

  const CheckpointEntry* find(const std::string& module, const std::string& name) const {
    for (const auto& e : entries) {
      if (e.module == module && e.name == name) return &e;
    }
    return nullptr;
  }

  // Copies stored values into params; names and shapes must match exactly.
  void restore_params(const std::string& module, const std::vector<Parameter*>& params) const {
    for (Parameter* p : params) p->value = tensor(module, p->name, p->value.rows(), p->value.cols());
  }

  Tensor tensor(const std::string& module, const std::string& name, Eigen::Index rows, Eigen::Index cols) const {
    const CheckpointEntry* e = find(module, name);
    if (e == nullptr) throw FormatError("checkpoint: missing tensor " + module + "/" + name);
    if (e->value.rows() != rows || e->value.cols() != cols) {
      throw FormatError("checkpoint: tensor " + module + "/" + name + " has shape " + shape_string(e->value) +
                        ", expected (" + std::to_string(rows) + "x" + std::to_string(cols) + ")");
    }
    return e->value;
  }
};

inline void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  nlohmann::json manifest;
  manifest["format_version"] = kCheckpointFormatVersion;
  manifest["step"] = ckpt.step;
  manifest["metadata"] = ckpt.metadata;
  manifest["tensors"] = nlohmann::json::array();
  for (const auto& e : ckpt.entries) {
    manifest["tensors"].push_back({{"module", e.module}, {"name", e.name}, {"shape", {e.value.rows(), e.value.cols()}}});
  }
  {
    std::ofstream out(dir / "manifest.json");
    if (!out) throw FormatError("checkpoint: cannot write " + (dir / "manifest.json").string());
    out << manifest.dump(2) << '\n';
  }
  std::ofstream blob(dir / "params.bin", std::ios::binary);
  if (!blob) throw FormatError("checkpoint: cannot write " + (dir / "params.bin").string());
  for (const auto& e : ckpt.entries) {
    for (Eigen::Index i = 0; i < e.value.size(); ++i) detail::write_f64(blob, e.value.data()[i]);
  }
}

inline Checkpoint load_checkpoint(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw FormatError("checkpoint: missing " + (dir / "manifest.json").string());
  nlohmann::json manifest;
  try {
    in >> manifest;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint: malformed manifest: ") + e.what());
  }
  if (!manifest.contains("format_version") || manifest["format_version"] != kCheckpointFormatVersion) {
    throw FormatError("checkpoint: unsupported format version");
  }
  Checkpoint ckpt;
  ckpt.step = manifest.at("step").get<std::int64_t>();
  ckpt.metadata = manifest.value("metadata", nlohmann::json::object());

  std::ifstream blob(dir / "params.bin", std::ios::binary);
  if (!blob) throw FormatError("checkpoint: missing " + (dir / "params.bin").string());
  for (const auto& t : manifest.at("tensors")) {
    const auto rows = t.at("shape").at(0).get<Eigen::Index>();
    const auto cols = t.at("shape").at(1).get<Eigen::Index>();
    Tensor v(rows, cols);
    for (Eigen::Index i = 0; i < v.size(); ++i) v.data()[i] = detail::read_f64(blob);
    if (!blob) throw FormatError("checkpoint: params.bin truncated at " + t.at("name").get<std::string>());
    ckpt.entries.push_back({t.at("module").get<std::string>(), t.at("name").get<std::string>(), std::move(v)});
  }
  if (blob.peek() != std::char_traits<char>::eof()) throw FormatError("checkpoint: params.bin has trailing bytes");
  return ckpt;
}

}  // namespace tracer::nn
