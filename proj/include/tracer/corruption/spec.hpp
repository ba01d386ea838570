#pragma once

#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "tracer/error.hpp"

namespace tracer::corruption {

enum class Mode { random, adversarial };

// Canonical application order for simultaneous corruption.
enum class Element { state = 0, action = 1, reward = 2, dynamics = 3 };

inline constexpr Element kAllElements[] = {Element::state, Element::action, Element::reward, Element::dynamics};

struct CorruptionSpec {
  Mode mode = Mode::random;
  std::vector<Element> elements{Element::state, Element::action, Element::reward, Element::dynamics};
  double rate = 0.3;
  double scale = 1.0;
  std::uint64_t seed = 0;
  int pgd_steps = 100;
  double pgd_step_size = 0.01;

  void validate() const {
    if (!(rate >= 0.0 && rate <= 1.0)) throw ConfigError("corruption rate must lie in [0, 1]");
    if (!(scale >= 0.0)) throw ConfigError("corruption scale must be >= 0");
    if (elements.empty()) throw ConfigError("corruption needs at least one element");
    if (pgd_steps < 0 || pgd_step_size < 0.0) throw ConfigError("PGD steps and step size must be >= 0");
  }

  bool has(Element e) const {
    for (Element x : elements) {
      if (x == e) return true;
    }
    return false;
  }
};

inline std::string element_code(Element e) {
  switch (e) {
    case Element::state: return "s";
    case Element::action: return "a";
    case Element::reward: return "r";
    case Element::dynamics: return "d";
  }
  return "?";
}

inline Element parse_element(const std::string& code) {
  if (code == "s" || code == "state" || code == "obs" || code == "observation") return Element::state;
  if (code == "a" || code == "action") return Element::action;
  if (code == "r" || code == "reward") return Element::reward;
  if (code == "d" || code == "dynamics" || code == "next_state") return Element::dynamics;
  throw ConfigError("unknown corruption element '" + code + "'");
}

// "s,a,r,d" -> elements, deduplicated and in canonical order.
inline std::vector<Element> parse_elements(const std::string& list) {
  bool present[4] = {false, false, false, false};
  std::stringstream ss(list);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    present[static_cast<int>(parse_element(item))] = true;
  }
  std::vector<Element> out;
  for (Element e : kAllElements) {
    if (present[static_cast<int>(e)]) out.push_back(e);
  }
  return out;
}

inline std::string elements_string(const std::vector<Element>& elements) {
  std::string out;
  for (Element e : elements) out += (out.empty() ? "" : ",") + element_code(e);
  return out;
}

inline Mode parse_mode(const std::string& m) {
  if (m == "random") return Mode::random;
  if (m == "adversarial") return Mode::adversarial;
  throw ConfigError("unknown corruption mode '" + m + "'");
}

inline std::string mode_string(Mode m) { return m == Mode::random ? "random" : "adversarial"; }

inline nlohmann::json to_json(const CorruptionSpec& s) {
  return {{"mode", mode_string(s.mode)}, {"elements", elements_string(s.elements)},
          {"rate", s.rate},              {"scale", s.scale},
          {"seed", s.seed},              {"pgd_steps", s.pgd_steps},
          {"pgd_step_size", s.pgd_step_size}};
}

}  // namespace tracer::corruption
