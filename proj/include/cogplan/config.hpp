// Copyright 2026 The cogplan Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Scenario configuration files (JSON) and their content hash.

#pragma once

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <string_view>

#include "json.hpp"

#include "cogplan/traffic.hpp"

namespace cogplan::traffic {

using Json = nlohmann::ordered_json;

inline const char* to_string(OnInfeasible m) { return m == OnInfeasible::kAbort ? "abort" : "fallback"; }

inline OnInfeasible parse_on_infeasible(const std::string& s) {
  if (s == "abort") return OnInfeasible::kAbort;
  if (s == "fallback") return OnInfeasible::kFallback;
  throw ConfigError("on_infeasible must be abort or fallback, got '" + s + "'");
}

namespace detail {

inline Json vehicle_to_json(const VehicleConfig& v) {
  return Json{{"x0", v.x0}, {"lane0", v.lane0}, {"v0", v.v0},
              {"v_max", v.v_max}, {"x_min", v.x_min}, {"x_max", v.x_max}};
}

template <typename T>
void read_key(const Json& j, const char* key, T& out, const std::string& where) {
  auto it = j.find(key);
  if (it == j.end()) return;
  try {
    out = it->template get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError("bad value for '" + where + key + "'");
  }
}

inline void reject_unknown(const Json& j, const std::set<std::string>& known, const std::string& where) {
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!known.count(it.key())) throw ConfigError("unknown key '" + where + it.key() + "'");
}

inline VehicleConfig vehicle_from_json(const Json& j, VehicleConfig v, const std::string& where) {
  if (!j.is_object()) throw ConfigError("'" + where + "' must be an object");
  reject_unknown(j, {"x0", "lane0", "v0", "v_max", "x_min", "x_max"}, where + ".");
  read_key(j, "x0", v.x0, where + ".");
  read_key(j, "lane0", v.lane0, where + ".");
  read_key(j, "v0", v.v0, where + ".");
  read_key(j, "v_max", v.v_max, where + ".");
  read_key(j, "x_min", v.x_min, where + ".");
  read_key(j, "x_max", v.x_max, where + ".");
  return v;
}

}  // namespace detail

/// Keys that only steer a run and leave the hierarchy and planner unchanged.
inline const std::set<std::string>& run_only_keys() {
  static const std::set<std::string> keys{"seed", "max_steps", "on_infeasible"};
  return keys;
}

inline Json to_json(const ScenarioConfig& c) {
  return Json{
      {"schema_version", c.schema_version},
      {"scenario", to_string(c.kind)},
      {"dt", c.dt},
      {"car_length", c.car_length},
      {"lane_width", c.lane_width},
      {"horizon", c.horizon},
      {"epsilon", c.epsilon},
      {"discount", c.discount},
      {"accelerations", c.accelerations},
      {"ego_lane_change", c.ego_lane_change},
      {"human_lane_change", c.human_lane_change},
      {"position_step", c.position_step},
      {"speed_step", c.speed_step},
      {"ego", detail::vehicle_to_json(c.ego)},
      {"human", detail::vehicle_to_json(c.human)},
      {"collision_penalty", c.collision_penalty},
      {"levels", c.levels},
      {"level_prior", c.level_prior},
      {"k_max", c.k_max},
      {"temperature", c.temperature},
      {"level0_softmax", c.level0_softmax},
      {"intersection_gap", c.intersection_gap},
      {"lane_gap", c.lane_gap},
      {"merge_start", c.merge_start},
      {"merge_end", c.merge_end},
      {"seed", c.seed},
      {"max_steps", c.max_steps},
      {"likelihood_floor", c.likelihood_floor},
      {"on_infeasible", to_string(c.on_infeasible)},
  };
}

/// Missing keys take the scenario's defaults; unknown keys are rejected.
/// The result is validated.
inline ScenarioConfig config_from_json(const Json& j) {
  if (!j.is_object()) throw ConfigError("configuration must be a JSON object");
  if (!j.contains("scenario")) throw ConfigError("missing key 'scenario'");
  if (!j.contains("schema_version")) throw ConfigError("missing key 'schema_version'");
  std::string kind;
  detail::read_key(j, "scenario", kind, "");
  ScenarioConfig c = default_config(parse_scenario_kind(kind));

  std::set<std::string> known;
  const Json defaults = to_json(c);
  for (auto it = defaults.begin(); it != defaults.end(); ++it) known.insert(it.key());
  detail::reject_unknown(j, known, "");

  detail::read_key(j, "schema_version", c.schema_version, "");
  detail::read_key(j, "dt", c.dt, "");
  detail::read_key(j, "car_length", c.car_length, "");
  detail::read_key(j, "lane_width", c.lane_width, "");
  detail::read_key(j, "horizon", c.horizon, "");
  detail::read_key(j, "epsilon", c.epsilon, "");
  detail::read_key(j, "discount", c.discount, "");
  detail::read_key(j, "accelerations", c.accelerations, "");
  detail::read_key(j, "ego_lane_change", c.ego_lane_change, "");
  detail::read_key(j, "human_lane_change", c.human_lane_change, "");
  detail::read_key(j, "position_step", c.position_step, "");
  detail::read_key(j, "speed_step", c.speed_step, "");
  if (j.contains("ego")) c.ego = detail::vehicle_from_json(j["ego"], c.ego, "ego");
  if (j.contains("human")) c.human = detail::vehicle_from_json(j["human"], c.human, "human");
  detail::read_key(j, "collision_penalty", c.collision_penalty, "");
  detail::read_key(j, "levels", c.levels, "");
  detail::read_key(j, "level_prior", c.level_prior, "");
  detail::read_key(j, "k_max", c.k_max, "");
  detail::read_key(j, "temperature", c.temperature, "");
  detail::read_key(j, "level0_softmax", c.level0_softmax, "");
  detail::read_key(j, "intersection_gap", c.intersection_gap, "");
  detail::read_key(j, "lane_gap", c.lane_gap, "");
  detail::read_key(j, "merge_start", c.merge_start, "");
  detail::read_key(j, "merge_end", c.merge_end, "");
  detail::read_key(j, "seed", c.seed, "");
  detail::read_key(j, "max_steps", c.max_steps, "");
  detail::read_key(j, "likelihood_floor", c.likelihood_floor, "");
  if (j.contains("on_infeasible")) {
    std::string m;
    detail::read_key(j, "on_infeasible", m, "");
    c.on_infeasible = parse_on_infeasible(m);
  }
  validate_config(c);
  return c;
}

inline ScenarioConfig parse_config(const std::string& text) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("malformed configuration: ") + e.what());
  }
  return config_from_json(j);
}

inline ScenarioConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read configuration file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

/// 64-bit FNV-1a.
inline std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

/// Hash of everything that shapes the hierarchy and the planner.
inline std::uint64_t config_hash(const ScenarioConfig& c) {
  Json j = to_json(c);
  for (const auto& k : run_only_keys()) j.erase(k);
  return fnv1a64(j.dump());
}

inline std::string hash_hex(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace cogplan::traffic
