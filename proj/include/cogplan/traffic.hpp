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

// Two-vehicle driving scenarios on a discrete grid.
//
// Each vehicle has a longitudinal position, a lane and a speed, all on grid
// nodes. Longitudinal motion is double-integrator kinematics with a fixed
// sampling period; lane changes complete within one step. The joint state of
// ego and human is a dense index, so every scenario is a cogplan::GameSpec.
//
// Vehicle states are kept in a road frame (s_x along the direction of
// travel, s_y the lane center). In the intersection the human drives along
// the world y axis, so its road frame is rotated when rewards and safe sets
// are evaluated.

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <memory>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "cogplan/game_core.hpp"
#include "cogplan/hierarchy.hpp"

namespace cogplan::traffic {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class ScenarioKind { kIntersection, kOvertaking, kMerging };

inline const char* to_string(ScenarioKind k) {
  switch (k) {
    case ScenarioKind::kIntersection: return "intersection";
    case ScenarioKind::kOvertaking: return "overtaking";
    case ScenarioKind::kMerging: return "merging";
  }
  return "?";
}

inline ScenarioKind parse_scenario_kind(const std::string& s) {
  if (s == "intersection") return ScenarioKind::kIntersection;
  if (s == "overtaking") return ScenarioKind::kOvertaking;
  if (s == "merging") return ScenarioKind::kMerging;
  throw ConfigError("unknown scenario '" + s + "'");
}

enum class LaneCommand { kKeep, kLeft, kRight };

/// Road-frame vehicle state: meters, meters, meters per second.
struct VehicleState {
  double s_x = 0.0;
  double s_y = 0.0;
  double v = 0.0;

  bool operator==(const VehicleState&) const = default;
};

struct KinematicLimits {
  double dt = 1.0;
  double v_max = 12.0;
  /// Lane centers ordered right to left.
  std::vector<double> lane_centers;
};

inline std::size_t lane_of(const KinematicLimits& lim, double s_y) {
  for (std::size_t i = 0; i < lim.lane_centers.size(); ++i)
    if (std::abs(lim.lane_centers[i] - s_y) < 1e-9) return i;
  throw ArgumentError("lateral position is not a lane center");
}

/// One sampling period of longitudinal double-integrator motion plus an
/// instantaneous lane change. When the speed saturates at 0 or v_max the
/// position advances by the mean of the old and new speeds.
inline VehicleState vehicle_step(const VehicleState& s, double a, LaneCommand lane,
                                 const KinematicLimits& lim) {
  const std::size_t cur = lane_of(lim, s.s_y);
  std::size_t target = cur;
  if (lane == LaneCommand::kLeft) {
    if (cur + 1 >= lim.lane_centers.size()) throw ArgumentError("no lane to the left");
    target = cur + 1;
  } else if (lane == LaneCommand::kRight) {
    if (cur == 0) throw ArgumentError("no lane to the right");
    target = cur - 1;
  }
  const double dt = lim.dt;
  const double v_raw = s.v + dt * a;
  const double v_next = std::clamp(v_raw, 0.0, lim.v_max);
  const double advance = v_next == v_raw ? dt * s.v + 0.5 * dt * dt * a : dt * 0.5 * (s.v + v_next);
  return {s.s_x + advance, lim.lane_centers[target], v_next};
}

struct VehicleConfig {
  double x0 = 0.0;
  int lane0 = 0;
  double v0 = 0.0;
  double v_max = 12.0;
  double x_min = 0.0;
  double x_max = 100.0;
};

enum class OnInfeasible { kAbort, kFallback };

/// Everything needed to instantiate and run one scenario. Values not fixed
/// by the scenario geometry are tunable; see configs/ for the defaults.
struct ScenarioConfig {
  int schema_version = 1;
  ScenarioKind kind = ScenarioKind::kIntersection;
  double dt = 1.0;
  double car_length = 5.0;
  double lane_width = 3.6;
  int horizon = 3;
  double epsilon = 0.01;
  double discount = 0.9;
  std::vector<double> accelerations{-2.0, 0.0, 2.0};
  bool ego_lane_change = false;
  bool human_lane_change = false;
  double position_step = 1.0;
  double speed_step = 2.0;
  VehicleConfig ego;
  VehicleConfig human;
  double collision_penalty = 1000.0;
  std::vector<int> levels{1, 2};
  std::vector<double> level_prior{0.5, 0.5};
  int k_max = 2;
  double temperature = 1.0;
  bool level0_softmax = false;
  double intersection_gap = 1.2;  // in car lengths
  double lane_gap = 1.6;          // in car lengths
  double merge_start = 20.0;
  double merge_end = 100.0;
  std::uint64_t seed = 1;
  int max_steps = 30;
  double likelihood_floor = 1e-9;
  OnInfeasible on_infeasible = OnInfeasible::kFallback;
};

/// Throws ConfigError naming the first violated constraint.
inline void validate_config(const ScenarioConfig& c) {
  auto require = [](bool ok, const std::string& msg) {
    if (!ok) throw ConfigError(msg);
  };
  require(c.schema_version == 1, "unsupported schema_version");
  require(c.epsilon >= 0.0 && c.epsilon <= 1.0, "epsilon out of [0,1]");
  require(c.discount > 0.0 && c.discount <= 1.0, "discount out of (0,1]");
  require(c.horizon >= 1, "horizon must be >= 1");
  require(c.dt > 0.0, "dt must be positive");
  require(c.car_length > 0.0 && c.lane_width > 0.0, "car_length and lane_width must be positive");
  require(c.position_step > 0.0 && c.speed_step > 0.0, "grid resolutions must be positive");
  require(!c.accelerations.empty(), "acceleration set is empty");
  require(c.k_max >= 1, "k_max must be >= 1");
  require(c.temperature > 0.0, "temperature must be positive");
  require(!c.levels.empty() && c.levels.size() == c.level_prior.size(),
          "levels and level_prior must have the same nonzero length");
  double total = 0.0;
  for (double p : c.level_prior) {
    require(p >= 0.0 && p <= 1.0, "level_prior entries must lie in [0,1]");
    total += p;
  }
  require(std::abs(total - 1.0) <= kProbTolerance, "level_prior must sum to 1");
  for (int k : c.levels) require(k >= 0 && k <= c.k_max, "levels must lie in [0, k_max]");
  require(c.max_steps >= 0, "max_steps must be >= 0");
  require(c.likelihood_floor >= 0.0 && c.likelihood_floor < 1.0, "likelihood_floor out of [0,1)");
  require(c.collision_penalty >= 0.0, "collision_penalty must be >= 0");
  for (const VehicleConfig* v : {&c.ego, &c.human}) {
    require(v->x_max > v->x_min, "vehicle x_max must exceed x_min");
    require(v->v_max > 0.0, "vehicle v_max must be positive");
    require(v->x0 >= v->x_min && v->x0 <= v->x_max, "initial position outside the road section");
    require(v->v0 >= 0.0 && v->v0 <= v->v_max, "initial speed outside [0, v_max]");
  }
  const int lanes = c.kind == ScenarioKind::kIntersection ? 1 : 2;
  require(c.ego.lane0 >= 0 && c.ego.lane0 < lanes, "ego lane0 out of range");
  require(c.human.lane0 >= 0 && c.human.lane0 < lanes, "human lane0 out of range");
  if (c.kind == ScenarioKind::kIntersection)
    require(!c.ego_lane_change && !c.human_lane_change, "the intersection has no lane changes");
  if (c.kind == ScenarioKind::kMerging) require(c.merge_end > c.merge_start, "merge_end must exceed merge_start");
}

/// Grid of one vehicle: position x lane x speed, with a precomputed
/// successor table per action.
class VehicleGrid {
 public:
  struct Action {
    double accel;
    bool change_lane;
  };

  VehicleGrid() = default;

  VehicleGrid(const VehicleConfig& vc, const ScenarioConfig& c, std::vector<double> lane_centers,
              bool lane_change)
      : x_min_(vc.x_min),
        pos_step_(c.position_step),
        speed_step_(c.speed_step),
        limits_{c.dt, vc.v_max, std::move(lane_centers)} {
    num_pos_ = checked_count((vc.x_max - vc.x_min) / pos_step_, "position range is not a multiple of position_step") + 1;
    num_speed_ = checked_count(vc.v_max / speed_step_, "v_max is not a multiple of speed_step") + 1;
    num_lanes_ = limits_.lane_centers.size();
    for (double a : c.accelerations) actions_.push_back({a, false});
    if (lane_change)
      for (double a : c.accelerations) actions_.push_back({a, true});
    neutral_ = 0;
    for (std::size_t i = 0; i < actions_.size(); ++i)
      if (actions_[i].accel == 0.0 && !actions_[i].change_lane) {
        neutral_ = i;
        break;
      }

    successor_.resize(size() * actions_.size());
    for (std::size_t idx = 0; idx < size(); ++idx) {
      const VehicleState s = state(idx);
      for (std::size_t u = 0; u < actions_.size(); ++u) {
        LaneCommand cmd = LaneCommand::kKeep;
        if (actions_[u].change_lane)
          cmd = lane_of(limits_, s.s_y) + 1 < num_lanes_ ? LaneCommand::kLeft : LaneCommand::kRight;
        if (actions_[u].change_lane && num_lanes_ < 2) cmd = LaneCommand::kKeep;
        VehicleState n = vehicle_step(s, actions_[u].accel, cmd, limits_);
        const double x_max = x_min_ + pos_step_ * static_cast<double>(num_pos_ - 1);
        if (n.s_x > x_max) n.s_x = x_max;
        successor_[idx * actions_.size() + u] = static_cast<std::uint32_t>(index_of(n));
      }
    }
  }

  std::size_t size() const { return num_pos_ * num_lanes_ * num_speed_; }
  std::size_t num_actions() const { return actions_.size(); }
  std::size_t num_lanes() const { return num_lanes_; }
  const Action& action(std::size_t u) const { return actions_[u]; }
  std::size_t neutral_action() const { return neutral_; }
  const KinematicLimits& limits() const { return limits_; }

  std::size_t successor(std::size_t idx, std::size_t u) const { return successor_[idx * actions_.size() + u]; }

  VehicleState state(std::size_t idx) const {
    const std::size_t speed = idx % num_speed_;
    const std::size_t lane = (idx / num_speed_) % num_lanes_;
    const std::size_t pos = idx / (num_speed_ * num_lanes_);
    return {x_min_ + pos_step_ * static_cast<double>(pos), limits_.lane_centers[lane],
            speed_step_ * static_cast<double>(speed)};
  }

  std::size_t lane_index(std::size_t idx) const { return (idx / num_speed_) % num_lanes_; }

  /// Throws ConfigError when `s` is off the grid.
  std::size_t index_of(const VehicleState& s) const {
    const std::size_t pos = checked_count((s.s_x - x_min_) / pos_step_, "position off the grid");
    const std::size_t speed = checked_count(s.v / speed_step_, "speed off the grid");
    if (pos >= num_pos_) throw ConfigError("position outside the road section");
    if (speed >= num_speed_) throw ConfigError("speed above v_max");
    std::size_t lane = 0;
    try {
      lane = lane_of(limits_, s.s_y);
    } catch (const ArgumentError&) {
      throw ConfigError("lateral position is not a lane center");
    }
    return (pos * num_lanes_ + lane) * num_speed_ + speed;
  }

 private:
  static std::size_t checked_count(double ratio, const char* what) {
    const double r = std::round(ratio);
    if (std::abs(ratio - r) > 1e-9 || r < 0.0) throw ConfigError(what);
    return static_cast<std::size_t>(r);
  }

  double x_min_ = 0.0;
  double pos_step_ = 1.0;
  double speed_step_ = 1.0;
  KinematicLimits limits_;
  std::size_t num_pos_ = 0;
  std::size_t num_speed_ = 0;
  std::size_t num_lanes_ = 1;
  std::vector<Action> actions_;
  std::size_t neutral_ = 0;
  std::vector<std::uint32_t> successor_;
};

struct Point {
  double x;
  double y;
};

/// A configured scenario: the game, the state codec, and level-0 drivers.
class Scenario {
 public:
  explicit Scenario(ScenarioConfig config) : config_(std::move(config)) {
    validate_config(config_);
    const bool highway = config_.kind != ScenarioKind::kIntersection;
    const std::vector<double> lanes =
        highway ? std::vector<double>{config_.lane_width / 2.0, 1.5 * config_.lane_width} : std::vector<double>{0.0};
    check_closure();
    ego_ = VehicleGrid(config_.ego, config_, lanes, config_.ego_lane_change);
    human_ = VehicleGrid(config_.human, config_, lanes, config_.human_lane_change);
    const double total = static_cast<double>(ego_.size()) * static_cast<double>(human_.size());
    if (total >= static_cast<double>(std::numeric_limits<StateIndex>::max()))
      throw ConfigError("joint state space too large for 32-bit state indices");

    auto game = std::make_shared<GameSpec>();
    game->num_states = ego_.size() * human_.size();
    game->num_ego_actions = ego_.num_actions();
    game->num_env_actions = human_.num_actions();
    game->discount = config_.discount;
    game->horizon = config_.horizon;
    const Scenario* self = this;
    game->transition = [self](StateIndex x, ActionIndex u1, ActionIndex u2) {
      const auto [e, h] = self->split(x);
      return self->join(self->ego_.successor(e, u1), self->human_.successor(h, u2));
    };
    game->ego_reward = [self](StateIndex x) { return self->shaped_reward(Player::kEgo, x); };
    game->env_reward = [self](StateIndex x) { return self->shaped_reward(Player::kEnv, x); };
    game->safe = [self](std::int64_t, StateIndex x) { return self->in_omega(x); };
    game_ = std::move(game);
  }

  // The game's closures point at this object.
  Scenario(const Scenario&) = delete;
  Scenario& operator=(const Scenario&) = delete;

  const ScenarioConfig& config() const { return config_; }
  std::shared_ptr<const GameSpec> game() const { return game_; }
  const VehicleGrid& grid(Player p) const { return p == Player::kEgo ? ego_ : human_; }

  StateIndex encode(const VehicleState& ego, const VehicleState& human) const {
    return join(ego_.index_of(ego), human_.index_of(human));
  }

  std::pair<VehicleState, VehicleState> decode(StateIndex x) const {
    const auto [e, h] = split(x);
    return {ego_.state(e), human_.state(h)};
  }

  StateIndex initial_state() const {
    const auto lanes = ego_.limits().lane_centers;
    return encode({config_.ego.x0, lanes[config_.ego.lane0], config_.ego.v0},
                  {config_.human.x0, human_.limits().lane_centers[config_.human.lane0], config_.human.v0});
  }

  /// World coordinates of a vehicle.
  Point world(Player p, const VehicleState& s) const {
    if (p == Player::kEnv && config_.kind == ScenarioKind::kIntersection) return {s.s_y, s.s_x};
    return {s.s_x, s.s_y};
  }

  /// Scenario reward R^i without safety shaping.
  double raw_reward(Player p, StateIndex x) const {
    const auto [e, h] = decode(x);
    const Point w = world(p, p == Player::kEgo ? e : h);
    switch (config_.kind) {
      case ScenarioKind::kIntersection: return p == Player::kEgo ? w.x : w.y;
      case ScenarioKind::kOvertaking: return 8.0 * w.x - w.y;
      case ScenarioKind::kMerging: return w.x + 10.0 * w.y;
    }
    return 0.0;
  }

  /// The inter-vehicle clause of the safe set.
  bool separated(StateIndex x) const {
    const auto [e, h] = decode(x);
    return separated(world(Player::kEgo, e), world(Player::kEnv, h));
  }

  bool separated(Point a, Point b) const {
    const double l = config_.car_length;
    if (config_.kind == ScenarioKind::kIntersection)
      return std::hypot(a.x - b.x, a.y - b.y) >= config_.intersection_gap * l;
    return std::abs(a.x - b.x) >= config_.lane_gap * l || std::abs(a.y - b.y) >= config_.lane_width - 1e-9;
  }

  /// The ego-only road-section clause of the merging safe set; true elsewhere.
  bool ego_in_section(const VehicleState& ego) const {
    if (config_.kind != ScenarioKind::kMerging) return true;
    const std::size_t lane = lane_of(ego_.limits(), ego.s_y);
    if (ego.s_x <= config_.merge_start) return lane == 0;
    if (ego.s_x <= config_.merge_end) return true;
    return lane == 1;
  }

  /// Membership in the safe set Omega.
  bool in_omega(StateIndex x) const {
    const auto [e, h] = decode(x);
    return separated(world(Player::kEgo, e), world(Player::kEnv, h)) && ego_in_section(e);
  }

  /// R^i minus the collision penalty when the safety clauses that concern
  /// player i fail: the full safe set for the ego, separation for the human.
  double shaped_reward(Player p, StateIndex x) const {
    const bool ok = p == Player::kEgo ? in_omega(x) : separated(x);
    return raw_reward(p, x) - (ok ? 0.0 : config_.collision_penalty);
  }

  /// Best N-step values of each first action with the other vehicle frozen
  /// in place.
  std::vector<double> level0_values(Player p, StateIndex x) const {
    const auto [e, h] = split(x);
    const VehicleGrid& own = grid(p);
    const std::size_t own_idx = p == Player::kEgo ? e : h;
    const std::size_t other_idx = p == Player::kEgo ? h : e;
    const int horizon = config_.horizon;
    std::vector<double> weight(static_cast<std::size_t>(horizon));
    weight[0] = 1.0;
    for (int d = 1; d < horizon; ++d) weight[d] = weight[d - 1] * config_.discount;

    auto joint = [&](std::size_t mine) {
      return p == Player::kEgo ? join(mine, other_idx) : join(other_idx, mine);
    };
    auto best = [&](auto& self, std::size_t idx, int depth) -> double {
      if (depth == horizon) return 0.0;
      double b = -std::numeric_limits<double>::infinity();
      for (std::size_t u = 0; u < own.num_actions(); ++u) {
        const std::size_t n = own.successor(idx, u);
        b = std::max(b, weight[depth] * shaped_reward(p, joint(n)) + self(self, n, depth + 1));
      }
      return b;
    };
    std::vector<double> q(own.num_actions());
    for (std::size_t u = 0; u < own.num_actions(); ++u) {
      const std::size_t n = own.successor(own_idx, u);
      q[u] = shaped_reward(p, joint(n)) + best(best, n, 1);
    }
    return q;
  }

  /// Level-0 row: one-hot on the best first action (ties prefer the neutral
  /// action, then the lowest index), or a softmax when configured.
  std::vector<double> level0_row(Player p, StateIndex x) const {
    const auto q = level0_values(p, x);
    if (config_.level0_softmax) return softmax_row(q, config_.temperature);
    const double top = *std::max_element(q.begin(), q.end());
    const std::size_t neutral = grid(p).neutral_action();
    std::size_t pick = q.size();
    if (q[neutral] >= top - 1e-9) {
      pick = neutral;
    } else {
      for (std::size_t u = 0; u < q.size(); ++u)
        if (q[u] >= top - 1e-9) {
          pick = u;
          break;
        }
    }
    std::vector<double> row(q.size(), 0.0);
    row[pick] = 1.0;
    return row;
  }

  /// Lazily evaluated level-k hierarchy over this scenario.
  std::shared_ptr<const Hierarchy> build_hierarchy() const {
    const Scenario* self = this;
    return cogplan::build_hierarchy(
        game_, config_.k_max, [self](StateIndex x) { return self->level0_row(Player::kEgo, x); },
        [self](StateIndex x) { return self->level0_row(Player::kEnv, x); },
        HierarchyOptions{config_.temperature, false});
  }

  std::string describe_action(Player p, ActionIndex u) const {
    const auto& a = grid(p).action(u);
    char buf[48];
    std::snprintf(buf, sizeof buf, "%+g%s", a.accel, a.change_lane ? "/lane" : "");
    return buf;
  }

 private:
  std::pair<std::size_t, std::size_t> split(StateIndex x) const {
    return {x / human_.size(), x % human_.size()};
  }
  StateIndex join(std::size_t e, std::size_t h) const {
    return static_cast<StateIndex>(e * human_.size() + h);
  }

  void check_closure() const {
    auto on_grid = [](double v, double step) {
      const double r = v / step;
      return std::abs(r - std::round(r)) < 1e-9;
    };
    const double dt = config_.dt;
    for (const VehicleConfig* vc : {&config_.ego, &config_.human}) {
      if (!on_grid(vc->v_max, config_.speed_step)) throw ConfigError("v_max is not on the speed grid");
      for (double v = 0.0; v <= vc->v_max + 1e-9; v += config_.speed_step) {
        if (!on_grid(dt * v, config_.position_step))
          throw ConfigError("grid not closed under dynamics: dt*v off the position grid");
        for (double a : config_.accelerations) {
          if (!on_grid(dt * a, config_.speed_step))
            throw ConfigError("grid not closed under dynamics: dt*a off the speed grid");
          if (!on_grid(0.5 * dt * dt * a, config_.position_step))
            throw ConfigError("grid not closed under dynamics: dt^2/2*a off the position grid");
          const double vn = std::clamp(v + dt * a, 0.0, vc->v_max);
          if (!on_grid(0.5 * dt * (v + vn), config_.position_step))
            throw ConfigError("grid not closed under dynamics: saturated motion off the position grid");
        }
      }
    }
  }

  ScenarioConfig config_;
  VehicleGrid ego_;
  VehicleGrid human_;
  std::shared_ptr<const GameSpec> game_;
};

inline std::unique_ptr<Scenario> make_scenario(ScenarioConfig config) {
  return std::make_unique<Scenario>(std::move(config));
}

/// Full level-0 table. Only sensible for small grids.
inline PolicyTable level0_policy(const Scenario& scenario, Player p) {
  const auto& g = *scenario.game();
  const std::size_t m = g.num_actions(p);
  std::vector<double> probs;
  probs.reserve(g.num_states * m);
  for (std::size_t x = 0; x < g.num_states; ++x) {
    const auto r = scenario.level0_row(p, static_cast<StateIndex>(x));
    probs.insert(probs.end(), r.begin(), r.end());
  }
  return PolicyTable(p, 0, g.num_states, m, std::move(probs));
}

/// Defaults for each scenario, including the initial conditions used by the
/// shipped configs.
inline ScenarioConfig default_config(ScenarioKind kind) {
  ScenarioConfig c;
  c.kind = kind;
  switch (kind) {
    case ScenarioKind::kIntersection:
      c.ego = {-30.0, 0, 8.0, 12.0, -40.0, 40.0};
      c.human = {-30.0, 0, 8.0, 12.0, -40.0, 40.0};
      break;
    case ScenarioKind::kOvertaking:
      c.ego_lane_change = true;
      c.ego = {0.0, 0, 10.0, 12.0, 0.0, 400.0};
      c.human = {15.0, 0, 8.0, 10.0, 0.0, 400.0};
      break;
    case ScenarioKind::kMerging:
      c.ego_lane_change = true;
      c.ego = {0.0, 0, 10.0, 12.0, 0.0, 200.0};
      c.human = {0.0, 1, 10.0, 12.0, 0.0, 200.0};
      break;
  }
  return c;
}

}  // namespace cogplan::traffic
