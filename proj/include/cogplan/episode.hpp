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

// Closed-loop episodes: the ego planner against a simulated level-k human.

#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <memory>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

#include "cogplan/hierarchy.hpp"
#include "cogplan/inference.hpp"
#include "cogplan/planner.hpp"
#include "cogplan/traffic.hpp"

namespace cogplan::sim {

using traffic::OnInfeasible;
using traffic::Scenario;
using traffic::ScenarioKind;
using traffic::VehicleState;

/// Stream ids for the two random sources derived from the master seed.
enum class Stream : std::uint32_t { kHuman = 1, kEgo = 2 };

inline std::mt19937_64 make_stream(std::uint64_t seed, Stream stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream)};
  return std::mt19937_64(seq);
}

struct StepRecord {
  int t = 0;
  VehicleState ego;
  VehicleState human;
  /// P(sigma = K[slot] | history) at time t.
  std::vector<double> posterior;
  bool omega_violation = false;
  /// Set when a plan was made and actions were executed at t.
  bool acted = false;
  ActionIndex ego_action = 0;
  ActionIndex human_action = 0;
  double expected_reward = 0.0;
  double constraint_probability = 0.0;
  bool feasible = false;
  bool fallback = false;
  /// Likelihood floor applied in the update that produced this posterior.
  bool floored = false;
  double wall_ms = 0.0;
};

struct Outcome {
  /// intersection: ego_first | ego_yielded | simultaneous | undecided
  /// overtaking:   completed | incomplete
  /// merging:      merged_ahead | merged_behind | not_merged
  std::string label;
  /// Step of the defining event (crossing, completion, merge), or -1.
  int event_step = -1;
  /// Ego world x at the event.
  double event_x = std::numeric_limits<double>::quiet_NaN();
  bool violation = false;
  bool within_section = true;
};

struct EpisodeLog {
  ScenarioKind kind = ScenarioKind::kIntersection;
  int human_level = 1;
  std::uint64_t seed = 0;
  std::vector<int> levels;
  std::vector<StepRecord> records;
  Outcome outcome;
  bool aborted_infeasible = false;
  std::vector<std::string> warnings;
};

class PlannerAborted : public std::runtime_error {
 public:
  explicit PlannerAborted(int t)
      : std::runtime_error("planner infeasible at t=" + std::to_string(t) + "; aborting") {}
};

/// Watches the trajectory, decides termination and the scenario outcome.
class OutcomeTracker {
 public:
  explicit OutcomeTracker(const Scenario& s) : s_(s) {}

  /// Feeds the record for time t; returns true when the episode is over.
  bool observe(const StepRecord& r) {
    const auto& cfg = s_.config();
    const auto ego = s_.world(Player::kEgo, r.ego);
    const auto human = s_.world(Player::kEnv, r.human);
    if (r.omega_violation) out_.violation = true;
    switch (cfg.kind) {
      case ScenarioKind::kIntersection: {
        // Crossing time of the conflict point, interpolated within the step.
        auto crossing = [&](double now, double& prev, double& when) {
          if (when < 0.0 && now > 0.0 && r.t > 0) when = (r.t - 1) + (0.0 - prev) / (now - prev);
          prev = now;
        };
        crossing(ego.x, ego_prev_, ego_cross_);
        crossing(human.y, human_prev_, human_cross_);
        const double clear = cfg.intersection_gap * cfg.car_length;
        if (ego.x >= clear && human.y >= clear) done_ = true;
        break;
      }
      case ScenarioKind::kOvertaking: {
        const std::size_t lane = traffic::lane_of(s_.grid(Player::kEgo).limits(), r.ego.s_y);
        if (lane == 1) was_left_ = true;
        if (out_.event_step < 0 && was_left_ && lane == 0 && ego.x > human.x) {
          out_.event_step = r.t;
          out_.event_x = ego.x;
        }
        break;
      }
      case ScenarioKind::kMerging: {
        const std::size_t lane = traffic::lane_of(s_.grid(Player::kEgo).limits(), r.ego.s_y);
        // Lane changes are instantaneous when commanded, so the merge point
        // is where the ego stood at the start of the merging step.
        if (out_.event_step < 0 && lane == 1) {
          const double at = r.t > 0 ? merge_prev_x_ : ego.x;
          out_.event_step = r.t;
          out_.event_x = at;
          ahead_ = ego.x > human.x;
          out_.within_section = at > cfg.merge_start && at <= cfg.merge_end;
        }
        merge_prev_x_ = ego.x;
        break;
      }
    }
    if (out_.event_step >= 0 && r.t >= out_.event_step + cfg.horizon) done_ = true;
    return done_ || out_.violation;
  }

  Outcome outcome() const {
    Outcome o = out_;
    switch (s_.config().kind) {
      case ScenarioKind::kIntersection: {
        const double inf = std::numeric_limits<double>::infinity();
        const double e = ego_cross_ < 0.0 ? inf : ego_cross_;
        const double h = human_cross_ < 0.0 ? inf : human_cross_;
        o.label = e < h ? "ego_first" : h < e ? "ego_yielded" : e == inf ? "undecided" : "simultaneous";
        if (ego_cross_ >= 0.0) {
          o.event_step = static_cast<int>(std::ceil(ego_cross_));
          o.event_x = 0.0;
        }
        break;
      }
      case ScenarioKind::kOvertaking:
        o.label = out_.event_step >= 0 ? "completed" : "incomplete";
        break;
      case ScenarioKind::kMerging:
        o.label = out_.event_step < 0 ? "not_merged" : ahead_ ? "merged_ahead" : "merged_behind";
        if (out_.event_step < 0) o.within_section = false;
        break;
    }
    return o;
  }

 private:
  const Scenario& s_;
  Outcome out_;
  bool done_ = false;
  double ego_prev_ = 0.0;
  double human_prev_ = 0.0;
  double ego_cross_ = -1.0;
  double human_cross_ = -1.0;
  double merge_prev_x_ = 0.0;
  bool was_left_ = false;
  bool ahead_ = false;
};

/// Planner, hierarchy and kernel for one scenario; shared across episodes.
class Simulator {
 public:
  explicit Simulator(const Scenario& scenario)
      : Simulator(scenario, scenario.build_hierarchy()) {}

  Simulator(const Scenario& scenario, std::shared_ptr<const Hierarchy> hierarchy)
      : scenario_(scenario), hierarchy_(std::move(hierarchy)) {
    const auto& cfg = scenario_.config();
    kernel_ = build_kernel(hierarchy_, cfg.levels);
    const auto game = scenario_.game();
    planner_.kernel = kernel_;
    planner_.reward = [game](StateIndex x) { return game->ego_reward(x); };
    planner_.safe = game->safe;
    planner_.config = {cfg.epsilon, cfg.discount, static_cast<std::size_t>(cfg.horizon), {}};
  }

  const Scenario& scenario() const { return scenario_; }
  const Hierarchy& hierarchy() const { return *hierarchy_; }
  std::shared_ptr<const Hierarchy> hierarchy_ptr() const { return hierarchy_; }
  const AugmentedKernel& kernel() const { return *kernel_; }
  const RecedingHorizonPlanner& planner() const { return planner_; }

  /// Posterior after executing `u` and observing `y`. On a zero-likelihood
  /// observation each level's likelihood is floored before renormalizing.
  Belief update(const Belief& prior, ActionIndex u, StateIndex y, bool* floored = nullptr) const {
    try {
      if (floored) *floored = false;
      return bayes_update(*kernel_, prior, u, y);
    } catch (const InconsistentObservation&) {
      if (floored) *floored = true;
      auto lik = observation_likelihoods(*kernel_, prior, u, y);
      double total = 0.0;
      for (double& l : lik) {
        l = std::max(l, scenario_.config().likelihood_floor);
        total += l;
      }
      if (!(total > 0.0)) throw;
      std::vector<Mass> post;
      for (std::size_t slot = 0; slot < lik.size(); ++slot)
        post.push_back({kernel_->space().index(y, slot), lik[slot] / total});
      return {Distribution(std::move(post)), prior.t + 1};
    }
  }

  EpisodeLog run(int human_level, std::uint64_t seed, int max_steps, OnInfeasible on_infeasible) const {
    const auto& cfg = scenario_.config();
    if (human_level < 0 || human_level > hierarchy_->k_max())
      throw ArgumentError("human level outside the hierarchy");
    const LevelPolicy& human_policy = hierarchy_->env(human_level);
    const GameSpec& game = *scenario_.game();
    auto human_rng = make_stream(seed, Stream::kHuman);
    auto ego_rng = make_stream(seed, Stream::kEgo);

    EpisodeLog log;
    log.kind = cfg.kind;
    log.human_level = human_level;
    log.seed = seed;
    log.levels = cfg.levels;
    OutcomeTracker tracker(scenario_);

    StateIndex x = scenario_.initial_state();
    Belief belief = init_belief(kernel_->space(), x, cfg.level_prior);
    bool floored = false;
    for (int t = 0;; ++t) {
      StepRecord rec;
      rec.t = t;
      std::tie(rec.ego, rec.human) = scenario_.decode(x);
      rec.posterior = belief.level_marginal(kernel_->space());
      rec.omega_violation = !scenario_.in_omega(x);
      rec.floored = floored;
      const bool over = tracker.observe(rec);
      if (over || t >= max_steps) {
        log.records.push_back(std::move(rec));
        break;
      }

      const auto start = std::chrono::steady_clock::now();
      PlanResult plan = planner_.plan(belief, t);
      if (!plan.feasible) {
        if (on_infeasible == OnInfeasible::kAbort) {
          log.records.push_back(std::move(rec));
          log.aborted_infeasible = true;
          break;
        }
        log.warnings.push_back("t=" + std::to_string(t) +
                               ": chance constraint infeasible, executing the max-probability profile");
      }
      const ActionIndex u1 = sample_index(plan.profile.stages.front(), ego_rng);
      const ActionIndex u2 = sample_index(human_policy.row(x), human_rng);
      rec.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
      rec.acted = true;
      rec.ego_action = u1;
      rec.human_action = u2;
      rec.expected_reward = plan.expected_reward;
      rec.constraint_probability = plan.constraint_probability;
      rec.feasible = plan.feasible;
      rec.fallback = plan.diagnostics.fallback_applied;
      log.records.push_back(std::move(rec));

      const StateIndex next = game.transition(x, u1, u2);
      belief = update(belief, u1, next, &floored);
      x = next;
    }
    log.outcome = tracker.outcome();
    return log;
  }

 private:
  const Scenario& scenario_;
  std::shared_ptr<const Hierarchy> hierarchy_;
  std::shared_ptr<const AugmentedKernel> kernel_;
  RecedingHorizonPlanner planner_;
};

/// Maximin baseline in closed loop: re-plans the worst-case sequence each
/// step and executes its first action; brakes hardest when no robust
/// sequence exists.
inline EpisodeLog run_maximin(const Simulator& sim, int human_level, std::uint64_t seed, int max_steps) {
  const Scenario& scenario = sim.scenario();
  const auto& cfg = scenario.config();
  const GameSpec& game = *scenario.game();
  const LevelPolicy& human_policy = sim.hierarchy().env(human_level);
  auto human_rng = make_stream(seed, Stream::kHuman);

  std::size_t brake = 0;
  const auto& ego_grid = scenario.grid(Player::kEgo);
  for (std::size_t u = 0; u < ego_grid.num_actions(); ++u)
    if (!ego_grid.action(u).change_lane && ego_grid.action(u).accel < ego_grid.action(brake).accel) brake = u;

  EpisodeLog log;
  log.kind = cfg.kind;
  log.human_level = human_level;
  log.seed = seed;
  log.levels = cfg.levels;
  OutcomeTracker tracker(scenario);
  StateIndex x = scenario.initial_state();
  for (int t = 0;; ++t) {
    StepRecord rec;
    rec.t = t;
    std::tie(rec.ego, rec.human) = scenario.decode(x);
    rec.omega_violation = !scenario.in_omega(x);
    if (tracker.observe(rec) || t >= max_steps) {
      log.records.push_back(rec);
      break;
    }
    ActionIndex u1 = static_cast<ActionIndex>(brake);
    try {
      u1 = maximin_plan(game, x, static_cast<std::size_t>(cfg.horizon), cfg.discount, t).actions.front();
      rec.feasible = true;
    } catch (const NoRobustSequence&) {
      rec.fallback = true;
    }
    const ActionIndex u2 = sample_index(human_policy.row(x), human_rng);
    rec.acted = true;
    rec.ego_action = u1;
    rec.human_action = u2;
    log.records.push_back(rec);
    x = game.transition(x, u1, u2);
  }
  log.outcome = tracker.outcome();
  return log;
}

}  // namespace cogplan::sim
