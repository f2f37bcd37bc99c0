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

// Episode CSV, per-step SVG snapshots and multi-seed evaluation summaries.

#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <mutex>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "json.hpp"

#include "cogplan/episode.hpp"

namespace cogplan::report {

using sim::EpisodeLog;
using traffic::Scenario;
using traffic::ScenarioKind;

namespace detail {

inline std::string fixed(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  // Avoid "-0.000000" so equal logs print equally.
  if (std::string_view(buf) == "-0.000000") return "0.000000";
  return buf;
}

}  // namespace detail

/// Column order of the episode CSV. Frozen; see README.
inline std::vector<std::string> csv_columns(const std::vector<int>& levels) {
  std::vector<std::string> cols{"t",           "ego_sx",        "ego_sy",          "ego_v",
                                "human_sx",    "human_sy",      "human_v",         "ego_accel",
                                "ego_lane_change", "human_accel", "human_lane_change"};
  for (int k : levels) cols.push_back("posterior_level" + std::to_string(k));
  for (const char* c : {"expected_reward", "constraint_probability", "feasible", "fallback", "floored",
                        "omega_violation"})
    cols.emplace_back(c);
  return cols;
}

/// One row per record; action and plan fields are empty on the last record.
inline void write_csv(std::ostream& out, const Scenario& s, const EpisodeLog& log) {
  const auto cols = csv_columns(log.levels);
  for (std::size_t i = 0; i < cols.size(); ++i) out << (i ? "," : "") << cols[i];
  out << '\n';
  using detail::fixed;
  for (const auto& r : log.records) {
    out << r.t << ',' << fixed(r.ego.s_x) << ',' << fixed(r.ego.s_y) << ',' << fixed(r.ego.v) << ','
        << fixed(r.human.s_x) << ',' << fixed(r.human.s_y) << ',' << fixed(r.human.v) << ',';
    if (r.acted) {
      const auto& ea = s.grid(Player::kEgo).action(r.ego_action);
      const auto& ha = s.grid(Player::kEnv).action(r.human_action);
      out << fixed(ea.accel) << ',' << int{ea.change_lane} << ',' << fixed(ha.accel) << ','
          << int{ha.change_lane} << ',';
    } else {
      out << ",,,,";
    }
    for (std::size_t i = 0; i < log.levels.size(); ++i)
      out << (i < r.posterior.size() ? fixed(r.posterior[i]) : std::string()) << ',';
    if (r.acted)
      out << fixed(r.expected_reward) << ',' << fixed(r.constraint_probability) << ',' << int{r.feasible}
          << ',' << int{r.fallback} << ',';
    else
      out << ",,,,";
    out << int{r.floored} << ',' << int{r.omega_violation} << '\n';
  }
}

/// Top-down drawing of one record.
inline std::string svg_snapshot(const Scenario& s, const EpisodeLog& log, std::size_t index) {
  const auto& cfg = s.config();
  const auto& r = log.records.at(index);
  const auto ego = s.world(Player::kEgo, r.ego);
  const auto human = s.world(Player::kEnv, r.human);
  const double px = 8.0;
  const double car_w = 2.0;
  std::ostringstream o;
  auto rect = [&](double x, double y, double w, double h, const char* style) {
    o << "<rect x=\"" << x << "\" y=\"" << y << "\" width=\"" << w << "\" height=\"" << h << "\" " << style
      << "/>\n";
  };

  double width = 0.0;
  double height = 0.0;
  if (cfg.kind == ScenarioKind::kIntersection) {
    const double lo = std::min(cfg.ego.x_min, cfg.human.x_min);
    const double hi = std::max(cfg.ego.x_max, cfg.human.x_max);
    const double span = hi - lo;
    width = height = span * px;
    // World (x, y) -> screen (x - lo, hi - y).
    auto sx = [&](double x) { return (x - lo) * px; };
    auto sy = [&](double y) { return (hi - y) * px; };
    o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height + 40
      << "\">\n";
    rect(0, 0, width, height, "fill=\"#dfe8d8\"");
    const double half = cfg.lane_width / 2.0;
    rect(0, sy(half), width, cfg.lane_width * px, "fill=\"#9a9a9a\"");
    rect(sx(-half), 0, cfg.lane_width * px, height, "fill=\"#9a9a9a\"");
    const double gap = cfg.intersection_gap * cfg.car_length;
    o << "<circle cx=\"" << sx(0) << "\" cy=\"" << sy(0) << "\" r=\"" << gap * px
      << "\" fill=\"none\" stroke=\"#c33\" stroke-dasharray=\"4 4\"/>\n";
    rect(sx(ego.x - cfg.car_length / 2), sy(ego.y + car_w / 2), cfg.car_length * px, car_w * px,
         "fill=\"#2060c0\"");
    rect(sx(human.x - car_w / 2), sy(human.y + cfg.car_length / 2), car_w * px, cfg.car_length * px,
         "fill=\"#c03020\"");
  } else {
    const double lo = ego.x - 40.0;
    const double hi = ego.x + 80.0;
    const double road = 2.0 * cfg.lane_width;
    const double margin = 2.0;
    width = (hi - lo) * px;
    height = (road + 2 * margin) * px;
    auto sx = [&](double x) { return (x - lo) * px; };
    auto sy = [&](double y) { return (road + margin - y) * px; };
    o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height + 40
      << "\">\n";
    rect(0, 0, width, height, "fill=\"#dfe8d8\"");
    rect(0, sy(road), width, road * px, "fill=\"#9a9a9a\"");
    if (cfg.kind == ScenarioKind::kMerging) {
      const double a = std::clamp(sx(cfg.merge_start), 0.0, width);
      const double b = std::clamp(sx(cfg.merge_end), 0.0, width);
      if (b > a) rect(a, sy(road), b - a, road * px, "fill=\"#f0d060\" fill-opacity=\"0.35\"");
      const double end = std::clamp(sx(cfg.merge_end), 0.0, width);
      if (end < width) rect(end, sy(cfg.lane_width), width - end, cfg.lane_width * px, "fill=\"#505050\"");
    }
    o << "<line x1=\"0\" y1=\"" << sy(cfg.lane_width) << "\" x2=\"" << width << "\" y2=\""
      << sy(cfg.lane_width) << "\" stroke=\"white\" stroke-dasharray=\"12 10\"/>\n";
    rect(sx(ego.x - cfg.car_length / 2), sy(ego.y + car_w / 2), cfg.car_length * px, car_w * px,
         "fill=\"#2060c0\"");
    rect(sx(human.x - cfg.car_length / 2), sy(human.y + car_w / 2), cfg.car_length * px, car_w * px,
         "fill=\"#c03020\"");
  }
  o << "<text x=\"6\" y=\"" << height + 26 << "\" font-family=\"monospace\" font-size=\"14\">t=" << r.t;
  for (std::size_t i = 0; i < log.levels.size() && i < r.posterior.size(); ++i)
    o << "  P(level " << log.levels[i] << ")=" << detail::fixed(r.posterior[i]).substr(0, 5);
  if (r.acted)
    o << "  ego " << s.describe_action(Player::kEgo, r.ego_action) << "  human "
      << s.describe_action(Player::kEnv, r.human_action);
  if (r.omega_violation) o << "  UNSAFE";
  o << "</text>\n</svg>\n";
  return o.str();
}

struct EpisodeSummary {
  std::uint64_t seed = 0;
  bool failed = false;
  std::string error;
  sim::Outcome outcome;
  bool aborted = false;
  int steps = 0;
  double final_posterior_true = std::numeric_limits<double>::quiet_NaN();
  double final_ego_x = 0.0;
  double total_ms = 0.0;
  double max_step_ms = 0.0;
};

struct LevelReport {
  int level = 0;
  std::vector<EpisodeSummary> episodes;

  std::size_t completed() const {
    return static_cast<std::size_t>(std::count_if(episodes.begin(), episodes.end(),
                                                  [](const EpisodeSummary& e) { return !e.failed; }));
  }
  std::map<std::string, int> outcome_counts() const {
    std::map<std::string, int> m;
    for (const auto& e : episodes)
      if (!e.failed) ++m[e.outcome.label];
    return m;
  }
  /// Fraction of episodes whose trajectory left the safe set at any step.
  double violation_rate() const {
    std::size_t n = 0, bad = 0;
    for (const auto& e : episodes)
      if (!e.failed) {
        ++n;
        bad += e.outcome.violation;
      }
    return n ? static_cast<double>(bad) / static_cast<double>(n) : 0.0;
  }
  double mean_final_posterior_true() const {
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& e : episodes)
      if (!e.failed && !std::isnan(e.final_posterior_true)) {
        sum += e.final_posterior_true;
        ++n;
      }
    return n ? sum / static_cast<double>(n) : std::numeric_limits<double>::quiet_NaN();
  }
  double fraction_posterior_at_least(double threshold) const {
    std::size_t n = 0, hit = 0;
    for (const auto& e : episodes)
      if (!e.failed) {
        ++n;
        hit += e.final_posterior_true >= threshold;
      }
    return n ? static_cast<double>(hit) / static_cast<double>(n) : 0.0;
  }
};

struct EvaluationReport {
  ScenarioKind kind = ScenarioKind::kIntersection;
  std::string config_hash;
  std::vector<LevelReport> levels;
  double wall_seconds = 0.0;
};

inline EpisodeSummary summarize(const Scenario& s, const EpisodeLog& log) {
  EpisodeSummary e;
  e.seed = log.seed;
  e.outcome = log.outcome;
  e.aborted = log.aborted_infeasible;
  e.steps = static_cast<int>(log.records.size()) - 1;
  const auto& last = log.records.back();
  for (std::size_t i = 0; i < log.levels.size(); ++i)
    if (log.levels[i] == log.human_level && i < last.posterior.size()) e.final_posterior_true = last.posterior[i];
  e.final_ego_x = s.world(Player::kEgo, last.ego).x;
  for (const auto& r : log.records) {
    e.total_ms += r.wall_ms;
    e.max_step_ms = std::max(e.max_step_ms, r.wall_ms);
  }
  return e;
}

/// Runs every (level, seed) episode on `jobs` threads. Exceptions inside an
/// episode mark that seed failed.
inline EvaluationReport evaluate(const sim::Simulator& sim, const std::vector<int>& human_levels,
                                 const std::vector<std::uint64_t>& seeds, int max_steps,
                                 traffic::OnInfeasible on_infeasible, unsigned jobs = 1) {
  const auto start = std::chrono::steady_clock::now();
  EvaluationReport rep;
  rep.kind = sim.scenario().config().kind;
  struct Task {
    std::size_t level_slot, seed_slot;
  };
  std::vector<Task> tasks;
  for (std::size_t l = 0; l < human_levels.size(); ++l) {
    rep.levels.push_back({human_levels[l], std::vector<EpisodeSummary>(seeds.size())});
    for (std::size_t i = 0; i < seeds.size(); ++i) tasks.push_back({l, i});
  }
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < tasks.size(); i = next++) {
      const auto [l, si] = tasks[i];
      EpisodeSummary& out = rep.levels[l].episodes[si];
      try {
        out = summarize(sim.scenario(), sim.run(human_levels[l], seeds[si], max_steps, on_infeasible));
      } catch (const std::exception& ex) {
        out = {};
        out.seed = seeds[si];
        out.failed = true;
        out.error = ex.what();
      }
    }
  };
  jobs = std::max(1u, std::min<unsigned>(jobs, static_cast<unsigned>(std::max<std::size_t>(tasks.size(), 1))));
  std::vector<std::thread> pool;
  for (unsigned j = 1; j < jobs; ++j) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  rep.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return rep;
}

inline nlohmann::ordered_json to_json(const EvaluationReport& rep) {
  using J = nlohmann::ordered_json;
  auto num = [](double v) { return std::isnan(v) ? J(nullptr) : J(v); };
  J levels = J::array();
  for (const auto& lr : rep.levels) {
    double total_ms = 0.0, max_ms = 0.0;
    std::size_t steps = 0;
    J failed = J::array();
    for (const auto& e : lr.episodes) {
      if (e.failed) {
        failed.push_back(J{{"seed", e.seed}, {"error", e.error}});
        continue;
      }
      total_ms += e.total_ms;
      max_ms = std::max(max_ms, e.max_step_ms);
      steps += static_cast<std::size_t>(e.steps);
    }
    std::size_t aborted = 0, outside = 0;
    for (const auto& e : lr.episodes)
      if (!e.failed) {
        aborted += e.aborted;
        outside += !e.outcome.within_section;
      }
    J outcomes = J::object();
    for (const auto& [k, v] : lr.outcome_counts()) outcomes[k] = v;
    levels.push_back(J{
        {"human_level", lr.level},
        {"episodes", lr.episodes.size()},
        {"completed", lr.completed()},
        {"failed", failed},
        {"aborted_infeasible", aborted},
        {"outcomes", outcomes},
        {"violation_rate", lr.violation_rate()},
        {"mean_final_posterior_true_level", num(lr.mean_final_posterior_true())},
        {"fraction_final_posterior_at_least_0_9", lr.fraction_posterior_at_least(0.9)},
        {"outside_merge_section", outside},
        {"mean_step_ms", steps ? total_ms / static_cast<double>(steps) : 0.0},
        {"max_step_ms", max_ms},
    });
  }
  return J{{"scenario", traffic::to_string(rep.kind)},
           {"config_hash", rep.config_hash},
           {"levels", levels},
           {"wall_seconds", rep.wall_seconds}};
}

}  // namespace cogplan::report
