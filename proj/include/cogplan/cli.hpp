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

// The build / simulate / evaluate commands, independent of argument parsing.

#pragma once

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "cogplan/cache.hpp"
#include "cogplan/config.hpp"
#include "cogplan/episode.hpp"
#include "cogplan/report.hpp"

namespace cogplan::cli {

enum ExitCode : int { kOk = 0, kRuntimeError = 1, kConfigError = 2, kAbortedInfeasible = 3 };

enum class PlannerKind { kCognitive, kMaximin };

/// Parses "1-100,200,7" into seeds in the given order. Empty text gives no seeds.
inline std::vector<std::uint64_t> parse_seed_list(const std::string& text) {
  std::vector<std::uint64_t> out;
  std::size_t pos = 0;
  auto number = [&](const std::string& s) {
    if (s.empty() || s.find_first_not_of("0123456789") != std::string::npos)
      throw traffic::ConfigError("bad seed '" + s + "' in seed list");
    try {
      return static_cast<std::uint64_t>(std::stoull(s));
    } catch (const std::out_of_range&) {
      throw traffic::ConfigError("seed '" + s + "' does not fit in 64 bits");
    }
  };
  while (pos < text.size()) {
    std::size_t end = text.find(',', pos);
    if (end == std::string::npos) end = text.size();
    const std::string item = text.substr(pos, end - pos);
    const std::size_t dash = item.find('-');
    if (dash == std::string::npos) {
      out.push_back(number(item));
    } else {
      const std::uint64_t a = number(item.substr(0, dash));
      const std::uint64_t b = number(item.substr(dash + 1));
      if (b < a) throw traffic::ConfigError("descending seed range '" + item + "'");
      if (b - a >= 10'000'000) throw traffic::ConfigError("seed range '" + item + "' is too long");
      for (std::uint64_t s = a;; ++s) {
        out.push_back(s);
        if (s == b) break;
      }
    }
    pos = end + 1;
  }
  return out;
}

struct BuildOptions {
  std::string config;
  std::optional<std::string> cache;
};

struct SimulateOptions {
  std::string config;
  std::optional<std::string> cache;
  int human_level = 1;
  std::optional<std::uint64_t> seed;
  std::optional<int> steps;
  std::optional<std::string> snapshots;
  std::optional<std::string> on_infeasible;
  std::optional<std::string> out;
  PlannerKind planner = PlannerKind::kCognitive;
};

struct EvaluateOptions {
  std::string config;
  std::optional<std::string> cache;
  std::string seeds = "1-100";
  std::vector<int> human_levels;  // empty: the levels in the config
  std::optional<int> steps;
  std::optional<std::string> on_infeasible;
  std::optional<std::string> summary;
  PlannerKind planner = PlannerKind::kCognitive;
  unsigned jobs = 0;  // 0: hardware concurrency
};

/// Default cache location: the config path with its extension replaced.
inline std::string default_cache_path(const std::string& config) {
  return std::filesystem::path(config).replace_extension(".cgph").string();
}

namespace detail {

/// Loads cached rows into the hierarchy if a usable cache exists.
inline void attach_cache(const std::optional<std::string>& path, const traffic::ScenarioConfig& cfg,
                         const Hierarchy& h, std::ostream& err) {
  if (!path) return;
  if (!std::filesystem::exists(*path)) {
    err << "warning: hierarchy cache '" << *path << "' not found; computing policies on demand\n";
    return;
  }
  try {
    read_hierarchy_cache(*path, h, traffic::config_hash(cfg));
  } catch (const CacheError& e) {
    err << "warning: " << e.what() << "; computing policies on demand\n";
  }
}

inline sim::EpisodeLog run_episode(const sim::Simulator& sim, PlannerKind planner, int level, std::uint64_t seed,
                                   int steps, traffic::OnInfeasible mode) {
  if (planner == PlannerKind::kMaximin) return sim::run_maximin(sim, level, seed, steps);
  return sim.run(level, seed, steps, mode);
}

}  // namespace detail

inline int cmd_build(const BuildOptions& opt, std::ostream& out, std::ostream& err) {
  try {
    const auto cfg = traffic::load_config(opt.config);
    const auto scenario = traffic::make_scenario(cfg);
    const auto hierarchy = scenario->build_hierarchy();
    const std::size_t states = warm_hierarchy(*scenario, *hierarchy, cfg.horizon);
    const std::uint64_t hash = traffic::config_hash(cfg);
    const std::string path = opt.cache.value_or(default_cache_path(opt.config));
    write_hierarchy_cache(path, *hierarchy, hash);
    out << "hash " << traffic::hash_hex(hash) << "\n";
    out << "cache " << path << "\n";
    out << "warmed " << states << " states\n";
    return kOk;
  } catch (const traffic::ConfigError& e) {
    err << "configuration error: " << e.what() << "\n";
    return kConfigError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kRuntimeError;
  }
}

inline int cmd_simulate(const SimulateOptions& opt, std::ostream& out, std::ostream& err) {
  traffic::ScenarioConfig cfg;
  try {
    cfg = traffic::load_config(opt.config);
    if (opt.on_infeasible) cfg.on_infeasible = traffic::parse_on_infeasible(*opt.on_infeasible);
    if (opt.seed) cfg.seed = *opt.seed;
    if (opt.steps) {
      if (*opt.steps < 0) throw traffic::ConfigError("--steps must be >= 0");
      cfg.max_steps = *opt.steps;
    }
    if (opt.human_level < 0 || opt.human_level > cfg.k_max)
      throw traffic::ConfigError("human level must lie in [0, k_max]");
  } catch (const traffic::ConfigError& e) {
    err << "configuration error: " << e.what() << "\n";
    return kConfigError;
  }
  try {
    const auto scenario = traffic::make_scenario(cfg);
    const auto hierarchy = scenario->build_hierarchy();
    detail::attach_cache(opt.cache, cfg, *hierarchy, err);
    const sim::Simulator sim(*scenario, hierarchy);
    const auto log =
        detail::run_episode(sim, opt.planner, opt.human_level, cfg.seed, cfg.max_steps, cfg.on_infeasible);

    std::ostream* summary = &err;
    if (opt.out) {
      std::ofstream f(*opt.out, std::ios::binary | std::ios::trunc);
      if (!f) throw std::runtime_error("cannot write '" + *opt.out + "'");
      report::write_csv(f, *scenario, log);
      summary = &out;
    } else {
      report::write_csv(out, *scenario, log);
    }
    if (opt.snapshots) {
      std::filesystem::create_directories(*opt.snapshots);
      for (std::size_t i = 0; i < log.records.size(); ++i) {
        char name[32];
        std::snprintf(name, sizeof name, "step_%03zu.svg", i);
        std::ofstream f(std::filesystem::path(*opt.snapshots) / name, std::ios::binary | std::ios::trunc);
        if (!f) throw std::runtime_error(std::string("cannot write snapshot ") + name);
        f << report::svg_snapshot(*scenario, log, i);
      }
    }
    for (const auto& w : log.warnings) err << "warning: " << w << "\n";
    const auto& o = log.outcome;
    *summary << "outcome " << o.label << " event_step " << o.event_step << " violation " << int{o.violation}
             << " within_section " << int{o.within_section} << " steps " << log.records.size() - 1 << "\n";
    if (log.aborted_infeasible) {
      err << "aborted: chance constraint infeasible at t=" << log.records.back().t << "\n";
      return kAbortedInfeasible;
    }
    return kOk;
  } catch (const traffic::ConfigError& e) {
    err << "configuration error: " << e.what() << "\n";
    return kConfigError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kRuntimeError;
  }
}

inline int cmd_evaluate(const EvaluateOptions& opt, std::ostream& out, std::ostream& err) {
  traffic::ScenarioConfig cfg;
  std::vector<std::uint64_t> seeds;
  std::vector<int> levels;
  try {
    cfg = traffic::load_config(opt.config);
    if (opt.on_infeasible) cfg.on_infeasible = traffic::parse_on_infeasible(*opt.on_infeasible);
    if (opt.steps) {
      if (*opt.steps < 0) throw traffic::ConfigError("--steps must be >= 0");
      cfg.max_steps = *opt.steps;
    }
    seeds = parse_seed_list(opt.seeds);
    levels = opt.human_levels.empty() ? cfg.levels : opt.human_levels;
    for (int k : levels)
      if (k < 0 || k > cfg.k_max) throw traffic::ConfigError("human level must lie in [0, k_max]");
  } catch (const traffic::ConfigError& e) {
    err << "configuration error: " << e.what() << "\n";
    return kConfigError;
  }
  try {
    report::EvaluationReport rep;
    if (seeds.empty()) {
      rep.kind = cfg.kind;
      for (int k : levels) rep.levels.push_back({k, {}});
    } else {
      const auto scenario = traffic::make_scenario(cfg);
      const auto hierarchy = scenario->build_hierarchy();
      detail::attach_cache(opt.cache, cfg, *hierarchy, err);
      const sim::Simulator sim(*scenario, hierarchy);
      const unsigned jobs = opt.jobs ? opt.jobs : std::max(1u, std::thread::hardware_concurrency());
      if (opt.planner == PlannerKind::kMaximin) {
        rep = report::EvaluationReport{};
        rep.kind = cfg.kind;
        const auto start = std::chrono::steady_clock::now();
        for (int k : levels) {
          report::LevelReport lr{k, {}};
          for (std::uint64_t s : seeds) {
            try {
              lr.episodes.push_back(report::summarize(*scenario, sim::run_maximin(sim, k, s, cfg.max_steps)));
            } catch (const std::exception& e) {
              report::EpisodeSummary f;
              f.seed = s;
              f.failed = true;
              f.error = e.what();
              lr.episodes.push_back(f);
            }
          }
          rep.levels.push_back(std::move(lr));
        }
        rep.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      } else {
        rep = report::evaluate(sim, levels, seeds, cfg.max_steps, cfg.on_infeasible, jobs);
      }
    }
    rep.config_hash = traffic::hash_hex(traffic::config_hash(cfg));
    const auto j = report::to_json(rep);
    if (opt.summary) {
      std::ofstream f(*opt.summary, std::ios::trunc);
      if (!f) throw std::runtime_error("cannot write '" + *opt.summary + "'");
      f << j.dump(2) << "\n";
      for (const auto& lr : rep.levels) {
        out << "human level " << lr.level << ": " << lr.completed() << "/" << lr.episodes.size()
            << " episodes, violation rate " << lr.violation_rate() << ", outcomes";
        for (const auto& [label, n] : lr.outcome_counts()) out << " " << label << "=" << n;
        out << "\n";
      }
    } else {
      out << j.dump(2) << "\n";
    }
    return kOk;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kRuntimeError;
  }
}

}  // namespace cogplan::cli
