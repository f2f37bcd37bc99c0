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

// cogplan: build hierarchies, simulate episodes, evaluate seed batches.

#include <iostream>
#include <map>
#include <string>

#include "CLI11.hpp"

#include "cogplan/cli.hpp"

namespace {

const std::map<std::string, cogplan::cli::PlannerKind> kPlanners{
    {"cognitive", cogplan::cli::PlannerKind::kCognitive},
    {"maximin", cogplan::cli::PlannerKind::kMaximin}};

}  // namespace

int main(int argc, char** argv) {
  using namespace cogplan::cli;
  CLI::App app{"Chance-constrained planning against level-k drivers"};
  app.require_subcommand(1);

  BuildOptions build;
  auto* b = app.add_subcommand("build", "Build the policy hierarchy and write its cache");
  b->add_option("--config", build.config, "Scenario configuration (JSON)")->required();
  b->add_option("--cache", build.cache, "Cache output path (default: config path with .cgph)");

  SimulateOptions simulate;
  std::string sim_planner = "cognitive";
  auto* s = app.add_subcommand("simulate", "Run one closed-loop episode and write its CSV");
  s->add_option("--config", simulate.config, "Scenario configuration (JSON)")->required();
  s->add_option("--human-level", simulate.human_level, "Level of the simulated human")->capture_default_str();
  s->add_option("--seed", simulate.seed, "Master seed (default: config seed)");
  s->add_option("--steps", simulate.steps, "Step cap (default: config max_steps)");
  s->add_option("--snapshots", simulate.snapshots, "Directory for per-step SVG snapshots");
  s->add_option("--on-infeasible", simulate.on_infeasible, "abort | fallback")
      ->check(CLI::IsMember({"abort", "fallback"}));
  s->add_option("--out", simulate.out, "CSV path (default: stdout)");
  s->add_option("--cache", simulate.cache, "Hierarchy cache written by build");
  s->add_option("--planner", sim_planner, "cognitive | maximin")->check(CLI::IsMember({"cognitive", "maximin"}));

  EvaluateOptions evaluate;
  std::string eval_planner = "cognitive";
  auto* e = app.add_subcommand("evaluate", "Run a seed batch per human level and summarize");
  e->add_option("--config", evaluate.config, "Scenario configuration (JSON)")->required();
  e->add_option("--seeds", evaluate.seeds, "Seed list, e.g. 1-100,250 (empty for none)")->capture_default_str();
  e->add_option("--human-levels", evaluate.human_levels, "Human levels (default: config levels)");
  e->add_option("--steps", evaluate.steps, "Step cap (default: config max_steps)");
  e->add_option("--on-infeasible", evaluate.on_infeasible, "abort | fallback")
      ->check(CLI::IsMember({"abort", "fallback"}));
  e->add_option("--summary", evaluate.summary, "JSON summary path (default: stdout)");
  e->add_option("--cache", evaluate.cache, "Hierarchy cache written by build");
  e->add_option("--jobs", evaluate.jobs, "Worker threads (0: all cores)")->capture_default_str();
  e->add_option("--planner", eval_planner, "cognitive | maximin")->check(CLI::IsMember({"cognitive", "maximin"}));

  CLI11_PARSE(app, argc, argv);

  if (b->parsed()) return cmd_build(build, std::cout, std::cerr);
  if (s->parsed()) {
    simulate.planner = kPlanners.at(sim_planner);
    return cmd_simulate(simulate, std::cout, std::cerr);
  }
  evaluate.planner = kPlanners.at(eval_planner);
  return cmd_evaluate(evaluate, std::cout, std::cerr);
}
