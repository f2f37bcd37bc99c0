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


#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "cogplan/cli.hpp"
#include "support/oracles.hpp"

namespace {

using namespace cogplan;
using namespace cogplan::traffic;
namespace fs = std::filesystem;

const ScenarioKind kAllKinds[] = {ScenarioKind::kIntersection, ScenarioKind::kOvertaking, ScenarioKind::kMerging};

std::string shipped_config(ScenarioKind k) {
  return std::string(COGPLAN_SOURCE_DIR) + "/configs/" + to_string(k) + ".json";
}

// Fresh scratch directory per test.
class Scratch : public ::testing::Test {
 protected:
  void SetUp() override {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    dir_ = fs::temp_directory_path() / (std::string("cogplan_") + info->test_suite_name() + "_" + info->name());
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string write(const std::string& name, const std::string& text) const {
    const auto p = (dir_ / name).string();
    std::ofstream(p) << text;
    return p;
  }
  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  fs::path dir_;
};

std::string read_file(const std::string& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::vector<std::string>> parse_csv(const std::string& text) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::size_t pos = 0;
    while (true) {
      const auto comma = line.find(',', pos);
      cells.push_back(line.substr(pos, comma - pos));
      if (comma == std::string::npos) break;
      pos = comma + 1;
    }
    rows.push_back(std::move(cells));
  }
  return rows;
}

TEST(Config, RoundTripsThroughJson) {
  for (ScenarioKind k : kAllKinds) {
    const auto c = default_config(k);
    const auto back = parse_config(to_json(c).dump());
    EXPECT_EQ(to_json(back), to_json(c));
  }
}

TEST(Config, ShippedConfigsAreTheDefaults) {
  for (ScenarioKind k : kAllKinds) EXPECT_EQ(to_json(load_config(shipped_config(k))), to_json(default_config(k)));
}

TEST(Config, MissingKeysTakeScenarioDefaults) {
  const auto c = parse_config(R"({"schema_version": 1, "scenario": "overtaking", "epsilon": 0.05})");
  auto want = default_config(ScenarioKind::kOvertaking);
  want.epsilon = 0.05;
  EXPECT_EQ(to_json(c), to_json(want));
  const auto v = parse_config(R"({"schema_version": 1, "scenario": "merging", "human": {"v0": 6}})");
  EXPECT_EQ(v.human.v0, 6.0);
  EXPECT_EQ(v.human.lane0, 1);
}

TEST(Config, RejectsUnknownAndMalformedInput) {
  auto message = [](const std::string& text) {
    try {
      parse_config(text);
    } catch (const ConfigError& e) {
      return std::string(e.what());
    }
    return std::string("no error");
  };
  EXPECT_NE(message(R"({"schema_version": 1, "scenario": "intersection", "epsilom": 0.1})").find("epsilom"),
            std::string::npos);
  EXPECT_NE(message(R"({"schema_version": 1, "scenario": "merging", "ego": {"speed": 3}})").find("ego.speed"),
            std::string::npos);
  EXPECT_NE(message(R"({"schema_version": 1})").find("scenario"), std::string::npos);
  EXPECT_NE(message(R"({"scenario": "merging"})").find("schema_version"), std::string::npos);
  EXPECT_NE(message(R"({"schema_version": 1, "scenario": "roundabout"})").find("roundabout"), std::string::npos);
  EXPECT_NE(message(R"({"schema_version": 1, "scenario": "merging", "horizon": "three"})").find("horizon"),
            std::string::npos);
  EXPECT_NE(message(R"({"schema_version": 2, "scenario": "merging"})").find("schema_version"), std::string::npos);
  EXPECT_NE(message("{not json").find("malformed"), std::string::npos);
  EXPECT_EQ(message(R"({"schema_version": 1, "scenario": "merging", "epsilon": 1.5})"), "epsilon out of [0,1]");
  EXPECT_THROW(load_config("/nonexistent/cogplan.json"), ConfigError);
}

TEST(Hash, Fnv1aReferenceVectors) {
  EXPECT_EQ(fnv1a64(""), 0xcbf29ce484222325ull);
  EXPECT_EQ(fnv1a64("a"), 0xaf63dc4c8601ec8cull);
  EXPECT_EQ(fnv1a64("foobar"), 0x85944171f73967e8ull);
}

TEST(Hash, StableAndSensitiveOnlyToModelKeys) {
  for (ScenarioKind k : kAllKinds) {
    auto c = default_config(k);
    const auto h = config_hash(c);
    EXPECT_EQ(config_hash(load_config(shipped_config(k))), h);
    c.seed = 99;
    c.max_steps = 3;
    c.on_infeasible = OnInfeasible::kAbort;
    EXPECT_EQ(config_hash(c), h);
    c.epsilon = 0.02;
    EXPECT_NE(config_hash(c), h);
  }
  // Regression values for the shipped configs.
  EXPECT_EQ(hash_hex(config_hash(default_config(ScenarioKind::kIntersection))), "16a9c7e2dd4804eb");
  EXPECT_EQ(hash_hex(config_hash(default_config(ScenarioKind::kOvertaking))), "03c775a636045170");
  EXPECT_EQ(hash_hex(config_hash(default_config(ScenarioKind::kMerging))), "be521e43a5b264b3");
}

TEST(SeedList, ParsesRangesAndSingles) {
  using cli::parse_seed_list;
  EXPECT_EQ(parse_seed_list("1-3,7"), (std::vector<std::uint64_t>{1, 2, 3, 7}));
  EXPECT_EQ(parse_seed_list("5"), (std::vector<std::uint64_t>{5}));
  EXPECT_TRUE(parse_seed_list("").empty());
  EXPECT_EQ(parse_seed_list("1-100").size(), 100u);
  EXPECT_THROW(parse_seed_list("3-1"), ConfigError);
  EXPECT_THROW(parse_seed_list("x"), ConfigError);
  EXPECT_THROW(parse_seed_list("1,,2"), ConfigError);
  EXPECT_THROW(parse_seed_list("99999999999999999999999"), ConfigError);
}

// Small hierarchy with a few memoized rows on every level.
struct CachedHierarchy {
  std::unique_ptr<Scenario> scenario = make_scenario(default_config(ScenarioKind::kIntersection));
  std::shared_ptr<const Hierarchy> h = scenario->build_hierarchy();
  CachedHierarchy() {
    const StateIndex x0 = scenario->initial_state();
    for (int k = 0; k <= h->k_max(); ++k) {
      (void)h->env(k).row(x0);
      (void)h->ego(k).row(x0 + 1);
    }
  }
};

TEST(Cache, RoundTripRestoresEveryRow) {
  CachedHierarchy a;
  const auto hash = config_hash(a.scenario->config());
  const auto bytes = serialize_hierarchy(*a.h, hash);
  EXPECT_EQ(std::string(bytes.data(), 4), "CGPH");
  const auto fresh = a.scenario->build_hierarchy();
  const std::size_t n = deserialize_hierarchy(bytes, *fresh, hash);
  std::size_t expected = 0;
  for (Player p : {Player::kEgo, Player::kEnv})
    for (int k = 0; k <= a.h->k_max(); ++k) {
      const auto want = a.h->policy(p, k).cached_rows();
      expected += want.size();
      EXPECT_EQ(fresh->policy(p, k).cached_rows(), want);
    }
  EXPECT_EQ(n, expected);
  // A second serialization is byte-identical.
  EXPECT_EQ(serialize_hierarchy(*fresh, hash), bytes);
}

TEST(Cache, RejectsMismatchedOrDamagedFiles) {
  CachedHierarchy a;
  const auto hash = config_hash(a.scenario->config());
  const auto bytes = serialize_hierarchy(*a.h, hash);
  auto fresh = [&] { return a.scenario->build_hierarchy(); };
  EXPECT_THROW(deserialize_hierarchy(bytes, *fresh(), hash + 1), CacheError);
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_THROW(deserialize_hierarchy(bad_magic, *fresh(), hash), CacheError);
  auto truncated = bytes;
  truncated.resize(bytes.size() - 3);
  EXPECT_THROW(deserialize_hierarchy(truncated, *fresh(), hash), CacheError);
  auto trailing = bytes;
  trailing.push_back(0);
  EXPECT_THROW(deserialize_hierarchy(trailing, *fresh(), hash), CacheError);
  auto version = bytes;
  version[4] = 9;
  EXPECT_THROW(deserialize_hierarchy(version, *fresh(), hash), CacheError);
}

TEST_F(Scratch, BuildRejectsEpsilonOutOfRange) {
  const auto cfg = write("bad.json", R"({"schema_version": 1, "scenario": "intersection", "epsilon": 1.5})");
  std::ostringstream out, err;
  EXPECT_EQ(cli::cmd_build({cfg, std::nullopt}, out, err), cli::kConfigError);
  EXPECT_NE(err.str().find("epsilon out of [0,1]"), std::string::npos);
  EXPECT_EQ(out.str(), "");
}

TEST_F(Scratch, BuildWritesCacheAndPrintsStableHash) {
  fs::copy_file(shipped_config(ScenarioKind::kIntersection), path("intersection.json"));
  std::ostringstream out1, out2, err;
  ASSERT_EQ(cli::cmd_build({path("intersection.json"), std::nullopt}, out1, err), cli::kOk) << err.str();
  EXPECT_TRUE(fs::exists(path("intersection.cgph")));
  const auto first = read_file(path("intersection.cgph"));
  ASSERT_EQ(cli::cmd_build({path("intersection.json"), path("again.cgph")}, out2, err), cli::kOk);
  EXPECT_EQ(out1.str().substr(0, 22), "hash 16a9c7e2dd4804eb\n");
  EXPECT_EQ(out1.str().substr(0, 22), out2.str().substr(0, 22));
  EXPECT_EQ(read_file(path("again.cgph")), first);

  // The cache is picked up by simulate and gives the same CSV as a cold run.
  cli::SimulateOptions warm{path("intersection.json"), path("intersection.cgph"), 2, 5, 6, {}, {}, {}, {}};
  cli::SimulateOptions cold = warm;
  cold.cache.reset();
  std::ostringstream a, b, e1, e2;
  ASSERT_EQ(cli::cmd_simulate(warm, a, e1), cli::kOk) << e1.str();
  ASSERT_EQ(cli::cmd_simulate(cold, b, e2), cli::kOk);
  EXPECT_EQ(a.str(), b.str());
  EXPECT_EQ(e1.str().find("warning"), std::string::npos) << e1.str();
}

TEST_F(Scratch, SimulateWarnsOnStaleCache) {
  fs::copy_file(shipped_config(ScenarioKind::kIntersection), path("intersection.json"));
  write("stale.cgph", "CGPH garbage");
  cli::SimulateOptions opt{path("intersection.json"), path("stale.cgph"), 1, 3, 2, {}, {}, {}, {}};
  std::ostringstream out, err;
  EXPECT_EQ(cli::cmd_simulate(opt, out, err), cli::kOk);
  EXPECT_NE(err.str().find("warning"), std::string::npos);
}

struct CsvCase {
  ScenarioKind kind;
  int level;
};

class SimulateCsv : public ::testing::TestWithParam<CsvCase> {};

TEST_P(SimulateCsv, DeterministicAndConsistentWithIndependentReplay) {
  const auto [kind, level] = GetParam();
  const auto cfg = default_config(kind);
  cli::SimulateOptions opt{shipped_config(kind), {}, level, 11, {}, {}, {}, {}, {}};
  std::ostringstream a, b, ea, eb;
  ASSERT_EQ(cli::cmd_simulate(opt, a, ea), cli::kOk) << ea.str();
  ASSERT_EQ(cli::cmd_simulate(opt, b, eb), cli::kOk);
  EXPECT_EQ(a.str(), b.str());
  EXPECT_NE(ea.str().find("outcome "), std::string::npos);

  const auto rows = parse_csv(a.str());
  ASSERT_GE(rows.size(), 2u);
  const auto cols = report::csv_columns(cfg.levels);
  ASSERT_EQ(rows[0], cols);
  auto col = [&](const char* name) {
    return static_cast<std::size_t>(std::find(cols.begin(), cols.end(), name) - cols.begin());
  };
  // Header plus steps + 1 records, with t counting up from 0.
  for (std::size_t i = 1; i < rows.size(); ++i) {
    ASSERT_EQ(rows[i].size(), cols.size());
    EXPECT_EQ(rows[i][0], std::to_string(i - 1));
  }
  EXPECT_EQ(rows.back()[col("ego_accel")], "");
  for (std::size_t i = 1; i + 1 < rows.size(); ++i) EXPECT_NE(rows[i][col("ego_accel")], "");

  for (std::size_t i = 1; i < rows.size(); ++i) {
    const auto& r = rows[i];
    const double ex = std::stod(r[col("ego_sx")]), ey = std::stod(r[col("ego_sy")]);
    const double hx = std::stod(r[col("human_sx")]), hy = std::stod(r[col("human_sy")]);
    bool safe = false;
    if (kind == ScenarioKind::kIntersection) {
      safe = std::hypot(ex, hx) >= 6.0;
    } else {
      safe = std::abs(ex - hx) >= 8.0 || std::abs(ey - hy) >= 3.6 - 1e-6;
      if (kind == ScenarioKind::kMerging) {
        const bool left = ey > 3.6;
        safe = safe && (ex <= 20.0 ? !left : ex <= 100.0 ? true : left);
      }
    }
    EXPECT_EQ(r[col("omega_violation")], safe ? "0" : "1") << "t=" << r[0];
    double mass = 0.0;
    for (int k : cfg.levels) mass += std::stod(r[col(("posterior_level" + std::to_string(k)).c_str())]);
    EXPECT_NEAR(mass, 1.0, 1e-5);
  }
}

INSTANTIATE_TEST_SUITE_P(Scenarios, SimulateCsv,
                         ::testing::Values(CsvCase{ScenarioKind::kIntersection, 1},
                                           CsvCase{ScenarioKind::kIntersection, 2},
                                           CsvCase{ScenarioKind::kOvertaking, 1},
                                           CsvCase{ScenarioKind::kMerging, 2}),
                         [](const auto& info) {
                           return std::string(to_string(info.param.kind)) + "_level" +
                                  std::to_string(info.param.level);
                         });

TEST_F(Scratch, SimulateWritesCsvFileAndSnapshots) {
  cli::SimulateOptions opt{shipped_config(ScenarioKind::kMerging), {}, 1, 4, 5, path("svg"), {}, path("run.csv"), {}};
  std::ostringstream out, err;
  ASSERT_EQ(cli::cmd_simulate(opt, out, err), cli::kOk) << err.str();
  EXPECT_EQ(out.str().rfind("outcome ", 0), 0u);
  const auto rows = parse_csv(read_file(path("run.csv")));
  const std::size_t records = rows.size() - 1;
  std::size_t svgs = 0;
  for (const auto& f : fs::directory_iterator(path("svg"))) {
    ++svgs;
    EXPECT_EQ(read_file(f.path().string()).rfind("<svg", 0), 0u);
  }
  EXPECT_EQ(svgs, records);
  EXPECT_TRUE(fs::exists(path("svg") + "/step_000.svg"));
}

TEST_F(Scratch, SimulateStepsCapRecordCount) {
  cli::SimulateOptions opt{shipped_config(ScenarioKind::kOvertaking), {}, 1, 2, 3, {}, {}, {}, {}};
  std::ostringstream out, err;
  ASSERT_EQ(cli::cmd_simulate(opt, out, err), cli::kOk);
  EXPECT_EQ(parse_csv(out.str()).size(), 1u + 4u);
}

TEST_F(Scratch, InfeasibleStartAbortsWithExitThreeOrFallsBack) {
  // Both cars 8 m before the conflict point at 12 m/s: every joint action
  // ends inside the safety radius.
  const auto cfg = write("tight.json", R"({"schema_version": 1, "scenario": "intersection",
      "ego": {"x0": -8, "v0": 12}, "human": {"x0": -8, "v0": 12}})");
  cli::SimulateOptions opt{cfg, {}, 1, 1, 5, {}, std::string("abort"), {}, {}};
  std::ostringstream out, err;
  EXPECT_EQ(cli::cmd_simulate(opt, out, err), cli::kAbortedInfeasible);
  EXPECT_NE(err.str().find("aborted"), std::string::npos);
  EXPECT_EQ(parse_csv(out.str()).size(), 2u);

  opt.on_infeasible = "fallback";
  std::ostringstream out2, err2;
  EXPECT_EQ(cli::cmd_simulate(opt, out2, err2), cli::kOk);
  EXPECT_NE(err2.str().find("max-probability profile"), std::string::npos);
  const auto rows = parse_csv(out2.str());
  EXPECT_EQ(rows[1][std::find(rows[0].begin(), rows[0].end(), "fallback") - rows[0].begin()], "1");
}

TEST_F(Scratch, SimulateRejectsBadArguments) {
  std::ostringstream out, err;
  cli::SimulateOptions opt{shipped_config(ScenarioKind::kMerging), {}, 5, {}, {}, {}, {}, {}, {}};
  EXPECT_EQ(cli::cmd_simulate(opt, out, err), cli::kConfigError);
  opt.human_level = 1;
  opt.on_infeasible = "panic";
  EXPECT_EQ(cli::cmd_simulate(opt, out, err), cli::kConfigError);
  opt.on_infeasible.reset();
  opt.config = path("missing.json");
  EXPECT_EQ(cli::cmd_simulate(opt, out, err), cli::kConfigError);
}

TEST_F(Scratch, EvaluateWithNoSeedsIsEmptyAndSucceeds) {
  cli::EvaluateOptions opt;
  opt.config = shipped_config(ScenarioKind::kIntersection);
  opt.seeds = "";
  std::ostringstream out, err;
  ASSERT_EQ(cli::cmd_evaluate(opt, out, err), cli::kOk) << err.str();
  const auto j = nlohmann::json::parse(out.str());
  ASSERT_EQ(j["levels"].size(), 2u);
  for (const auto& l : j["levels"]) EXPECT_EQ(l["episodes"], 0);
}

TEST_F(Scratch, EvaluateIsIndependentOfThreadCount) {
  cli::EvaluateOptions opt;
  opt.config = shipped_config(ScenarioKind::kMerging);
  opt.seeds = "1-6";
  opt.steps = 12;
  auto run = [&](unsigned jobs) {
    opt.jobs = jobs;
    opt.summary = path("summary_" + std::to_string(jobs) + ".json");
    std::ostringstream out, err;
    EXPECT_EQ(cli::cmd_evaluate(opt, out, err), cli::kOk) << err.str();
    EXPECT_NE(out.str().find("human level 1"), std::string::npos);
    auto j = nlohmann::json::parse(read_file(*opt.summary));
    j.erase("wall_seconds");
    for (auto& l : j["levels"]) {
      l.erase("mean_step_ms");
      l.erase("max_step_ms");
    }
    return j;
  };
  const auto one = run(1);
  EXPECT_EQ(one["levels"][0]["episodes"], 6);
  EXPECT_EQ(one["config_hash"], "be521e43a5b264b3");
  EXPECT_EQ(run(3), one);
}

TEST_F(Scratch, EvaluateMaximinBaseline) {
  cli::EvaluateOptions opt;
  opt.config = shipped_config(ScenarioKind::kIntersection);
  opt.seeds = "1-2";
  opt.planner = cli::PlannerKind::kMaximin;
  std::ostringstream out, err;
  ASSERT_EQ(cli::cmd_evaluate(opt, out, err), cli::kOk) << err.str();
  const auto j = nlohmann::json::parse(out.str());
  EXPECT_EQ(j["levels"][0]["completed"], 2);
  EXPECT_EQ(j["levels"][0]["violation_rate"], 0.0);
}

// Synthetic records drive the outcome tracker directly.
sim::StepRecord record(int t, VehicleState ego, VehicleState human) {
  sim::StepRecord r;
  r.t = t;
  r.ego = ego;
  r.human = human;
  return r;
}

TEST(Outcome, IntersectionCrossingTimesAreInterpolated) {
  const auto sc = make_scenario(default_config(ScenarioKind::kIntersection));
  sim::OutcomeTracker tr(*sc);
  tr.observe(record(0, {-4.0, 0, 10}, {-12.0, 0, 10}));
  tr.observe(record(1, {6.0, 0, 10}, {-2.0, 0, 10}));   // ego crosses at 0.4
  tr.observe(record(2, {16.0, 0, 10}, {8.0, 0, 10}));  // human at 1.2
  const auto o = tr.outcome();
  EXPECT_EQ(o.label, "ego_first");
  EXPECT_EQ(o.event_step, 1);

  sim::OutcomeTracker late(*sc);
  late.observe(record(0, {-12.0, 0, 10}, {-4.0, 0, 10}));
  late.observe(record(1, {-2.0, 0, 10}, {6.0, 0, 10}));
  late.observe(record(2, {8.0, 0, 10}, {16.0, 0, 10}));
  EXPECT_EQ(late.outcome().label, "ego_yielded");

  sim::OutcomeTracker none(*sc);
  none.observe(record(0, {-12.0, 0, 0}, {-30.0, 0, 0}));
  EXPECT_EQ(none.outcome().label, "undecided");
}

TEST(Outcome, MergePointIsTheStartOfTheMergingStep) {
  const auto sc = make_scenario(default_config(ScenarioKind::kMerging));
  sim::OutcomeTracker tr(*sc);
  tr.observe(record(0, {90.0, 1.8, 10}, {80.0, 5.4, 10}));
  tr.observe(record(1, {100.0, 1.8, 10}, {90.0, 5.4, 10}));
  tr.observe(record(2, {110.0, 5.4, 10}, {100.0, 5.4, 10}));
  const auto o = tr.outcome();
  EXPECT_EQ(o.label, "merged_ahead");
  EXPECT_EQ(o.event_step, 2);
  EXPECT_EQ(o.event_x, 100.0);
  EXPECT_TRUE(o.within_section);
}

TEST(Outcome, ViolationEndsTheEpisode) {
  const auto sc = make_scenario(default_config(ScenarioKind::kOvertaking));
  sim::OutcomeTracker tr(*sc);
  auto r = record(0, {0.0, 1.8, 10}, {4.0, 1.8, 8});
  r.omega_violation = true;
  EXPECT_TRUE(tr.observe(r));
  EXPECT_TRUE(tr.outcome().violation);
  EXPECT_EQ(tr.outcome().label, "incomplete");
}

TEST(Simulator, HumanStreamIsIndependentOfEgoSolver) {
  // The human's draws come from their own stream: with the same seed, a
  // maximin ego and a cognitive ego see identical first human actions.
  const auto sc = make_scenario(default_config(ScenarioKind::kOvertaking));
  const sim::Simulator s(*sc);
  const auto a = s.run(1, 7, 1, OnInfeasible::kFallback);
  const auto b = sim::run_maximin(s, 1, 7, 1);
  EXPECT_EQ(a.records[0].human_action, b.records[0].human_action);
}

TEST(Report, SummaryFlagsMatchRecords) {
  const auto sc = make_scenario(default_config(ScenarioKind::kIntersection));
  const sim::Simulator s(*sc);
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    const auto log = s.run(2, seed, 30, OnInfeasible::kFallback);
    const auto sum = report::summarize(*sc, log);
    bool any = false;
    for (const auto& r : log.records) any = any || r.omega_violation;
    EXPECT_EQ(sum.outcome.violation, any);
    EXPECT_EQ(sum.steps + 1, static_cast<int>(log.records.size()));
    EXPECT_DOUBLE_EQ(sum.final_posterior_true, log.records.back().posterior[1]);
  }
}

}  // namespace
