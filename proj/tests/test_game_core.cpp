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

#include "cogplan/game_core.hpp"
#include "cogplan/traffic.hpp"
#include "support/oracles.hpp"

namespace {

using namespace cogplan;

GameSpec flip_game() {
  GameSpec g;
  g.num_states = 2;
  g.num_ego_actions = 2;
  g.num_env_actions = 2;
  g.transition = [](StateIndex x, ActionIndex u1, ActionIndex u2) {
    return static_cast<StateIndex>((x + 1 + u1 + u2) % 2);
  };
  g.ego_reward = [](StateIndex x) { return x == 1 ? 3.0 : -1.0; };
  g.env_reward = [](StateIndex x) { return x == 1 ? 7.0 : 2.0; };
  g.discount = 0.9;
  g.horizon = 2;
  return g;
}

TEST(ValidateGame, WellFormedTwoStateGamePasses) {
  const auto report = validate_game(flip_game());
  EXPECT_TRUE(report.ok());
  EXPECT_TRUE(report.violations.empty());
}

TEST(ValidateGame, OutOfRangeTransitionNamesTheTriple) {
  GameSpec g = flip_game();
  g.transition = [](StateIndex x, ActionIndex u1, ActionIndex u2) {
    return (x == 1 && u1 == 0 && u2 == 1) ? StateIndex{2} : StateIndex{0};
  };
  const auto report = validate_game(g);
  ASSERT_EQ(report.violations.size(), 1u);
  EXPECT_NE(report.violations[0].find("state=1, u1=0, u2=1"), std::string::npos) << report.violations[0];
}

TEST(ValidateGame, ZeroDiscountIsRejected) {
  GameSpec g = flip_game();
  g.discount = 0.0;
  const auto report = validate_game(g);
  ASSERT_FALSE(report.ok());
  EXPECT_EQ(report.violations[0], "discount out of (0,1]");
}

TEST(ValidateGame, DiscountOfOneIsAllowedAndHorizonZeroIsNot) {
  GameSpec g = flip_game();
  g.discount = 1.0;
  EXPECT_TRUE(validate_game(g).ok());
  g.horizon = 0;
  EXPECT_FALSE(validate_game(g).ok());
}

TEST(ValidateGame, NonFiniteRewardIsReported) {
  GameSpec g = flip_game();
  g.ego_reward = [](StateIndex x) { return x == 0 ? std::numeric_limits<double>::infinity() : 0.0; };
  EXPECT_FALSE(validate_game(g).ok());
}

TEST(Step, IdentityTransitionWithZeroEgoReward) {
  GameSpec g;
  g.num_states = 3;
  g.num_ego_actions = 2;
  g.num_env_actions = 2;
  g.transition = [](StateIndex x, ActionIndex, ActionIndex) { return x; };
  g.ego_reward = [](StateIndex) { return 0.0; };
  g.env_reward = [](StateIndex x) { return 10.0 * x; };
  for (StateIndex x = 0; x < 3; ++x) {
    const auto r = step(g, x, 1, 0);
    EXPECT_EQ(r.next, x);
    EXPECT_EQ(r.ego_reward, 0.0);
    EXPECT_EQ(r.env_reward, 10.0 * x);
  }
}

TEST(Step, FlipGameLooksUpSuccessorRewards) {
  const auto r = step(flip_game(), 0, 0, 0);
  EXPECT_EQ(r.next, 1u);
  EXPECT_EQ(r.ego_reward, 3.0);
  EXPECT_EQ(r.env_reward, 7.0);
}

TEST(Step, OutOfRangeArgumentsThrow) {
  const auto g = flip_game();
  EXPECT_THROW(step(g, 2, 0, 0), ArgumentError);
  EXPECT_THROW(step(g, 0, 2, 0), ArgumentError);
  EXPECT_THROW(step(g, 0, 0, 2), ArgumentError);
}

TEST(Step, TrafficStepMatchesVehicleKinematics) {
  auto cfg = traffic::default_config(traffic::ScenarioKind::kMerging);
  auto s = traffic::make_scenario(cfg);
  const GameSpec& g = *s->game();
  cogtest::Rng rng(11);
  for (int i = 0; i < 10; ++i) {
    StateIndex x = static_cast<StateIndex>(cogtest::pick(rng, g.num_states));
    // Keep both vehicles away from the saturating road end.
    auto [e, h] = s->decode(x);
    if (e.s_x > 150.0 || h.s_x > 150.0) {
      --i;
      continue;
    }
    const auto u1 = static_cast<ActionIndex>(cogtest::pick(rng, g.num_ego_actions));
    const auto u2 = static_cast<ActionIndex>(cogtest::pick(rng, g.num_env_actions));
    const auto r = step(g, x, u1, u2);
    const auto& ea = s->grid(Player::kEgo).action(u1);
    const auto& ha = s->grid(Player::kEnv).action(u2);
    const auto& elim = s->grid(Player::kEgo).limits();
    const auto lane_cmd = [&](bool change, double s_y) {
      if (!change) return traffic::LaneCommand::kKeep;
      return traffic::lane_of(elim, s_y) == 0 ? traffic::LaneCommand::kLeft : traffic::LaneCommand::kRight;
    };
    const auto e2 = traffic::vehicle_step(e, ea.accel, lane_cmd(ea.change_lane, e.s_y), elim);
    const auto h2 = traffic::vehicle_step(h, ha.accel, lane_cmd(ha.change_lane, h.s_y), s->grid(Player::kEnv).limits());
    const auto [ne, nh] = s->decode(r.next);
    EXPECT_EQ(ne, e2);
    EXPECT_EQ(nh, h2);
    EXPECT_DOUBLE_EQ(r.ego_reward, g.ego_reward(r.next));
  }
}

TEST(Step, TotalOverRandomGames) {
  cogtest::Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const auto game = cogtest::make_random_game(rng, 1 + cogtest::pick(rng, 8), 1 + cogtest::pick(rng, 3),
                                                1 + cogtest::pick(rng, 3), 2, 0.9);
    const GameSpec& g = *game.spec;
    for (StateIndex x = 0; x < g.num_states; ++x)
      for (ActionIndex u1 = 0; u1 < g.num_ego_actions; ++u1)
        for (ActionIndex u2 = 0; u2 < g.num_env_actions; ++u2) {
          const auto r = step(g, x, u1, u2);
          EXPECT_LT(r.next, g.num_states);
        }
  }
}

TEST(PolicyTable, RejectsRowsThatDoNotSumToOne) {
  EXPECT_THROW(PolicyTable(Player::kEnv, 0, 1, 2, {0.5, 0.6}), ArgumentError);
  EXPECT_THROW(PolicyTable(Player::kEnv, 0, 1, 2, {1.5, -0.5}), ArgumentError);
  EXPECT_THROW(PolicyTable(Player::kEnv, 0, 2, 2, {0.5, 0.5}), ArgumentError);
  EXPECT_NO_THROW(PolicyTable(Player::kEnv, 0, 1, 2, {0.5, 0.5 + 5e-10}));
}

TEST(PolicyTable, ConstructorsProduceStochasticRows) {
  const auto u = PolicyTable::uniform(Player::kEgo, 0, 4, 3);
  for (StateIndex x = 0; x < 4; ++x) EXPECT_NO_THROW(PolicyTable::check_row(u.row(x)));
  const std::vector<ActionIndex> choice{2, 0, 1};
  const auto h = PolicyTable::one_hot(Player::kEnv, 1, 3, choice);
  EXPECT_EQ(h.prob(0, 2), 1.0);
  EXPECT_EQ(h.prob(1, 0), 1.0);
  EXPECT_EQ(h.prob(2, 1), 1.0);
  EXPECT_EQ(h.level(), 1);
  cogtest::Rng rng(3);
  for (int i = 0; i < 100; ++i) {
    const auto p = cogtest::random_policy(rng, Player::kEnv, 0, 5, 1 + cogtest::pick(rng, 4), true);
    for (StateIndex x = 0; x < 5; ++x) EXPECT_NO_THROW(PolicyTable::check_row(p.row(x)));
  }
}

}  // namespace
