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

#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace cogplan {

using StateIndex = std::uint32_t;
using ActionIndex = std::uint32_t;

/// Player 1 is the ego agent, player 2 is its environment.
enum class Player : int { kEgo = 1, kEnv = 2 };

inline Player opponent(Player p) { return p == Player::kEgo ? Player::kEnv : Player::kEgo; }

inline const char* to_string(Player p) { return p == Player::kEgo ? "ego" : "env"; }

/// Raised for out-of-range indices, malformed tables and similar caller errors.
class ArgumentError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Tolerance used for every "sums to one" check in the library.
inline constexpr double kProbTolerance = 1e-9;

/// A finite two-player dynamic game with deterministic transitions.
///
/// States and actions are dense indices; domain meaning lives in a codec
/// owned by whoever builds the game (see traffic.hpp). Rewards are evaluated
/// at the successor state. `safe(t, x)` is membership of x in the safe set of
/// absolute time t.
struct GameSpec {
  std::size_t num_states = 0;
  std::size_t num_ego_actions = 0;
  std::size_t num_env_actions = 0;
  std::function<StateIndex(StateIndex, ActionIndex, ActionIndex)> transition;
  std::function<double(StateIndex)> ego_reward;
  std::function<double(StateIndex)> env_reward;
  std::function<bool(std::int64_t, StateIndex)> safe;
  double discount = 1.0;
  int horizon = 1;

  std::size_t num_actions(Player p) const {
    return p == Player::kEgo ? num_ego_actions : num_env_actions;
  }

  double reward(Player p, StateIndex x) const {
    return p == Player::kEgo ? ego_reward(x) : env_reward(x);
  }

  /// Successor when `own` is played by `p` and `other` by its opponent.
  StateIndex next(Player p, StateIndex x, ActionIndex own, ActionIndex other) const {
    return p == Player::kEgo ? transition(x, own, other) : transition(x, other, own);
  }

  bool is_safe(std::int64_t t, StateIndex x) const { return !safe || safe(t, x); }
};

struct ValidationReport {
  std::vector<std::string> violations;

  bool ok() const { return violations.empty(); }
};

/// Checks every GameSpec invariant by full enumeration. Diagnostic only.
inline ValidationReport validate_game(const GameSpec& spec) {
  ValidationReport report;
  auto fail = [&](std::string msg) { report.violations.push_back(std::move(msg)); };

  if (spec.num_states == 0) fail("state set is empty");
  if (spec.num_ego_actions == 0) fail("ego action set is empty");
  if (spec.num_env_actions == 0) fail("env action set is empty");
  if (!(spec.discount > 0.0 && spec.discount <= 1.0)) fail("discount out of (0,1]");
  if (spec.horizon < 1) fail("horizon must be >= 1");
  if (!spec.transition) fail("transition is not set");
  if (!spec.ego_reward) fail("ego reward is not set");
  if (!spec.env_reward) fail("env reward is not set");
  if (!report.ok()) return report;

  for (std::size_t x = 0; x < spec.num_states; ++x) {
    const auto s = static_cast<StateIndex>(x);
    for (ActionIndex u1 = 0; u1 < spec.num_ego_actions; ++u1) {
      for (ActionIndex u2 = 0; u2 < spec.num_env_actions; ++u2) {
        const StateIndex next = spec.transition(s, u1, u2);
        if (next >= spec.num_states) {
          std::ostringstream os;
          os << "transition out of range at (state=" << x << ", u1=" << u1 << ", u2=" << u2
             << ") -> " << next;
          fail(os.str());
        }
      }
    }
    if (!std::isfinite(spec.ego_reward(s))) fail("ego reward not finite at state " + std::to_string(x));
    if (!std::isfinite(spec.env_reward(s))) fail("env reward not finite at state " + std::to_string(x));
  }
  return report;
}

struct StepResult {
  StateIndex next;
  double ego_reward;
  double env_reward;
};

inline StepResult step(const GameSpec& spec, StateIndex x, ActionIndex u1, ActionIndex u2) {
  if (x >= spec.num_states) throw ArgumentError("state index out of range");
  if (u1 >= spec.num_ego_actions) throw ArgumentError("ego action index out of range");
  if (u2 >= spec.num_env_actions) throw ArgumentError("env action index out of range");
  const StateIndex next = spec.transition(x, u1, u2);
  return {next, spec.ego_reward(next), spec.env_reward(next)};
}

/// Row-stochastic |X| x |U^i| table: the probability that `player` at
/// cognitive `level` picks each action in each state.
class PolicyTable {
 public:
  PolicyTable(Player player, int level, std::size_t num_states, std::size_t num_actions,
              std::vector<double> probs)
      : player_(player),
        level_(level),
        num_states_(num_states),
        num_actions_(num_actions),
        probs_(std::move(probs)) {
    if (level_ < 0) throw ArgumentError("policy level must be >= 0");
    if (num_actions_ == 0) throw ArgumentError("policy needs at least one action");
    if (probs_.size() != num_states_ * num_actions_)
      throw ArgumentError("policy table has wrong size");
    for (std::size_t x = 0; x < num_states_; ++x) check_row(row(static_cast<StateIndex>(x)), x);
  }

  static PolicyTable uniform(Player player, int level, std::size_t num_states,
                             std::size_t num_actions) {
    return PolicyTable(player, level, num_states, num_actions,
                       std::vector<double>(num_states * num_actions, 1.0 / static_cast<double>(num_actions)));
  }

  static PolicyTable one_hot(Player player, int level, std::size_t num_actions,
                             std::span<const ActionIndex> choice) {
    std::vector<double> probs(choice.size() * num_actions, 0.0);
    for (std::size_t x = 0; x < choice.size(); ++x) {
      if (choice[x] >= num_actions) throw ArgumentError("one-hot choice out of range");
      probs[x * num_actions + choice[x]] = 1.0;
    }
    return PolicyTable(player, level, choice.size(), num_actions, std::move(probs));
  }

  Player player() const { return player_; }
  int level() const { return level_; }
  std::size_t num_states() const { return num_states_; }
  std::size_t num_actions() const { return num_actions_; }

  std::span<const double> row(StateIndex x) const {
    if (x >= num_states_) throw ArgumentError("policy row out of range");
    return {probs_.data() + static_cast<std::size_t>(x) * num_actions_, num_actions_};
  }

  double prob(StateIndex x, ActionIndex u) const { return row(x)[u]; }

  const std::vector<double>& data() const { return probs_; }

  /// Throws unless `row` is a probability vector.
  static void check_row(std::span<const double> row, std::size_t x = 0) {
    double sum = 0.0;
    for (double p : row) {
      if (!(p >= 0.0 && p <= 1.0))
        throw ArgumentError("policy entry outside [0,1] in row " + std::to_string(x));
      sum += p;
    }
    if (std::abs(sum - 1.0) > kProbTolerance)
      throw ArgumentError("policy row " + std::to_string(x) + " does not sum to 1");
  }

 private:
  Player player_;
  int level_;
  std::size_t num_states_;
  std::size_t num_actions_;
  std::vector<double> probs_;
};

}  // namespace cogplan
