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

// Level-k policy construction.
//
// A level-k player responds to an opponent modelled at level k-1. Its
// Q-value for (x, u) is the best open-loop continuation of the first action u
// over the horizon, with the opponent's actions drawn from its level-(k-1)
// policy at every visited state. The policy is the softmax of that Q row.
// Level 0 is supplied by the caller.

#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <limits>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <span>
#include <unordered_map>
#include <utility>
#include <vector>

#include "cogplan/game_core.hpp"

namespace cogplan {

struct QTable {
  int level = 0;
  Player player = Player::kEnv;
  std::size_t num_states = 0;
  std::size_t num_actions = 0;
  std::vector<double> values;

  std::span<const double> row(StateIndex x) const {
    return {values.data() + static_cast<std::size_t>(x) * num_actions, num_actions};
  }
};

/// Anything that can hand out a policy row for a state.
template <class P>
concept PolicySource = requires(const P& p, StateIndex x) {
  { p.row(x) } -> std::convertible_to<std::span<const double>>;
};

/// exp(q / temperature) normalized, with the row maximum subtracted first.
inline std::vector<double> softmax_row(std::span<const double> q, double temperature = 1.0) {
  if (q.empty()) return {};
  const double qmax = *std::max_element(q.begin(), q.end());
  std::vector<double> out(q.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < q.size(); ++i) {
    out[i] = std::exp((q[i] - qmax) / temperature);
    sum += out[i];
  }
  for (double& p : out) p /= sum;
  return out;
}

inline PolicyTable softmax_policy(const QTable& q, double temperature = 1.0) {
  for (double v : q.values)
    if (!std::isfinite(v)) throw ArgumentError("Q table has non-finite entries");
  std::vector<double> probs;
  probs.reserve(q.values.size());
  for (std::size_t x = 0; x < q.num_states; ++x) {
    const auto r = softmax_row(q.row(static_cast<StateIndex>(x)), temperature);
    probs.insert(probs.end(), r.begin(), r.end());
  }
  return PolicyTable(q.player, q.level, q.num_states, q.num_actions, std::move(probs));
}

namespace detail {

struct WeightedState {
  StateIndex state;
  double prob;
};

inline void merge_duplicates(std::vector<WeightedState>& dist) {
  std::sort(dist.begin(), dist.end(),
            [](const WeightedState& a, const WeightedState& b) { return a.state < b.state; });
  std::size_t out = 0;
  for (std::size_t i = 0; i < dist.size(); ++i) {
    if (out > 0 && dist[out - 1].state == dist[i].state) {
      dist[out - 1].prob += dist[i].prob;
    } else {
      dist[out++] = dist[i];
    }
  }
  dist.resize(out);
}

}  // namespace detail

/// One Q row of `player` at state x against a stochastic opponent.
///
/// Exact expectation over opponent branches; the maximization is over the
/// player's own open-loop continuations u_1..u_{N-1}.
template <PolicySource Opponent>
std::vector<double> q_row(const GameSpec& spec, Player player, const Opponent& opp, StateIndex x) {
  using detail::WeightedState;
  const int horizon = spec.horizon;
  const std::size_t n_own = spec.num_actions(player);
  const std::size_t n_opp = spec.num_actions(opponent(player));

  std::vector<double> weight(static_cast<std::size_t>(horizon));
  weight[0] = 1.0;
  for (int d = 1; d < horizon; ++d) weight[d] = weight[d - 1] * spec.discount;

  std::vector<std::vector<WeightedState>> layers(static_cast<std::size_t>(horizon) + 1);

  // Pushes layers[depth] through own action `a`; returns the discounted gain.
  auto propagate = [&](int depth, ActionIndex a) {
    const auto& from = layers[depth];
    auto& to = layers[depth + 1];
    to.clear();
    double gain = 0.0;
    for (const auto& [s, p] : from) {
      const std::span<const double> pol = opp.row(s);
      for (ActionIndex v = 0; v < n_opp; ++v) {
        if (pol[v] == 0.0) continue;
        const StateIndex nxt = spec.next(player, s, a, v);
        const double w = p * pol[v];
        gain += w * spec.reward(player, nxt);
        to.push_back({nxt, w});
      }
    }
    detail::merge_duplicates(to);
    return weight[depth] * gain;
  };

  auto best_continuation = [&](auto& self, int depth, double acc) -> double {
    if (depth == horizon) return acc;
    double best = -std::numeric_limits<double>::infinity();
    for (ActionIndex a = 0; a < n_own; ++a) {
      const double gain = propagate(depth, a);
      best = std::max(best, self(self, depth + 1, acc + gain));
    }
    return best;
  };

  std::vector<double> q(n_own);
  for (ActionIndex u = 0; u < n_own; ++u) {
    layers[0].assign(1, WeightedState{x, 1.0});
    const double gain = propagate(0, u);
    q[u] = best_continuation(best_continuation, 1, gain);
  }
  return q;
}

/// Full Q table of `player` against a tabulated opponent policy.
inline QTable compute_q(const GameSpec& spec, Player player, const PolicyTable& opp) {
  if (opp.player() == player) throw ArgumentError("opponent policy belongs to the same player");
  if (opp.num_states() != spec.num_states || opp.num_actions() != spec.num_actions(opponent(player)))
    throw ArgumentError("opponent policy shape does not match the game");
  QTable q{opp.level() + 1, player, spec.num_states, spec.num_actions(player), {}};
  q.values.reserve(q.num_states * q.num_actions);
  for (std::size_t x = 0; x < spec.num_states; ++x) {
    const auto r = q_row(spec, player, opp, static_cast<StateIndex>(x));
    q.values.insert(q.values.end(), r.begin(), r.end());
  }
  return q;
}

/// A policy whose rows are produced on demand and memoized.
///
/// Thread-safe; rows are computed outside the lock so generators may recurse
/// into other LevelPolicy objects. Returned spans stay valid for the object's
/// lifetime since rows are never erased.
class LevelPolicy {
 public:
  using Generator = std::function<std::vector<double>(StateIndex)>;

  LevelPolicy(Player player, int level, std::size_t num_states, std::size_t num_actions,
              Generator gen)
      : player_(player),
        level_(level),
        num_states_(num_states),
        num_actions_(num_actions),
        gen_(std::move(gen)) {}

  LevelPolicy(const LevelPolicy&) = delete;
  LevelPolicy& operator=(const LevelPolicy&) = delete;

  Player player() const { return player_; }
  int level() const { return level_; }
  std::size_t num_states() const { return num_states_; }
  std::size_t num_actions() const { return num_actions_; }

  std::span<const double> row(StateIndex x) const {
    {
      std::shared_lock lock(mu_);
      auto it = memo_.find(x);
      if (it != memo_.end()) return it->second;
    }
    if (x >= num_states_) throw ArgumentError("policy row out of range");
    std::vector<double> r = gen_(x);
    if (r.size() != num_actions_) throw ArgumentError("policy generator returned a wrong-size row");
    PolicyTable::check_row(r, x);
    std::unique_lock lock(mu_);
    auto [it, inserted] = memo_.try_emplace(x, std::move(r));
    return it->second;
  }

  double prob(StateIndex x, ActionIndex u) const { return row(x)[u]; }

  /// Pre-populates a row (e.g. from a cache). Existing rows are kept.
  void insert(StateIndex x, std::vector<double> r) const {
    if (x >= num_states_ || r.size() != num_actions_) throw ArgumentError("bad cached policy row");
    PolicyTable::check_row(r, x);
    std::unique_lock lock(mu_);
    memo_.try_emplace(x, std::move(r));
  }

  std::size_t cached_count() const {
    std::shared_lock lock(mu_);
    return memo_.size();
  }

  /// Memoized rows sorted by state.
  std::vector<std::pair<StateIndex, std::vector<double>>> cached_rows() const {
    std::vector<std::pair<StateIndex, std::vector<double>>> out;
    {
      std::shared_lock lock(mu_);
      out.assign(memo_.begin(), memo_.end());
    }
    std::sort(out.begin(), out.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    return out;
  }

  PolicyTable tabulate() const {
    std::vector<double> probs;
    probs.reserve(num_states_ * num_actions_);
    for (std::size_t x = 0; x < num_states_; ++x) {
      const auto r = row(static_cast<StateIndex>(x));
      probs.insert(probs.end(), r.begin(), r.end());
    }
    return PolicyTable(player_, level_, num_states_, num_actions_, std::move(probs));
  }

 private:
  Player player_;
  int level_;
  std::size_t num_states_;
  std::size_t num_actions_;
  Generator gen_;
  mutable std::shared_mutex mu_;
  mutable std::unordered_map<StateIndex, std::vector<double>> memo_;
};

struct HierarchyOptions {
  double temperature = 1.0;
  /// Tabulate every level over the whole state space at build time.
  bool eager = false;
};

/// Which policy a level was built against. Level 0 has no source.
struct Provenance {
  Player player;
  int level;
  std::optional<std::pair<Player, int>> built_from;
};

/// Level-0..k_max policies of both players.
class Hierarchy {
 public:
  int k_max() const { return k_max_; }
  double temperature() const { return temperature_; }
  const GameSpec& spec() const { return *spec_; }
  std::shared_ptr<const GameSpec> spec_ptr() const { return spec_; }

  const LevelPolicy& policy(Player p, int k) const {
    if (k < 0 || k > k_max_) throw ArgumentError("hierarchy level out of range");
    return p == Player::kEgo ? *ego_[k] : *env_[k];
  }
  const LevelPolicy& ego(int k) const { return policy(Player::kEgo, k); }
  const LevelPolicy& env(int k) const { return policy(Player::kEnv, k); }

  Provenance provenance(Player p, int k) const {
    if (k < 0 || k > k_max_) throw ArgumentError("hierarchy level out of range");
    if (k == 0) return {p, 0, std::nullopt};
    return {p, k, std::make_pair(opponent(p), k - 1)};
  }

  friend std::shared_ptr<const Hierarchy> build_hierarchy(std::shared_ptr<const GameSpec>, int,
                                                          LevelPolicy::Generator,
                                                          LevelPolicy::Generator,
                                                          HierarchyOptions);

 private:
  Hierarchy() = default;

  std::shared_ptr<const GameSpec> spec_;
  int k_max_ = 0;
  double temperature_ = 1.0;
  std::vector<std::unique_ptr<LevelPolicy>> ego_;
  std::vector<std::unique_ptr<LevelPolicy>> env_;
};

/// Builds the recursion on top of lazily evaluated level-0 policies.
///
/// env[k] = softmax(Q^env against ego[k-1]); ego[k] = softmax(Q^ego against
/// env[k-1]). Safe sets are ignored here; safety enters only through rewards.
inline std::shared_ptr<const Hierarchy> build_hierarchy(std::shared_ptr<const GameSpec> spec,
                                                        int k_max,
                                                        LevelPolicy::Generator level0_ego,
                                                        LevelPolicy::Generator level0_env,
                                                        HierarchyOptions options = {}) {
  if (!spec) throw ArgumentError("null game");
  if (k_max < 0) throw ArgumentError("k_max must be >= 0");
  if (!(options.temperature > 0.0)) throw ArgumentError("softmax temperature must be positive");

  std::shared_ptr<Hierarchy> h(new Hierarchy());
  h->spec_ = spec;
  h->k_max_ = k_max;
  h->temperature_ = options.temperature;
  const GameSpec* g = spec.get();

  h->ego_.push_back(std::make_unique<LevelPolicy>(Player::kEgo, 0, g->num_states,
                                                  g->num_ego_actions, std::move(level0_ego)));
  h->env_.push_back(std::make_unique<LevelPolicy>(Player::kEnv, 0, g->num_states,
                                                  g->num_env_actions, std::move(level0_env)));
  for (int k = 1; k <= k_max; ++k) {
    const LevelPolicy* prev_ego = h->ego_[k - 1].get();
    const LevelPolicy* prev_env = h->env_[k - 1].get();
    const double temp = options.temperature;
    h->env_.push_back(std::make_unique<LevelPolicy>(
        Player::kEnv, k, g->num_states, g->num_env_actions, [g, prev_ego, temp](StateIndex x) {
          return softmax_row(q_row(*g, Player::kEnv, *prev_ego, x), temp);
        }));
    h->ego_.push_back(std::make_unique<LevelPolicy>(
        Player::kEgo, k, g->num_states, g->num_ego_actions, [g, prev_env, temp](StateIndex x) {
          return softmax_row(q_row(*g, Player::kEgo, *prev_env, x), temp);
        }));
  }

  if (options.eager) {
    for (int k = 0; k <= k_max; ++k) {
      for (std::size_t x = 0; x < g->num_states; ++x) {
        h->env_[k]->row(static_cast<StateIndex>(x));
        h->ego_[k]->row(static_cast<StateIndex>(x));
      }
    }
  }
  return h;
}

/// Tabulated level-0 inputs; the hierarchy is built eagerly.
inline std::shared_ptr<const Hierarchy> build_hierarchy(std::shared_ptr<const GameSpec> spec,
                                                        int k_max, const PolicyTable& level0_ego,
                                                        const PolicyTable& level0_env,
                                                        HierarchyOptions options = {.eager = true}) {
  if (!spec) throw ArgumentError("null game");
  if (level0_ego.player() != Player::kEgo || level0_env.player() != Player::kEnv)
    throw ArgumentError("level-0 tables assigned to the wrong players");
  if (level0_ego.num_states() != spec->num_states || level0_env.num_states() != spec->num_states ||
      level0_ego.num_actions() != spec->num_ego_actions ||
      level0_env.num_actions() != spec->num_env_actions)
    throw ArgumentError("level-0 table shape does not match the game");
  auto ego0 = std::make_shared<PolicyTable>(level0_ego);
  auto env0 = std::make_shared<PolicyTable>(level0_env);
  return build_hierarchy(
      std::move(spec), k_max,
      [ego0](StateIndex x) {
        auto r = ego0->row(x);
        return std::vector<double>(r.begin(), r.end());
      },
      [env0](StateIndex x) {
        auto r = env0->row(x);
        return std::vector<double>(r.begin(), r.end());
      },
      options);
}

}  // namespace cogplan
