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

// Augmented-state filtering over (physical state, hidden opponent level).
//
// The opponent's level never changes, so the augmented transition kernel is
// block diagonal in the level. Given ego action u, the opponent's action is
// a disturbance drawn from its level policy:
//
//   P((x', k) | (x, k), u) = sum over u2 with T(x, u, u2) = x' of pi^{2,k}(x, u2)
//
// Distributions over the augmented space are stored sparsely; absent
// entries are zero.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <mutex>
#include <shared_mutex>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "cogplan/game_core.hpp"
#include "cogplan/hierarchy.hpp"

namespace cogplan {

using AugIndex = std::uint64_t;

/// Physical state paired with the opponent's hidden cognitive level.
struct AugmentedState {
  StateIndex state;
  int level;

  bool operator==(const AugmentedState&) const = default;
};

/// Dense indexing of X x K. `levels` lists the members of K in slot order.
class AugmentedSpace {
 public:
  AugmentedSpace(std::size_t num_states, std::vector<int> levels)
      : num_states_(num_states), levels_(std::move(levels)) {
    if (levels_.empty()) throw ArgumentError("level set K is empty");
    for (std::size_t i = 0; i < levels_.size(); ++i) {
      if (levels_[i] < 0) throw ArgumentError("levels must be >= 0");
      for (std::size_t j = 0; j < i; ++j)
        if (levels_[j] == levels_[i]) throw ArgumentError("duplicate level in K");
    }
  }

  std::size_t num_states() const { return num_states_; }
  std::size_t num_levels() const { return levels_.size(); }
  std::size_t size() const { return num_states_ * levels_.size(); }
  const std::vector<int>& levels() const { return levels_; }

  std::size_t slot_of(int level) const {
    for (std::size_t i = 0; i < levels_.size(); ++i)
      if (levels_[i] == level) return i;
    throw ArgumentError("level " + std::to_string(level) + " is not in K");
  }

  AugIndex index(StateIndex x, std::size_t slot) const {
    return static_cast<AugIndex>(x) * levels_.size() + slot;
  }
  AugIndex index(const AugmentedState& s) const { return index(s.state, slot_of(s.level)); }

  StateIndex state_of(AugIndex i) const { return static_cast<StateIndex>(i / levels_.size()); }
  std::size_t slot_of_index(AugIndex i) const { return static_cast<std::size_t>(i % levels_.size()); }

  AugmentedState decode(AugIndex i) const {
    if (i >= size()) throw ArgumentError("augmented index out of range");
    return {state_of(i), levels_[slot_of_index(i)]};
  }

 private:
  std::size_t num_states_;
  std::vector<int> levels_;
};

struct Mass {
  AugIndex index;
  double prob;

  bool operator==(const Mass&) const = default;
};

/// Sparse probability vector over the augmented space, sorted by index.
class Distribution {
 public:
  Distribution() = default;

  /// Sorts, merges duplicate indices and drops exact zeros.
  explicit Distribution(std::vector<Mass> entries) : entries_(std::move(entries)) {
    std::sort(entries_.begin(), entries_.end(),
              [](const Mass& a, const Mass& b) { return a.index < b.index; });
    std::size_t out = 0;
    for (std::size_t i = 0; i < entries_.size(); ++i) {
      if (out > 0 && entries_[out - 1].index == entries_[i].index) {
        entries_[out - 1].prob += entries_[i].prob;
      } else {
        entries_[out++] = entries_[i];
      }
    }
    entries_.resize(out);
    std::erase_if(entries_, [](const Mass& m) { return m.prob == 0.0; });
  }

  static Distribution from_dense(std::span<const double> dense) {
    std::vector<Mass> e;
    for (std::size_t i = 0; i < dense.size(); ++i)
      if (dense[i] != 0.0) e.push_back({static_cast<AugIndex>(i), dense[i]});
    return Distribution(std::move(e));
  }

  std::vector<double> to_dense(std::size_t n) const {
    std::vector<double> out(n, 0.0);
    for (const auto& m : entries_) {
      if (m.index >= n) throw ArgumentError("distribution index exceeds dense size");
      out[m.index] = m.prob;
    }
    return out;
  }

  const std::vector<Mass>& entries() const { return entries_; }
  std::size_t support_size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }

  double at(AugIndex i) const {
    auto it = std::lower_bound(entries_.begin(), entries_.end(), i,
                               [](const Mass& m, AugIndex v) { return m.index < v; });
    return it != entries_.end() && it->index == i ? it->prob : 0.0;
  }

  double total() const {
    double s = 0.0;
    for (const auto& m : entries_) s += m.prob;
    return s;
  }

 private:
  std::vector<Mass> entries_;
};

/// Posterior over the augmented state at decision time `t`.
struct Belief {
  Distribution dist;
  std::int64_t t = 0;

  /// P(sigma = K[slot] | history), in slot order.
  std::vector<double> level_marginal(const AugmentedSpace& space) const {
    std::vector<double> out(space.num_levels(), 0.0);
    for (const auto& m : dist.entries()) out[space.slot_of_index(m.index)] += m.prob;
    return out;
  }
};

/// Observations y_0..y_t and executed ego actions u_0..u_{t-1}.
struct History {
  std::vector<StateIndex> observations;
  std::vector<ActionIndex> actions;

  bool valid() const { return observations.size() == actions.size() + 1; }

  void record(ActionIndex executed, StateIndex observed) {
    actions.push_back(executed);
    observations.push_back(observed);
  }
};

class InconsistentObservation : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct KernelEntry {
  AugIndex target;
  double prob;
};

/// P(target | source, ego action) for the augmented dynamics.
///
/// Rows are built on first use and memoized; a kernel built from policy
/// tables is fully populated at construction.
class AugmentedKernel {
 public:
  using EnvRow = std::function<std::span<const double>(StateIndex)>;

  AugmentedKernel(std::shared_ptr<const GameSpec> spec, AugmentedSpace space,
                  std::vector<EnvRow> env_rows, std::shared_ptr<const void> keep_alive)
      : spec_(std::move(spec)),
        space_(std::move(space)),
        env_rows_(std::move(env_rows)),
        keep_alive_(std::move(keep_alive)) {
    if (env_rows_.size() != space_.num_levels())
      throw ArgumentError("one environment policy per level is required");
  }

  AugmentedKernel(const AugmentedKernel&) = delete;
  AugmentedKernel& operator=(const AugmentedKernel&) = delete;

  const GameSpec& spec() const { return *spec_; }
  const AugmentedSpace& space() const { return space_; }
  std::size_t num_ego_actions() const { return spec_->num_ego_actions; }

  std::span<const KernelEntry> row(AugIndex source, ActionIndex u) const {
    if (u >= spec_->num_ego_actions) throw ArgumentError("ego action out of range");
    return rows_for(source)[u];
  }

  /// Probability of one transition; zero when absent.
  double prob(AugIndex target, AugIndex source, ActionIndex u) const {
    for (const auto& e : row(source, u))
      if (e.target == target) return e.prob;
    return 0.0;
  }

  std::size_t cached_sources() const {
    std::shared_lock lock(mu_);
    return memo_.size();
  }

 private:
  using Rows = std::vector<std::vector<KernelEntry>>;

  const Rows& rows_for(AugIndex source) const {
    {
      std::shared_lock lock(mu_);
      auto it = memo_.find(source);
      if (it != memo_.end()) return it->second;
    }
    if (source >= space_.size()) throw ArgumentError("augmented source out of range");
    Rows rows = build_rows(source);
    std::unique_lock lock(mu_);
    return memo_.try_emplace(source, std::move(rows)).first->second;
  }

  Rows build_rows(AugIndex source) const {
    const StateIndex x = space_.state_of(source);
    const std::size_t slot = space_.slot_of_index(source);
    const std::span<const double> pol = env_rows_[slot](x);
    if (pol.size() != spec_->num_env_actions) throw ArgumentError("env policy row has wrong size");
    Rows rows(spec_->num_ego_actions);
    for (ActionIndex u = 0; u < spec_->num_ego_actions; ++u) {
      auto& r = rows[u];
      for (ActionIndex u2 = 0; u2 < spec_->num_env_actions; ++u2) {
        if (pol[u2] == 0.0) continue;
        const AugIndex target = space_.index(spec_->transition(x, u, u2), slot);
        auto it = std::find_if(r.begin(), r.end(), [&](const KernelEntry& e) { return e.target == target; });
        if (it != r.end()) {
          it->prob += pol[u2];
        } else {
          r.push_back({target, pol[u2]});
        }
      }
      std::sort(r.begin(), r.end(),
                [](const KernelEntry& a, const KernelEntry& b) { return a.target < b.target; });
    }
    return rows;
  }

  std::shared_ptr<const GameSpec> spec_;
  AugmentedSpace space_;
  std::vector<EnvRow> env_rows_;
  std::shared_ptr<const void> keep_alive_;
  mutable std::shared_mutex mu_;
  mutable std::unordered_map<AugIndex, Rows> memo_;
};

/// Kernel from tabulated environment policies, one per entry of `levels`.
inline std::shared_ptr<const AugmentedKernel> build_kernel(std::shared_ptr<const GameSpec> spec,
                                                           std::vector<PolicyTable> env_policies,
                                                           std::vector<int> levels) {
  if (!spec) throw ArgumentError("null game");
  if (env_policies.size() != levels.size())
    throw ArgumentError("missing environment policy for some level");
  for (std::size_t i = 0; i < levels.size(); ++i) {
    const auto& p = env_policies[i];
    if (p.player() != Player::kEnv) throw ArgumentError("kernel needs environment policies");
    if (p.level() != levels[i])
      throw ArgumentError("missing environment policy for level " + std::to_string(levels[i]));
    if (p.num_states() != spec->num_states || p.num_actions() != spec->num_env_actions)
      throw ArgumentError("environment policy shape does not match the game");
  }
  auto tables = std::make_shared<std::vector<PolicyTable>>(std::move(env_policies));
  std::vector<AugmentedKernel::EnvRow> rows;
  for (std::size_t i = 0; i < tables->size(); ++i) {
    const PolicyTable* t = &(*tables)[i];
    rows.push_back([t](StateIndex x) { return t->row(x); });
  }
  AugmentedSpace space(spec->num_states, std::move(levels));
  auto kernel = std::make_shared<AugmentedKernel>(spec, space, std::move(rows), tables);
  // Rows are built per source for all actions at once.
  for (AugIndex i = 0; i < space.size(); ++i) kernel->row(i, 0);
  return kernel;
}

/// Kernel whose rows are pulled lazily from a hierarchy's environment levels.
inline std::shared_ptr<const AugmentedKernel> build_kernel(std::shared_ptr<const Hierarchy> hierarchy,
                                                           std::vector<int> levels) {
  if (!hierarchy) throw ArgumentError("null hierarchy");
  std::vector<AugmentedKernel::EnvRow> rows;
  for (int k : levels) {
    if (k < 0 || k > hierarchy->k_max())
      throw ArgumentError("missing environment policy for level " + std::to_string(k));
    const LevelPolicy* p = &hierarchy->env(k);
    rows.push_back([p](StateIndex x) { return p->row(x); });
  }
  AugmentedSpace space(hierarchy->spec().num_states, std::move(levels));
  return std::make_shared<AugmentedKernel>(hierarchy->spec_ptr(), space, std::move(rows), hierarchy);
}

namespace detail {

inline void check_gamma(std::span<const double> gamma, std::size_t num_actions) {
  if (gamma.size() != num_actions) throw ArgumentError("gamma has wrong dimension");
  double s = 0.0;
  for (double g : gamma) {
    if (!(g >= 0.0 && g <= 1.0)) throw ArgumentError("gamma entry outside [0,1]");
    s += g;
  }
  if (std::abs(s - 1.0) > kProbTolerance) throw ArgumentError("gamma does not sum to 1");
}

}  // namespace detail

/// One-step prediction under a randomized ego action:
/// next(i) = sum_j sum_l gamma(l) P(i | j, l) current(j).
inline Distribution predict(const AugmentedKernel& kernel, const Distribution& current,
                            std::span<const double> gamma) {
  detail::check_gamma(gamma, kernel.num_ego_actions());
  std::vector<Mass> out;
  for (const auto& m : current.entries()) {
    if (m.index >= kernel.space().size()) throw ArgumentError("distribution exceeds augmented space");
    for (ActionIndex u = 0; u < gamma.size(); ++u) {
      if (gamma[u] == 0.0) continue;
      const double w = gamma[u] * m.prob;
      for (const auto& e : kernel.row(m.index, u)) out.push_back({e.target, w * e.prob});
    }
  }
  return Distribution(std::move(out));
}

/// P(y_{t+1} = y, sigma = K[slot] | prior, executed u), per slot.
inline std::vector<double> observation_likelihoods(const AugmentedKernel& kernel, const Belief& prior,
                                                   ActionIndex executed, StateIndex observed) {
  const auto& space = kernel.space();
  if (observed >= space.num_states()) throw ArgumentError("observation out of range");
  if (executed >= kernel.num_ego_actions()) throw ArgumentError("executed action out of range");
  std::vector<double> lik(space.num_levels(), 0.0);
  for (const auto& m : prior.dist.entries()) {
    const std::size_t slot = space.slot_of_index(m.index);
    const AugIndex target = space.index(observed, slot);
    for (const auto& e : kernel.row(m.index, executed))
      if (e.target == target) lik[slot] += e.prob * m.prob;
  }
  return lik;
}

/// Bayesian update of the augmented belief after executing `executed` and
/// observing physical state `observed`. The posterior lives on {observed} x K.
inline Belief bayes_update(const AugmentedKernel& kernel, const Belief& prior, ActionIndex executed,
                           StateIndex observed) {
  const auto lik = observation_likelihoods(kernel, prior, executed, observed);
  double total = 0.0;
  for (double l : lik) total += l;
  if (!(total > 0.0)) throw InconsistentObservation("inconsistent observation: predicted mass is zero");
  std::vector<Mass> post;
  for (std::size_t slot = 0; slot < lik.size(); ++slot)
    post.push_back({kernel.space().index(observed, slot), lik[slot] / total});
  return {Distribution(std::move(post)), prior.t + 1};
}

/// Point mass on `x` in the physical part, `level_prior` over K.
inline Belief init_belief(const AugmentedSpace& space, StateIndex x, std::span<const double> level_prior,
                          std::int64_t t = 0) {
  if (x >= space.num_states()) throw ArgumentError("initial state out of range");
  if (level_prior.size() != space.num_levels()) throw ArgumentError("level prior has wrong dimension");
  double s = 0.0;
  for (double p : level_prior) {
    if (!(p >= 0.0 && p <= 1.0)) throw ArgumentError("level prior entry outside [0,1]");
    s += p;
  }
  if (std::abs(s - 1.0) > kProbTolerance) throw ArgumentError("level prior does not sum to 1");
  std::vector<Mass> e;
  for (std::size_t slot = 0; slot < level_prior.size(); ++slot)
    e.push_back({space.index(x, slot), level_prior[slot]});
  return {Distribution(std::move(e)), t};
}

/// Replays a history from the level prior.
inline Belief filter_history(const AugmentedKernel& kernel, const History& history,
                             std::span<const double> level_prior) {
  if (!history.valid()) throw ArgumentError("history needs one more observation than actions");
  Belief b = init_belief(kernel.space(), history.observations.front(), level_prior);
  for (std::size_t i = 0; i < history.actions.size(); ++i)
    b = bayes_update(kernel, b, history.actions[i], history.observations[i + 1]);
  return b;
}

}  // namespace cogplan
