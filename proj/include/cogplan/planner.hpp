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

// Chance-constrained receding-horizon planning over randomized open-loop
// decision profiles.
//
// A profile assigns a distribution over ego actions to each stage of the
// horizon. For a fixed profile the expected discounted reward and the
// probability of staying inside the safe sets at every stage are both
// computed exactly by forward propagation of the augmented belief; the
// safety probability uses absorbing removal of mass that has already left
// the safe set, so violating trajectories are counted once.
//
// Both quantities are multilinear in the profile, which gives two facts the
// solver leans on: the exact partial derivative with respect to stage tau's
// weight on action u is the value with stage tau replaced by that vertex,
// and any maximum of a single such function over the product of simplices is
// attained at a vertex.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <unordered_map>
#include <utility>
#include <vector>

#include "cogplan/game_core.hpp"
#include "cogplan/inference.hpp"

namespace cogplan {

using StateReward = std::function<double(StateIndex)>;
using SafeSet = std::function<bool(std::int64_t, StateIndex)>;

/// gamma_0..gamma_{N-1}, each a distribution over the ego action set.
struct DecisionProfile {
  std::vector<std::vector<double>> stages;

  std::size_t horizon() const { return stages.size(); }

  static DecisionProfile uniform(std::size_t horizon, std::size_t num_actions) {
    return {std::vector<std::vector<double>>(
        horizon, std::vector<double>(num_actions, 1.0 / static_cast<double>(num_actions)))};
  }

  static DecisionProfile vertex(std::span<const ActionIndex> actions, std::size_t num_actions) {
    DecisionProfile p{std::vector<std::vector<double>>(actions.size(), std::vector<double>(num_actions, 0.0))};
    for (std::size_t t = 0; t < actions.size(); ++t) {
      if (actions[t] >= num_actions) throw ArgumentError("vertex action out of range");
      p.stages[t][actions[t]] = 1.0;
    }
    return p;
  }

  void validate(std::size_t horizon, std::size_t num_actions) const {
    if (stages.size() != horizon) throw ArgumentError("profile length differs from the horizon");
    for (const auto& g : stages) detail::check_gamma(g, num_actions);
  }
};

struct SolverDiagnostics {
  int iterations = 0;
  int starts = 0;
  std::size_t vertices_evaluated = 0;
  /// No feasible profile existed; the returned profile maximizes the
  /// constraint probability instead.
  bool fallback_applied = false;
  /// The continuous solver improved on the best feasible vertex.
  bool improved_on_vertex = false;
};

struct PlanResult {
  DecisionProfile profile;
  double expected_reward = 0.0;
  double constraint_probability = 0.0;
  bool feasible = false;
  SolverDiagnostics diagnostics;
};

namespace detail {

inline std::vector<double> discount_weights(std::size_t horizon, double discount) {
  std::vector<double> w(horizon);
  double d = 1.0;
  for (auto& v : w) {
    v = d;
    d *= discount;
  }
  return w;
}

inline double expectation(const Distribution& d, const StateReward& reward, const AugmentedSpace& space) {
  double s = 0.0;
  for (const auto& m : d.entries()) s += m.prob * reward(space.state_of(m.index));
  return s;
}

}  // namespace detail

/// Expected discounted reward of the successor states under `profile`;
/// stage tau is weighted by discount^tau.
inline double expected_reward(const AugmentedKernel& kernel, const StateReward& reward,
                              const Belief& belief, const DecisionProfile& profile, double discount) {
  profile.validate(profile.horizon(), kernel.num_ego_actions());
  const auto w = detail::discount_weights(profile.horizon(), discount);
  Distribution d = belief.dist;
  double value = 0.0;
  for (std::size_t tau = 0; tau < profile.horizon(); ++tau) {
    d = predict(kernel, d, profile.stages[tau]);
    value += w[tau] * detail::expectation(d, reward, kernel.space());
  }
  return value;
}

/// P(x_{tau+1} in X_{t+tau+1} for all tau < N) under `profile`.
inline double constraint_probability(const AugmentedKernel& kernel, const SafeSet& safe,
                                     const Belief& belief, const DecisionProfile& profile,
                                     std::int64_t t) {
  profile.validate(profile.horizon(), kernel.num_ego_actions());
  const auto& space = kernel.space();
  Distribution d = belief.dist;
  double violated = 0.0;
  for (std::size_t tau = 0; tau < profile.horizon(); ++tau) {
    d = predict(kernel, d, profile.stages[tau]);
    const std::int64_t when = t + static_cast<std::int64_t>(tau) + 1;
    std::vector<Mass> kept;
    kept.reserve(d.support_size());
    for (const auto& m : d.entries()) {
      if (safe && !safe(when, space.state_of(m.index))) {
        violated += m.prob;
      } else {
        kept.push_back(m);
      }
    }
    if (tau + 1 < profile.horizon()) d = Distribution(std::move(kept));
  }
  return std::clamp(1.0 - violated, 0.0, 1.0);
}

/// The belief's reachable augmented states over the horizon, compiled into
/// per-stage arrays so a profile can be evaluated with flat sweeps.
///
/// Layer 0 is the belief support; layer tau+1 holds every state reachable
/// from layer tau under any ego action.
class CompiledHorizon {
 public:
  struct Edge {
    std::uint32_t target;
    double prob;
  };

  struct Values {
    double reward = 0.0;
    double probability = 1.0;
  };

  struct Gradient {
    Values values;
    // [stage][action]
    std::vector<std::vector<double>> reward;
    std::vector<std::vector<double>> probability;
  };

  CompiledHorizon(const AugmentedKernel& kernel, const StateReward& reward, const SafeSet& safe,
                  const Belief& belief, std::size_t horizon, double discount, std::int64_t t)
      : num_actions_(kernel.num_ego_actions()),
        weights_(detail::discount_weights(horizon, discount)),
        layers_(horizon + 1) {
    if (horizon == 0) throw ArgumentError("horizon must be >= 1");
    const auto& space = kernel.space();
    auto& first = layers_[0];
    for (const auto& m : belief.dist.entries()) {
      first.states.push_back(m.index);
      first.initial.push_back(m.prob);
    }
    for (std::size_t tau = 0; tau < horizon; ++tau) {
      auto& from = layers_[tau];
      auto& to = layers_[tau + 1];
      std::unordered_map<AugIndex, std::uint32_t> local;
      from.edge_begin.reserve(from.states.size() * num_actions_ + 1);
      from.edge_begin.push_back(0);
      for (AugIndex s : from.states) {
        for (ActionIndex u = 0; u < num_actions_; ++u) {
          for (const auto& e : kernel.row(s, u)) {
            auto [it, inserted] = local.try_emplace(e.target, static_cast<std::uint32_t>(to.states.size()));
            if (inserted) to.states.push_back(e.target);
            from.edges.push_back({it->second, e.prob});
          }
          from.edge_begin.push_back(static_cast<std::uint32_t>(from.edges.size()));
        }
      }
      const std::int64_t when = t + static_cast<std::int64_t>(tau) + 1;
      to.reward.reserve(to.states.size());
      to.unsafe.reserve(to.states.size());
      for (AugIndex s : to.states) {
        const StateIndex x = space.state_of(s);
        to.reward.push_back(reward(x));
        to.unsafe.push_back(safe && !safe(when, x) ? 1 : 0);
      }
    }
  }

  std::size_t horizon() const { return weights_.size(); }
  std::size_t num_actions() const { return num_actions_; }
  std::size_t layer_size(std::size_t tau) const { return layers_[tau].states.size(); }

  Values evaluate(const DecisionProfile& profile) const {
    Values v;
    std::vector<double> d = layers_[0].initial;
    std::vector<double> dv = d;
    double violated = 0.0;
    for (std::size_t tau = 0; tau < horizon(); ++tau) {
      const auto& gamma = profile.stages[tau];
      const auto& next = layers_[tau + 1];
      std::vector<double> nd(next.states.size(), 0.0);
      std::vector<double> ndv(next.states.size(), 0.0);
      push(tau, gamma, d, nd);
      push(tau, gamma, dv, ndv);
      double r = 0.0;
      for (std::size_t j = 0; j < nd.size(); ++j) r += next.reward[j] * nd[j];
      v.reward += weights_[tau] * r;
      for (std::size_t j = 0; j < ndv.size(); ++j) {
        if (next.unsafe[j]) {
          violated += ndv[j];
          ndv[j] = 0.0;
        }
      }
      d = std::move(nd);
      dv = std::move(ndv);
    }
    v.probability = std::clamp(1.0 - violated, 0.0, 1.0);
    return v;
  }

  /// Values plus exact partial derivatives with respect to every
  /// gamma_tau(u), from one forward and one backward sweep.
  Gradient gradient(const DecisionProfile& profile) const {
    const std::size_t n = horizon();
    std::vector<std::vector<double>> d(n + 1), dv(n + 1);
    d[0] = layers_[0].initial;
    dv[0] = d[0];
    Gradient g;
    double violated = 0.0;
    for (std::size_t tau = 0; tau < n; ++tau) {
      const auto& next = layers_[tau + 1];
      d[tau + 1].assign(next.states.size(), 0.0);
      dv[tau + 1].assign(next.states.size(), 0.0);
      push(tau, profile.stages[tau], d[tau], d[tau + 1]);
      push(tau, profile.stages[tau], dv[tau], dv[tau + 1]);
      double r = 0.0;
      for (std::size_t j = 0; j < next.states.size(); ++j) {
        r += next.reward[j] * d[tau + 1][j];
        if (next.unsafe[j]) {
          violated += dv[tau + 1][j];
          dv[tau + 1][j] = 0.0;
        }
      }
      g.values.reward += weights_[tau] * r;
    }
    g.values.probability = std::clamp(1.0 - violated, 0.0, 1.0);

    g.reward.assign(n, std::vector<double>(num_actions_, 0.0));
    g.probability.assign(n, std::vector<double>(num_actions_, 0.0));
    // value_next / viol_next: reward-to-go and violation-to-go at layer tau+1.
    std::vector<double> value_next(layers_[n].states.size(), 0.0);
    std::vector<double> viol_next(layers_[n].states.size(), 0.0);
    for (std::size_t tau = n; tau-- > 0;) {
      const auto& from = layers_[tau];
      const auto& next = layers_[tau + 1];
      const auto& gamma = profile.stages[tau];
      std::vector<double> value(from.states.size(), 0.0);
      std::vector<double> viol(from.states.size(), 0.0);
      for (std::size_t i = 0; i < from.states.size(); ++i) {
        for (ActionIndex u = 0; u < num_actions_; ++u) {
          double cr = 0.0;
          double cv = 0.0;
          const std::size_t k = i * num_actions_ + u;
          for (std::uint32_t e = from.edge_begin[k]; e < from.edge_begin[k + 1]; ++e) {
            const auto& edge = from.edges[e];
            cr += edge.prob * (weights_[tau] * next.reward[edge.target] + value_next[edge.target]);
            cv += edge.prob * (next.unsafe[edge.target] ? 1.0 : viol_next[edge.target]);
          }
          value[i] += gamma[u] * cr;
          viol[i] += gamma[u] * cv;
          g.reward[tau][u] += d[tau][i] * cr;
          g.probability[tau][u] -= dv[tau][i] * cv;
        }
      }
      value_next = std::move(value);
      viol_next = std::move(viol);
    }
    return g;
  }

 private:
  struct Layer {
    std::vector<AugIndex> states;
    std::vector<double> initial;  // layer 0 only
    std::vector<double> reward;
    std::vector<std::uint8_t> unsafe;
    std::vector<std::uint32_t> edge_begin;  // CSR over (state, action)
    std::vector<Edge> edges;
  };

  void push(std::size_t tau, const std::vector<double>& gamma, const std::vector<double>& from_mass,
            std::vector<double>& to_mass) const {
    const auto& from = layers_[tau];
    for (std::size_t i = 0; i < from.states.size(); ++i) {
      if (from_mass[i] == 0.0) continue;
      for (ActionIndex u = 0; u < num_actions_; ++u) {
        if (gamma[u] == 0.0) continue;
        const double w = from_mass[i] * gamma[u];
        const std::size_t k = i * num_actions_ + u;
        for (std::uint32_t e = from.edge_begin[k]; e < from.edge_begin[k + 1]; ++e)
          to_mass[from.edges[e].target] += w * from.edges[e].prob;
      }
    }
  }

  std::size_t num_actions_;
  std::vector<double> weights_;
  std::vector<Layer> layers_;
};

/// Euclidean projection onto the probability simplex (sort-based).
inline std::vector<double> project_to_simplex(std::span<const double> v) {
  std::vector<double> sorted(v.begin(), v.end());
  std::sort(sorted.begin(), sorted.end(), std::greater<>());
  double cum = 0.0;
  double theta = 0.0;
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    cum += sorted[i];
    const double candidate = (cum - 1.0) / static_cast<double>(i + 1);
    if (sorted[i] - candidate > 0.0) theta = candidate;
  }
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = std::max(v[i] - theta, 0.0);
  return out;
}

struct SolverOptions {
  /// Penalty weights grow by this factor per outer round.
  double penalty_growth = 10.0;
  int penalty_rounds = 8;
  int iterations_per_round = 60;
  int restoration_bisections = 40;
  /// Absolute slack accepted on the chance constraint.
  double feasibility_tolerance = 1e-12;
};

namespace detail {

struct VertexScore {
  std::vector<ActionIndex> actions;
  CompiledHorizon::Values values;
};

inline bool next_sequence(std::vector<ActionIndex>& seq, std::size_t num_actions) {
  for (std::size_t i = seq.size(); i-- > 0;) {
    if (++seq[i] < num_actions) return true;
    seq[i] = 0;
  }
  return false;
}

inline DecisionProfile mix(const DecisionProfile& a, const DecisionProfile& b, double t) {
  DecisionProfile out = a;
  for (std::size_t s = 0; s < out.stages.size(); ++s)
    for (std::size_t u = 0; u < out.stages[s].size(); ++u)
      out.stages[s][u] = (1.0 - t) * a.stages[s][u] + t * b.stages[s][u];
  return out;
}

}  // namespace detail

/// Maximizes expected reward subject to constraint probability >= 1 - epsilon
/// over randomized open-loop profiles.
///
/// Every deterministic profile is scored first. That yields the exact
/// maximum constraint probability (a vertex attains it), the best feasible
/// vertex, and warm starts for projected-gradient ascent on a quadratic
/// penalty of the constraint. Continuous iterates that end infeasible are
/// pulled back toward the best feasible vertex by bisection. When nothing is
/// feasible, the profile with the highest constraint probability is
/// returned with feasible = false.
inline PlanResult optimize(const CompiledHorizon& model, double epsilon, const SolverOptions& opt = {}) {
  if (!(epsilon >= 0.0 && epsilon <= 1.0)) throw ArgumentError("epsilon out of [0,1]");
  const std::size_t n = model.horizon();
  const std::size_t m = model.num_actions();
  const double required = 1.0 - epsilon;
  auto feasible = [&](double p) { return p >= required - opt.feasibility_tolerance; };

  PlanResult result;
  std::vector<ActionIndex> seq(n, 0);
  std::optional<detail::VertexScore> best_feasible, best_prob, best_reward;
  double min_reward = std::numeric_limits<double>::infinity();
  do {
    const auto v = model.evaluate(DecisionProfile::vertex(seq, m));
    ++result.diagnostics.vertices_evaluated;
    min_reward = std::min(min_reward, v.reward);
    if (feasible(v.probability) && (!best_feasible || v.reward > best_feasible->values.reward))
      best_feasible = detail::VertexScore{seq, v};
    if (!best_prob || v.probability > best_prob->values.probability ||
        (v.probability == best_prob->values.probability && v.reward > best_prob->values.reward))
      best_prob = detail::VertexScore{seq, v};
    if (!best_reward || v.reward > best_reward->values.reward) best_reward = detail::VertexScore{seq, v};
  } while (detail::next_sequence(seq, m));

  if (!best_feasible) {
    result.profile = DecisionProfile::vertex(best_prob->actions, m);
    result.expected_reward = best_prob->values.reward;
    result.constraint_probability = best_prob->values.probability;
    result.feasible = false;
    result.diagnostics.fallback_applied = true;
    return result;
  }

  const DecisionProfile anchor = DecisionProfile::vertex(best_feasible->actions, m);
  DecisionProfile best_profile = anchor;
  CompiledHorizon::Values best_values = best_feasible->values;

  // When the unconstrained optimum is feasible there is nothing to improve.
  if (best_reward->values.reward > best_values.reward) {
    const double scale = std::max(1.0, best_reward->values.reward - min_reward);
    std::vector<DecisionProfile> starts{anchor, DecisionProfile::uniform(n, m),
                                        DecisionProfile::vertex(best_reward->actions, m)};
    for (const auto& start : starts) {
      ++result.diagnostics.starts;
      DecisionProfile gamma = start;
      double mu = scale;
      for (int round = 0; round < opt.penalty_rounds; ++round) {
        mu *= opt.penalty_growth;
        auto penalized = [&](const CompiledHorizon::Values& v) {
          const double short_by = std::max(0.0, required - v.probability);
          return v.reward - 0.5 * mu * short_by * short_by;
        };
        double step = 1.0;
        for (int it = 0; it < opt.iterations_per_round; ++it) {
          ++result.diagnostics.iterations;
          const auto g = model.gradient(gamma);
          const double short_by = std::max(0.0, required - g.values.probability);
          double gmax = 0.0;
          std::vector<std::vector<double>> dir(n, std::vector<double>(m));
          for (std::size_t s = 0; s < n; ++s)
            for (std::size_t u = 0; u < m; ++u) {
              dir[s][u] = g.reward[s][u] + mu * short_by * g.probability[s][u];
              gmax = std::max(gmax, std::abs(dir[s][u]));
            }
          if (gmax == 0.0) break;
          const double phi = penalized(g.values);
          bool moved = false;
          for (double a = 2.0 * step; a * gmax > 1e-12; a *= 0.5) {
            DecisionProfile trial = gamma;
            double ascent = 0.0;
            for (std::size_t s = 0; s < n; ++s) {
              std::vector<double> raw(m);
              for (std::size_t u = 0; u < m; ++u) raw[u] = gamma.stages[s][u] + a / gmax * dir[s][u];
              trial.stages[s] = project_to_simplex(raw);
              for (std::size_t u = 0; u < m; ++u)
                ascent += dir[s][u] * (trial.stages[s][u] - gamma.stages[s][u]);
            }
            if (ascent <= 0.0) break;
            if (penalized(model.evaluate(trial)) >= phi + 1e-4 * ascent) {
              gamma = std::move(trial);
              step = a;
              moved = true;
              break;
            }
          }
          if (!moved) break;
        }
      }

      auto v = model.evaluate(gamma);
      if (!feasible(v.probability)) {
        // Largest feasible point on the segment anchor -> gamma.
        double lo = 0.0, hi = 1.0;
        for (int b = 0; b < opt.restoration_bisections; ++b) {
          const double mid = 0.5 * (lo + hi);
          if (feasible(model.evaluate(detail::mix(anchor, gamma, mid)).probability)) {
            lo = mid;
          } else {
            hi = mid;
          }
        }
        gamma = detail::mix(anchor, gamma, lo);
        v = model.evaluate(gamma);
      }
      if (feasible(v.probability) && v.reward > best_values.reward) {
        best_profile = gamma;
        best_values = v;
        result.diagnostics.improved_on_vertex = true;
      }
    }
  }

  result.profile = std::move(best_profile);
  result.expected_reward = best_values.reward;
  result.constraint_probability = best_values.probability;
  result.feasible = true;
  return result;
}

inline PlanResult optimize(const AugmentedKernel& kernel, const StateReward& reward, const SafeSet& safe,
                           const Belief& belief, double epsilon, double discount, std::size_t horizon,
                           std::int64_t t, const SolverOptions& opt = {}) {
  if (!(epsilon >= 0.0 && epsilon <= 1.0)) throw ArgumentError("epsilon out of [0,1]");
  if (std::abs(belief.dist.total() - 1.0) > kProbTolerance) throw ArgumentError("belief is not normalized");
  CompiledHorizon model(kernel, reward, safe, belief, horizon, discount, t);
  return optimize(model, epsilon, opt);
}

/// Draws an index from `probs` using 53 bits of one engine output.
inline ActionIndex sample_index(std::span<const double> probs, std::mt19937_64& rng) {
  const double r = static_cast<double>(rng() >> 11) * 0x1.0p-53;
  double cum = 0.0;
  ActionIndex last = 0;
  for (ActionIndex u = 0; u < probs.size(); ++u) {
    if (probs[u] <= 0.0) continue;
    last = u;
    cum += probs[u];
    if (r < cum) return u;
  }
  return last;
}

struct PlannerConfig {
  double epsilon = 0.01;
  double discount = 1.0;
  std::size_t horizon = 3;
  SolverOptions solver;
};

/// What the receding-horizon loop needs between steps.
struct RecedingHorizonPlanner {
  std::shared_ptr<const AugmentedKernel> kernel;
  StateReward reward;
  SafeSet safe;
  PlannerConfig config;

  PlanResult plan(const Belief& belief, std::int64_t t) const {
    return optimize(*kernel, reward, safe, belief, config.epsilon, config.discount, config.horizon, t,
                    config.solver);
  }
};

/// Plans at time t and samples the executed action from the first stage.
inline std::pair<ActionIndex, PlanResult> receding_horizon_step(const RecedingHorizonPlanner& planner,
                                                                const Belief& belief, std::int64_t t,
                                                                std::mt19937_64& rng) {
  PlanResult plan = planner.plan(belief, t);
  const ActionIndex u = sample_index(plan.profile.stages.front(), rng);
  return {u, std::move(plan)};
}

class NoRobustSequence : public std::runtime_error {
 public:
  NoRobustSequence() : std::runtime_error("no robust feasible sequence") {}
};

struct MaximinResult {
  std::vector<ActionIndex> actions;
  double value;
};

/// Worst-case open-loop plan: maximize over ego sequences the minimum over
/// environment sequences of the discounted successor reward, with any
/// sequence pair that leaves a safe set valued at minus infinity.
inline MaximinResult maximin_plan(const GameSpec& spec, StateIndex state, std::size_t horizon,
                                  double discount, std::int64_t t = 0) {
  if (state >= spec.num_states) throw ArgumentError("state out of range");
  if (horizon == 0) throw ArgumentError("horizon must be >= 1");
  const auto w = detail::discount_weights(horizon, discount);
  constexpr double kNegInf = -std::numeric_limits<double>::infinity();

  std::vector<ActionIndex> ego(horizon, 0);
  std::vector<ActionIndex> best_seq;
  double best = kNegInf;
  do {
    double worst = std::numeric_limits<double>::infinity();
    std::vector<ActionIndex> env(horizon, 0);
    do {
      StateIndex x = state;
      double total = 0.0;
      for (std::size_t tau = 0; tau < horizon; ++tau) {
        x = spec.transition(x, ego[tau], env[tau]);
        if (!spec.is_safe(t + static_cast<std::int64_t>(tau) + 1, x)) {
          total = kNegInf;
          break;
        }
        total += w[tau] * spec.ego_reward(x);
      }
      worst = std::min(worst, total);
      if (worst <= best) break;
    } while (detail::next_sequence(env, spec.num_env_actions));
    if (worst > best) {
      best = worst;
      best_seq = ego;
    }
  } while (detail::next_sequence(ego, spec.num_ego_actions));

  if (best == kNegInf) throw NoRobustSequence();
  return {best_seq, best};
}

}  // namespace cogplan
