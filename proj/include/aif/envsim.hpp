#pragma once

// Desk-scale environments (a T-maze and an N x N gridworld) and the closed
// perception/planning/action loop that drives an agent through them.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "aif/engine.hpp"
#include "aif/error.hpp"
#include "aif/hmm.hpp"
#include "aif/planning.hpp"
#include "aif/probkit.hpp"
#include "aif/random.hpp"

namespace aif {

/// The true world: hidden state, per-action dynamics, emissions and a seeded
/// stream. Not shared between threads.
struct Environment {
  ActionModel dynamics;
  StochasticMatrix emission;
  CategoricalDist start;
  std::size_t true_state = 0;
  Rng rng{0};

  void reset(std::uint64_t seed) {
    rng = Rng(seed);
    true_state = rng.categorical(start.weights());
  }
};

/// Samples the successor under action a, then an observation from it.
inline std::size_t env_step(Environment& env, std::size_t a) {
  if (a >= env.dynamics.size()) throw Error(ErrorCode::IndexOutOfRange, "action index " + std::to_string(a));
  env.true_state = env.rng.categorical(env.dynamics.transitions[a].row(env.true_state));
  return env.rng.categorical(env.emission.row(env.true_state));
}

/// Every action sequence of the given length, in lexicographic order.
inline std::vector<Policy> all_policies(std::size_t num_actions, std::size_t horizon) {
  std::vector<Policy> out;
  for_each_sequence(num_actions, horizon,
                    [&](std::span<const std::size_t> seq) { out.emplace_back(seq.begin(), seq.end()); });
  return out;
}

struct TMaze {
  Environment env;
  Hmm model;
  ActionModel actions;
  PreferenceDist preference;
  std::vector<Policy> policies;
  std::size_t horizon = 2;
};

namespace tmaze {

inline constexpr std::size_t kLocations = 4;  // center, left, right, cue
inline constexpr std::size_t kContexts = 2;   // reward-left, reward-right
inline constexpr std::size_t kSignals = 5;    // none, cue-left, cue-right, reward, no-reward
inline constexpr std::size_t kCenter = 0, kLeft = 1, kRight = 2, kCue = 3;
inline constexpr std::size_t kNone = 0, kCueLeft = 1, kCueRight = 2, kReward = 3, kNoReward = 4;
inline constexpr double kMoveNoise = 0.02;
inline constexpr double kRewardReliability = 0.98;
inline constexpr double kContextFlip = 0.01;

inline std::size_t state(std::size_t location, std::size_t context) { return location * kContexts + context; }
inline std::size_t observation(std::size_t location, std::size_t signal) { return location * kSignals + signal; }

}  // namespace tmaze

/// Eight hidden states (location x context), four "go to location" actions
/// (the context flips with probability kContextFlip, which keeps every
/// transition possible under the mean-field factorization) and observations
/// (location x signal). The cue
/// reveals the context deterministically; an arm yields reward with
/// probability 0.98 when it matches the context.
inline TMaze make_tmaze() {
  using namespace tmaze;
  const std::size_t S = kLocations * kContexts;
  const std::size_t O = kLocations * kSignals;
  const char* loc_names[] = {"center", "left", "right", "cue"};
  const char* ctx_names[] = {"reward-left", "reward-right"};

  std::vector<std::string> labels;
  Matrix A(S, O, 0.0);
  for (std::size_t loc = 0; loc < kLocations; ++loc) {
    for (std::size_t ctx = 0; ctx < kContexts; ++ctx) {
      const std::size_t s = state(loc, ctx);
      labels.push_back(std::string(loc_names[loc]) + "/" + ctx_names[ctx]);
      if (loc == kCenter) {
        A(s, observation(loc, kNone)) = 1.0;
      } else if (loc == kCue) {
        A(s, observation(loc, ctx == 0 ? kCueLeft : kCueRight)) = 1.0;
      } else {
        const bool matches = (loc == kLeft && ctx == 0) || (loc == kRight && ctx == 1);
        A(s, observation(loc, kReward)) = matches ? kRewardReliability : 1.0 - kRewardReliability;
        A(s, observation(loc, kNoReward)) = matches ? 1.0 - kRewardReliability : kRewardReliability;
      }
    }
  }

  std::vector<StochasticMatrix> moves;
  for (std::size_t target = 0; target < kLocations; ++target) {
    Matrix B(S, S, 0.0);
    for (std::size_t loc = 0; loc < kLocations; ++loc)
      for (std::size_t ctx = 0; ctx < kContexts; ++ctx)
        for (std::size_t to = 0; to < kLocations; ++to)
          for (std::size_t next = 0; next < kContexts; ++next)
            B(state(loc, ctx), state(to, next)) =
                (to == target ? 1.0 - kMoveNoise : kMoveNoise / static_cast<double>(kLocations - 1)) *
                (next == ctx ? 1.0 - kContextFlip : kContextFlip);
    moves.emplace_back(std::move(B));
  }
  ActionModel actions({"go-center", "go-left", "go-right", "go-cue"}, moves);

  std::vector<double> p0(S, 0.0);
  p0[state(kCenter, 0)] = 0.5;
  p0[state(kCenter, 1)] = 0.5;

  std::vector<double> pref(S, 0.1 / 6.0);
  pref[state(kLeft, 0)] = 0.45;
  pref[state(kRight, 1)] = 0.45;

  Matrix mean_b(S, S, 0.0);
  for (const auto& b : moves)
    for (std::size_t r = 0; r < S; ++r)
      for (std::size_t c = 0; c < S; ++c) mean_b(r, c) += b(r, c) / static_cast<double>(kLocations);

  TMaze tm;
  tm.model = Hmm(CategoricalDist(p0), StochasticMatrix(std::move(A)), StochasticMatrix(std::move(mean_b)), labels);
  tm.actions = actions;
  tm.preference = PreferenceDist{CategoricalDist::normalized(pref)};
  tm.policies = all_policies(actions.size(), tm.horizon);
  tm.env = Environment{actions, tm.model.A, tm.model.p0, 0, Rng(0)};
  return tm;
}

struct Gridworld {
  Environment env;
  Hmm model;
  ActionModel actions;
  std::size_t side = 0;
};

/// N x N grid, moves up/down/left/right succeeding with probability 1 - slip;
/// the slip mass is split evenly over the three other directions, and any
/// move that would leave the grid keeps the agent in place. emission_noise
/// mixes the noiseless position readout with a uniform one (model mismatch).
inline Gridworld make_gridworld(std::size_t side, double slip, double emission_noise = 0.0) {
  if (side < 2 || side > 6) throw Error(ErrorCode::BadParams, "grid side must be in [2, 6]");
  if (!(slip >= 0.0 && slip <= 0.5)) throw Error(ErrorCode::BadParams, "slip must be in [0, 0.5]");
  if (!(emission_noise >= 0.0 && emission_noise <= 1.0)) throw Error(ErrorCode::BadParams, "emission noise in [0, 1]");
  const std::size_t S = side * side;
  const int dr[4] = {-1, 1, 0, 0};
  const int dc[4] = {0, 0, -1, 1};

  auto target = [&](std::size_t s, std::size_t dir) {
    const int r = static_cast<int>(s / side) + dr[dir];
    const int c = static_cast<int>(s % side) + dc[dir];
    if (r < 0 || c < 0 || r >= static_cast<int>(side) || c >= static_cast<int>(side)) return s;
    return static_cast<std::size_t>(r) * side + static_cast<std::size_t>(c);
  };

  std::vector<StochasticMatrix> moves;
  for (std::size_t dir = 0; dir < 4; ++dir) {
    Matrix B(S, S, 0.0);
    for (std::size_t s = 0; s < S; ++s)
      for (std::size_t d = 0; d < 4; ++d) B(s, target(s, d)) += d == dir ? 1.0 - slip : slip / 3.0;
    moves.emplace_back(std::move(B));
  }
  ActionModel actions({"up", "down", "left", "right"}, moves);

  Matrix A(S, S, emission_noise / static_cast<double>(S));
  for (std::size_t s = 0; s < S; ++s) A(s, s) += 1.0 - emission_noise;

  Matrix mean_b(S, S, 0.0);
  for (const auto& b : moves)
    for (std::size_t r = 0; r < S; ++r)
      for (std::size_t c = 0; c < S; ++c) mean_b(r, c) += b(r, c) / 4.0;

  Gridworld g;
  g.side = side;
  g.model = Hmm(CategoricalDist::point_mass(S, 0), StochasticMatrix(std::move(A)), StochasticMatrix(std::move(mean_b)));
  g.actions = actions;
  g.env = Environment{actions, g.model.A, g.model.p0, 0, Rng(0)};
  return g;
}

/// Shortest path length from the start corner to the opposite one.
inline std::size_t gridworld_horizon(std::size_t side) { return 2 * (side - 1); }

/// Most mass on the far corner (side-1, side-1), the rest spread evenly.
inline PreferenceDist gridworld_preference(std::size_t side, double corner_mass = 0.9) {
  const std::size_t S = side * side;
  std::vector<double> p(S, (1.0 - corner_mass) / static_cast<double>(S - 1));
  p[S - 1] = corner_mass;
  return {CategoricalDist::normalized(std::move(p))};
}

enum class Planner { Reverse, Forward, PolicyPosterior };

struct AgentOptions {
  Planner planner = Planner::Reverse;
  SweepOptions sweep{SweepMode::Filtering, 100, 1e-10};
  std::size_t max_outer = 50;  // PolicyPosterior alternation limit
};

struct AgentStep {
  std::size_t t = 0;                 // decision time; the action is a_{t+1}
  std::size_t chosen_policy = 0;     // index into the full policy set
  std::size_t action = 0;
  std::size_t observation = 0;       // o_{t+1}
  std::size_t true_state = 0;        // s_{t+1}
  CategoricalDist belief;            // q_t before acting
  double divergence = 0.0;           // divergence of the beliefs the choice was based on
  std::vector<ScoredPolicy> scores;  // planner scores, indices into the full policy set
};

struct EpisodeTrace {
  std::uint64_t seed = 0;
  std::size_t initial_state = 0;
  std::vector<AgentStep> steps;
  std::vector<std::size_t> observations;
  bool success = false;  // the final true state has maximal preference
};

struct AgentTrace {
  std::vector<EpisodeTrace> episodes;
};

/// Runs `episodes` independent episodes of length `horizon`. Each policy that
/// stays consistent with the executed actions keeps its own belief
/// trajectory, advanced and re-swept after every observation.
inline AgentTrace run_agent(const Environment& env_template, const Hmm& agent_model, const ActionModel& am,
                            const PreferenceDist& pref, const std::vector<Policy>& policies, std::size_t horizon,
                            std::size_t episodes, std::uint64_t seed, const AgentOptions& opts = {}) {
  if (policies.empty()) throw Error(ErrorCode::EmptyPolicySet, "no policies");
  if (am.num_states() != agent_model.num_states() || pref.p_c.size() != agent_model.num_states()) {
    throw Error(ErrorCode::DimMismatch, "agent model, actions and preference disagree on S");
  }
  for (const auto& pol : policies) check_policy(pol, am, horizon);

  Rng seeds(seed);
  AgentTrace trace;
  for (std::size_t e = 0; e < episodes; ++e) {
    EpisodeTrace ep;
    ep.seed = seeds.next_u64();
    Environment env = env_template;
    env.reset(ep.seed);
    ep.initial_state = env.true_state;
    Rng choice_rng(ep.seed ^ 0x9e3779b97f4a7c15ULL);

    std::vector<std::size_t> alive(policies.size());
    std::iota(alive.begin(), alive.end(), std::size_t{0});
    std::vector<BeliefTrajectory> beliefs;
    if (opts.planner != Planner::PolicyPosterior) {
      for (const auto& pol : policies) {
        auto bt = init_beliefs(ChainModel::from_steps(policy_model(agent_model, am, pol)));
        beliefs.push_back(sweep(std::move(bt), opts.sweep).beliefs);
      }
    }

    for (std::size_t t = 0; t < horizon; ++t) {
      AgentStep step;
      step.t = t;
      if (opts.planner == Planner::PolicyPosterior) {
        std::vector<Policy> subset;
        for (std::size_t i : alive) subset.push_back(policies[i]);
        auto alt = alternate_policy_state(PolicyBelief::uniform(subset), agent_model, am, ep.observations, horizon,
                                          opts.max_outer, 1e-10, SweepOptions{SweepMode::Smoothing, opts.sweep.max_iters,
                                                                              opts.sweep.tol});
        const auto q_a = action_marginal(alt.belief, am.size(), t + 1);
        step.action = choice_rng.categorical(q_a.weights());
        std::vector<double> minus_log_post;
        for (std::size_t k = 0; k < alive.size(); ++k) minus_log_post.push_back(-safe_log(alt.belief.posterior[k]));
        for (const auto& sp : rank_policies(minus_log_post)) step.scores.push_back({alive[sp.index], sp.score});
        // The most probable policy that starts with the sampled action.
        for (const auto& sp : step.scores) {
          if (policies[sp.index][t] == step.action) {
            step.chosen_policy = sp.index;
            break;
          }
        }
        step.belief = alt.states.q[t];
        step.divergence = alt.trace.back();
      } else {
        std::vector<double> scores;
        for (std::size_t i : alive) {
          scores.push_back(opts.planner == Planner::Reverse ? preference_divergence(beliefs[i], pref)
                                                            : forward_score(am, policies[i], pref, t, horizon));
        }
        const auto ranked = rank_policies(scores);
        for (const auto& sp : ranked) step.scores.push_back({alive[sp.index], sp.score});
        step.chosen_policy = step.scores.front().index;
        step.action = policies[step.chosen_policy][t];
        step.belief = beliefs[step.chosen_policy].q[t];
        step.divergence = divergence(beliefs[step.chosen_policy]);
      }

      step.observation = env_step(env, step.action);
      step.true_state = env.true_state;
      ep.observations.push_back(step.observation);

      std::vector<std::size_t> still_alive;
      for (std::size_t i : alive)
        if (policies[i][t] == step.action) still_alive.push_back(i);
      alive = std::move(still_alive);
      if (opts.planner != Planner::PolicyPosterior) {
        for (std::size_t i : alive) {
          beliefs[i] = advance(std::move(beliefs[i]), step.observation);
          beliefs[i] = sweep(std::move(beliefs[i]), opts.sweep).beliefs;
        }
      }
      ep.steps.push_back(std::move(step));
    }

    const double best = *std::max_element(pref.p_c.weights().begin(), pref.p_c.weights().end());
    ep.success = pref.p_c[env.true_state] == best;
    trace.episodes.push_back(std::move(ep));
  }
  return trace;
}

}  // namespace aif
