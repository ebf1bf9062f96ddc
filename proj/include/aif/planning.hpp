#pragma once

// Policies as sequences of transition matrices, reverse- and forward-divergence
// planners, the variational policy posterior with its alternating state
// updates, and folding of a policy-generating HMM into the world HMM.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <string>
#include <tuple>
#include <vector>

#include "aif/engine.hpp"
#include "aif/error.hpp"
#include "aif/hmm.hpp"
#include "aif/matrix.hpp"
#include "aif/probkit.hpp"
#include "aif/random.hpp"

namespace aif {

/// Catalog of actions, each a square transition matrix over world states.
struct ActionModel {
  std::vector<std::string> names;
  std::vector<StochasticMatrix> transitions;

  ActionModel() = default;
  ActionModel(std::vector<std::string> names_, std::vector<StochasticMatrix> transitions_)
      : names(std::move(names_)), transitions(std::move(transitions_)) {
    if (names.size() != transitions.size()) throw Error(ErrorCode::DimMismatch, "one name per action required");
    if (transitions.empty()) throw Error(ErrorCode::BadParams, "action model is empty");
    const std::size_t S = transitions.front().rows();
    for (const auto& b : transitions)
      if (b.rows() != S || b.cols() != S) throw Error(ErrorCode::DimMismatch, "actions must all be S x S");
  }

  std::size_t size() const noexcept { return transitions.size(); }
  std::size_t num_states() const noexcept { return transitions.front().rows(); }

  std::size_t index_of(const std::string& name) const {
    const auto it = std::find(names.begin(), names.end(), name);
    if (it == names.end()) throw Error(ErrorCode::IndexOutOfRange, "unknown action '" + name + "'");
    return static_cast<std::size_t>(it - names.begin());
  }
};

/// Action indices a_1..a_T; a_tau drives s_{tau-1} -> s_tau.
using Policy = std::vector<std::size_t>;

struct PreferenceDist {
  CategoricalDist p_c;
};

struct PolicyBelief {
  std::vector<Policy> policies;
  LogWeights log_prior;
  CategoricalDist posterior;

  static PolicyBelief uniform(std::vector<Policy> policies) {
    if (policies.empty()) throw Error(ErrorCode::EmptyPolicySet, "no policies");
    const std::size_t n = policies.size();
    return {std::move(policies), LogWeights{std::vector<double>(n, -std::log(static_cast<double>(n)))},
            CategoricalDist::uniform(n)};
  }

  static PolicyBelief with_prior(std::vector<Policy> policies, LogWeights log_prior) {
    if (policies.empty()) throw Error(ErrorCode::EmptyPolicySet, "no policies");
    if (log_prior.values.size() != policies.size()) throw Error(ErrorCode::DimMismatch, "one prior per policy");
    auto posterior = softmax(log_prior);
    return {std::move(policies), std::move(log_prior), std::move(posterior)};
  }
};

struct ScoredPolicy {
  std::size_t index = 0;
  double score = 0.0;

  bool operator==(const ScoredPolicy&) const = default;
};

/// Ascending by score, ties by lowest index; +inf sorts after every finite score.
inline std::vector<ScoredPolicy> rank_policies(const std::vector<double>& scores) {
  std::vector<ScoredPolicy> ranked(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) ranked[i] = {i, scores[i]};
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const ScoredPolicy& a, const ScoredPolicy& b) { return a.score < b.score; });
  return ranked;
}

inline void check_policy(const Policy& pol, const ActionModel& am, std::size_t horizon) {
  if (pol.size() != horizon) {
    throw Error(ErrorCode::DimMismatch, "policy length " + std::to_string(pol.size()) + " != horizon " +
                                            std::to_string(horizon));
  }
  for (std::size_t a : pol)
    if (a >= am.size()) throw Error(ErrorCode::IndexOutOfRange, "action index " + std::to_string(a));
}

/// The world model with B replaced by B_{a_tau} at each step.
inline StepHmm policy_model(const Hmm& m, const ActionModel& am, const Policy& pol) {
  if (am.num_states() != m.num_states()) throw Error(ErrorCode::DimMismatch, "actions and model disagree on S");
  check_policy(pol, am, pol.size());
  StepHmm out{m.p0, m.A, {}};
  for (std::size_t a : pol) out.transitions.push_back(am.transitions[a]);
  return out;
}

/// Converged beliefs q(s_tau | pi) for one policy given the observed prefix.
inline BeliefTrajectory policy_trajectory(const Hmm& m, const ActionModel& am, const Policy& pol,
                                          std::span<const std::size_t> obs, std::size_t horizon,
                                          const SweepOptions& opts = {}) {
  check_policy(pol, am, horizon);
  if (obs.size() > horizon) throw Error(ErrorCode::IndexOutOfRange, "more observations than the horizon");
  auto bt = with_observations(init_beliefs(ChainModel::from_steps(policy_model(m, am, pol))), obs);
  return sweep(std::move(bt), opts).beliefs;
}

/// Per-step KL of future beliefs from the preference, summed over tau > t.
inline double preference_divergence(const BeliefTrajectory& bt, const PreferenceDist& pref) {
  double d = 0.0;
  for (std::size_t tau = bt.present() + 1; tau <= bt.horizon(); ++tau) d += kl(bt.q[tau], pref.p_c);
  return d;
}

/// Scores each policy by sum_{tau > t} KL(q(s_tau | pi) || p_C) and ranks them.
/// Policies contradicted by the observations score +inf. Filtering policies by
/// the executed prefix is left to the caller.
inline std::vector<ScoredPolicy> plan_reverse(const Hmm& m, const ActionModel& am, const std::vector<Policy>& policies,
                                              std::span<const std::size_t> obs, const PreferenceDist& pref,
                                              std::size_t horizon, const SweepOptions& opts = {}) {
  if (policies.empty()) throw Error(ErrorCode::EmptyPolicySet, "no policies to score");
  std::vector<double> scores;
  scores.reserve(policies.size());
  for (const auto& pol : policies) {
    try {
      scores.push_back(preference_divergence(policy_trajectory(m, am, pol, obs, horizon, opts), pref));
    } catch (const Error& e) {
      if (e.code() != ErrorCode::ModelContradiction) throw;
      scores.push_back(kInf);
    }
  }
  return rank_policies(scores);
}

/// Closed-form forward divergence KL(p(s_> | C) || p(s_> | pi)) with the
/// preference as the starting distribution at every step.
inline double forward_score(const ActionModel& am, const Policy& pol, const PreferenceDist& pref, std::size_t t,
                            std::size_t horizon) {
  check_policy(pol, am, horizon);
  const auto& pc = pref.p_c;
  const double neg_h = -entropy(pc);
  double score = 0.0;
  for (std::size_t tau = t + 1; tau <= horizon; ++tau) {
    const StochasticMatrix& B = am.transitions[pol[tau - 1]];
    double cross = 0.0;
    for (std::size_t r = 0; r < pc.size(); ++r) {
      for (std::size_t c = 0; c < pc.size(); ++c) {
        const double w = pc[r] * pc[c];
        if (w == 0.0) continue;
        if (B(r, c) == 0.0) return kInf;
        cross += w * std::log(B(r, c));
      }
    }
    score += neg_h - cross;
  }
  return score;
}

inline std::vector<ScoredPolicy> plan_forward(const ActionModel& am, const std::vector<Policy>& policies,
                                              const PreferenceDist& pref, std::size_t t, std::size_t horizon) {
  if (policies.empty()) throw Error(ErrorCode::EmptyPolicySet, "no policies to score");
  std::vector<double> scores;
  scores.reserve(policies.size());
  for (const auto& pol : policies) scores.push_back(forward_score(am, pol, pref, t, horizon));
  return rank_policies(scores);
}

/// q(pi) = softmax(ln p(pi) - F_<=(pi) - F_>(pi)).
inline CategoricalDist policy_posterior(const PolicyBelief& pb, const std::vector<double>& f_past,
                                        const std::vector<double>& f_future) {
  const std::size_t n = pb.log_prior.values.size();
  if (f_past.size() != n || f_future.size() != n) throw Error(ErrorCode::DimMismatch, "one score per policy");
  LogWeights lw{std::vector<double>(n)};
  for (std::size_t i = 0; i < n; ++i) lw.values[i] = pb.log_prior.values[i] - f_past[i] - f_future[i];
  return softmax(lw);
}

/// Geometric mixture sum_pi q(pi) ln B_{pi, tau}; rows are not renormalized.
inline Matrix mixture_log_transition(const PolicyBelief& pb, const ActionModel& am, std::size_t tau) {
  const std::size_t S = am.num_states();
  Matrix out(S, S, 0.0);
  for (std::size_t i = 0; i < pb.policies.size(); ++i) {
    const double w = pb.posterior[i];
    if (w == 0.0) continue;
    const auto& pol = pb.policies[i];
    if (tau < 1 || tau > pol.size()) throw Error(ErrorCode::IndexOutOfRange, "tau outside the policy horizon");
    const StochasticMatrix& B = am.transitions[pol[tau - 1]];
    for (std::size_t r = 0; r < S; ++r)
      for (std::size_t c = 0; c < S; ++c) out(r, c) += weighted_log(w, safe_log(B(r, c)));
  }
  return out;
}

inline std::vector<Matrix> mixture_log_transitions(const PolicyBelief& pb, const ActionModel& am, std::size_t horizon) {
  std::vector<Matrix> out;
  for (std::size_t tau = 1; tau <= horizon; ++tau) out.push_back(mixture_log_transition(pb, am, tau));
  return out;
}

/// F_<= and F_> for every policy, evaluated on the shared beliefs.
inline std::pair<std::vector<double>, std::vector<double>> policy_free_energies(const PolicyBelief& pb,
                                                                                 const ActionModel& am,
                                                                                 const BeliefTrajectory& shared) {
  std::vector<double> past, future;
  BeliefTrajectory probe = shared;
  for (const auto& pol : pb.policies) {
    check_policy(pol, am, shared.horizon());
    for (std::size_t tau = 1; tau <= shared.horizon(); ++tau)
      probe.model.log_b[tau - 1] = log_matrix(am.transitions[pol[tau - 1]].matrix());
    const auto split = divergence_split(probe);
    past.push_back(split.past);
    future.push_back(split.future);
  }
  return {past, future};
}

/// KL(q(pi) || p(pi)) + E_q(pi)[F_<=(pi) + F_>(pi)], with 0 * inf = 0.
inline double joint_policy_divergence(const PolicyBelief& pb, const std::vector<double>& f_past,
                                      const std::vector<double>& f_future) {
  const auto prior = softmax(pb.log_prior);
  double j = kl(pb.posterior, prior);
  for (std::size_t i = 0; i < pb.posterior.size(); ++i)
    if (pb.posterior[i] > 0.0) j += pb.posterior[i] * (f_past[i] + f_future[i]);
  return j;
}

struct AlternationResult {
  PolicyBelief belief;
  BeliefTrajectory states;
  std::vector<double> trace;  // joint divergence after every half-step
  std::size_t outer_iterations = 0;
  bool converged = false;
};

/// Alternates the policy posterior update with an engine sweep under the
/// posterior-weighted geometric mixture of transitions. The shared beliefs are
/// first swept under the mixture implied by the initial posterior so that the
/// free energies of the first policy update are evaluated on beliefs the
/// model can support.
inline AlternationResult alternate_policy_state(PolicyBelief pb, const Hmm& m, const ActionModel& am,
                                                std::span<const std::size_t> obs, std::size_t horizon,
                                                std::size_t max_outer = 50, double tol = 1e-10,
                                                const SweepOptions& opts = {}) {
  if (pb.policies.empty()) throw Error(ErrorCode::EmptyPolicySet, "no policies");
  if (am.num_states() != m.num_states()) throw Error(ErrorCode::DimMismatch, "actions and model disagree on S");
  for (const auto& pol : pb.policies) check_policy(pol, am, horizon);

  const ChainModel base = ChainModel::from_hmm(m, horizon);
  auto shared = with_observations(init_beliefs(base.with_log_transitions(mixture_log_transitions(pb, am, horizon))),
                                  obs);
  shared = sweep(std::move(shared), opts).beliefs;

  AlternationResult out;
  auto [f_past, f_future] = policy_free_energies(pb, am, shared);
  double current = joint_policy_divergence(pb, f_past, f_future);
  out.trace.push_back(current);

  while (out.outer_iterations < max_outer) {
    const double start = current;
    try {
      pb.posterior = policy_posterior(pb, f_past, f_future);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::AllNegInf) throw;
      throw Error(ErrorCode::ModelContradiction, "every policy has infinite free energy");
    }
    current = joint_policy_divergence(pb, f_past, f_future);
    out.trace.push_back(current);

    shared.model.log_b = mixture_log_transitions(pb, am, horizon);
    shared = sweep(std::move(shared), opts).beliefs;
    std::tie(f_past, f_future) = policy_free_energies(pb, am, shared);
    current = joint_policy_divergence(pb, f_past, f_future);
    out.trace.push_back(current);

    ++out.outer_iterations;
    if (start - current < tol) {
      out.converged = true;
      break;
    }
  }
  out.belief = std::move(pb);
  out.states = std::move(shared);
  return out;
}

/// q(a_{tau}) = sum over policies of q(pi) [pi_tau == a].
inline CategoricalDist action_marginal(const PolicyBelief& pb, std::size_t num_actions, std::size_t tau) {
  std::vector<double> w(num_actions, 0.0);
  for (std::size_t i = 0; i < pb.policies.size(); ++i) w[pb.policies[i].at(tau - 1)] += pb.posterior[i];
  return CategoricalDist::normalized(std::move(w));
}

inline std::size_t sample_next_action(const CategoricalDist& q_a, std::uint64_t seed) {
  Rng rng(seed);
  return rng.categorical(q_a.weights());
}

/// Flat HMM over (sigma, action, world state) triples. The action coordinate
/// has one extra slot, the null action, which only the start state occupies.
struct FoldedHmm {
  Hmm hmm;
  std::size_t sigma_dim = 0;
  std::size_t action_dim = 0;  // number of actions + 1
  std::size_t world_dim = 0;

  std::size_t null_action() const noexcept { return action_dim - 1; }

  std::size_t encode(std::size_t sigma, std::size_t action, std::size_t state) const {
    return (sigma * action_dim + action) * world_dim + state;
  }

  std::tuple<std::size_t, std::size_t, std::size_t> decode(std::size_t flat) const {
    const std::size_t state = flat % world_dim;
    const std::size_t rest = flat / world_dim;
    return {rest / action_dim, rest % action_dim, state};
  }

  /// Projects a distribution over flat states onto one coordinate (0 = sigma, 1 = action, 2 = world).
  CategoricalDist marginal(const CategoricalDist& flat, int coordinate) const {
    const std::size_t dims[3] = {sigma_dim, action_dim, world_dim};
    std::vector<double> w(dims[coordinate], 0.0);
    for (std::size_t i = 0; i < flat.size(); ++i) {
      const auto [sg, a, s] = decode(i);
      const std::size_t parts[3] = {sg, a, s};
      w[parts[coordinate]] += flat[i];
    }
    return CategoricalDist::normalized(std::move(w));
  }
};

/// Folds a policy HMM (states sigma, emissions p(a | sigma)) and the world HMM into one HMM:
///   p(sigma', a', s' | sigma, a, s) = p(sigma' | sigma) p(a' | sigma') B_{a'}(s, s'),
///   p(o | sigma, a, s) = A(s, o),  p(sigma_0, null, s_0) = p(sigma_0) p(s_0).
inline FoldedHmm fold_hierarchy(const Hmm& sigma_hmm, const Hmm& world, const ActionModel& am) {
  if (sigma_hmm.num_obs() != am.size()) {
    throw Error(ErrorCode::DimMismatch, "policy HMM emits " + std::to_string(sigma_hmm.num_obs()) +
                                            " actions but the action model has " + std::to_string(am.size()));
  }
  if (am.num_states() != world.num_states()) throw Error(ErrorCode::DimMismatch, "actions and world disagree on S");

  FoldedHmm f;
  f.sigma_dim = sigma_hmm.num_states();
  f.action_dim = am.size() + 1;
  f.world_dim = world.num_states();
  const std::size_t n = f.sigma_dim * f.action_dim * f.world_dim;
  const std::size_t O = world.num_obs();

  Matrix trans(n, n, 0.0);
  Matrix emit(n, O, 0.0);
  std::vector<double> start(n, 0.0);
  for (std::size_t from = 0; from < n; ++from) {
    const auto [sg, a, s] = f.decode(from);
    (void)a;
    for (std::size_t o = 0; o < O; ++o) emit(from, o) = world.A(s, o);
    for (std::size_t sg2 = 0; sg2 < f.sigma_dim; ++sg2) {
      const double p_sigma = sigma_hmm.B(sg, sg2);
      if (p_sigma == 0.0) continue;
      for (std::size_t a2 = 0; a2 < am.size(); ++a2) {
        const double p_action = p_sigma * sigma_hmm.A(sg2, a2);
        if (p_action == 0.0) continue;
        for (std::size_t s2 = 0; s2 < f.world_dim; ++s2)
          trans(from, f.encode(sg2, a2, s2)) = p_action * am.transitions[a2](s, s2);
      }
    }
  }
  for (std::size_t sg = 0; sg < f.sigma_dim; ++sg)
    for (std::size_t s = 0; s < f.world_dim; ++s) start[f.encode(sg, f.null_action(), s)] = sigma_hmm.p0[sg] * world.p0[s];

  // Spot reconstruction: summing the next state over (a', s') must give p(sigma' | sigma).
  for (std::size_t from = 0; from < n; ++from) {
    const auto [sg, a, s] = f.decode(from);
    (void)a;
    (void)s;
    for (std::size_t sg2 = 0; sg2 < f.sigma_dim; ++sg2) {
      double total = 0.0;
      for (std::size_t a2 = 0; a2 < f.action_dim; ++a2)
        for (std::size_t s2 = 0; s2 < f.world_dim; ++s2) total += trans(from, f.encode(sg2, a2, s2));
      if (std::abs(total - sigma_hmm.B(sg, sg2)) > kSimplexTol) {
        throw Error(ErrorCode::DimMismatch, "folded transition lost the sigma marginal");
      }
    }
  }

  f.hmm = Hmm(CategoricalDist::normalized(std::move(start)), StochasticMatrix(std::move(emit)),
              StochasticMatrix(std::move(trans)));
  return f;
}

}  // namespace aif
