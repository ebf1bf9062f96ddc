#pragma once

// Mean-field perception/action engine. Beliefs q_0..q_T over hidden states
// are refined one coordinate at a time; each update is the closed-form
// minimizer of the constrained divergence KL(q(s, o) || p(s, o)) with all
// other coordinates held fixed, so the divergence never increases.
//
// Past indices (tau <= t) carry a clamped observation and use the
// retrodiction rule; future indices use the prediction rule, whose
// observation factor equals the model emission and therefore cancels.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "aif/error.hpp"
#include "aif/hmm.hpp"
#include "aif/matrix.hpp"
#include "aif/probkit.hpp"

namespace aif {

/// Parameters read by the updates. log_b[tau - 1] scores s_{tau-1} -> s_tau and
/// need not be a log of a stochastic matrix: policy mixtures and Dirichlet
/// expected logs are both admissible.
struct ChainModel {
  CategoricalDist p0;
  StochasticMatrix emission;  // linear A, used by predictive diagnostics
  Matrix log_a;               // S x O
  std::vector<Matrix> log_b;  // one S x S matrix per step tau = 1..T

  std::size_t num_states() const noexcept { return p0.size(); }
  std::size_t num_obs() const noexcept { return log_a.cols(); }
  std::size_t horizon() const noexcept { return log_b.size(); }

  static ChainModel from_steps(const StepHmm& m) {
    ChainModel c{m.p0, m.A, log_matrix(m.A.matrix()), {}};
    c.log_b.reserve(m.transitions.size());
    for (const auto& b : m.transitions) c.log_b.push_back(log_matrix(b.matrix()));
    return c;
  }

  static ChainModel from_hmm(const Hmm& m, std::size_t horizon) {
    return from_steps(StepHmm::homogeneous(m, horizon));
  }

  ChainModel with_log_transitions(std::vector<Matrix> log_transitions) const {
    ChainModel c = *this;
    c.log_b = std::move(log_transitions);
    return c;
  }
};

struct BeliefTrajectory {
  ChainModel model;
  std::vector<std::size_t> obs;    // o_1 .. o_t
  std::vector<CategoricalDist> q;  // q_0 .. q_T; q_0 is pinned to p0

  std::size_t horizon() const noexcept { return q.size() - 1; }
  std::size_t present() const noexcept { return obs.size(); }
};

enum class SweepMode { Filtering, Smoothing };

struct SweepOptions {
  SweepMode mode = SweepMode::Smoothing;
  std::size_t max_iters = 100;
  double tol = 1e-10;
};

struct SweepReport {
  double divergence_before = 0.0;
  double divergence_after = 0.0;
  std::vector<double> per_update_divergences;
  std::size_t iterations = 0;
  bool converged = false;
};

struct SweepResult {
  BeliefTrajectory beliefs;
  SweepReport report;
};

/// Called with pass 0 before the first update and after every full pass.
using SweepObserver =
    std::function<void(std::size_t pass, std::size_t updates, const BeliefTrajectory&, double divergence)>;

inline BeliefTrajectory init_beliefs(ChainModel model) {
  const std::size_t T = model.horizon();
  if (T < 1) throw Error(ErrorCode::BadParams, "horizon must be >= 1");
  if (model.log_a.rows() != model.num_states()) throw Error(ErrorCode::DimMismatch, "log_a rows != S");
  for (const auto& b : model.log_b)
    if (b.rows() != model.num_states() || b.cols() != model.num_states())
      throw Error(ErrorCode::DimMismatch, "transition matrix is not S x S");
  BeliefTrajectory bt;
  bt.q.reserve(T + 1);
  bt.q.push_back(model.p0);
  for (std::size_t tau = 1; tau <= T; ++tau) bt.q.push_back(CategoricalDist::uniform(model.num_states()));
  bt.model = std::move(model);
  return bt;
}

inline BeliefTrajectory init_beliefs(const Hmm& m, std::size_t horizon) {
  if (horizon < 1) throw Error(ErrorCode::BadParams, "horizon must be >= 1");
  return init_beliefs(ChainModel::from_hmm(m, horizon));
}

namespace detail {

// sum_{s, s'} prev(s) next(s') log_m(s, s') with 0 * (-inf) = 0.
inline double bilinear_log(std::span<const double> prev, const Matrix& log_m, std::span<const double> next) {
  double total = 0.0;
  for (std::size_t r = 0; r < prev.size(); ++r) {
    if (prev[r] == 0.0) continue;
    for (std::size_t c = 0; c < next.size(); ++c) {
      const double w = prev[r] * next[c];
      if (w != 0.0) total += w * log_m(r, c);
    }
  }
  return total;
}

inline double neg_entropy(const CategoricalDist& q) { return -entropy(q); }

inline double likelihood_term(const BeliefTrajectory& bt, std::size_t tau) {
  const std::size_t o = bt.obs[tau - 1];
  double total = 0.0;
  for (std::size_t s = 0; s < bt.model.num_states(); ++s) total += weighted_log(bt.q[tau][s], bt.model.log_a(s, o));
  return total;
}

inline double transition_term(const BeliefTrajectory& bt, std::size_t tau) {
  return bilinear_log(bt.q[tau - 1].weights(), bt.model.log_b[tau - 1], bt.q[tau].weights());
}

// Log weights for q_tau given its neighbours; the likelihood term is added for
// past indices only. A zero transition probability contributes -inf scaled by
// the neighbour mass that reaches it. When every state collects such a term
// the weights are taken in the limit of zeros replaced by epsilon -> 0: only
// the states with the least infinite mass survive, ranked by their finite
// part. A zero likelihood always excludes the state.
inline LogWeights update_log_weights(const BeliefTrajectory& bt, std::size_t tau) {
  const std::size_t S = bt.model.num_states();
  const std::size_t T = bt.horizon();
  std::vector<double> finite(S, 0.0);
  std::vector<double> blocked(S, 0.0);
  const auto& prev = bt.q[tau - 1];
  const Matrix& into = bt.model.log_b[tau - 1];

  auto add = [&](std::size_t s, double w, double log_value) {
    if (w == 0.0) return;
    if (log_value == -kInf)
      blocked[s] += w;
    else
      finite[s] += w * log_value;
  };
  for (std::size_t s = 0; s < S; ++s) {
    if (tau <= bt.present()) finite[s] += bt.model.log_a(s, bt.obs[tau - 1]);
    for (std::size_t r = 0; r < S; ++r) add(s, prev[r], into(r, s));
    if (tau < T) {
      const auto& next = bt.q[tau + 1];
      const Matrix& out = bt.model.log_b[tau];
      for (std::size_t n = 0; n < S; ++n) add(s, next[n], out(s, n));
    }
  }

  double least = kInf;
  for (std::size_t s = 0; s < S; ++s)
    if (finite[s] != -kInf) least = std::min(least, blocked[s]);
  LogWeights lw{std::vector<double>(S, -kInf)};
  for (std::size_t s = 0; s < S; ++s)
    if (finite[s] != -kInf && blocked[s] <= least + 1e-12) lw.values[s] = finite[s];
  return lw;
}

inline void update_in_place(BeliefTrajectory& bt, std::size_t tau) {
  try {
    bt.q[tau] = softmax(update_log_weights(bt, tau));
  } catch (const Error& e) {
    if (e.code() != ErrorCode::AllNegInf) throw;
    throw Error(ErrorCode::ModelContradiction,
                "no state is consistent with the model at tau=" + std::to_string(tau));
  }
}

}  // namespace detail

/// Update of a future coordinate, t < tau <= T.
inline BeliefTrajectory prediction_update(BeliefTrajectory bt, std::size_t tau) {
  if (tau <= bt.present() || tau > bt.horizon()) {
    throw Error(ErrorCode::IndexOutOfRange, "prediction update needs t < tau <= T, got tau=" + std::to_string(tau));
  }
  detail::update_in_place(bt, tau);
  return bt;
}

/// Update of an observed coordinate, 1 <= tau <= t. q_0 is never updated.
inline BeliefTrajectory retrodiction_update(BeliefTrajectory bt, std::size_t tau) {
  if (tau < 1 || tau > bt.present()) {
    throw Error(ErrorCode::IndexOutOfRange,
                "retrodiction update needs 1 <= tau <= t, got tau=" + std::to_string(tau));
  }
  detail::update_in_place(bt, tau);
  return bt;
}

struct DivergenceSplit {
  double past = 0.0;    // F_<=t, the free energy of the observed prefix
  double future = 0.0;  // F_>t, KL of future beliefs from the chain started at q_t
};

inline DivergenceSplit divergence_split(const BeliefTrajectory& bt) {
  DivergenceSplit split;
  const std::size_t t = bt.present();
  for (std::size_t tau = 1; tau <= bt.horizon(); ++tau) {
    double term = detail::neg_entropy(bt.q[tau]) - detail::transition_term(bt, tau);
    if (tau <= t) {
      term -= detail::likelihood_term(bt, tau);
      split.past += term;
    } else {
      split.future += term;
    }
  }
  return split;
}

/// KL(q(s, o) || p(s, o)) under the present-time factorization.
inline double divergence(const BeliefTrajectory& bt) {
  const auto split = divergence_split(bt);
  return split.past + split.future;
}

/// True when `after` exceeds `before` by more than `slack`; infinities compare
/// by value.
inline bool increased(double before, double after, double slack) {
  if (after == before) return false;
  if (std::isinf(after) || std::isinf(before)) return after > before;
  return after > before + slack;
}

inline SweepResult sweep(BeliefTrajectory bt, const SweepOptions& opts = {}, const SweepObserver& observer = {}) {
  const std::size_t T = bt.horizon();
  const std::size_t t = bt.present();
  const std::size_t lo = opts.mode == SweepMode::Filtering ? std::max<std::size_t>(1, t) : 1;

  std::vector<std::size_t> order;
  for (std::size_t tau = lo; tau <= T; ++tau) order.push_back(tau);
  for (std::size_t tau = T + 1; tau-- > lo;) order.push_back(tau);

  SweepResult out;
  SweepReport& report = out.report;
  double current = divergence(bt);
  report.divergence_before = current;
  if (observer) observer(0, 0, bt, current);

  std::size_t updates = 0;
  while (report.iterations < opts.max_iters) {
    const double pass_start = current;
    for (std::size_t tau : order) {
      detail::update_in_place(bt, tau);
      current = divergence(bt);
      report.per_update_divergences.push_back(current);
      ++updates;
    }
    ++report.iterations;
    if (observer) observer(report.iterations, updates, bt, current);
    const bool settled = std::isinf(pass_start) || std::isinf(current) ? pass_start == current
                                                                          : pass_start - current < opts.tol;
    if (settled) {
      report.converged = true;
      break;
    }
  }
  report.divergence_after = current;
  if (current == kInf) {
    throw Error(ErrorCode::ModelContradiction, "no beliefs with finite divergence; the observations contradict the model");
  }
  out.beliefs = std::move(bt);
  return out;
}

/// Moves the present forward by one step and clamps the new observation.
/// Beliefs are left untouched; the caller re-sweeps.
inline BeliefTrajectory advance(BeliefTrajectory bt, std::size_t new_obs) {
  if (bt.present() >= bt.horizon()) throw Error(ErrorCode::HorizonExhausted, "t already equals T");
  if (new_obs >= bt.model.num_obs()) {
    throw Error(ErrorCode::IndexOutOfRange, "observation index " + std::to_string(new_obs));
  }
  bt.obs.push_back(new_obs);
  return bt;
}

/// Clamps a whole observed prefix onto fresh beliefs.
inline BeliefTrajectory with_observations(BeliefTrajectory bt, std::span<const std::size_t> obs) {
  for (std::size_t o : obs) bt = advance(std::move(bt), o);
  return bt;
}

}  // namespace aif
