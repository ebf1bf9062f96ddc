#pragma once

// Information-theoretic diagnostics over the predictive part of a belief
// trajectory. Future beliefs factorize across time as
// q(s_>, o_>) = prod_tau q(s_tau) A(s_tau, o_tau), so entropies, mutual
// information and ambiguity are sums of per-step terms. None of these
// quantities is optimized by the engine; they are reported only.

#include <cmath>
#include <cstddef>
#include <vector>

#include "aif/engine.hpp"
#include "aif/error.hpp"
#include "aif/hmm.hpp"
#include "aif/matrix.hpp"
#include "aif/probkit.hpp"

namespace aif {

/// Predictive joint q(s_tau, o_tau) = q(s_tau) A(s_tau, o_tau) for one future step.
struct PredictiveFactor {
  std::size_t tau = 0;
  CategoricalDist q_s;
  CategoricalDist q_o;
  Matrix joint;                         // S x O
  std::vector<double> emission_entropy;  // H(A row s)
};

inline std::vector<PredictiveFactor> predictive_factor(const BeliefTrajectory& bt) {
  const std::size_t t = bt.present();
  const std::size_t T = bt.horizon();
  if (t >= T) throw Error(ErrorCode::NoFuture, "no future timesteps");
  const StochasticMatrix& A = bt.model.emission;
  const std::size_t S = A.rows();
  const std::size_t O = A.cols();

  std::vector<double> row_entropy(S);
  for (std::size_t s = 0; s < S; ++s) row_entropy[s] = entropy(A.row_dist(s));

  std::vector<PredictiveFactor> out;
  for (std::size_t tau = t + 1; tau <= T; ++tau) {
    PredictiveFactor pf;
    pf.tau = tau;
    pf.q_s = bt.q[tau];
    pf.joint = Matrix(S, O);
    std::vector<double> q_o(O, 0.0);
    for (std::size_t s = 0; s < S; ++s)
      for (std::size_t o = 0; o < O; ++o) {
        pf.joint(s, o) = pf.q_s[s] * A(s, o);
        q_o[o] += pf.joint(s, o);
      }
    pf.q_o = CategoricalDist::normalized(std::move(q_o));
    pf.emission_entropy = row_entropy;
    out.push_back(std::move(pf));
  }
  return out;
}

/// Sum over future steps of KL(q(s, o) || q(s) q(o)).
inline double mutual_information(const std::vector<PredictiveFactor>& pf) {
  double mi = 0.0;
  for (const auto& f : pf) {
    for (std::size_t s = 0; s < f.joint.rows(); ++s)
      for (std::size_t o = 0; o < f.joint.cols(); ++o) {
        const double j = f.joint(s, o);
        if (j > 0.0) mi += j * (std::log(j) - std::log(f.q_s[s] * f.q_o[o]));
      }
  }
  return std::max(mi, 0.0);
}

/// Expected emission entropy E_q(s)[H(p(o | s))].
inline double ambiguity(const std::vector<PredictiveFactor>& pf) {
  double a = 0.0;
  for (const auto& f : pf)
    for (std::size_t s = 0; s < f.q_s.size(); ++s) a += f.q_s[s] * f.emission_entropy[s];
  return a;
}

inline double entropy_states(const std::vector<PredictiveFactor>& pf) {
  double h = 0.0;
  for (const auto& f : pf) h += entropy(f.q_s);
  return h;
}

inline double entropy_observations(const std::vector<PredictiveFactor>& pf) {
  double h = 0.0;
  for (const auto& f : pf) h += entropy(f.q_o);
  return h;
}

/// Sum over future steps of H(q(o_tau), p_o_ref) for a per-step reference.
inline double pragmatic_value(const std::vector<PredictiveFactor>& pf, const CategoricalDist& p_o_ref) {
  double v = 0.0;
  for (const auto& f : pf) v += cross_entropy(f.q_o, p_o_ref);
  return v;
}

/// Standard expected free energy: pragmatic value minus information gain.
inline double efe_standard(const std::vector<PredictiveFactor>& pf, const CategoricalDist& p_o_ref) {
  return pragmatic_value(pf, p_o_ref) - mutual_information(pf);
}

/// KL(q(s_>) || p(s_>)) + ambiguity, with the chain started at q(s_t).
inline double efe_lhs(const BeliefTrajectory& bt, const std::vector<PredictiveFactor>& pf) {
  return divergence_split(bt).future + ambiguity(pf);
}

/// G = E_q(s_>, o_>)[-ln p(s_>, o_>)] - E_q(o_>)[H(q(s_> | o_>))], in closed form.
inline double efe_exact(const BeliefTrajectory& bt, const std::vector<PredictiveFactor>& pf) {
  double cross = 0.0;
  double cond_entropy = 0.0;
  for (const auto& f : pf) {
    const std::size_t S = f.joint.rows();
    const std::size_t O = f.joint.cols();
    for (std::size_t s = 0; s < S; ++s)
      for (std::size_t o = 0; o < O; ++o) cross -= weighted_log(f.joint(s, o), bt.model.log_a(s, o));
    cross -= detail::transition_term(bt, f.tau);

    for (std::size_t o = 0; o < O; ++o) {
      const double po = f.q_o[o];
      if (po == 0.0) continue;
      double h = 0.0;
      for (std::size_t s = 0; s < S; ++s) {
        const double post = f.joint(s, o) / po;
        if (post > 0.0) h -= post * std::log(post);
      }
      cond_entropy += po * h;
    }
  }
  return cross - cond_entropy;
}

/// Model marginal over future observation sequences p(o_{t+1..T}), with the
/// hidden chain started at q(s_t). Index i encodes the sequence in base O,
/// first future step most significant. Requires log_b to be the log of a
/// stochastic matrix at every future step.
inline std::vector<double> predictive_obs_marginal(const BeliefTrajectory& bt) {
  const std::size_t t = bt.present();
  const std::size_t T = bt.horizon();
  const std::size_t n = T - t;
  const std::size_t S = bt.model.num_states();
  const std::size_t O = bt.model.num_obs();
  if (n == 0) throw Error(ErrorCode::NoFuture, "no future timesteps");
  require_enumerable(S, n + 1, 1e7 / std::pow(static_cast<double>(O), static_cast<double>(n)));

  std::vector<Matrix> B;
  for (std::size_t tau = t + 1; tau <= T; ++tau) {
    Matrix lin(S, S);
    for (std::size_t r = 0; r < S; ++r) {
      double total = 0.0;
      for (std::size_t c = 0; c < S; ++c) {
        lin(r, c) = std::exp(bt.model.log_b[tau - 1](r, c));
        total += lin(r, c);
      }
      if (std::abs(total - 1.0) > 1e-9) {
        throw Error(ErrorCode::BadParams, "future transitions are not stochastic; no model marginal exists");
      }
    }
    B.push_back(std::move(lin));
  }
  const StochasticMatrix& A = bt.model.emission;

  // Forward pass over states for every observation sequence: p(o) = sum_s alpha.
  std::vector<double> marginal(static_cast<std::size_t>(std::pow(O, n)), 0.0);
  for_each_sequence(O, n, [&](std::span<const std::size_t> o) {
    std::vector<double> alpha(bt.q[t].weights().begin(), bt.q[t].weights().end());
    for (std::size_t k = 0; k < n; ++k) {
      std::vector<double> next(S, 0.0);
      for (std::size_t r = 0; r < S; ++r) {
        if (alpha[r] == 0.0) continue;
        for (std::size_t c = 0; c < S; ++c) next[c] += alpha[r] * B[k](r, c);
      }
      for (std::size_t c = 0; c < S; ++c) next[c] *= A(c, o[k]);
      alpha = std::move(next);
    }
    std::size_t index = 0;
    for (std::size_t k = 0; k < n; ++k) index = index * O + o[k];
    double p = 0.0;
    for (double a : alpha) p += a;
    marginal[index] = p;
  });
  return marginal;
}

/// E_q(o_>)[-ln p(o_>)] against a joint reference over future observation
/// sequences, indexed as in predictive_obs_marginal.
inline double expected_neg_log(const std::vector<PredictiveFactor>& pf, const std::vector<double>& p_joint) {
  const std::size_t n = pf.size();
  const std::size_t O = pf.front().q_o.size();
  double total = 0.0;
  bool infinite = false;
  for_each_sequence(O, n, [&](std::span<const std::size_t> o) {
    double q = 1.0;
    std::size_t index = 0;
    for (std::size_t k = 0; k < n; ++k) {
      q *= pf[k].q_o[o[k]];
      index = index * O + o[k];
    }
    if (q == 0.0) return;
    if (p_joint[index] == 0.0) {
      infinite = true;
      return;
    }
    total -= q * std::log(p_joint[index]);
  });
  return infinite ? kInf : total;
}

struct BoundSlacks {
  double info = 0.0;          // KL(q(s_>, o_>) || p) - [E_q(s)KL(p(o|s) || p(o)) - MI]
  double simplest = 0.0;      // KL(q(s_>) || p(s_>)) - [E_q(o)(-ln p(o)) - H(q(s_>))]
  double efe = 0.0;           // [KL + ambiguity] - [E_q(o)(-ln p(o)) - MI]
  double gkl_residual = 0.0;  // KL(q(s_>) || p(s_>)) - [G_exact - H(q(o_>))], an identity
};

struct EfeReport {
  double mutual_information = 0.0;
  double ambiguity = 0.0;
  double pragmatic_value = 0.0;  // E_q(o_>)[-ln p(o_>)] with the model marginal
  double entropy_q_s = 0.0;
  double entropy_q_o = 0.0;
  double g_lhs = 0.0;
  double g_standard = 0.0;
  double g_exact = 0.0;
  double kl_future = 0.0;
  BoundSlacks slacks;
};

inline EfeReport verify_bounds(const BeliefTrajectory& bt) {
  const auto pf = predictive_factor(bt);
  const auto p_o = predictive_obs_marginal(bt);
  EfeReport r;
  r.mutual_information = mutual_information(pf);
  r.ambiguity = ambiguity(pf);
  r.pragmatic_value = expected_neg_log(pf, p_o);
  r.entropy_q_s = entropy_states(pf);
  r.entropy_q_o = entropy_observations(pf);
  r.kl_future = divergence_split(bt).future;
  r.g_lhs = r.kl_future + r.ambiguity;
  r.g_standard = r.pragmatic_value - r.mutual_information;
  r.g_exact = efe_exact(bt, pf);

  r.slacks.info = r.kl_future - (r.pragmatic_value - r.ambiguity - r.mutual_information);
  r.slacks.simplest = r.kl_future - (r.pragmatic_value - r.entropy_q_s);
  r.slacks.efe = r.g_lhs - r.g_standard;
  r.slacks.gkl_residual = r.kl_future - (r.g_exact - r.entropy_q_o);
  return r;
}

}  // namespace aif
