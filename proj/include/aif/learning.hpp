#pragma once

// Variational Bayesian learning of HMM parameters under row-wise Dirichlet
// priors. q(M) and the per-sequence state beliefs are updated alternately;
// the belief update is the retrodiction rule with expected log parameters in
// place of ln A and ln B, and the parameter update adds expected counts to the
// prior concentrations.

#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "aif/engine.hpp"
#include "aif/error.hpp"
#include "aif/hmm.hpp"
#include "aif/matrix.hpp"
#include "aif/probkit.hpp"

namespace aif {

/// Concentrations for every row of A (S x O) and B (S x S).
struct DirichletHmm {
  Matrix c_a;
  Matrix c_b;

  DirichletHmm() = default;
  DirichletHmm(Matrix c_a_, Matrix c_b_) : c_a(std::move(c_a_)), c_b(std::move(c_b_)) {
    if (c_a.rows() == 0 || c_a.cols() == 0) throw Error(ErrorCode::DimMismatch, "C_A is empty");
    if (c_b.rows() != c_a.rows() || c_b.cols() != c_a.rows()) {
      throw Error(ErrorCode::DimMismatch, "C_B must be S x S with S = rows of C_A");
    }
    for (const Matrix* m : {&c_a, &c_b})
      for (double x : m->data())
        if (!(x > 0.0) || !std::isfinite(x)) throw Error(ErrorCode::NonPositiveArg, "concentrations must be > 0");
  }

  static DirichletHmm constant(std::size_t states, std::size_t obs, double value) {
    return {Matrix(states, obs, value), Matrix(states, states, value)};
  }

  std::size_t num_states() const noexcept { return c_a.rows(); }
  std::size_t num_obs() const noexcept { return c_a.cols(); }

  bool operator==(const DirichletHmm&) const = default;
};

struct ExpectedLogParams {
  Matrix ln_a_bar;
  Matrix ln_b_bar;
};

namespace detail {

inline Matrix expected_log_rows(const Matrix& c) {
  Matrix out(c.rows(), c.cols());
  for (std::size_t r = 0; r < c.rows(); ++r) {
    double total = 0.0;
    for (double x : c.row(r)) total += x;
    const double psi0 = digamma(total);
    for (std::size_t k = 0; k < c.cols(); ++k) out(r, k) = digamma(c(r, k)) - psi0;
  }
  return out;
}

inline Matrix row_means(const Matrix& c) {
  Matrix out(c.rows(), c.cols());
  for (std::size_t r = 0; r < c.rows(); ++r) {
    double total = 0.0;
    for (double x : c.row(r)) total += x;
    for (std::size_t k = 0; k < c.cols(); ++k) out(r, k) = c(r, k) / total;
  }
  return out;
}

inline double rows_dirichlet_kl(const Matrix& post, const Matrix& prior) {
  if (post.rows() != prior.rows() || post.cols() != prior.cols()) {
    throw Error(ErrorCode::DimMismatch, "posterior and prior shapes differ");
  }
  double d = 0.0;
  for (std::size_t r = 0; r < post.rows(); ++r) {
    d += dirichlet_kl(ConcentrationVec({post.row(r).begin(), post.row(r).end()}),
                      ConcentrationVec({prior.row(r).begin(), prior.row(r).end()}));
  }
  return d;
}

}  // namespace detail

/// E[ln mu_k] = psi(alpha_k) - psi(alpha_0), row by row.
inline ExpectedLogParams expected_log_params(const DirichletHmm& d) {
  return {detail::expected_log_rows(d.c_a), detail::expected_log_rows(d.c_b)};
}

/// Point estimate: the Dirichlet means.
inline Hmm posterior_mean_model(const DirichletHmm& d, const CategoricalDist& p0) {
  return Hmm(p0, StochasticMatrix(detail::row_means(d.c_a)), StochasticMatrix(detail::row_means(d.c_b)));
}

/// Chain model whose log parameters are the Dirichlet expected logs.
inline ChainModel expected_chain_model(const DirichletHmm& d, const CategoricalDist& p0, std::size_t horizon) {
  if (p0.size() != d.num_states()) throw Error(ErrorCode::DimMismatch, "p0 does not match the concentrations");
  const auto e = expected_log_params(d);
  return ChainModel{p0, StochasticMatrix(detail::row_means(d.c_a)), e.ln_a_bar,
                    std::vector<Matrix>(horizon, e.ln_b_bar)};
}

/// C'_A = C_A + sum_tau q_tau o_tau^T, C'_B = C_B + sum_tau xi_tau, where xi_tau
/// defaults to the mean-field outer product q_{tau-1} q_tau^T.
inline DirichletHmm accumulate_counts(const DirichletHmm& prior, std::span<const CategoricalDist> q,
                                      std::span<const std::size_t> obs,
                                      std::optional<std::span<const Matrix>> pairwise = std::nullopt) {
  const std::size_t S = prior.num_states();
  if (q.empty() || q.size() != obs.size() + 1) {
    throw Error(ErrorCode::NotFullyObserved, "need one observation for every belief after q_0");
  }
  if (pairwise && pairwise->size() != obs.size()) throw Error(ErrorCode::DimMismatch, "one pairwise matrix per step");
  DirichletHmm post = prior;
  for (std::size_t tau = 1; tau < q.size(); ++tau) {
    if (q[tau].size() != S || q[tau - 1].size() != S) throw Error(ErrorCode::DimMismatch, "belief dimension != S");
    const std::size_t o = obs[tau - 1];
    if (o >= prior.num_obs()) throw Error(ErrorCode::IndexOutOfRange, "observation index " + std::to_string(o));
    for (std::size_t s = 0; s < S; ++s) post.c_a(s, o) += q[tau][s];
    for (std::size_t r = 0; r < S; ++r)
      for (std::size_t c = 0; c < S; ++c)
        post.c_b(r, c) += pairwise ? (*pairwise)[tau - 1](r, c) : q[tau - 1][r] * q[tau][c];
  }
  return post;
}

inline DirichletHmm accumulate_counts(const DirichletHmm& prior, const BeliefTrajectory& bt,
                                      std::optional<std::span<const Matrix>> pairwise = std::nullopt) {
  if (bt.present() != bt.horizon()) throw Error(ErrorCode::NotFullyObserved, "beliefs must have t == T");
  return accumulate_counts(prior, bt.q, bt.obs, pairwise);
}

/// State beliefs for one fully observed sequence under the expected log
/// parameters, from uniform initial beliefs.
inline BeliefTrajectory e_step(const DirichletHmm& d, const CategoricalDist& p0, std::span<const std::size_t> obs,
                               const SweepOptions& opts = {}) {
  if (obs.empty()) throw Error(ErrorCode::EmptyTrainingSet, "sequence is empty");
  auto bt = with_observations(init_beliefs(expected_chain_model(d, p0, obs.size())), obs);
  return sweep(std::move(bt), opts).beliefs;
}

/// KL(q(M) || p(M)) + sum over sequences of E_q(M)[KL(q(s, o) || p(s, o | M))].
inline double learning_divergence(const DirichletHmm& posterior, const DirichletHmm& prior,
                                  const std::vector<std::vector<CategoricalDist>>& beliefs,
                                  const std::vector<std::vector<std::size_t>>& sequences) {
  if (beliefs.size() != sequences.size()) throw Error(ErrorCode::DimMismatch, "one belief set per sequence");
  double d = detail::rows_dirichlet_kl(posterior.c_a, prior.c_a) + detail::rows_dirichlet_kl(posterior.c_b, prior.c_b);
  const auto e = expected_log_params(posterior);
  for (std::size_t n = 0; n < sequences.size(); ++n) {
    const auto& q = beliefs[n];
    const auto& obs = sequences[n];
    if (q.size() != obs.size() + 1) throw Error(ErrorCode::DimMismatch, "beliefs and sequence lengths differ");
    for (std::size_t tau = 1; tau < q.size(); ++tau) {
      d -= entropy(q[tau]);
      for (std::size_t s = 0; s < q[tau].size(); ++s) d -= q[tau][s] * e.ln_a_bar(s, obs[tau - 1]);
      d -= detail::bilinear_log(q[tau - 1].weights(), e.ln_b_bar, q[tau].weights());
    }
  }
  return d;
}

struct LearnOptions {
  std::size_t outer_iters = 50;
  double tol = 1e-8;
  SweepOptions sweep{};
};

struct LearnResult {
  DirichletHmm posterior;
  std::vector<double> trace;  // learning divergence after every half-step, starting at the prior
  std::vector<BeliefTrajectory> beliefs;
  std::size_t iterations = 0;
  bool converged = false;
};

/// Batch variational Bayes: each outer iteration sweeps every sequence's
/// beliefs under the current q(M) (warm-started), then recomputes q(M) as
/// prior plus the expected counts of the whole training set.
inline LearnResult learn(const DirichletHmm& prior, const CategoricalDist& p0,
                         const std::vector<std::vector<std::size_t>>& sequences, const LearnOptions& opts = {}) {
  if (sequences.empty()) throw Error(ErrorCode::EmptyTrainingSet, "no training sequences");
  for (const auto& seq : sequences)
    if (seq.empty()) throw Error(ErrorCode::EmptyTrainingSet, "training sequence is empty");

  LearnResult out;
  out.posterior = prior;
  for (const auto& seq : sequences)
    out.beliefs.push_back(with_observations(init_beliefs(expected_chain_model(prior, p0, seq.size())), seq));

  auto snapshot = [&] {
    std::vector<std::vector<CategoricalDist>> q;
    for (const auto& bt : out.beliefs) q.push_back(bt.q);
    return learning_divergence(out.posterior, prior, q, sequences);
  };

  double current = snapshot();
  out.trace.push_back(current);
  while (out.iterations < opts.outer_iters) {
    const double start = current;
    for (auto& bt : out.beliefs) {
      bt.model = expected_chain_model(out.posterior, p0, bt.horizon());
      bt = sweep(std::move(bt), opts.sweep).beliefs;
    }
    current = snapshot();
    out.trace.push_back(current);

    DirichletHmm next = prior;
    for (const auto& bt : out.beliefs) next = accumulate_counts(next, bt);
    out.posterior = std::move(next);
    current = snapshot();
    out.trace.push_back(current);

    ++out.iterations;
    if (start - current < opts.tol) {
      out.converged = true;
      break;
    }
  }
  return out;
}

}  // namespace aif
