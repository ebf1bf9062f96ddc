#pragma once

// Random instance generators shared by the unit tests and the acceptance run.

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "aif/engine.hpp"
#include "aif/hmm.hpp"
#include "aif/matrix.hpp"
#include "aif/probkit.hpp"
#include "aif/random.hpp"

namespace aif::gen {

inline std::size_t uniform_int(Rng& rng, std::size_t lo, std::size_t hi) {
  return lo + static_cast<std::size_t>(rng.uniform01() * static_cast<double>(hi - lo + 1));
}

// Flat Dirichlet draw via normalized exponentials.
inline std::vector<double> random_simplex(Rng& rng, std::size_t k) {
  std::vector<double> w(k);
  double total = 0.0;
  for (double& x : w) {
    x = -std::log(1.0 - rng.uniform01());
    total += x;
  }
  for (double& x : w) x /= total;
  return w;
}

inline CategoricalDist random_dist(Rng& rng, std::size_t k) { return CategoricalDist::normalized(random_simplex(rng, k)); }

inline Matrix random_rows(Rng& rng, std::size_t rows, std::size_t cols) {
  Matrix m(rows, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    const auto w = random_simplex(rng, cols);
    for (std::size_t c = 0; c < cols; ++c) m(r, c) = w[c];
  }
  return m;
}

inline StochasticMatrix random_stochastic(Rng& rng, std::size_t rows, std::size_t cols) {
  return StochasticMatrix(random_rows(rng, rows, cols));
}

inline Hmm random_hmm(Rng& rng, std::size_t S, std::size_t O) {
  return Hmm(random_dist(rng, S), random_stochastic(rng, S, O), random_stochastic(rng, S, S));
}

inline std::vector<std::size_t> random_obs(Rng& rng, std::size_t O, std::size_t n) {
  std::vector<std::size_t> obs(n);
  for (auto& o : obs) o = uniform_int(rng, 0, O - 1);
  return obs;
}

// ln q(s) and ln p(s, o_<=t) for one full state sequence s_0..s_T.
struct SequenceLogs {
  double log_q = 0.0;
  double log_p = 0.0;
  double q = 0.0;
};

inline SequenceLogs sequence_logs(const BeliefTrajectory& bt, std::span<const std::size_t> s) {
  SequenceLogs out;
  out.q = 1.0;
  for (std::size_t tau = 0; tau < s.size(); ++tau) {
    out.q *= bt.q[tau][s[tau]];
    out.log_q += safe_log(bt.q[tau][s[tau]]);
  }
  out.log_p = safe_log(bt.model.p0[s[0]]);
  for (std::size_t tau = 1; tau < s.size(); ++tau) {
    out.log_p += bt.model.log_b[tau - 1](s[tau - 1], s[tau]);
    if (tau <= bt.present()) out.log_p += bt.model.log_a(s[tau], bt.obs[tau - 1]);
  }
  return out;
}

// KL(q(s) || p(s, o_<=t)) summed over every state sequence.
inline double enumerated_divergence(const BeliefTrajectory& bt) {
  double d = 0.0;
  for_each_sequence(bt.model.num_states(), bt.horizon() + 1, [&](std::span<const std::size_t> s) {
    const auto l = sequence_logs(bt, s);
    if (l.q > 0.0) d += l.q * (l.log_q - l.log_p);
  });
  return d;
}

// KL(q(s) || p(s | o_<=t)) with the posterior normalized by the given evidence.
inline double enumerated_posterior_kl(const BeliefTrajectory& bt, double evidence) {
  double d = 0.0;
  const double log_z = std::log(evidence);
  for_each_sequence(bt.model.num_states(), bt.horizon() + 1, [&](std::span<const std::size_t> s) {
    const auto l = sequence_logs(bt, s);
    if (l.q > 0.0) d += l.q * (l.log_q - (l.log_p - log_z));
  });
  return d;
}

}  // namespace aif::gen
