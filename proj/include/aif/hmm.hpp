#pragma once

// The generative model: a discrete hidden Markov model (p0, A, B), its joint
// log-probability, ancestral sampling, and two exact inference oracles
// (full enumeration and scaled forward-backward) used to validate the
// variational machinery at desk scale.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "aif/error.hpp"
#include "aif/matrix.hpp"
#include "aif/probkit.hpp"
#include "aif/random.hpp"

namespace aif {

/// Row-stochastic matrix. Every row is a valid CategoricalDist.
class StochasticMatrix {
 public:
  StochasticMatrix() = default;

  explicit StochasticMatrix(Matrix m) : m_(std::move(m)) {
    if (m_.rows() == 0 || m_.cols() == 0) throw Error(ErrorCode::InvalidDistribution, "empty matrix");
    for (std::size_t r = 0; r < m_.rows(); ++r) {
      double total = 0.0;
      for (std::size_t c = 0; c < m_.cols(); ++c) {
        const double x = m_(r, c);
        if (!(x >= 0.0) || !std::isfinite(x)) {
          throw Error(ErrorCode::InvalidDistribution,
                      "entry (" + std::to_string(r) + ", " + std::to_string(c) + ") is negative");
        }
        total += x;
      }
      if (std::abs(total - 1.0) > kSimplexTol) {
        throw Error(ErrorCode::InvalidDistribution, "row " + std::to_string(r) + " sums to " +
                                                        std::to_string(total));
      }
    }
  }

  static StochasticMatrix from_rows(const std::vector<std::vector<double>>& rows) {
    return StochasticMatrix(Matrix::from_rows(rows));
  }

  static StochasticMatrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return StochasticMatrix(std::move(m));
  }

  static StochasticMatrix uniform(std::size_t rows, std::size_t cols) {
    return StochasticMatrix(Matrix(rows, cols, 1.0 / static_cast<double>(cols)));
  }

  std::size_t rows() const noexcept { return m_.rows(); }
  std::size_t cols() const noexcept { return m_.cols(); }
  double operator()(std::size_t r, std::size_t c) const { return m_(r, c); }
  std::span<const double> row(std::size_t r) const { return m_.row(r); }
  CategoricalDist row_dist(std::size_t r) const {
    return CategoricalDist::normalized({m_.row(r).begin(), m_.row(r).end()});
  }
  const Matrix& matrix() const noexcept { return m_; }

  bool operator==(const StochasticMatrix&) const = default;

 private:
  Matrix m_;
};

/// Unvalidated HMM parameters as read from a file.
struct HmmData {
  std::vector<double> p0;
  Matrix A;  // S x O, row s = p(o | s)
  Matrix B;  // S x S, row s = p(s' | s)
  std::vector<std::string> labels;
};

struct Violation {
  std::string field;
  std::string message;
};

using ValidationReport = std::vector<Violation>;

inline ValidationReport validate(const HmmData& d) {
  ValidationReport report;
  const std::size_t S = d.p0.size();
  if (S == 0) report.push_back({"p0", "p0 is empty"});
  if (d.A.rows() != S) {
    report.push_back({"A", "A has " + std::to_string(d.A.rows()) + " rows, expected S=" + std::to_string(S)});
  }
  if (d.A.cols() == 0) report.push_back({"A", "A has no columns"});
  if (d.B.rows() != S || d.B.cols() != S) {
    report.push_back({"B", "B is " + std::to_string(d.B.rows()) + "x" + std::to_string(d.B.cols()) +
                               ", expected " + std::to_string(S) + "x" + std::to_string(S)});
  }
  if (!d.labels.empty() && d.labels.size() != S) {
    report.push_back({"labels", "expected " + std::to_string(S) + " labels"});
  }

  double p0_total = 0.0;
  for (std::size_t k = 0; k < d.p0.size(); ++k) {
    if (!(d.p0[k] >= 0.0) || !std::isfinite(d.p0[k])) {
      report.push_back({"p0", "entry " + std::to_string(k) + " is negative or not finite"});
    }
    p0_total += d.p0[k];
  }
  if (S > 0 && std::abs(p0_total - 1.0) > kSimplexTol) {
    report.push_back({"p0", "sums to " + std::to_string(p0_total)});
  }

  auto check_rows = [&report](const Matrix& m, const std::string& name) {
    for (std::size_t r = 0; r < m.rows(); ++r) {
      double total = 0.0;
      for (std::size_t c = 0; c < m.cols(); ++c) {
        const double x = m(r, c);
        if (!(x >= 0.0) || !std::isfinite(x)) {
          report.push_back({name, "entry (" + std::to_string(r) + ", " + std::to_string(c) +
                                      ") is negative or not finite"});
        }
        total += x;
      }
      if (m.cols() > 0 && std::abs(total - 1.0) > kSimplexTol) {
        report.push_back({name, "row " + std::to_string(r) + " sums to " + std::to_string(total)});
      }
    }
  };
  check_rows(d.A, "A");
  check_rows(d.B, "B");
  return report;
}

inline std::string describe(const ValidationReport& report) {
  std::string out;
  for (const auto& v : report) {
    if (!out.empty()) out += "; ";
    out += v.field + ": " + v.message;
  }
  return out;
}

/// Homogeneous discrete HMM.
struct Hmm {
  CategoricalDist p0;
  StochasticMatrix A;  // S x O
  StochasticMatrix B;  // S x S
  std::vector<std::string> labels;

  Hmm() = default;

  Hmm(CategoricalDist p0_, StochasticMatrix A_, StochasticMatrix B_, std::vector<std::string> labels_ = {})
      : p0(std::move(p0_)), A(std::move(A_)), B(std::move(B_)), labels(std::move(labels_)) {
    if (A.rows() != p0.size() || B.rows() != p0.size() || B.cols() != p0.size()) {
      throw Error(ErrorCode::DimMismatch, "p0, A and B disagree on the number of states");
    }
  }

  /// Throws InvalidDistribution naming every violation when the data are invalid.
  static Hmm from_data(const HmmData& d) {
    const auto report = validate(d);
    if (!report.empty()) throw Error(ErrorCode::InvalidDistribution, describe(report));
    return Hmm(CategoricalDist(d.p0), StochasticMatrix(d.A), StochasticMatrix(d.B), d.labels);
  }

  HmmData data() const { return {p0.vec(), A.matrix(), B.matrix(), labels}; }

  std::size_t num_states() const noexcept { return p0.size(); }
  std::size_t num_obs() const noexcept { return A.cols(); }
};

inline ValidationReport validate(const Hmm& m) { return validate(m.data()); }

/// HMM with one transition matrix per step: transitions[tau - 1] drives
/// s_{tau-1} -> s_tau for tau = 1..T.
struct StepHmm {
  CategoricalDist p0;
  StochasticMatrix A;
  std::vector<StochasticMatrix> transitions;

  std::size_t num_states() const noexcept { return p0.size(); }
  std::size_t horizon() const noexcept { return transitions.size(); }

  static StepHmm homogeneous(const Hmm& m, std::size_t horizon) {
    return {m.p0, m.A, std::vector<StochasticMatrix>(horizon, m.B)};
  }
};

struct Trajectory {
  std::vector<std::size_t> states;        // s_0 .. s_T
  std::vector<std::size_t> observations;  // o_1 .. o_T

  bool operator==(const Trajectory&) const = default;
};

/// ln p(s, o) = ln p0(s0) + sum_tau [ln A(s_tau, o_tau) + ln B(s_{tau-1}, s_tau)].
inline double log_joint(const Hmm& m, const Trajectory& traj) {
  const std::size_t S = m.num_states();
  const std::size_t O = m.num_obs();
  if (traj.states.empty() || traj.observations.size() + 1 != traj.states.size()) {
    throw Error(ErrorCode::IndexOutOfRange, "trajectory needs one more state than observations");
  }
  for (std::size_t s : traj.states)
    if (s >= S) throw Error(ErrorCode::IndexOutOfRange, "state index " + std::to_string(s));
  for (std::size_t o : traj.observations)
    if (o >= O) throw Error(ErrorCode::IndexOutOfRange, "observation index " + std::to_string(o));

  double lp = safe_log(m.p0[traj.states[0]]);
  for (std::size_t tau = 1; tau < traj.states.size(); ++tau) {
    lp += safe_log(m.A(traj.states[tau], traj.observations[tau - 1]));
    lp += safe_log(m.B(traj.states[tau - 1], traj.states[tau]));
  }
  return lp;
}

/// Ancestral sampling, deterministic given the seed.
inline Trajectory sample_trajectory(const Hmm& m, std::size_t horizon, std::uint64_t seed) {
  if (horizon < 1) throw Error(ErrorCode::BadParams, "horizon must be >= 1");
  Rng rng(seed);
  Trajectory traj;
  traj.states.reserve(horizon + 1);
  traj.observations.reserve(horizon);
  traj.states.push_back(rng.categorical(m.p0.weights()));
  for (std::size_t tau = 1; tau <= horizon; ++tau) {
    const std::size_t s = rng.categorical(m.B.row(traj.states.back()));
    traj.states.push_back(s);
    traj.observations.push_back(rng.categorical(m.A.row(s)));
  }
  return traj;
}

/// Calls fn once per index sequence in [0, radix)^length, in lexicographic
/// order (last position varies fastest).
inline void for_each_sequence(std::size_t radix, std::size_t length,
                              const std::function<void(std::span<const std::size_t>)>& fn) {
  std::vector<std::size_t> idx(length, 0);
  while (true) {
    fn(idx);
    std::size_t pos = length;
    while (pos > 0) {
      --pos;
      if (++idx[pos] < radix) break;
      idx[pos] = 0;
      if (pos == 0) return;
    }
    if (length == 0) return;
  }
}

inline constexpr double kEnumerationLimit = 1e7;

inline void require_enumerable(std::size_t radix, std::size_t length, double limit = kEnumerationLimit) {
  if (std::pow(static_cast<double>(radix), static_cast<double>(length)) > limit) {
    throw Error(ErrorCode::TooLarge, std::to_string(radix) + "^" + std::to_string(length) +
                                         " sequences exceed the enumeration guard");
  }
}

struct ExactPosterior {
  double evidence = 0.0;                  // p(o_1..o_t)
  std::vector<CategoricalDist> marginals;  // p(s_tau | o_<=t), tau = 0..T
  std::vector<Matrix> pairwise;            // [tau-1](s, s') = p(s_{tau-1}=s, s_tau=s' | o_<=t)
};

namespace detail {

inline void validate_observations(std::span<const std::size_t> obs, std::size_t num_obs, std::size_t horizon) {
  if (obs.size() > horizon) throw Error(ErrorCode::IndexOutOfRange, "more observations than the horizon");
  for (std::size_t o : obs)
    if (o >= num_obs) throw Error(ErrorCode::IndexOutOfRange, "observation index " + std::to_string(o));
}

inline ExactPosterior normalize_posterior(double evidence, std::vector<std::vector<double>> marg,
                                          std::vector<Matrix> pair) {
  if (!(evidence > 0.0)) throw Error(ErrorCode::ModelContradiction, "observations have zero probability");
  ExactPosterior out;
  out.evidence = evidence;
  for (auto& m : marg) out.marginals.push_back(CategoricalDist::normalized(std::move(m)));
  for (auto& p : pair) {
    Matrix scaled(p.rows(), p.cols());
    for (std::size_t r = 0; r < p.rows(); ++r)
      for (std::size_t c = 0; c < p.cols(); ++c) scaled(r, c) = p(r, c) / evidence;
    out.pairwise.push_back(std::move(scaled));
  }
  return out;
}

}  // namespace detail

/// Exact posterior by enumerating all S^(T+1) state sequences. Emissions after
/// the observed prefix are summed out implicitly (rows of A sum to 1).
inline ExactPosterior exact_inference(const StepHmm& m, std::span<const std::size_t> obs) {
  const std::size_t S = m.num_states();
  const std::size_t T = m.horizon();
  detail::validate_observations(obs, m.A.cols(), T);
  require_enumerable(S, T + 1);

  std::vector<std::vector<double>> marg(T + 1, std::vector<double>(S, 0.0));
  std::vector<Matrix> pair(T, Matrix(S, S, 0.0));
  double evidence = 0.0;
  double compensation = 0.0;

  for_each_sequence(S, T + 1, [&](std::span<const std::size_t> s) {
    double w = m.p0[s[0]];
    for (std::size_t tau = 1; tau <= T && w > 0.0; ++tau) {
      w *= m.transitions[tau - 1](s[tau - 1], s[tau]);
      if (tau <= obs.size()) w *= m.A(s[tau], obs[tau - 1]);
    }
    if (w == 0.0) return;
    // Neumaier summation for the evidence.
    const double t = evidence + w;
    compensation += std::abs(evidence) >= w ? (evidence - t) + w : (w - t) + evidence;
    evidence = t;
    for (std::size_t tau = 0; tau <= T; ++tau) marg[tau][s[tau]] += w;
    for (std::size_t tau = 1; tau <= T; ++tau) pair[tau - 1](s[tau - 1], s[tau]) += w;
  });
  return detail::normalize_posterior(evidence + compensation, std::move(marg), std::move(pair));
}

inline ExactPosterior exact_inference(const Hmm& m, std::span<const std::size_t> obs, std::size_t horizon) {
  return exact_inference(StepHmm::homogeneous(m, horizon), obs);
}

/// Scaled forward-backward recursion; an independent route to the same
/// quantities as exact_inference, usable beyond the enumeration guard.
inline ExactPosterior forward_backward(const StepHmm& m, std::span<const std::size_t> obs) {
  const std::size_t S = m.num_states();
  const std::size_t T = m.horizon();
  detail::validate_observations(obs, m.A.cols(), T);

  auto likelihood = [&](std::size_t tau, std::size_t s) {
    return tau >= 1 && tau <= obs.size() ? m.A(s, obs[tau - 1]) : 1.0;
  };

  std::vector<std::vector<double>> alpha(T + 1, std::vector<double>(S, 0.0));
  std::vector<double> scale(T + 1, 0.0);
  double log_evidence = 0.0;
  for (std::size_t tau = 0; tau <= T; ++tau) {
    for (std::size_t s = 0; s < S; ++s) {
      double a = 0.0;
      if (tau == 0) {
        a = m.p0[s];
      } else {
        for (std::size_t r = 0; r < S; ++r) a += alpha[tau - 1][r] * m.transitions[tau - 1](r, s);
        a *= likelihood(tau, s);
      }
      alpha[tau][s] = a;
      scale[tau] += a;
    }
    if (!(scale[tau] > 0.0)) throw Error(ErrorCode::ModelContradiction, "observations have zero probability");
    for (double& a : alpha[tau]) a /= scale[tau];
    log_evidence += std::log(scale[tau]);
  }

  std::vector<std::vector<double>> beta(T + 1, std::vector<double>(S, 1.0));
  for (std::size_t tau = T; tau-- > 0;) {
    for (std::size_t s = 0; s < S; ++s) {
      double b = 0.0;
      for (std::size_t n = 0; n < S; ++n)
        b += m.transitions[tau](s, n) * likelihood(tau + 1, n) * beta[tau + 1][n];
      beta[tau][s] = b / scale[tau + 1];
    }
  }

  ExactPosterior out;
  out.evidence = std::exp(log_evidence);
  for (std::size_t tau = 0; tau <= T; ++tau) {
    std::vector<double> g(S);
    for (std::size_t s = 0; s < S; ++s) g[s] = alpha[tau][s] * beta[tau][s];
    out.marginals.push_back(CategoricalDist::normalized(std::move(g)));
  }
  for (std::size_t tau = 1; tau <= T; ++tau) {
    Matrix xi(S, S);
    double total = 0.0;
    for (std::size_t r = 0; r < S; ++r)
      for (std::size_t n = 0; n < S; ++n) {
        xi(r, n) = alpha[tau - 1][r] * m.transitions[tau - 1](r, n) * likelihood(tau, n) * beta[tau][n];
        total += xi(r, n);
      }
    for (std::size_t r = 0; r < S; ++r)
      for (std::size_t n = 0; n < S; ++n) xi(r, n) /= total;
    out.pairwise.push_back(std::move(xi));
  }
  return out;
}

inline ExactPosterior forward_backward(const Hmm& m, std::span<const std::size_t> obs, std::size_t horizon) {
  return forward_backward(StepHmm::homogeneous(m, horizon), obs);
}

struct SteadyState {
  CategoricalDist dist;
  bool converged = false;
  std::size_t iterations = 0;
};

/// Power iteration pi <- pi B from the uniform vector. Periodic chains may
/// fail to settle; that is reported through the flag, not thrown.
inline SteadyState steady_state(const StochasticMatrix& B, std::size_t max_iters = 100000, double tol = 1e-12) {
  if (B.rows() != B.cols()) throw Error(ErrorCode::DimMismatch, "steady state needs a square matrix");
  const std::size_t S = B.rows();
  std::vector<double> pi(S, 1.0 / static_cast<double>(S));
  SteadyState out;
  for (std::size_t it = 1; it <= max_iters; ++it) {
    std::vector<double> next(S, 0.0);
    for (std::size_t r = 0; r < S; ++r)
      for (std::size_t c = 0; c < S; ++c) next[c] += pi[r] * B(r, c);
    double change = 0.0;
    for (std::size_t k = 0; k < S; ++k) change = std::max(change, std::abs(next[k] - pi[k]));
    pi = std::move(next);
    out.iterations = it;
    if (change < tol) {
      out.converged = true;
      break;
    }
  }
  out.dist = CategoricalDist::normalized(std::move(pi));
  return out;
}

}  // namespace aif
