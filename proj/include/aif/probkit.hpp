#pragma once

// Categorical-probability and special-function kernels shared by every other
// header. Probabilities live in the linear domain; log weights are only built
// transiently inside updates. Zero probabilities stay exact zeros, and the
// conventions 0 * ln 0 = 0 and 0 * (-inf) = 0 hold in every sum below.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "aif/error.hpp"
#include "aif/matrix.hpp"

namespace aif {

inline constexpr double kSimplexTol = 1e-12;
inline constexpr double kCompareTol = 1e-10;
inline constexpr double kInf = std::numeric_limits<double>::infinity();

/// Probability vector over a finite label set.
class CategoricalDist {
 public:
  CategoricalDist() = default;

  /// Validates non-negativity and unit mass (within kSimplexTol).
  explicit CategoricalDist(std::vector<double> weights) : w_(std::move(weights)) {
    if (w_.empty()) throw Error(ErrorCode::InvalidDistribution, "empty distribution");
    double total = 0.0;
    for (std::size_t k = 0; k < w_.size(); ++k) {
      if (!(w_[k] >= 0.0) || !std::isfinite(w_[k])) {
        throw Error(ErrorCode::InvalidDistribution,
                    "weight " + std::to_string(k) + " is negative or not finite");
      }
      total += w_[k];
    }
    if (std::abs(total - 1.0) > kSimplexTol) {
      throw Error(ErrorCode::InvalidDistribution,
                  "weights sum to " + std::to_string(total) + ", expected 1");
    }
  }

  static CategoricalDist uniform(std::size_t k) {
    if (k == 0) throw Error(ErrorCode::InvalidDistribution, "empty distribution");
    return CategoricalDist(std::vector<double>(k, 1.0 / static_cast<double>(k)), Unchecked{});
  }

  static CategoricalDist point_mass(std::size_t k, std::size_t at) {
    if (at >= k) throw Error(ErrorCode::IndexOutOfRange, "point mass label out of range");
    std::vector<double> w(k, 0.0);
    w[at] = 1.0;
    return CategoricalDist(std::move(w), Unchecked{});
  }

  /// Rescales non-negative weights with positive total onto the simplex.
  static CategoricalDist normalized(std::vector<double> weights) {
    double total = 0.0;
    for (double x : weights) {
      if (!(x >= 0.0) || !std::isfinite(x)) {
        throw Error(ErrorCode::InvalidDistribution, "negative or non-finite weight");
      }
      total += x;
    }
    if (!(total > 0.0)) throw Error(ErrorCode::InvalidDistribution, "zero total mass");
    for (double& x : weights) x /= total;
    return CategoricalDist(std::move(weights), Unchecked{});
  }

  std::size_t size() const noexcept { return w_.size(); }
  double operator[](std::size_t k) const { return w_[k]; }
  std::span<const double> weights() const noexcept { return w_; }
  const std::vector<double>& vec() const noexcept { return w_; }

  bool operator==(const CategoricalDist&) const = default;

 private:
  struct Unchecked {};
  CategoricalDist(std::vector<double> w, Unchecked) : w_(std::move(w)) {}

  std::vector<double> w_;
};

/// Unnormalized log-domain scores; -inf marks an excluded label.
struct LogWeights {
  std::vector<double> values;
};

/// Dirichlet concentration parameters.
class ConcentrationVec {
 public:
  explicit ConcentrationVec(std::vector<double> alphas) : alphas_(std::move(alphas)) {
    if (alphas_.empty()) throw Error(ErrorCode::NonPositiveArg, "empty concentration vector");
    for (double a : alphas_) {
      if (!(a > 0.0) || !std::isfinite(a)) {
        throw Error(ErrorCode::NonPositiveArg, "concentrations must be finite and > 0");
      }
    }
    alpha0_ = std::accumulate(alphas_.begin(), alphas_.end(), 0.0);
  }

  std::size_t size() const noexcept { return alphas_.size(); }
  double operator[](std::size_t k) const { return alphas_[k]; }
  double alpha0() const noexcept { return alpha0_; }
  std::span<const double> alphas() const noexcept { return alphas_; }

 private:
  std::vector<double> alphas_;
  double alpha0_ = 0.0;
};

// q * log_value with 0 * (-inf) = 0.
inline double weighted_log(double weight, double log_value) {
  return weight == 0.0 ? 0.0 : weight * log_value;
}

inline double safe_log(double p) { return p > 0.0 ? std::log(p) : -kInf; }

/// Elementwise natural log; zeros map to -inf.
inline std::vector<double> log_vec(std::span<const double> p) {
  std::vector<double> out(p.size());
  std::transform(p.begin(), p.end(), out.begin(), safe_log);
  return out;
}

inline Matrix log_matrix(const Matrix& m) {
  Matrix out(m.rows(), m.cols());
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t c = 0; c < m.cols(); ++c) out(r, c) = safe_log(m(r, c));
  return out;
}

/// Sum of weights[k] * log_values[k] under the 0 * (-inf) = 0 convention.
inline double dot_log(std::span<const double> weights, std::span<const double> log_values) {
  double s = 0.0;
  for (std::size_t k = 0; k < weights.size(); ++k) s += weighted_log(weights[k], log_values[k]);
  return s;
}

/// Numerically stable softmax. Throws AllNegInf when no entry is finite.
inline CategoricalDist softmax(const LogWeights& lw) {
  double top = -kInf;
  for (double v : lw.values) {
    if (std::isnan(v) || v == kInf) {
      throw Error(ErrorCode::InvalidDistribution, "log weight is NaN or +inf");
    }
    top = std::max(top, v);
  }
  if (top == -kInf) throw Error(ErrorCode::AllNegInf, "every log weight is -inf");
  std::vector<double> w(lw.values.size());
  double total = 0.0;
  for (std::size_t k = 0; k < w.size(); ++k) {
    w[k] = lw.values[k] == -kInf ? 0.0 : std::exp(lw.values[k] - top);
    total += w[k];
  }
  for (double& x : w) x /= total;
  return CategoricalDist::normalized(std::move(w));
}

inline double entropy(const CategoricalDist& p) {
  double h = 0.0;
  for (double x : p.weights())
    if (x > 0.0) h -= x * std::log(x);
  return std::max(h, 0.0);
}

inline void require_same_size(const CategoricalDist& q, const CategoricalDist& p) {
  if (q.size() != p.size()) {
    throw Error(ErrorCode::DimMismatch, "distributions have dimensions " +
                                            std::to_string(q.size()) + " and " +
                                            std::to_string(p.size()));
  }
}

/// -sum q_k ln p_k; +inf when q puts mass where p has none.
inline double cross_entropy(const CategoricalDist& q, const CategoricalDist& p) {
  require_same_size(q, p);
  double h = 0.0;
  for (std::size_t k = 0; k < q.size(); ++k) {
    if (q[k] == 0.0) continue;
    if (p[k] == 0.0) return kInf;
    h -= q[k] * std::log(p[k]);
  }
  return h;
}

/// KL(q || p) in nats, evaluated as sum q ln(q/p) so that kl(q, q) == 0 exactly.
inline double kl(const CategoricalDist& q, const CategoricalDist& p) {
  require_same_size(q, p);
  double d = 0.0;
  for (std::size_t k = 0; k < q.size(); ++k) {
    if (q[k] == 0.0) continue;
    if (p[k] == 0.0) return kInf;
    d += q[k] * (std::log(q[k]) - std::log(p[k]));
  }
  return std::max(d, 0.0);
}

struct ChainParts {
  double marginal_kl = 0.0;
  double conditional_kl = 0.0;
};

/// Splits KL between two joints over (x, y) into the KL of the x-marginals plus
/// the q-expected KL of the conditionals over y.
inline ChainParts kl_chain_parts(const Matrix& q_joint, const Matrix& p_joint) {
  if (q_joint.rows() != p_joint.rows() || q_joint.cols() != p_joint.cols() || q_joint.rows() == 0 ||
      q_joint.cols() == 0) {
    throw Error(ErrorCode::DimMismatch, "joint shapes differ");
  }
  auto check = [](const Matrix& m, const char* name) {
    double total = 0.0;
    for (double x : m.data()) {
      if (!(x >= 0.0)) throw Error(ErrorCode::InvalidJoint, std::string(name) + " has a negative entry");
      total += x;
    }
    if (std::abs(total - 1.0) > 1e-9) {
      throw Error(ErrorCode::InvalidJoint, std::string(name) + " does not sum to 1");
    }
  };
  check(q_joint, "q_joint");
  check(p_joint, "p_joint");

  const std::size_t rows = q_joint.rows();
  std::vector<double> qm(rows), pm(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    for (double x : q_joint.row(r)) qm[r] += x;
    for (double x : p_joint.row(r)) pm[r] += x;
  }
  ChainParts parts;
  parts.marginal_kl = kl(CategoricalDist::normalized(qm), CategoricalDist::normalized(pm));
  for (std::size_t r = 0; r < rows; ++r) {
    if (qm[r] == 0.0) continue;
    if (pm[r] == 0.0) {
      parts.conditional_kl = kInf;
      continue;
    }
    std::vector<double> qc(q_joint.row(r).begin(), q_joint.row(r).end());
    std::vector<double> pc(p_joint.row(r).begin(), p_joint.row(r).end());
    parts.conditional_kl +=
        qm[r] * kl(CategoricalDist::normalized(std::move(qc)), CategoricalDist::normalized(std::move(pc)));
  }
  return parts;
}

/// Digamma by upward recurrence to x >= 10 followed by the asymptotic series.
inline double digamma(double x) {
  if (!(x > 0.0) || !std::isfinite(x)) throw Error(ErrorCode::NonPositiveArg, "digamma needs x > 0");
  double shift = 0.0;
  while (x < 10.0) {
    shift -= 1.0 / x;
    x += 1.0;
  }
  const double inv = 1.0 / x;
  const double inv2 = inv * inv;
  // Bernoulli terms B_2n / (2n x^2n), n = 1..7.
  const double series =
      inv2 * (1.0 / 12 -
              inv2 * (1.0 / 120 -
                      inv2 * (1.0 / 252 -
                              inv2 * (1.0 / 240 -
                                      inv2 * (1.0 / 132 - inv2 * (691.0 / 32760 - inv2 * (1.0 / 12)))))));
  return shift + std::log(x) - 0.5 * inv - series;
}

/// ln Gamma(x) for x > 0 (Lanczos, g = 7, nine terms). Avoids std::lgamma,
/// which writes the global signgam on glibc.
inline double log_gamma(double x) {
  if (!(x > 0.0) || !std::isfinite(x)) throw Error(ErrorCode::NonPositiveArg, "log_gamma needs x > 0");
  static constexpr double kCoef[9] = {0.99999999999980993,  676.5203681218851,     -1259.1392167224028,
                                      771.32342877765313,   -176.61502916214059,   12.507343278686905,
                                      -0.13857109526572012, 9.9843695780195716e-6, 1.5056327351493116e-7};
  static constexpr double kHalfLog2Pi = 0.91893853320467274178;
  if (x < 0.5) {
    // Reflection keeps the series in its accurate range.
    constexpr double pi = 3.14159265358979323846;
    return std::log(pi / std::sin(pi * x)) - log_gamma(1.0 - x);
  }
  const double z = x - 1.0;
  double a = kCoef[0];
  const double t = z + 7.5;
  for (int i = 1; i < 9; ++i) a += kCoef[i] / (z + i);
  return kHalfLog2Pi + (z + 0.5) * std::log(t) - t + std::log(a);
}

/// ln of the multivariate beta function.
inline double log_beta(const ConcentrationVec& a) {
  double s = 0.0;
  for (double x : a.alphas()) s += log_gamma(x);
  return s - log_gamma(a.alpha0());
}

/// KL(Dir(post) || Dir(prior)).
inline double dirichlet_kl(const ConcentrationVec& post, const ConcentrationVec& prior) {
  if (post.size() != prior.size()) throw Error(ErrorCode::DimMismatch, "concentration sizes differ");
  const double psi0 = digamma(post.alpha0());
  double d = log_beta(prior) - log_beta(post);
  for (std::size_t k = 0; k < post.size(); ++k) {
    const double diff = post[k] - prior[k];
    if (diff != 0.0) d += diff * (digamma(post[k]) - psi0);
  }
  return d;
}

}  // namespace aif
