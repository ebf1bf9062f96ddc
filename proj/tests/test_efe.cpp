#include <gtest/gtest.h>

#include <cmath>

#include "aif/efe.hpp"
#include "gen.hpp"

using namespace aif;

namespace {

// Converged beliefs for a random model with at least one future step.
BeliefTrajectory random_predictive(Rng& rng, std::size_t max_s, std::size_t max_future) {
  const std::size_t S = gen::uniform_int(rng, 2, max_s);
  const std::size_t O = gen::uniform_int(rng, 2, max_s);
  const std::size_t t = gen::uniform_int(rng, 0, 2);
  const std::size_t T = t + gen::uniform_int(rng, 1, max_future);
  const auto m = gen::random_hmm(rng, S, O);
  const auto obs = gen::random_obs(rng, O, t);
  return sweep(with_observations(init_beliefs(m, T), obs)).beliefs;
}

// Model whose transition rows all equal `row`, with q set to match it.
BeliefTrajectory matched(const CategoricalDist& row, const StochasticMatrix& A, std::size_t T) {
  const std::size_t S = row.size();
  Matrix B(S, S);
  for (std::size_t r = 0; r < S; ++r)
    for (std::size_t c = 0; c < S; ++c) B(r, c) = row[c];
  auto bt = init_beliefs(Hmm(row, A, StochasticMatrix(B)), T);
  for (auto& q : bt.q) q = row;
  return bt;
}

// G assembled directly from its definition by enumerating s_t..s_T and o_{t+1}..o_T.
double brute_force_g(const BeliefTrajectory& bt) {
  const std::size_t S = bt.model.num_states();
  const std::size_t O = bt.model.num_obs();
  const std::size_t t = bt.present();
  const std::size_t n = bt.horizon() - t;
  const auto& A = bt.model.emission;

  double cross = 0.0;
  double cond_entropy = 0.0;
  for_each_sequence(O, n, [&](std::span<const std::size_t> o) {
    std::vector<double> joint;  // over s_{t+1..T} with s_t summed out
    double q_o = 0.0;
    for_each_sequence(S, n, [&](std::span<const std::size_t> s) {
      double q = 1.0;
      double log_p_obs = 0.0;
      for (std::size_t k = 0; k < n; ++k) {
        q *= bt.q[t + 1 + k][s[k]] * A(s[k], o[k]);
        log_p_obs += std::log(A(s[k], o[k]));
      }
      joint.push_back(q);
      q_o += q;
      if (q == 0.0) return;
      for (std::size_t st = 0; st < S; ++st) {
        const double w = q * bt.q[t][st];
        if (w == 0.0) continue;
        double log_p = log_p_obs + bt.model.log_b[t](st, s[0]);
        for (std::size_t k = 1; k < n; ++k) log_p += bt.model.log_b[t + k](s[k - 1], s[k]);
        cross -= w * log_p;
      }
    });
    if (q_o == 0.0) return;
    for (double j : joint)
      if (j > 0.0) cond_entropy -= j * std::log(j / q_o);
  });
  return cross - cond_entropy;
}

}  // namespace

TEST(PredictiveFactor, NoFutureThrows) {
  const Hmm m(CategoricalDist::uniform(2), StochasticMatrix::uniform(2, 2), StochasticMatrix::uniform(2, 2));
  try {
    predictive_factor(with_observations(init_beliefs(m, 1), std::vector<std::size_t>{0}));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NoFuture);
  }
}

TEST(PredictiveFactor, Shapes) {
  const Hmm det(CategoricalDist::uniform(3), StochasticMatrix::identity(3), StochasticMatrix::uniform(3, 3));
  for (const auto& f : predictive_factor(init_beliefs(det, 2))) {
    for (std::size_t s = 0; s < 3; ++s) {
      int nonzero = 0;
      for (std::size_t o = 0; o < 3; ++o) nonzero += f.joint(s, o) > 0.0;
      EXPECT_EQ(nonzero, 1);
    }
  }
  const Hmm flat(CategoricalDist::uniform(2), StochasticMatrix::uniform(2, 3), StochasticMatrix::uniform(2, 2));
  for (const auto& f : predictive_factor(init_beliefs(flat, 2)))
    for (std::size_t s = 0; s < 2; ++s)
      for (std::size_t o = 0; o < 3; ++o) EXPECT_NEAR(f.joint(s, o), 1.0 / 6.0, 1e-15);
}

TEST(PredictiveFactor, MarginalsReproduceBeliefs) {
  Rng rng(12);
  for (int i = 0; i < 50; ++i) {
    const auto bt = random_predictive(rng, 4, 3);
    for (const auto& f : predictive_factor(bt)) {
      double total = 0.0;
      for (std::size_t s = 0; s < f.joint.rows(); ++s) {
        double row = 0.0;
        for (std::size_t o = 0; o < f.joint.cols(); ++o) row += f.joint(s, o);
        EXPECT_NEAR(row, f.q_s[s], 1e-12);
        total += row;
      }
      EXPECT_NEAR(total, 1.0, 1e-12);
      for (std::size_t o = 0; o < f.joint.cols(); ++o) {
        double col = 0.0;
        for (std::size_t s = 0; s < f.joint.rows(); ++s) col += f.q_s[s] * bt.model.emission(s, o);
        EXPECT_NEAR(col, f.q_o[o], 1e-12);
      }
    }
  }
}

TEST(MutualInformation, Examples) {
  const auto q = CategoricalDist({0.2, 0.8});
  const auto det = matched(q, StochasticMatrix::identity(2), 1);
  EXPECT_NEAR(mutual_information(predictive_factor(det)), entropy(q), 1e-15);

  const auto same_rows = matched(q, StochasticMatrix::from_rows({{0.3, 0.7}, {0.3, 0.7}}), 2);
  EXPECT_NEAR(mutual_information(predictive_factor(same_rows)), 0.0, 1e-15);

  const auto noisy = matched(CategoricalDist::uniform(2), StochasticMatrix::from_rows({{0.9, 0.1}, {0.1, 0.9}}), 1);
  EXPECT_NEAR(mutual_information(predictive_factor(noisy)), 0.3680642071684971, 1e-15);
}

TEST(Ambiguity, Examples) {
  const auto det = matched(CategoricalDist({0.4, 0.6}), StochasticMatrix::identity(2), 3);
  EXPECT_EQ(ambiguity(predictive_factor(det)), 0.0);
  const auto flat = matched(CategoricalDist({0.4, 0.6}), StochasticMatrix::uniform(2, 5), 3);
  EXPECT_NEAR(ambiguity(predictive_factor(flat)), 3.0 * std::log(5.0), 1e-14);
}

TEST(Ambiguity, MutualInformationIdentity) {
  Rng rng(31);
  for (int i = 0; i < 100; ++i) {
    const auto pf = predictive_factor(random_predictive(rng, 4, 3));
    EXPECT_NEAR(mutual_information(pf), entropy_observations(pf) - ambiguity(pf), 1e-12);
  }
}

TEST(PragmaticValue, Examples) {
  const auto bt = matched(CategoricalDist({0.3, 0.7}), StochasticMatrix::from_rows({{0.6, 0.4}, {0.2, 0.8}}), 2);
  const auto pf = predictive_factor(bt);
  EXPECT_NEAR(pragmatic_value(pf, pf[0].q_o), entropy_observations(pf), 1e-14);
  EXPECT_EQ(pragmatic_value(pf, CategoricalDist::point_mass(2, 0)), kInf);
  const auto det = predictive_factor(matched(CategoricalDist({1.0, 0.0}), StochasticMatrix::identity(2), 1));
  EXPECT_EQ(pragmatic_value(det, CategoricalDist::point_mass(2, 1)), kInf);
}

TEST(PragmaticValue, ModelMarginalMatchesEnumeration) {
  Rng rng(9);
  for (int i = 0; i < 30; ++i) {
    const auto bt = random_predictive(rng, 3, 2);
    const auto pf = predictive_factor(bt);
    const auto p = predictive_obs_marginal(bt);
    double total = 0.0;
    for (double x : p) total += x;
    EXPECT_NEAR(total, 1.0, 1e-12);
    // Independent assembly: sum over observation sequences of q(o) (-ln p(o)).
    const std::size_t O = bt.model.num_obs();
    double ref = 0.0;
    for_each_sequence(O, pf.size(), [&](std::span<const std::size_t> o) {
      double q = 1.0;
      std::size_t idx = 0;
      for (std::size_t k = 0; k < pf.size(); ++k) {
        q *= pf[k].q_o[o[k]];
        idx = idx * O + o[k];
      }
      ref -= q * std::log(p[idx]);
    });
    const double v = expected_neg_log(pf, p);
    EXPECT_TRUE(std::isfinite(v));
    EXPECT_NEAR(v, ref, 1e-12);
  }
}

TEST(EfeStandard, Examples) {
  const auto same_rows = predictive_factor(matched(CategoricalDist({0.3, 0.7}),
                                                   StochasticMatrix::from_rows({{0.1, 0.9}, {0.1, 0.9}}), 2));
  const auto ref = CategoricalDist({0.5, 0.5});
  EXPECT_NEAR(efe_standard(same_rows, ref), pragmatic_value(same_rows, ref), 1e-15);

  const auto det = predictive_factor(matched(CategoricalDist({0.3, 0.7}), StochasticMatrix::identity(2), 2));
  EXPECT_NEAR(efe_standard(det, det[0].q_o), entropy_observations(det) - entropy_states(det), 1e-14);
}

TEST(EfeLhs, Examples) {
  const auto bt = matched(CategoricalDist({0.25, 0.75}), StochasticMatrix::identity(2), 3);
  const auto pf = predictive_factor(bt);
  EXPECT_NEAR(efe_lhs(bt, pf), 0.0, 1e-14);

  Rng rng(2);
  for (int i = 0; i < 30; ++i) {
    const auto r = random_predictive(rng, 3, 3);
    const auto f = predictive_factor(r);
    EXPECT_NEAR(efe_lhs(r, f), divergence_split(r).future + ambiguity(f), 1e-15);
  }
  const Hmm det(CategoricalDist::uniform(2), StochasticMatrix::identity(2),
                StochasticMatrix::from_rows({{0.7, 0.3}, {0.4, 0.6}}));
  const auto d = sweep(init_beliefs(det, 2)).beliefs;
  EXPECT_EQ(efe_lhs(d, predictive_factor(d)), divergence_split(d).future);
}

TEST(EfeExact, AlignedDeterministicModelIsZero) {
  const Hmm m(CategoricalDist::point_mass(2, 0), StochasticMatrix::identity(2),
              StochasticMatrix::from_rows({{0, 1}, {1, 0}}));
  const auto bt = sweep(init_beliefs(m, 3)).beliefs;
  EXPECT_EQ(efe_exact(bt, predictive_factor(bt)), 0.0);
}

TEST(EfeExact, RegularizerIdentity) {
  Rng rng(17);
  for (int i = 0; i < 100; ++i) {
    const auto bt = random_predictive(rng, 4, 3);
    const auto pf = predictive_factor(bt);
    EXPECT_NEAR(efe_exact(bt, pf) - entropy_observations(pf), divergence_split(bt).future, 1e-10);
  }
}

TEST(EfeExact, MatchesBruteForce) {
  Rng rng(40);
  for (int i = 0; i < 20; ++i) {
    const auto m = gen::random_hmm(rng, 2, 2);
    const auto bt = sweep(with_observations(init_beliefs(m, 3), gen::random_obs(rng, 2, 1))).beliefs;
    EXPECT_NEAR(efe_exact(bt, predictive_factor(bt)), brute_force_g(bt), 1e-12);
  }
}

TEST(VerifyBounds, InfoAndEfeBoundsHold) {
  Rng rng(99);
  for (int i = 0; i < 200; ++i) {
    const auto r = verify_bounds(random_predictive(rng, 3, 3));
    EXPECT_GE(r.slacks.info, -1e-9);
    EXPECT_GE(r.slacks.efe, -1e-9);
    EXPECT_LE(std::abs(r.slacks.gkl_residual), 1e-9);
  }
}

TEST(VerifyBounds, MatchedModelSimplestSlack) {
  const auto bt = matched(CategoricalDist({0.3, 0.7}), StochasticMatrix::from_rows({{0.8, 0.2}, {0.35, 0.65}}), 2);
  const auto pf = predictive_factor(bt);
  const auto r = verify_bounds(bt);
  EXPECT_NEAR(r.kl_future, 0.0, 1e-15);
  EXPECT_NEAR(r.slacks.simplest, entropy_states(pf) - entropy_observations(pf), 1e-12);
}

TEST(VerifyBounds, SimplestBoundFailsWhenObservationsAreNoisierThanStates) {
  const auto bt = matched(CategoricalDist({1.0, 0.0}), StochasticMatrix::from_rows({{0.5, 0.5}, {0.5, 0.5}}), 1);
  const auto r = verify_bounds(bt);
  EXPECT_NEAR(r.slacks.simplest, -std::log(2.0), 1e-15);
}

TEST(PredictiveObsMarginal, RejectsNonStochasticTransitions) {
  const Hmm m(CategoricalDist::uniform(2), StochasticMatrix::uniform(2, 2), StochasticMatrix::uniform(2, 2));
  auto bt = init_beliefs(m, 2);
  bt.model.log_b[1](0, 0) = -5.0;
  try {
    predictive_obs_marginal(bt);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::BadParams);
  }
}
