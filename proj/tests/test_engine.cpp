#include <gtest/gtest.h>

#include <cmath>

#include "aif/engine.hpp"
#include "gen.hpp"

using namespace aif;

namespace {

BeliefTrajectory with_q(BeliefTrajectory bt, std::size_t tau, CategoricalDist q) {
  bt.q[tau] = std::move(q);
  return bt;
}

struct Instance {
  Hmm model;
  std::vector<std::size_t> obs;
  std::size_t T;
};

Instance random_instance(Rng& rng, std::size_t max_s, std::size_t max_t, bool full) {
  const std::size_t S = gen::uniform_int(rng, 2, max_s);
  const std::size_t O = gen::uniform_int(rng, 2, max_s);
  const std::size_t T = gen::uniform_int(rng, 1, max_t);
  const std::size_t t = full ? T : gen::uniform_int(rng, 0, T);
  auto m = gen::random_hmm(rng, S, O);
  auto traj = sample_trajectory(m, T, rng.next_u64());
  traj.observations.resize(t);
  return {std::move(m), traj.observations, T};
}

}  // namespace

TEST(InitBeliefs, UniformFutureAndPinnedStart) {
  const Hmm m(CategoricalDist({0.2, 0.3, 0.5}), StochasticMatrix::uniform(3, 2), StochasticMatrix::uniform(3, 3));
  const auto bt = init_beliefs(m, 2);
  EXPECT_EQ(bt.q[0], m.p0);
  EXPECT_EQ(bt.q[1], CategoricalDist::uniform(3));
  EXPECT_EQ(bt.q[2], CategoricalDist::uniform(3));
  EXPECT_EQ(bt.present(), 0u);
  EXPECT_THROW(init_beliefs(m, 0), Error);
}

TEST(InitBeliefs, DivergenceZeroForUniformModel) {
  const Hmm m(CategoricalDist::uniform(3), StochasticMatrix::uniform(3, 2), StochasticMatrix::uniform(3, 3));
  EXPECT_NEAR(divergence(init_beliefs(m, 4)), 0.0, 1e-15);
}

TEST(PredictionUpdate, IdentityTransitionsCopyNeighbours) {
  const Hmm m(CategoricalDist::point_mass(3, 1), StochasticMatrix::uniform(3, 2), StochasticMatrix::identity(3));
  auto bt = with_q(init_beliefs(m, 3), 2, CategoricalDist::point_mass(3, 1));
  bt = prediction_update(bt, 1);
  EXPECT_EQ(bt.q[1], CategoricalDist::point_mass(3, 1));
}

TEST(PredictionUpdate, UniformTransitionsGiveUniform) {
  Rng rng(3);
  const Hmm m(gen::random_dist(rng, 3), StochasticMatrix::uniform(3, 2), StochasticMatrix::uniform(3, 3));
  auto bt = with_q(init_beliefs(m, 3), 3, gen::random_dist(rng, 3));
  bt = prediction_update(bt, 2);
  for (int s = 0; s < 3; ++s) EXPECT_NEAR(bt.q[2][s], 1.0 / 3.0, 1e-15);
}

TEST(PredictionUpdate, LastStepFollowsTransitionRow) {
  const Hmm m(CategoricalDist::point_mass(2, 0), StochasticMatrix::uniform(2, 2),
              StochasticMatrix::from_rows({{0.9, 0.1}, {0.2, 0.8}}));
  const auto bt = prediction_update(init_beliefs(m, 1), 1);
  EXPECT_NEAR(bt.q[1][0], 0.9, 1e-15);
  EXPECT_NEAR(bt.q[1][1], 0.1, 1e-15);
}

TEST(PredictionUpdate, RangeChecked) {
  const Hmm m(CategoricalDist::uniform(2), StochasticMatrix::uniform(2, 2), StochasticMatrix::uniform(2, 2));
  auto bt = advance(init_beliefs(m, 2), 0);
  EXPECT_THROW(prediction_update(bt, 1), Error);
  EXPECT_THROW(prediction_update(bt, 3), Error);
  EXPECT_THROW(retrodiction_update(bt, 0), Error);
  EXPECT_THROW(retrodiction_update(bt, 2), Error);
}

TEST(RetrodictionUpdate, Examples) {
  const Hmm m(CategoricalDist::uniform(2), StochasticMatrix::from_rows({{0.7, 0.3}, {0.1, 0.9}}),
              StochasticMatrix::uniform(2, 2));
  const auto bt = retrodiction_update(advance(init_beliefs(m, 2), 1), 1);
  EXPECT_NEAR(bt.q[1][0], 0.25, 1e-15);
  EXPECT_NEAR(bt.q[1][1], 0.75, 1e-15);

  const Hmm det(CategoricalDist::uniform(3), StochasticMatrix::identity(3),
                StochasticMatrix::from_rows({{0.5, 0.25, 0.25}, {0.2, 0.6, 0.2}, {0.1, 0.1, 0.8}}));
  const auto b2 = retrodiction_update(advance(init_beliefs(det, 2), 2), 1);
  EXPECT_EQ(b2.q[1], CategoricalDist::point_mass(3, 2));
}

TEST(Sweep, ImpossibleObservationIsContradiction) {
  const Hmm m(CategoricalDist::point_mass(2, 0), StochasticMatrix::identity(2), StochasticMatrix::identity(2));
  try {
    sweep(advance(init_beliefs(m, 1), 1));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ModelContradiction);
  }
}

TEST(RetrodictionUpdate, ZeroLikelihoodEverywhereIsContradiction) {
  const Hmm m(CategoricalDist::uniform(2), StochasticMatrix::from_rows({{1, 0}, {1, 0}}), StochasticMatrix::uniform(2, 2));
  try {
    retrodiction_update(advance(init_beliefs(m, 1), 1), 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ModelContradiction);
  }
}

TEST(PredictionUpdate, HardZerosResolvedByLeastBlockedMass) {
  // Every state of q_1 hits a zero of B; state 0 hits the least mass.
  const Hmm m(CategoricalDist::point_mass(3, 0), StochasticMatrix::uniform(3, 2), StochasticMatrix::identity(3));
  const auto bt = prediction_update(init_beliefs(m, 2), 1);
  EXPECT_EQ(bt.q[1], CategoricalDist::point_mass(3, 0));
}

TEST(Sweep, DeterministicChainSettlesAfterOnePass) {
  const Hmm m(CategoricalDist::point_mass(3, 0), StochasticMatrix::uniform(3, 2), StochasticMatrix::identity(3));
  std::vector<double> pass_div;
  const auto r = sweep(init_beliefs(m, 3), {}, [&](std::size_t, std::size_t, const BeliefTrajectory& bt, double d) {
    pass_div.push_back(d);
    if (pass_div.size() == 2) {
      for (const auto& q : bt.q) EXPECT_EQ(q, CategoricalDist::point_mass(3, 0));
    }
  });
  EXPECT_TRUE(r.report.converged);
  EXPECT_EQ(pass_div.at(1), 0.0);
  EXPECT_EQ(r.report.divergence_after, 0.0);
}

TEST(Sweep, SurprisalBoundAndGap) {
  const Hmm m(CategoricalDist({0.5, 0.5}), StochasticMatrix::from_rows({{0.8, 0.2}, {0.3, 0.7}}),
              StochasticMatrix::from_rows({{0.85, 0.15}, {0.25, 0.75}}));
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const auto traj = sample_trajectory(m, 3, seed);
    const auto r = sweep(with_observations(init_beliefs(m, 3), traj.observations));
    const double evidence = exact_inference(m, traj.observations, 3).evidence;
    EXPECT_GE(r.report.divergence_after, -std::log(evidence) - 1e-9);
    EXPECT_NEAR(r.report.divergence_after + std::log(evidence), gen::enumerated_posterior_kl(r.beliefs, evidence),
                1e-9);
  }
}

TEST(Sweep, PerUpdateDivergenceNonIncreasing) {
  Rng rng(101);
  for (int i = 0; i < 100; ++i) {
    const auto inst = random_instance(rng, 4, 6, false);
    const auto bt = with_observations(init_beliefs(inst.model, inst.T), inst.obs);
    const auto r = sweep(bt);
    double prev = r.report.divergence_before;
    for (double d : r.report.per_update_divergences) {
      EXPECT_LE(d, prev + 1e-10);
      prev = d;
    }
  }
}

TEST(Divergence, MatchedIndependentModelIsZero) {
  const CategoricalDist row({0.1, 0.6, 0.3});
  Matrix B(3, 3);
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) B(r, c) = row[c];
  const Hmm m(CategoricalDist::uniform(3), StochasticMatrix::uniform(3, 2), StochasticMatrix(B));
  auto bt = init_beliefs(m, 3);
  for (std::size_t tau = 1; tau <= 3; ++tau) bt.q[tau] = row;
  EXPECT_NEAR(divergence(bt), 0.0, 1e-15);
}

TEST(Divergence, MatchesEnumeration) {
  Rng rng(8);
  for (int i = 0; i < 60; ++i) {
    auto inst = random_instance(rng, 3, 4, i % 2 == 0);
    auto bt = with_observations(init_beliefs(inst.model, inst.T), inst.obs);
    for (std::size_t tau = 1; tau <= inst.T; ++tau) bt.q[tau] = gen::random_dist(rng, inst.model.num_states());
    EXPECT_NEAR(divergence(bt), gen::enumerated_divergence(bt), 1e-10);
  }
}

TEST(DivergenceSplit, PartsAndEdges) {
  Rng rng(21);
  const auto m = gen::random_hmm(rng, 3, 3);
  auto bt = init_beliefs(m, 4);
  for (std::size_t tau = 1; tau <= 4; ++tau) bt.q[tau] = gen::random_dist(rng, 3);
  EXPECT_EQ(divergence_split(bt).past, 0.0);

  const auto mid = with_observations(bt, std::vector<std::size_t>{0, 2});
  const auto split = divergence_split(mid);
  EXPECT_NEAR(split.past + split.future, divergence(mid), 1e-15);

  const auto full = with_observations(bt, std::vector<std::size_t>{0, 2, 1, 1});
  EXPECT_EQ(divergence_split(full).future, 0.0);
}

TEST(Advance, AppendsAndGuardsHorizon) {
  const Hmm m(CategoricalDist::uniform(2), StochasticMatrix::uniform(2, 3), StochasticMatrix::uniform(2, 2));
  auto bt = advance(init_beliefs(m, 1), 2);
  EXPECT_EQ(bt.obs, (std::vector<std::size_t>{2}));
  EXPECT_THROW(advance(bt, 0), Error);
  EXPECT_THROW(advance(init_beliefs(m, 1), 3), Error);
}

TEST(Advance, FilteringLeavesPastUntouched) {
  Rng rng(4);
  const auto m = gen::random_hmm(rng, 3, 3);
  auto bt = sweep(with_observations(init_beliefs(m, 5), std::vector<std::size_t>{1, 0})).beliefs;
  const auto before = bt.q;
  bt = sweep(advance(std::move(bt), 2), {SweepMode::Filtering}).beliefs;
  EXPECT_EQ(bt.q[0], before[0]);
  EXPECT_EQ(bt.q[1], before[1]);
  EXPECT_EQ(bt.q[2], before[2]);
}

TEST(Advance, SmoothingDominatesFiltering) {
  Rng rng(55);
  for (int i = 0; i < 100; ++i) {
    const std::size_t S = gen::uniform_int(rng, 2, 4);
    const std::size_t T = gen::uniform_int(rng, 2, 6);
    const std::size_t t = gen::uniform_int(rng, 1, T - 1);
    const auto m = gen::random_hmm(rng, S, gen::uniform_int(rng, 2, 4));
    const auto obs = gen::random_obs(rng, m.num_obs(), t);
    std::vector<std::size_t> prefix(obs.begin(), obs.end() - 1);
    const auto base = sweep(with_observations(init_beliefs(m, T), prefix)).beliefs;
    const auto next = advance(base, obs.back());
    const double f = sweep(next, {SweepMode::Filtering}).report.divergence_after;
    const double s = sweep(next, {SweepMode::Smoothing}).report.divergence_after;
    EXPECT_LE(s, f + 1e-10);
  }
}

TEST(SingleLatent, ExactForPointMassStart) {
  Rng rng(31);
  for (int i = 0; i < 50; ++i) {
    const auto r = gen::random_hmm(rng, 4, 3);
    const Hmm m(CategoricalDist::point_mass(4, gen::uniform_int(rng, 0, 3)), r.A, r.B);
    const std::vector<std::size_t> obs{gen::uniform_int(rng, 0, 2)};
    const auto bt = sweep(with_observations(init_beliefs(m, 1), obs)).beliefs;
    const auto exact = exact_inference(m, obs, 1);
    for (std::size_t s = 0; s < 4; ++s) EXPECT_NEAR(bt.q[1][s], exact.marginals[1][s], 1e-12);
  }
}

TEST(SingleLatent, DiffuseStartGivesGeometricPrediction) {
  const Hmm m(CategoricalDist({0.5, 0.5}), StochasticMatrix::from_rows({{0.8, 0.2}, {0.3, 0.7}}),
              StochasticMatrix::from_rows({{0.9, 0.1}, {0.2, 0.8}}));
  const std::vector<std::size_t> obs{0};
  const auto bt = sweep(with_observations(init_beliefs(m, 1), obs)).beliefs;
  // Optimum: softmax of E_p0[ln B(., s)] + ln A(s, o), not the exact posterior.
  std::vector<double> lw(2);
  for (std::size_t s = 0; s < 2; ++s)
    lw[s] = 0.5 * std::log(m.B(0, s)) + 0.5 * std::log(m.B(1, s)) + std::log(m.A(s, 0));
  const auto want = softmax(LogWeights{lw});
  EXPECT_NEAR(bt.q[1][0], want[0], 1e-12);
  EXPECT_GT(std::abs(bt.q[1][0] - exact_inference(m, obs, 1).marginals[1][0]), 1e-3);
}
