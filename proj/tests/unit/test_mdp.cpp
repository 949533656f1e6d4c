#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "gqlab/environments.hpp"
#include "gqlab/errors.hpp"
#include "gqlab/features.hpp"
#include "gqlab/mdp.hpp"
#include "oracles.hpp"

namespace {

using namespace gqlab;

FiniteMdp random_mdp(std::size_t n_states, std::size_t n_actions, double gamma, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::uniform_real_distribution<double> u(0.05, 1.0), r(-1.0, 1.0);
  std::vector<double> p;
  for (std::size_t s = 0; s < n_states; ++s) {
    for (std::size_t a = 0; a < n_actions; ++a) {
      std::vector<double> row(n_states);
      double total = 0.0;
      for (double& v : row) total += (v = u(gen));
      for (double v : row) p.push_back(v / total);
    }
  }
  DenseMatrix reward(n_states, n_actions);
  for (std::size_t s = 0; s < n_states; ++s)
    for (std::size_t a = 0; a < n_actions; ++a) reward(s, a) = r(gen);
  return FiniteMdp(n_states, n_actions, std::move(p), std::move(reward), gamma);
}

TabularPolicy random_policy(std::size_t n_states, std::size_t n_actions, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::uniform_real_distribution<double> u(0.1, 1.0);
  DenseMatrix probs(n_states, n_actions);
  for (std::size_t s = 0; s < n_states; ++s) {
    double total = 0.0;
    for (std::size_t a = 0; a < n_actions; ++a) total += (probs(s, a) = u(gen));
    for (std::size_t a = 0; a < n_actions; ++a) probs(s, a) /= total;
  }
  return TabularPolicy(std::move(probs));
}

std::shared_ptr<const TableFeatures> random_features(std::size_t n_pairs, std::size_t p,
                                                     std::size_t n_states, std::size_t n_actions,
                                                     std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  DenseMatrix phi(n_pairs, p);
  for (std::size_t i = 0; i < n_pairs; ++i)
    for (std::size_t j = 0; j < p; ++j) phi(i, j) = n(gen);
  return std::make_shared<const TableFeatures>("random", n_states, n_actions, std::move(phi));
}

DenseVector random_theta(std::size_t p, std::mt19937_64& gen) {
  std::normal_distribution<double> n(0.0, 2.0);
  DenseVector theta(p);
  for (std::size_t i = 0; i < p; ++i) theta[i] = n(gen);
  return theta;
}

TEST(FiniteMdp, ValidatesRowsAndDiscount) {
  EXPECT_THROW(FiniteMdp(1, 1, {0.9}, DenseMatrix(1, 1), 0.9), InvalidModel);
  EXPECT_THROW(FiniteMdp(1, 1, {1.0}, DenseMatrix(1, 1), 1.0), InvalidModel);
  EXPECT_THROW(FiniteMdp(1, 1, {1.0}, DenseMatrix(1, 1), 0.0), InvalidModel);
  EXPECT_THROW(FiniteMdp(2, 1, {1.2, -0.2, 0.0, 1.0}, DenseMatrix(2, 1), 0.9), InvalidModel);
  EXPECT_THROW(FiniteMdp(1, 1, {1.0, 0.0}, DenseMatrix(1, 1), 0.9), DimensionMismatch);
  EXPECT_NO_THROW(FiniteMdp(1, 1, {1.0}, DenseMatrix(1, 1), 0.5));
}

TEST(TabularPolicy, RowsMustBeDistributions) {
  EXPECT_THROW(TabularPolicy(DenseMatrix{{0.5, 0.6}}), InvalidModel);
  EXPECT_THROW(TabularPolicy(DenseMatrix{{1.5, -0.5}}), InvalidModel);
  const auto pi = TabularPolicy::deterministic(3, 2, 1);
  EXPECT_DOUBLE_EQ(pi.prob(2, 1), 1.0);
  EXPECT_DOUBLE_EQ(pi.prob(2, 0), 0.0);
}

TEST(StationaryDistribution, CounterexampleIsUniform) {
  const auto env = counterexample_env();
  const DenseVector xi = stationary_distribution(env->mdp(), env->behavior());
  ASSERT_EQ(xi.size(), 4u);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(xi[i], 0.25, 1e-12);
}

TEST(StationaryDistribution, SingleAbsorbingState) {
  const FiniteMdp mdp(1, 2, {1.0, 1.0}, DenseMatrix(1, 2), 0.9);
  const DenseVector xi = stationary_distribution(mdp, TabularPolicy::constant(1, {0.3, 0.7}));
  EXPECT_NEAR(xi[0], 0.3, 1e-12);
  EXPECT_NEAR(xi[1], 0.7, 1e-12);
}

TEST(StationaryDistribution, BairdSolvesStationarityEquations) {
  const auto env = baird_star_env();
  const DenseVector xi = stationary_distribution(env->mdp(), env->behavior());
  const DenseVector states = state_marginal(xi, 2);
  // Every state is entered with the same total probability 1/7.
  for (std::size_t s = 0; s < 7; ++s) EXPECT_NEAR(states[s], 1.0 / 7.0, 1e-12);
  const DenseVector next = chain_kernel(env->mdp(), env->behavior()).transpose_times(xi);
  EXPECT_LT((next - xi).norm_inf(), 1e-10);
}

TEST(StationaryDistribution, MatchesBruteForceOnEpisodicChain) {
  const auto env = boyan_chain_env();
  const auto model = oracle::build_reference_model(env->mdp(), env->target(), env->behavior());
  const DenseVector xi = stationary_distribution(env->mdp(), env->behavior());
  for (std::size_t i = 0; i < xi.size(); ++i) EXPECT_NEAR(xi[i], model.xi[i], 1e-10);
  EXPECT_NEAR(xi.sum(), 1.0, 1e-12);
  EXPECT_DOUBLE_EQ(xi[13], 0.0);
}

TEST(StationaryDistribution, ReducibleChainThrows) {
  // Two absorbing states: no unique stationary distribution.
  const FiniteMdp mdp(2, 1, {1.0, 0.0, 0.0, 1.0}, DenseMatrix(2, 1), 0.9);
  EXPECT_THROW(stationary_distribution(mdp, TabularPolicy::uniform(2, 1)), NoConvergence);
}

TEST(BellmanApply, ZeroGivesRewardAndQPiIsFixedPoint) {
  const FiniteMdp mdp = random_mdp(4, 2, 0.9, 1);
  const TabularPolicy pi = random_policy(4, 2, 2);
  const ModelOracle oracle(mdp, pi, pi, tabular_features(4, 2), 0.5, 0.0);
  const DenseVector r = oracle.bellman_apply(DenseVector(8));
  for (std::size_t s = 0; s < 4; ++s)
    for (std::size_t a = 0; a < 2; ++a) EXPECT_DOUBLE_EQ(r[s * 2 + a], mdp.reward(s, a));
  const DenseVector q = action_values(mdp, pi);
  EXPECT_LT((oracle.bellman_apply(q) - q).norm_inf(), 1e-10);
  EXPECT_THROW(oracle.bellman_apply(DenseVector(3)), DimensionMismatch);
}

TEST(BellmanApply, SmallDiscountReturnsReward) {
  const FiniteMdp mdp = random_mdp(3, 2, 1e-12, 4);
  const TabularPolicy pi = TabularPolicy::uniform(3, 2);
  const ModelOracle oracle(mdp, pi, pi, tabular_features(3, 2), 1.0, 0.0);
  const DenseVector q(6, 1000.0);
  const DenseVector out = oracle.bellman_apply(q);
  for (std::size_t x = 0; x < 6; ++x) EXPECT_NEAR(out[x], mdp.reward(x / 2, x % 2), 1e-8);
}

TEST(ClosedForm, MatchesStateActionMatrixOracle) {
  const FiniteMdp mdp = random_mdp(4, 3, 0.9, 7);
  const TabularPolicy pi = random_policy(4, 3, 8), mu = random_policy(4, 3, 9);
  const auto phi = random_features(12, 5, 4, 3, 10);
  const auto model = oracle::build_reference_model(mdp, pi, mu);
  for (double sigma : {0.0, 0.3, 1.0}) {
    for (double lambda : {0.0, 0.6, 1.0}) {
      const ModelOracle o(mdp, pi, mu, phi, sigma, lambda);
      const auto [a, b] = oracle::reference_a_b(model, oracle::to_mat(phi->table()), sigma, lambda);
      EXPECT_LT(oracle::max_abs_diff(a, o.a_matrix()), 1e-9) << sigma << " " << lambda;
      for (std::size_t i = 0; i < b.size(); ++i) EXPECT_NEAR(b[i], o.b_vector()[i], 1e-9);
    }
  }
}

TEST(ClosedForm, MatchesOracleOnEpisodicBoyan) {
  const auto env = boyan_chain_env();
  const auto model = oracle::build_reference_model(env->mdp(), env->target(), env->behavior());
  const ModelOracle o(env->mdp(), env->target(), env->behavior(), env->features(), 0.5, 0.5);
  const auto [a, b] = oracle::reference_a_b(model, oracle::to_mat(o.phi()), 0.5, 0.5);
  EXPECT_LT(oracle::max_abs_diff(a, o.a_matrix()), 1e-9);
  for (std::size_t i = 0; i < b.size(); ++i) EXPECT_NEAR(b[i], o.b_vector()[i], 1e-9);
}

TEST(ClosedForm, OnPolicyTabularOneStep) {
  const FiniteMdp mdp = random_mdp(3, 2, 0.8, 12);
  const TabularPolicy pi = random_policy(3, 2, 13);
  const ModelOracle o(mdp, pi, pi, tabular_features(3, 2), 1.0, 0.0);
  // A = Xi (gamma P^pi - I) with Phi = I.
  const DenseMatrix expected = DenseMatrix::diagonal(o.stationary()) *
                               (discounted_kernel(mdp, pi) - DenseMatrix::identity(6));
  EXPECT_LT((o.a_matrix() - expected).max_abs(), 1e-12);
}

TEST(ClosedForm, BairdHasZeroB) {
  const auto env = baird_star_env();
  for (double sigma : {0.0, 0.5, 1.0}) {
    const ModelOracle o(env->mdp(), env->target(), env->behavior(), env->features(), sigma, 0.9,
                        MetricInverse::Pseudo);
    EXPECT_EQ(o.b_vector().norm_inf(), 0.0);
    const DenseVector theta_star = o.td_fixed_point();
    EXPECT_LT(theta_star.norm_inf(), 1e-12);
    const auto [t, w] = o.ode_fixed_points(DenseVector(8));
    EXPECT_LT(t.norm_inf(), 1e-12);
    EXPECT_LT(w.norm_inf(), 1e-12);
  }
}

TEST(ClosedForm, BairdFeaturesAreRankDeficient) {
  const auto env = baird_star_env();
  EXPECT_EQ(matrix_rank(env->features()->full_matrix()), 7u);
  EXPECT_THROW(ModelOracle(env->mdp(), env->target(), env->behavior(), env->features(), 0.5, 0.0),
               SingularMatrix);
}

TEST(TdFixedPoint, BoyanMspbeVanishes) {
  const auto env = boyan_chain_env();
  const ModelOracle o(env->mdp(), env->target(), env->behavior(), env->features(), 0.5, 0.5);
  const DenseVector theta_star = o.td_fixed_point();
  EXPECT_LT(o.mspbe(theta_star), 1e-12);
  EXPECT_LT(o.mspbe_gradient(theta_star).norm_inf(), 1e-9);
}

TEST(TdFixedPoint, TabularLambdaOneRecoversActionValues) {
  const FiniteMdp mdp = random_mdp(5, 2, 0.9, 21);
  const TabularPolicy pi = random_policy(5, 2, 22);
  const ModelOracle o(mdp, pi, pi, tabular_features(5, 2), 0.4, 1.0);
  const DenseVector q = action_values(mdp, pi);
  const DenseVector theta_star = o.td_fixed_point();
  EXPECT_LT((theta_star - q).norm_inf(), 1e-8);
}

TEST(StateValues, BoyanNearUndiscountedValues) {
  const auto env = boyan_chain_env(0.9999);
  const DenseVector v = state_values(env->mdp(), env->target());
  for (std::size_t s = 0; s < 14; ++s) {
    EXPECT_NEAR(v[s], -2.0 * static_cast<double>(13 - s), 0.05) << "state " << s;
  }
}

TEST(Mspbe, BoyanAtZeroIsQuadraticFormOfB) {
  const auto env = boyan_chain_env();
  const ModelOracle o(env->mdp(), env->target(), env->behavior(), env->features(), 0.5, 0.5);
  const oracle::Mat minv = oracle::inverse(oracle::to_mat(o.m_matrix()));
  const auto& b = o.b_vector();
  double expected = 0.0;
  for (std::size_t i = 0; i < b.size(); ++i)
    for (std::size_t j = 0; j < b.size(); ++j) expected += 0.5 * b[i] * minv[i][j] * b[j];
  EXPECT_NEAR(o.mspbe(DenseVector(4)), expected, 1e-9 * expected);
}

TEST(Mspbe, GradientMatchesCentralDifferences) {
  const FiniteMdp mdp = random_mdp(4, 2, 0.9, 31);
  const ModelOracle o(mdp, random_policy(4, 2, 32), random_policy(4, 2, 33),
                      random_features(8, 3, 4, 2, 34), 0.3, 0.7);
  std::mt19937_64 gen(35);
  for (int trial = 0; trial < 10; ++trial) {
    const DenseVector theta = random_theta(3, gen);
    const DenseVector grad = o.mspbe_gradient(theta);
    for (std::size_t i = 0; i < 3; ++i) {
      const double h = 1e-5;
      const DenseVector up = theta + h * DenseVector::unit(3, i);
      const DenseVector down = theta - h * DenseVector::unit(3, i);
      const double fd = (o.mspbe(up) - o.mspbe(down)) / (2.0 * h);
      EXPECT_NEAR(fd, grad[i], 1e-5 * std::max(1.0, std::abs(grad[i])));
    }
  }
}

TEST(Mspbe, ProjectedResidualEqualsQuadraticForm) {
  for (std::uint64_t seed : {41u, 42u, 43u}) {
    const FiniteMdp mdp = random_mdp(4, 2, 0.85, seed);
    const ModelOracle o(mdp, random_policy(4, 2, seed + 100), random_policy(4, 2, seed + 200),
                        random_features(8, 3, 4, 2, seed + 300), 0.6, 0.4);
    std::mt19937_64 gen(seed);
    for (int trial = 0; trial < 10; ++trial) {
      const DenseVector theta = random_theta(3, gen);
      EXPECT_NEAR(o.mspbe_projected(theta), o.mspbe(theta), 1e-9 * std::max(1.0, o.mspbe(theta)));
    }
  }
}

TEST(Projection, IsIdempotentAndFixesFeatures) {
  const FiniteMdp mdp = random_mdp(5, 2, 0.9, 51);
  const ModelOracle o(mdp, random_policy(5, 2, 52), random_policy(5, 2, 53),
                      random_features(10, 4, 5, 2, 54), 0.5, 0.5);
  const DenseMatrix pi = o.projection();
  EXPECT_LT((pi * pi - pi).max_abs(), 1e-9);
  EXPECT_LT((pi * o.phi() - o.phi()).max_abs(), 1e-9);
}

TEST(OdeFixedPoints, BoyanFieldsVanish) {
  const auto env = boyan_chain_env();
  const ModelOracle o(env->mdp(), env->target(), env->behavior(), env->features(), 0.5, 0.0);
  const auto [theta_star, omega_star] = o.ode_fixed_points(o.td_fixed_point());
  EXPECT_LT(omega_star.norm_inf(), 1e-10);
  EXPECT_LT(o.ode_theta_field(theta_star).norm_inf(), 1e-10);
  EXPECT_LT(o.ode_omega_field(omega_star, theta_star).norm_inf(), 1e-10);
}

TEST(OnPolicy, BoyanSymmetrizedAIsNegativeDefinite) {
  const auto env = boyan_chain_env();
  for (double lambda : {0.0, 0.5, 0.9}) {
    const ModelOracle o(env->mdp(), env->target(), env->behavior(), env->features(), 0.5, lambda);
    const auto ev = symmetric_eigenvalues(o.a_matrix().symmetric_part());
    EXPECT_LT(ev.back(), 0.0);
  }
}

TEST(MdpFile, ParsesDefinition) {
  const auto def = parse_mdp_definition(R"({
    "name": "two",
    "n_states": 2, "n_actions": 2, "gamma": 0.9,
    "transitions": [[[1, 0], [0, 1]], [[1, 0], [0, 1]]],
    "rewards": [[0, 1], [0, 1]],
    "target": [[0, 1], [0, 1]],
    "behavior": [[0.5, 0.5], [0.5, 0.5]],
    "features": "counterexample"
  })");
  EXPECT_EQ(def.name, "two");
  EXPECT_EQ(def.mdp->num_pairs(), 4u);
  EXPECT_DOUBLE_EQ(def.mdp->reward(1, 1), 1.0);
  EXPECT_EQ(def.features->name(), "counterexample");
  ASSERT_TRUE(def.target.has_value());
  EXPECT_DOUBLE_EQ(def.target->prob(0, 1), 1.0);
}

TEST(MdpFile, DefaultsToTabularFeatures) {
  const auto def = parse_mdp_definition(
      R"({"n_states": 1, "n_actions": 1, "gamma": 0.5, "transitions": [[[1]]], "rewards": [[2]]})");
  EXPECT_EQ(def.features->dimension(), 1u);
  EXPECT_FALSE(def.behavior.has_value());
}

TEST(MdpFile, RejectsMalformedInput) {
  EXPECT_THROW(parse_mdp_definition("{not json"), ConfigError);
  EXPECT_THROW(parse_mdp_definition(R"({"n_states": 1})"), ConfigError);
  EXPECT_THROW(parse_mdp_definition(R"({"n_states": 1, "n_actions": 1, "gamma": 0.5,
                                       "transitions": [[[0.5]]], "rewards": [[0]]})"),
               InvalidModel);
  EXPECT_THROW(parse_mdp_definition(R"({"n_states": 1, "n_actions": 1, "gamma": 0.5,
                                       "transitions": [[[1]]], "rewards": [[0]],
                                       "features": "baird"})"),
               ConfigError);
  EXPECT_THROW(load_mdp_file("/nonexistent/mdp.json"), IoError);
}

}  // namespace
