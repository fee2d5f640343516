#include <gtest/gtest.h>

#include <Eigen/Dense>

#include <random>

#include "oracle.hpp"
#include "test_util.hpp"

TEST(Oracle, BruteForceWorkedExample) {
  const auto p = oracle::brute_force_project({3, 1, 0}, 2);
  EXPECT_EQ(p.k0, 1);
  EXPECT_EQ(p.k1, 3);
  EXPECT_NEAR(p.lambda, 7.0 / 3, 1e-15);
  EXPECT_NEAR(p.theta, -2.0 / 3, 1e-15);
  EXPECT_GT(p.min_slack(), 0.0);
  const auto q = oracle::dense_i_minus_j(p, 2);
  Eigen::Matrix3d expected;
  expected << 2, 1, 1, 1, 2, -1, 1, -1, 2;
  EXPECT_LE((q - expected / 3.0).cwiseAbs().maxCoeff(), 1e-14);
  EXPECT_THROW(oracle::brute_force_project({1.0}, 2), std::invalid_argument);
}

TEST(Oracle, BruteForceIsFeasibleAndOptimal) {
  // The brute-force answer is feasible and no random feasible point is closer.
  std::mt19937_64 rng(71);
  for (int t = 0; t < 300; ++t) {
    const auto m = static_cast<std::size_t>(testutil::uniform_int(rng, 1, 12));
    const auto y = testutil::normal_vector(rng, m, 2.0);
    const long k = testutil::uniform_int(rng, 1, static_cast<long>(m));
    const auto p = oracle::brute_force_project(y, k);
    auto sorted = p.ybar;
    std::sort(sorted.begin(), sorted.end(), std::greater<>());
    double tk = 0;
    for (long i = 0; i < k; ++i) tk += sorted[static_cast<std::size_t>(i)];
    ASSERT_LE(tk, 1e-12);
    double best = 0;
    for (std::size_t i = 0; i < m; ++i) best += (y[i] - p.ybar[i]) * (y[i] - p.ybar[i]);
    for (int s = 0; s < 50; ++s) {
      auto z = testutil::normal_vector(rng, m, 2.0);
      auto zs = z;
      std::sort(zs.begin(), zs.end(), std::greater<>());
      double zk = 0;
      for (long i = 0; i < k; ++i) zk += zs[static_cast<std::size_t>(i)];
      if (zk > 0) {
        for (auto& v : z) v -= zk / static_cast<double>(k);
      }
      double d = 0;
      for (std::size_t i = 0; i < m; ++i) d += (y[i] - z[i]) * (y[i] - z[i]);
      ASSERT_GE(d, best - 1e-12);
    }
  }
}

TEST(Oracle, AnalyticIntercept) {
  EXPECT_EQ(oracle::analytic_qr_intercept({4, 3, 2, 1}, 0.75), 4.0);
  EXPECT_EQ(oracle::analytic_qr_intercept({1, 2, 3, 4}, 0.5), 3.5);
  EXPECT_THROW(oracle::analytic_qr_intercept({1, 2, 3, 4}, 0.3), std::invalid_argument);
}

TEST(Oracle, VertexEnumerationAndSubgradientAgree) {
  std::mt19937_64 rng(72);
  for (int t = 0; t < 5; ++t) {
    const long m = 30;
    Eigen::MatrixXd A = Eigen::MatrixXd::Random(m, 2);
    Eigen::VectorXd b(m);
    for (long i = 0; i < m; ++i) b[i] = A(i, 0) - 2 * A(i, 1) + testutil::normal_vector(rng, 1)[0];
    const long k = 9;
    const double exact = oracle::qr_vertex_minimum(A, b, k);
    const auto sg = oracle::subgradient_reference(A, b, 1.0 - 9.0 / 30.0, 20000);
    EXPECT_GE(sg.best_value, exact - 1e-12);
    EXPECT_NEAR(sg.best_value, exact, 1e-3 * (1 + std::abs(exact)));
    EXPECT_NEAR(oracle::qr_value_and_subgradient(A, b, k, sg.best_x).first, sg.best_value, 1e-12);
  }
}
