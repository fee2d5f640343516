#include <gtest/gtest.h>

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <random>
#include <vector>

#include "sqalm/model.hpp"
#include "test_util.hpp"

using sqalm::Index;
using Vec = sqalm::Vector<double>;
using Mat = sqalm::RowMatrix<double>;

namespace {

std::span<const double> sp(const Vec& v) { return {v.data(), static_cast<std::size_t>(v.size())}; }

Vec eig(const std::vector<double>& v) { return Eigen::Map<const Vec>(v.data(), static_cast<Index>(v.size())); }

sqalm::Problem<double> tiny(double sign, Index k) {
  sqalm::Problem<double> p;
  p.objective = sqalm::Objective<double>::linear(Vec::Constant(2, sign));
  p.blocks.push_back({Mat::Identity(2, 2), Vec::Zero(2), k});
  p.box = sqalm::Box<double>::uniform(2, -1, 1);
  p.validate();
  return p;
}

// Random element of the polar cone of B_k: a scaled residual v - proj(v).
Vec polar_element(std::mt19937_64& rng, Index m, Index k) {
  auto v = testutil::normal_vector(rng, static_cast<std::size_t>(m), 3.0);
  const auto p = sqalm::project_topk(v, k);
  Vec w(m);
  for (Index i = 0; i < m; ++i) w[i] = v[static_cast<std::size_t>(i)] - p.ybar[static_cast<std::size_t>(i)];
  return w;
}

}  // namespace

TEST(Objective, Examples) {
  const auto lin = sqalm::Objective<double>::linear(Vec{{1.0, 2.0}});
  EXPECT_DOUBLE_EQ(sqalm::objective_value(lin, Vec{{1.0, 1.0}}), 3.0);
  EXPECT_EQ(sqalm::objective_grad(lin, Vec{{1.0, 1.0}}), (Vec{{1.0, 2.0}}));
  EXPECT_EQ(sqalm::objective_hess_diag(lin), Vec::Zero(2));
  const auto quad = sqalm::Objective<double>::diag_quadratic(Vec{{2.0, 0.0}}, Vec{{0.0, 1.0}});
  EXPECT_DOUBLE_EQ(sqalm::objective_value(quad, Vec{{1.0, 1.0}}), 2.0);
  EXPECT_EQ(sqalm::objective_grad(quad, Vec{{1.0, 1.0}}), (Vec{{2.0, 1.0}}));
  EXPECT_THROW(sqalm::objective_value(quad, Vec(Vec::Zero(3))), std::invalid_argument);
  EXPECT_THROW(sqalm::Objective<double>::diag_quadratic(Vec{{-1.0}}, Vec{{0.0}}), std::invalid_argument);
}

TEST(Objective, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(31);
  for (int t = 0; t < 50; ++t) {
    const Index n = testutil::uniform_int(rng, 1, 20);
    const Vec h = eig(testutil::normal_vector(rng, static_cast<std::size_t>(n))).cwiseAbs();
    const Vec c = eig(testutil::normal_vector(rng, static_cast<std::size_t>(n)));
    const auto f = sqalm::Objective<double>::diag_quadratic(h, c);
    const Vec x = eig(testutil::normal_vector(rng, static_cast<std::size_t>(n)));
    const Vec g = sqalm::objective_grad(f, x);
    Vec fd(n);
    const double step = 1e-5;
    for (Index i = 0; i < n; ++i) {
      Vec xp = x, xm = x;
      xp[i] += step;
      xm[i] -= step;
      fd[i] = (sqalm::objective_value(f, xp) - sqalm::objective_value(f, xm)) / (2 * step);
    }
    ASSERT_LE((fd - g).norm(), 1e-8 * (1 + g.norm()));
  }
}

TEST(Residuals, ExactKktTupleOfTinyInstance) {
  const auto p = tiny(1.0, 1);
  const Vec x{{-1.0, -1.0}};
  const auto r = sqalm::kkt_residuals<double>(p, x, x, x, Vec::Zero(2), Vec{{-1.0, -1.0}});
  EXPECT_LE(r.eta, 1e-12);
  EXPECT_DOUBLE_EQ(r.obj_p, -2.0);
  EXPECT_DOUBLE_EQ(r.obj_d, -2.0);
  EXPECT_EQ(r.eta, std::max({r.eta_p, r.eta_d, r.eta_r}));
}

TEST(Residuals, ZeroDualsGiveRelativeCostNorm) {
  const auto p = tiny(1.0, 1);
  const Vec x{{-0.5, -0.25}};
  const auto r = sqalm::kkt_residuals<double>(p, x, x, x, Vec::Zero(2), Vec::Zero(2));
  const double cn = std::sqrt(2.0);
  EXPECT_NEAR(r.eta_d, cn / (1 + cn), 1e-15);
  EXPECT_EQ(r.eta_p, 0.0);
}

TEST(Residuals, PrimalTermsDetectViolations) {
  const auto p = tiny(1.0, 1);
  const Vec x{{0.5, -1.0}};
  // y = Ax is not in B_1, z outside the box, x != z.
  const Vec z{{2.0, -1.0}};
  const auto r = sqalm::kkt_residuals<double>(p, x, x, z, Vec::Zero(2), Vec{{-1.0, -1.0}});
  EXPECT_GT(r.eta_p, 0.1);
  EXPECT_GE(r.eta_d, 0.0);
  EXPECT_GE(r.eta_r, 0.0);
  EXPECT_THROW(sqalm::kkt_residuals<double>(p, x, Vec::Zero(3), z, Vec::Zero(2), Vec::Zero(2)),
               std::invalid_argument);
}

TEST(Residuals, InfeasibleDualGivesInfiniteGap) {
  const auto p = tiny(1.0, 1);
  const Vec x{{-1.0, -1.0}};
  const auto r = sqalm::kkt_residuals<double>(p, x, x, x, Vec{{-1.0, 0.0}}, Vec::Zero(2));
  EXPECT_TRUE(std::isinf(r.eta_r));
}

TEST(Dual, BoxSupport) {
  const auto box = sqalm::Box<double>::uniform(3, -1, 1);
  EXPECT_DOUBLE_EQ(sqalm::box_support(box, Vec{{1.0, -2.0, 0.5}}), 3.5);
  auto half = sqalm::Box<double>::uniform(2, 0, 1);
  half.upper[1] = std::numeric_limits<double>::infinity();
  EXPECT_DOUBLE_EQ(sqalm::box_support(half, Vec{{1.0, -5.0}}), 1.0);
  EXPECT_TRUE(std::isinf(sqalm::box_support(half, Vec{{1.0, 5.0}})));
  const auto free = sqalm::Box<double>::unbounded(2);
  EXPECT_EQ(sqalm::box_support(free, Vec(Vec::Zero(2))), 0.0);
}

TEST(Dual, PolarCone) {
  // Scaled subgradients of T_k are members.
  std::mt19937_64 rng(32);
  for (int t = 0; t < 500; ++t) {
    const Index m = testutil::uniform_int(rng, 1, 30);
    const Index k = testutil::uniform_int(rng, 1, m);
    const Vec w = polar_element(rng, m, k);
    ASSERT_TRUE(sqalm::in_polar_cone<double>(sp(w), k));
    // Membership means w'y <= 0 on B_k; check against random feasible y.
    const auto y0 = testutil::normal_vector(rng, static_cast<std::size_t>(m), 3.0);
    const Vec y = eig(sqalm::project_topk(y0, k).ybar);
    ASSERT_LE(w.dot(y), 1e-9 * (1 + w.norm() * y.norm()));
  }
  const Vec neg{{1.0, -0.5}};
  EXPECT_FALSE(sqalm::in_polar_cone<double>(sp(neg), 1));
  const Vec peaked{{3.0, 1.0, 0.0}};
  EXPECT_FALSE(sqalm::in_polar_cone<double>(sp(peaked), 2));
  EXPECT_TRUE(sqalm::in_polar_cone<double>(sp(peaked), 1));
  const Vec flat{{1.0, 1.0, 1.0}};
  EXPECT_TRUE(sqalm::in_polar_cone<double>(sp(flat), 3));
}

TEST(Dual, WeakDuality) {
  std::mt19937_64 rng(33);
  int finite = 0;
  for (int t = 0; t < 400; ++t) {
    const Index n = testutil::uniform_int(rng, 1, 6);
    const bool linear = t % 2 == 0;
    sqalm::Problem<double> p;
    const Vec c = eig(testutil::normal_vector(rng, static_cast<std::size_t>(n)));
    p.objective = linear ? sqalm::Objective<double>::linear(c)
                         : sqalm::Objective<double>::diag_quadratic(
                               eig(testutil::normal_vector(rng, static_cast<std::size_t>(n))).cwiseAbs(), c);
    p.box = sqalm::Box<double>::uniform(n, -2, 2);
    const Vec x = Vec::Random(n) * 2;
    const Index blocks = testutil::uniform_int(rng, 1, 3);
    Vec lambda(0);
    for (Index l = 0; l < blocks; ++l) {
      const Index m = testutil::uniform_int(rng, 1, 8);
      const Index k = testutil::uniform_int(rng, 1, m);
      const Mat A = Mat::Random(m, n);
      const auto w0 = testutil::normal_vector(rng, static_cast<std::size_t>(m), 2.0);
      const Vec w = eig(sqalm::project_topk(w0, k).ybar);
      p.blocks.push_back({A, w - A * x, k});
      const Vec lam = polar_element(rng, m, k);
      Vec grown(lambda.size() + m);
      grown << lambda, lam;
      lambda = grown;
    }
    p.validate();
    Vec mu = eig(testutil::normal_vector(rng, static_cast<std::size_t>(n), 2.0));
    // A linear objective has a finite conjugate only where c + A'lambda + mu = 0.
    if (linear) mu = -c - sqalm::constraint_adjoint(p, lambda);
    const double dual = sqalm::dual_objective(p, lambda, mu);
    if (!std::isfinite(dual)) continue;
    ++finite;
    const double primal = sqalm::objective_value(p.objective, x);
    const double scale = 1 + std::abs(primal) + std::abs(dual);
    ASSERT_LE(dual, primal + 1e-10 * scale) << "trial " << t;
  }
  EXPECT_GT(finite, 300);
}

TEST(Dual, NegativePolarBreaksDuality) {
  // With lambda in the polar cone the Lagrangian term lambda'(Ax+b) is
  // nonpositive on the feasible set; flipping its sign gives a "dual" value
  // above the primal optimum of the tiny instance.
  const auto p = tiny(1.0, 1);
  const Vec lam{{1.0, 0.0}};
  const Vec mu{{-2.0, -1.0}};
  EXPECT_LE(sqalm::dual_objective(p, lam, mu), -2.0);
  EXPECT_EQ(sqalm::dual_objective(p, Vec(-lam), mu), -std::numeric_limits<double>::infinity());
}

TEST(Superquantile, ConsistentWithTopkSum) {
  std::mt19937_64 rng(34);
  for (int t = 0; t < 500; ++t) {
    const auto m = static_cast<std::size_t>(testutil::uniform_int(rng, 1, 40));
    const auto x = t % 3 == 0 ? testutil::tied_vector(rng, m) : testutil::normal_vector(rng, m);
    const Index k = testutil::uniform_int(rng, 1, static_cast<long>(m));
    const std::span<const double> xs(x);
    const double tk = sqalm::topk_sum(xs, k);
    const double q = sqalm::superquantile(xs, k);
    ASSERT_NEAR(q * static_cast<double>(k), tk, 1e-10 * (1 + std::abs(tk)));
    ASSERT_EQ(tk <= 0, q <= 0);
    // The threshold form is minimized at the k-th largest value.
    for (double shift : {-1.0, -0.1, 0.1, 1.0}) {
      ASSERT_GE(sqalm::superquantile_at(xs, k, x[0] + shift), q - 1e-12);
    }
  }
}

TEST(Problem, ValidateRejectsBadShapes) {
  auto p = tiny(1.0, 1);
  p.blocks[0].k = 3;
  EXPECT_THROW(p.validate(), std::invalid_argument);
  p = tiny(1.0, 1);
  p.blocks[0].b = Vec::Zero(3);
  EXPECT_THROW(p.validate(), std::invalid_argument);
  p = tiny(1.0, 1);
  p.box = sqalm::Box<double>::uniform(3, -1, 1);
  EXPECT_THROW(p.validate(), std::invalid_argument);
  p = tiny(1.0, 1);
  p.box.lower[0] = 2;
  EXPECT_THROW(p.validate(), std::invalid_argument);
}
