#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "oracle.hpp"
#include "sqalm/projection.hpp"
#include "test_util.hpp"

using sqalm::Index;

namespace {

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double d = 0;
  for (std::size_t i = 0; i < a.size(); ++i) d = std::max(d, std::abs(a[i] - b[i]));
  return d;
}

double norm2(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

}  // namespace

TEST(ProjectTopk, WorkedExample) {
  const auto p = sqalm::project_topk(std::vector<double>{3, 1, 0}, 2);
  EXPECT_NEAR(p.ybar[0], 2.0 / 3, 1e-15);
  EXPECT_NEAR(p.ybar[1], -2.0 / 3, 1e-15);
  EXPECT_NEAR(p.ybar[2], -2.0 / 3, 1e-15);
  EXPECT_EQ(p.pair, (sqalm::IndexPair{1, 3}));
  EXPECT_NEAR(p.lambda, 7.0 / 3, 1e-15);
  EXPECT_NEAR(p.theta, -2.0 / 3, 1e-15);
  const auto mu = p.beta_multipliers();
  ASSERT_EQ(mu.size(), 2u);
  EXPECT_NEAR(mu[0], 5.0 / 7, 1e-15);
  EXPECT_NEAR(mu[1], 2.0 / 7, 1e-15);
}

TEST(ProjectTopk, FeasibleInputIsUnchanged) {
  const auto p = sqalm::project_topk(std::vector<double>{-1, -2}, 1);
  EXPECT_EQ(p.ybar, (std::vector<double>{-1, -2}));
  EXPECT_EQ(p.lambda, 0.0);
  EXPECT_TRUE(p.interior());
}

TEST(ProjectTopk, BoundaryInputIsUnchanged) {
  const auto p = sqalm::project_topk(std::vector<double>{1, -1, 0.5}, 2);  // T_2 = 1.5 > 0
  EXPECT_GT(p.lambda, 0.0);
  const auto q = sqalm::project_topk(std::vector<double>{1, -1, -2}, 2);  // T_2 = 0
  EXPECT_EQ(q.lambda, 0.0);
  EXPECT_EQ(q.ybar, (std::vector<double>{1, -1, -2}));
}

TEST(ProjectTopk, ConstantPair) {
  const auto p = sqalm::project_topk(std::vector<double>{1, 1}, 2);
  EXPECT_EQ(p.ybar, (std::vector<double>{0, 0}));
  EXPECT_EQ(p.lambda, 1.0);
  EXPECT_EQ(p.theta, 0.0);
}

TEST(ProjectTopk, MatchesBruteForce) {
  std::mt19937_64 rng(11);
  for (int t = 0; t < 3000; ++t) {
    const auto m = static_cast<std::size_t>(testutil::uniform_int(rng, 1, 60));
    const auto y = t % 4 == 0 ? testutil::tied_vector(rng, m) : testutil::normal_vector(rng, m, 3.0);
    const Index k = testutil::uniform_int(rng, 1, static_cast<long>(m));
    const auto p = sqalm::project_topk(y, k);
    const auto o = oracle::brute_force_project(y, k);
    ASSERT_LE(max_abs_diff(p.ybar, o.ybar), 1e-9) << "m=" << m << " k=" << k;
  }
}

TEST(ProjectTopk, KktStructureHolds) {
  std::mt19937_64 rng(12);
  for (int t = 0; t < 3000; ++t) {
    const auto m = static_cast<std::size_t>(testutil::uniform_int(rng, 1, 80));
    const auto y = testutil::normal_vector(rng, m, 2.0);
    const Index k = testutil::uniform_int(rng, 1, static_cast<long>(m));
    const auto p = sqalm::project_topk(y, k);
    double ymax = 0;
    for (double v : y) ymax = std::max(ymax, std::abs(v));
    const double tk_bar = sqalm::topk_sum(p.ybar, k);
    ASSERT_LE(tk_bar, 1e-10 * (1 + ymax));
    if (p.interior()) {
      ASSERT_EQ(p.ybar, y);
      continue;
    }
    ASSERT_LE(std::abs(tk_bar), 1e-10 * (1 + std::abs(p.input_topk)));
    const auto mu = p.beta_multipliers();
    double sum = 0;
    for (double v : mu) {
      ASSERT_GE(v, -1e-12);
      ASSERT_LE(v, 1 + 1e-12);
      sum += v;
    }
    ASSERT_NEAR(sum, static_cast<double>(k - p.pair.k0), 1e-9 * static_cast<double>(k));
  }
}

TEST(ProjectTopk, ClosedFormsAreExact) {
  std::mt19937_64 rng(13);
  for (int t = 0; t < 1000; ++t) {
    const auto m = static_cast<std::size_t>(testutil::uniform_int(rng, 1, 100));
    const auto y = t % 3 == 0 ? testutil::tied_vector(rng, m) : testutil::normal_vector(rng, m);
    const auto p1 = sqalm::project_topk(y, 1);
    ASSERT_EQ(p1.ybar.size(), m);
    double sum = 0;
    for (std::size_t i = 0; i < m; ++i) {
      ASSERT_EQ(p1.ybar[i], std::min(y[i], 0.0));
      sum += y[i];
    }
    const auto pm = sqalm::project_topk(y, static_cast<Index>(m));
    ASSERT_EQ(pm.ybar.size(), m);
    const double shift = std::max(sum, 0.0) / static_cast<double>(m);
    for (std::size_t i = 0; i < m; ++i) ASSERT_EQ(pm.ybar[i], y[i] - shift);
  }
}

TEST(ProjectTopk, MaximumAtZeroWithKEqualsOne) {
  const std::vector<double> y{-1.5, 0.0};
  const auto p = sqalm::project_topk(y, 1);
  EXPECT_EQ(p.ybar, y);
  EXPECT_EQ(p.lambda, 0.0);
  const auto h = sqalm::project_topk_with_hint<double>(y, 1, 1);
  EXPECT_EQ(h.ybar, y);
}

TEST(ProjectTopk, Nonexpansive) {
  std::mt19937_64 rng(14);
  for (int t = 0; t < 2000; ++t) {
    const auto m = static_cast<std::size_t>(testutil::uniform_int(rng, 1, 50));
    const auto a = testutil::normal_vector(rng, m, 2.0);
    const auto b = testutil::normal_vector(rng, m, 2.0);
    const Index k = testutil::uniform_int(rng, 1, static_cast<long>(m));
    const auto pa = sqalm::project_topk(a, k);
    const auto pb = sqalm::project_topk(b, k);
    ASSERT_LE(norm2(pa.ybar, pb.ybar), norm2(a, b) + 1e-12);
  }
}

TEST(ProjectTopk, PreservesOrder) {
  std::mt19937_64 rng(15);
  for (int t = 0; t < 2000; ++t) {
    const auto m = static_cast<std::size_t>(testutil::uniform_int(rng, 1, 50));
    auto y = testutil::normal_vector(rng, m, 2.0);
    std::sort(y.begin(), y.end(), std::greater<>());
    const Index k = testutil::uniform_int(rng, 1, static_cast<long>(m));
    const auto p = sqalm::project_topk(y, k);
    ASSERT_TRUE(std::is_sorted(p.ybar.begin(), p.ybar.end(), std::greater<>()));
  }
}

TEST(ProjectTopk, HintPathIsBitIdentical) {
  std::mt19937_64 rng(16);
  for (int t = 0; t < 10000; ++t) {
    const auto m = static_cast<std::size_t>(testutil::uniform_int(rng, 1, 120));
    const auto y = t % 5 == 0 ? testutil::tied_vector(rng, m) : testutil::normal_vector(rng, m, 2.0);
    const Index k = testutil::uniform_int(rng, 1, static_cast<long>(m));
    const Index hint = t % 2 ? k : testutil::uniform_int(rng, 1, static_cast<long>(m));
    const auto full = sqalm::project_topk(y, k);
    sqalm::ProjectionStats st;
    const auto part = sqalm::project_topk_with_hint<double>(y, k, hint, &st);
    ASSERT_EQ(full.ybar, part.ybar);
    ASSERT_EQ(full.pair, part.pair);
    ASSERT_EQ(full.lambda, part.lambda);
    ASSERT_EQ(full.theta, part.theta);
    ASSERT_EQ(full.head, part.head);
  }
}

TEST(ProjectTopk, HintTooShortTriggersResort) {
  sqalm::ProjectionStats st;
  const auto p = sqalm::project_topk_with_hint<double>(std::vector<double>{3, 1, 0}, 2, 2, &st);
  EXPECT_EQ(st.resorts, 1);
  EXPECT_EQ(p.pair, (sqalm::IndexPair{1, 3}));
  sqalm::ProjectionStats st3;
  sqalm::project_topk_with_hint<double>(std::vector<double>{3, 1, 0}, 2, 3, &st3);
  EXPECT_EQ(st3.resorts, 0);
  EXPECT_THROW(sqalm::project_topk_with_hint<double>(std::vector<double>{3, 1, 0}, 2, 0), std::invalid_argument);
}

TEST(ProjectTopk, WorkspaceReuse) {
  std::mt19937_64 rng(17);
  sqalm::ProjectionWorkspace<double> ws;
  for (int t = 0; t < 200; ++t) {
    const auto m = static_cast<std::size_t>(testutil::uniform_int(rng, 1, 60));
    const auto y = testutil::normal_vector(rng, m);
    const Index k = testutil::uniform_int(rng, 1, static_cast<long>(m));
    const auto a = sqalm::project_topk<double>(y, k, nullptr, &ws);
    ASSERT_EQ(a.ybar, sqalm::project_topk(y, k).ybar);
  }
}

// Projecting g and then clipping only where g exceeds the projection solves
// the inequality-form problem min |max(g - y, 0)|^2 over B_k.
TEST(ProjectTopk, InequalityFormIsSolvedByTheProjection) {
  std::mt19937_64 rng(18);
  std::uniform_real_distribution<double> unif(0.0, 2.0);
  for (int inst = 0; inst < 30; ++inst) {
    const auto m = static_cast<std::size_t>(testutil::uniform_int(rng, 2, 40));
    auto g = testutil::normal_vector(rng, m, 2.0);
    std::sort(g.begin(), g.end(), std::greater<>());
    const Index k = testutil::uniform_int(rng, 1, static_cast<long>(m));
    const auto ybar = sqalm::project_topk(g, k).ybar;
    auto loss = [&](const std::vector<double>& y) {
      double s = 0;
      for (std::size_t i = 0; i < m; ++i) s += std::pow(std::max(g[i] - y[i], 0.0), 2);
      return s;
    };
    const double best = loss(ybar);
    for (int t = 0; t < 200; ++t) {
      auto y = testutil::normal_vector(rng, m, 2.0);
      const double c = std::max(sqalm::topk_sum(y, k), 0.0) / static_cast<double>(k) + unif(rng);
      for (auto& v : y) v -= c;
      ASSERT_LE(best, loss(y) + 1e-10);
    }
  }
}

TEST(ProjectBox, Clamp) {
  const auto box = sqalm::Box<double>::uniform(2, -1, 1);
  EXPECT_EQ(sqalm::project_box<double>(std::vector<double>{2, -3}, box), (std::vector<double>{1, -1}));
  EXPECT_EQ(sqalm::project_box<double>(std::vector<double>{0.5, 0}, box), (std::vector<double>{0.5, 0}));
  const auto free = sqalm::Box<double>::unbounded(1);
  EXPECT_EQ(sqalm::project_box<double>(std::vector<double>{0.5}, free), (std::vector<double>{0.5}));
  EXPECT_THROW(sqalm::project_box<double>(std::vector<double>{0.5}, box), std::invalid_argument);
  sqalm::Box<double> bad{{1.0}, {0.0}};
  EXPECT_THROW(bad.validate(), std::invalid_argument);
}
