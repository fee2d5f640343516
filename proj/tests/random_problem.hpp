#pragma once

#include <Eigen/Dense>

#include <limits>
#include <random>
#include <vector>

#include "oracle.hpp"
#include "sqalm/ssn.hpp"
#include "test_util.hpp"

namespace testutil {

using Vec = sqalm::Vector<double>;
using RowMat = sqalm::RowMatrix<double>;

struct RandomSubproblem {
  sqalm::Problem<double> prob;
  Vec lambda;
  Vec mu;
  double sigma = 1;
  double M = 0;
};

inline Vec eigen_vector(const std::vector<double>& v) {
  return Eigen::Map<const Vec>(v.data(), static_cast<sqalm::Index>(v.size()));
}

/// Small random problem with mixed objective kind, finite and infinite box
/// bounds and polar-cone multipliers.
inline RandomSubproblem random_subproblem(std::mt19937_64& rng, long max_n = 12, long max_m = 15) {
  RandomSubproblem s;
  const long n = uniform_int(rng, 1, max_n);
  const bool linear = uniform_int(rng, 0, 1) == 0;
  const Vec c = eigen_vector(normal_vector(rng, static_cast<std::size_t>(n)));
  s.prob.objective = linear ? sqalm::Objective<double>::linear(c)
                            : sqalm::Objective<double>::diag_quadratic(
                                  eigen_vector(normal_vector(rng, static_cast<std::size_t>(n))).cwiseAbs(), c);
  s.prob.box = sqalm::Box<double>::unbounded(n);
  for (long i = 0; i < n; ++i) {
    const auto j = static_cast<std::size_t>(i);
    if (uniform_int(rng, 0, 2) > 0) s.prob.box.lower[j] = -1.0 - 0.5 * static_cast<double>(uniform_int(rng, 0, 2));
    if (uniform_int(rng, 0, 2) > 0) s.prob.box.upper[j] = 1.0 + 0.5 * static_cast<double>(uniform_int(rng, 0, 2));
  }
  const long blocks = uniform_int(rng, 1, 3);
  std::vector<double> lam;
  for (long l = 0; l < blocks; ++l) {
    const long m = uniform_int(rng, 1, max_m);
    const long k = uniform_int(rng, 1, m);
    RowMat A(m, n);
    for (long i = 0; i < m; ++i) {
      for (long j = 0; j < n; ++j) A(i, j) = normal_vector(rng, 1)[0];
    }
    s.prob.blocks.push_back({A, eigen_vector(normal_vector(rng, static_cast<std::size_t>(m), 2.0)), k});
    const auto v = normal_vector(rng, static_cast<std::size_t>(m), 2.0);
    const auto p = sqalm::project_topk(v, k);
    for (long i = 0; i < m; ++i) lam.push_back(v[static_cast<std::size_t>(i)] - p.ybar[static_cast<std::size_t>(i)]);
  }
  s.prob.validate();
  s.lambda = eigen_vector(lam);
  s.mu = eigen_vector(normal_vector(rng, static_cast<std::size_t>(n)));
  s.sigma = std::exp(std::uniform_real_distribution<double>(std::log(0.1), std::log(10.0))(rng));
  s.M = linear ? 0.1 + std::uniform_real_distribution<double>(0, 1)(rng) : std::uniform_real_distribution<double>(0, 1)(rng);
  return s;
}

inline sqalm::SubproblemContext<double> context_of(const RandomSubproblem& s) {
  return {s.prob, s.lambda, s.mu, s.sigma, s.M, Vec::Zero(s.prob.n())};
}

/// Explicit Newton matrix of the subproblem from the dense oracle.
inline Eigen::MatrixXd oracle_newton(const RandomSubproblem& s, const Vec& x) {
  std::vector<oracle::DenseBlock> blocks;
  for (const auto& blk : s.prob.blocks) blocks.push_back({Eigen::MatrixXd(blk.A), Eigen::VectorXd(blk.b), blk.k});
  const Eigen::VectorXd hess = sqalm::objective_hess_diag(s.prob.objective);
  const long n = s.prob.n();
  Eigen::VectorXd lo(n), hi(n);
  for (long i = 0; i < n; ++i) {
    lo[i] = s.prob.box.lower[static_cast<std::size_t>(i)];
    hi[i] = s.prob.box.upper[static_cast<std::size_t>(i)];
  }
  return oracle::dense_newton(blocks, hess, lo, hi, x, s.lambda, s.mu, s.sigma, s.M);
}

}  // namespace testutil
