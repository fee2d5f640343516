#pragma once

// Generalized Jacobian of proj_{B_k} and the reduced factor used to build
// the Newton matrix.
//
// With kappa = alpha ∪ beta (the first k1 sorted positions), I - J is zero
// outside kappa x kappa and equals Q on it:
//
//   General  (k < k1):  Q11 = ((k1-k0)/rho) 11',  Q12 = ((k-k0)/rho) 11',
//                       Q22 = I - (k0/rho) 11',   rho = k^2 - 2 k k0 + k0 k1
//   Boundary (k = k1):  Q = 11' / k1
//   Interior:           Q = 0
//
// Q is an orthogonal projector, so A' (I - J) A = T~' T~ with a factor of
// |beta| + 1 rows (General) or one row (Boundary).

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <concepts>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "sqalm/projection.hpp"
#include "sqalm/topk.hpp"

namespace sqalm {

template <typename Real>
using Matrix = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Real>
using RowMatrix = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Real>
using Vector = Eigen::Matrix<Real, Eigen::Dynamic, 1>;

enum class JacobianCase { Interior, General, Boundary };

inline const char* to_string(JacobianCase c) {
  switch (c) {
    case JacobianCase::Interior: return "interior";
    case JacobianCase::General: return "general";
    case JacobianCase::Boundary: return "boundary";
  }
  return "?";
}

/// Case of the Jacobian formula used at y.
///
/// T_k(y) < 0 gives Interior. Otherwise the pair decides: Boundary when
/// k == k1, General when k < k1. At points where the projection is not
/// differentiable this picks a B-subdifferential element, which is all the
/// Newton equation needs.
template <std::floating_point Real>
JacobianCase classify(std::span<const Real> y, Index k, const TopKProjection<Real>& proj) {
  if (proj.ybar.size() != y.size() || proj.k != k) {
    throw std::invalid_argument("classify: projection was computed for a different input");
  }
  if (proj.input_topk < Real{0}) return JacobianCase::Interior;
  return proj.pair.k1 == k ? JacobianCase::Boundary : JacobianCase::General;
}

template <std::floating_point Real>
JacobianCase classify(const TopKProjection<Real>& proj) {
  return classify(std::span<const Real>(proj.ybar), proj.k, proj);
}

/// Smallest slack among the strict inequalities that keep the projection
/// smooth around y (the KKT ordering and the differentiability conditions).
/// A positive value means every input within that sup-norm distance, up to
/// a factor of order one, has the same pair and case.
template <std::floating_point Real>
Real differentiability_margin(const TopKProjection<Real>& proj, std::span<const Real> y) {
  const Real inf = std::numeric_limits<Real>::infinity();
  const Real tk = proj.input_topk;
  const Index k = proj.k;
  if (tk < Real{0}) return -tk / static_cast<Real>(k);
  if (proj.interior()) return Real{0};
  const auto [k0, k1] = proj.pair;
  const auto& s = proj.head_values;
  const auto m = static_cast<Index>(y.size());
  Real margin = tk / static_cast<Real>(k);
  if (k0 > 0) {
    margin = std::min(margin, s[static_cast<std::size_t>(k0 - 1)] - proj.lambda - proj.theta);
  }
  if (k1 < m) {
    // Largest entry outside the head.
    Real next = -inf;
    std::vector<bool> in_head(static_cast<std::size_t>(m), false);
    for (Index i : proj.head) in_head[static_cast<std::size_t>(i)] = true;
    for (Index i = 0; i < m; ++i) {
      if (!in_head[static_cast<std::size_t>(i)]) next = std::max(next, y[static_cast<std::size_t>(i)]);
    }
    margin = std::min(margin, proj.theta - next);
  }
  if (k1 > k) {
    margin = std::min(margin, proj.theta - (s[static_cast<std::size_t>(k0)] - proj.lambda));
    margin = std::min(margin, s[static_cast<std::size_t>(k1 - 1)] - proj.theta);
  }
  return margin;
}

/// True when y satisfies one of the three differentiability properties,
/// with strict inequalities checked at absolute slack `slack`.
template <std::floating_point Real>
bool is_differentiable(const TopKProjection<Real>& proj, std::span<const Real> y,
                       Real slack = Real{1e-12}) {
  return differentiability_margin(proj, y) > slack;
}

/// Closed-form blocks of Q for the General case.
template <std::floating_point Real>
struct QBlocks {
  Index k = 0;
  Index k0 = 0;
  Index k1 = 0;
  Real rho = 0;

  static QBlocks make(Index k, Index k0, Index k1) {
    if (!(0 <= k0 && k0 < k && k <= k1)) {
      throw std::invalid_argument("QBlocks: need 0 <= k0 < k <= k1, got (" + std::to_string(k) +
                                  ", " + std::to_string(k0) + ", " + std::to_string(k1) + ")");
    }
    const auto kr = static_cast<Real>(k);
    const auto k0r = static_cast<Real>(k0);
    const auto k1r = static_cast<Real>(k1);
    return {k, k0, k1, kr * kr - Real{2} * kr * k0r + k0r * k1r};
  }

  Index alpha_size() const { return k0; }
  Index beta_size() const { return k1 - k0; }
  Real q11() const { return static_cast<Real>(k1 - k0) / rho; }
  Real q12() const { return static_cast<Real>(k - k0) / rho; }
  Real q22() const { return static_cast<Real>(k0) / rho; }

  /// Q as a dense k1 x k1 matrix (tests only).
  Matrix<Real> dense() const {
    Matrix<Real> q(k1, k1);
    for (Index i = 0; i < k1; ++i) {
      for (Index j = 0; j < k1; ++j) {
        const bool ia = i < k0;
        const bool ja = j < k0;
        Real v;
        if (ia && ja) v = q11();
        else if (ia != ja) v = q12();
        else v = (i == j ? Real{1} : Real{0}) - q22();
        q(i, j) = v;
      }
    }
    return q;
  }
};

/// J d for d given in sorted order (position i refers to the i-th largest
/// input). Costs O(k1) beyond copying d.
template <std::floating_point Real>
std::vector<Real> jacobian_apply_sorted(JacobianCase c, Index k, IndexPair pair,
                                        std::span<const Real> d) {
  std::vector<Real> out(d.begin(), d.end());
  if (c == JacobianCase::Interior) return out;
  const auto [k0, k1] = pair;
  Real sa{0};
  Real sb{0};
  for (Index i = 0; i < k0; ++i) sa += d[static_cast<std::size_t>(i)];
  for (Index i = k0; i < k1; ++i) sb += d[static_cast<std::size_t>(i)];
  if (c == JacobianCase::Boundary) {
    const Real mean = (sa + sb) / static_cast<Real>(k1);
    for (Index i = 0; i < k1; ++i) out[static_cast<std::size_t>(i)] -= mean;
    return out;
  }
  const auto q = QBlocks<Real>::make(k, k0, k1);
  const Real shift_alpha = q.q11() * sa + q.q12() * sb;
  const Real beta_value = -q.q12() * sa + q.q22() * sb;
  for (Index i = 0; i < k0; ++i) out[static_cast<std::size_t>(i)] -= shift_alpha;
  for (Index i = k0; i < k1; ++i) out[static_cast<std::size_t>(i)] = beta_value;
  return out;
}

/// J d for d in the original order of the projected vector.
template <std::floating_point Real>
std::vector<Real> jacobian_apply(const TopKProjection<Real>& proj, JacobianCase c,
                                 std::span<const Real> d) {
  if (d.size() != proj.ybar.size()) throw std::invalid_argument("jacobian_apply: size mismatch");
  std::vector<Real> out(d.begin(), d.end());
  if (c == JacobianCase::Interior) return out;
  const Index k1 = proj.pair.k1;
  std::vector<Real> head(static_cast<std::size_t>(k1));
  for (Index i = 0; i < k1; ++i) {
    head[static_cast<std::size_t>(i)] = d[static_cast<std::size_t>(proj.head[static_cast<std::size_t>(i)])];
  }
  const auto jh = jacobian_apply_sorted<Real>(c, proj.k, proj.pair, head);
  for (Index i = 0; i < k1; ++i) {
    out[static_cast<std::size_t>(proj.head[static_cast<std::size_t>(i)])] = jh[static_cast<std::size_t>(i)];
  }
  return out;
}

/// Rows T~ with T~' T~ = A' (I - J) A, restricted to the inequality-active
/// rows when requested.
template <std::floating_point Real>
struct ReducedFactor {
  RowMatrix<Real> T;
  /// Original rows of A in alpha ∪ beta, in sorted order.
  std::vector<Index> row_indices;

  Index rows() const { return static_cast<Index>(T.rows()); }
};

/// Builds T~ from the rows of A selected by the projection.
///
/// With `drop_inactive`, beta rows whose residual v_i - ybar_i is exactly
/// zero are removed from the General factor, i.e. the Newton matrix uses
/// T' W T with W the 0/1 activity of max(v - proj(v), 0). Alpha rows always
/// have residual lambda > 0.
template <std::floating_point Real, typename Derived>
ReducedFactor<Real> build_reduced_factor(const Eigen::MatrixBase<Derived>& A,
                                         const TopKProjection<Real>& proj, JacobianCase c,
                                         bool drop_inactive = false) {
  if (static_cast<std::size_t>(A.rows()) != proj.ybar.size()) {
    throw std::invalid_argument("build_reduced_factor: A has " + std::to_string(A.rows()) +
                                " rows, projection has " + std::to_string(proj.ybar.size()));
  }
  const Index n = A.cols();
  ReducedFactor<Real> f;
  if (c == JacobianCase::Interior) {
    f.T.resize(0, n);
    return f;
  }
  const auto [k0, k1] = proj.pair;
  f.row_indices.assign(proj.head.begin(), proj.head.begin() + k1);
  Vector<Real> sum_alpha = Vector<Real>::Zero(n);
  Vector<Real> sum_beta = Vector<Real>::Zero(n);
  for (Index i = 0; i < k0; ++i) sum_alpha += A.row(f.row_indices[static_cast<std::size_t>(i)]).transpose();
  for (Index i = k0; i < k1; ++i) sum_beta += A.row(f.row_indices[static_cast<std::size_t>(i)]).transpose();

  if (c == JacobianCase::Boundary) {
    f.T.resize(1, n);
    f.T.row(0) = ((sum_alpha + sum_beta) / std::sqrt(static_cast<Real>(k1))).transpose();
    return f;
  }

  const auto q = QBlocks<Real>::make(proj.k, k0, k1);
  std::vector<Index> beta_rows;
  for (Index i = k0; i < k1; ++i) {
    if (drop_inactive && proj.head_values[static_cast<std::size_t>(i)] - proj.theta <= Real{0}) continue;
    beta_rows.push_back(i);
  }
  const Index first = k0 > 0 ? 1 : 0;
  f.T.resize(first + static_cast<Index>(beta_rows.size()), n);
  if (first) {
    f.T.row(0) = (std::sqrt(static_cast<Real>(k0)) * (q.q11() * sum_alpha + q.q12() * sum_beta)).transpose();
  }
  const Vector<Real> common = q.q12() * sum_alpha - q.q22() * sum_beta;
  for (std::size_t r = 0; r < beta_rows.size(); ++r) {
    const Index src = f.row_indices[static_cast<std::size_t>(beta_rows[r])];
    f.T.row(first + static_cast<Index>(r)) = A.row(src) + common.transpose();
  }
  return f;
}

}  // namespace sqalm
