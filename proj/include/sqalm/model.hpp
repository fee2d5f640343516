#pragma once

// Problem data, KKT residuals and the dual objective.
//
//   minimize f(x)  s.t.  T_{k_l}(A_l x + b_l) <= 0 (l = 1..L),  x in [p, q]
//
// Stacked vectors (y, lambda) concatenate the blocks in order.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <concepts>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "sqalm/jacobian.hpp"
#include "sqalm/projection.hpp"
#include "sqalm/topk.hpp"

namespace sqalm {

template <typename Real>
std::span<const Real> as_span(const Vector<Real>& v) {
  return {v.data(), static_cast<std::size_t>(v.size())};
}

template <typename Real>
Vector<Real> to_vector(std::span<const Real> s) {
  return Eigen::Map<const Vector<Real>>(s.data(), static_cast<Index>(s.size()));
}

/// f(x) = 1/2 x' diag(hess) x + c' x; `hess` is empty for a linear objective.
template <std::floating_point Real>
struct Objective {
  enum class Kind { Linear, DiagQuadratic };

  Kind kind = Kind::Linear;
  Vector<Real> c;
  Vector<Real> hess;

  static Objective linear(Vector<Real> c) { return {Kind::Linear, std::move(c), {}}; }
  static Objective diag_quadratic(Vector<Real> hess, Vector<Real> c) {
    if (hess.size() != c.size()) throw std::invalid_argument("Objective: hess and c sizes differ");
    if ((hess.array() < Real{0}).any()) throw std::invalid_argument("Objective: negative curvature");
    return {Kind::DiagQuadratic, std::move(c), std::move(hess)};
  }

  bool is_linear() const { return kind == Kind::Linear; }
  Index size() const { return c.size(); }
};

template <std::floating_point Real>
Real objective_value(const Objective<Real>& f, const Vector<Real>& x) {
  if (x.size() != f.size()) throw std::invalid_argument("objective_value: dimension mismatch");
  Real v = f.c.dot(x);
  if (!f.is_linear()) v += Real{0.5} * (f.hess.array() * x.array().square()).sum();
  return v;
}

template <std::floating_point Real>
Vector<Real> objective_grad(const Objective<Real>& f, const Vector<Real>& x) {
  if (x.size() != f.size()) throw std::invalid_argument("objective_grad: dimension mismatch");
  if (f.is_linear()) return f.c;
  return (f.hess.array() * x.array()).matrix() + f.c;
}

template <std::floating_point Real>
Vector<Real> objective_hess_diag(const Objective<Real>& f) {
  if (f.is_linear()) return Vector<Real>::Zero(f.size());
  return f.hess;
}

/// f*(w), with coordinates of zero curvature contributing 0 (their
/// conjugate is finite only at w_i = c_i; the mismatch shows up in eta_d).
template <std::floating_point Real>
Real objective_conjugate(const Objective<Real>& f, const Vector<Real>& w) {
  if (f.is_linear()) return Real{0};
  Real v{0};
  for (Index i = 0; i < w.size(); ++i) {
    if (f.hess[i] > Real{0}) {
      const Real d = w[i] - f.c[i];
      v += d * d / (Real{2} * f.hess[i]);
    }
  }
  return v;
}

template <std::floating_point Real>
struct ConstraintBlock {
  RowMatrix<Real> A;
  Vector<Real> b;
  Index k = 1;

  Index rows() const { return A.rows(); }
};

template <std::floating_point Real>
struct Problem {
  Objective<Real> objective;
  std::vector<ConstraintBlock<Real>> blocks;
  Box<Real> box;

  Index n() const { return objective.size(); }

  Index total_rows() const {
    Index r = 0;
    for (const auto& blk : blocks) r += blk.rows();
    return r;
  }

  /// Start of block l in stacked vectors.
  Index offset(std::size_t l) const {
    Index r = 0;
    for (std::size_t i = 0; i < l; ++i) r += blocks[i].rows();
    return r;
  }

  void validate() const {
    const Index dim = n();
    if (!objective.is_linear() && objective.hess.size() != dim) {
      throw std::invalid_argument("Problem: objective hess has wrong size");
    }
    if (box.size() != dim) throw std::invalid_argument("Problem: box dimension differs from n");
    box.validate();
    for (std::size_t l = 0; l < blocks.size(); ++l) {
      const auto& blk = blocks[l];
      const std::string where = "Problem: block " + std::to_string(l);
      if (blk.A.cols() != dim) throw std::invalid_argument(where + " has wrong column count");
      if (blk.b.size() != blk.A.rows()) throw std::invalid_argument(where + " b length differs from rows");
      if (blk.k < 1 || blk.k > blk.A.rows()) throw std::invalid_argument(where + " has k out of range");
    }
  }
};

/// Stacked G(x) = (A_l x + b_l)_l.
template <std::floating_point Real>
Vector<Real> constraint_values(const Problem<Real>& prob, const Vector<Real>& x) {
  Vector<Real> g(prob.total_rows());
  Index off = 0;
  for (const auto& blk : prob.blocks) {
    g.segment(off, blk.rows()).noalias() = blk.A * x;
    g.segment(off, blk.rows()) += blk.b;
    off += blk.rows();
  }
  return g;
}

/// Stacked A' w.
template <std::floating_point Real>
Vector<Real> constraint_adjoint(const Problem<Real>& prob, const Vector<Real>& w) {
  Vector<Real> out = Vector<Real>::Zero(prob.n());
  Index off = 0;
  for (const auto& blk : prob.blocks) {
    out.noalias() += blk.A.transpose() * w.segment(off, blk.rows());
    off += blk.rows();
  }
  return out;
}

/// Empirical superquantile evaluated at a given threshold:
/// t + (1/k) sum max(x_i - t, 0). Minimized by t = k-th largest entry,
/// where it equals T_k(x)/k.
template <std::floating_point Real>
Real superquantile_at(std::span<const Real> x, Index k, Real t) {
  Real s{0};
  for (Real v : x) s += std::max(v - t, Real{0});
  return t + s / static_cast<Real>(k);
}

template <std::floating_point Real>
Real superquantile(std::span<const Real> x, Index k) {
  const auto view = partial_sort_desc(x, k);
  return superquantile_at(x, k, view.values[static_cast<std::size_t>(k - 1)]);
}

/// Support function of the box: sup_{z in X} w'z (+inf when unbounded).
template <std::floating_point Real>
Real box_support(const Box<Real>& box, const Vector<Real>& w) {
  const Real inf = std::numeric_limits<Real>::infinity();
  Real s{0};
  for (Index i = 0; i < w.size(); ++i) {
    const auto j = static_cast<std::size_t>(i);
    if (w[i] > Real{0}) {
      if (std::isinf(box.upper[j])) return inf;
      s += w[i] * box.upper[j];
    } else if (w[i] < Real{0}) {
      if (std::isinf(box.lower[j])) return inf;
      s += w[i] * box.lower[j];
    }
  }
  return s;
}

/// Membership in the polar cone of B_k: w >= 0 and max(w) <= 1'w / k, with
/// relative slack on both tests.
template <std::floating_point Real>
bool in_polar_cone(std::span<const Real> w, Index k, Real rel_tol = Real{1e-9}) {
  Real sum{0};
  Real mx{0};
  Real scale{0};
  for (Real v : w) {
    sum += v;
    mx = std::max(mx, v);
    scale = std::max(scale, std::abs(v));
  }
  const Real slack = rel_tol * std::max(scale, Real{1});
  for (Real v : w) {
    if (v < -slack) return false;
  }
  return mx <= sum / static_cast<Real>(k) + slack;
}

/// b'lambda - f*(-A'lambda - mu) - delta*_B(lambda) - delta*_X(mu).
/// The support terms are 0 or +inf, so the result may be -inf.
template <std::floating_point Real>
Real dual_objective(const Problem<Real>& prob, const Vector<Real>& lambda, const Vector<Real>& mu) {
  const Real neg_inf = -std::numeric_limits<Real>::infinity();
  Real v{0};
  Index off = 0;
  for (const auto& blk : prob.blocks) {
    const auto seg = lambda.segment(off, blk.rows());
    const Vector<Real> lam = seg;
    if (!in_polar_cone<Real>(as_span(lam), blk.k)) return neg_inf;
    v += blk.b.dot(seg);
    off += blk.rows();
  }
  const Real sx = box_support(prob.box, mu);
  if (std::isinf(sx)) return neg_inf;
  const Vector<Real> w = -constraint_adjoint(prob, lambda) - mu;
  return v - objective_conjugate(prob.objective, w) - sx;
}

template <std::floating_point Real>
struct Residuals {
  Real eta_p = 0;
  Real eta_d = 0;
  Real eta_r = 0;
  Real eta = 0;
  Real obj_p = 0;
  Real obj_d = 0;
};

/// Relative KKT residuals of a primal-dual tuple (x, y, z, lambda, mu).
template <std::floating_point Real>
Residuals<Real> kkt_residuals(const Problem<Real>& prob, const Vector<Real>& x, const Vector<Real>& y,
                              const Vector<Real>& z, const Vector<Real>& lambda, const Vector<Real>& mu) {
  const Index total = prob.total_rows();
  if (x.size() != prob.n() || z.size() != prob.n() || mu.size() != prob.n() || y.size() != total ||
      lambda.size() != total) {
    throw std::invalid_argument("kkt_residuals: dimension mismatch");
  }
  Residuals<Real> r;
  const Vector<Real> g = constraint_values(prob, x);

  Real bnorm2{0};
  Real viol2{0};
  Real proj_gap2{0};
  Index off = 0;
  for (const auto& blk : prob.blocks) {
    bnorm2 += blk.b.squaredNorm();
    const Vector<Real> yl = y.segment(off, blk.rows());
    viol2 += (g.segment(off, blk.rows()) - yl).cwiseMax(Real{0}).squaredNorm();
    const auto p = project_topk<Real>(as_span(yl), blk.k);
    proj_gap2 += (yl - to_vector<Real>(p.ybar)).squaredNorm();
    off += blk.rows();
  }
  const Vector<Real> zp = to_vector<Real>(project_box<Real>(as_span(z), prob.box));
  const Real znorm = z.norm();
  r.eta_p = std::max({std::sqrt(viol2) / (Real{1} + std::sqrt(bnorm2)),
                      std::sqrt(proj_gap2) / (Real{1} + y.norm()), (x - z).norm() / (Real{1} + znorm),
                      (z - zp).norm() / (Real{1} + znorm)});

  const Vector<Real> grad = objective_grad(prob.objective, x);
  r.eta_d = (constraint_adjoint(prob, lambda) + mu + grad).norm() / (Real{1} + grad.norm());

  r.obj_p = objective_value(prob.objective, x);
  r.obj_d = dual_objective(prob, lambda, mu);
  r.eta_r = std::abs(r.obj_p - r.obj_d) / (Real{1} + std::abs(r.obj_p));
  if (std::isinf(r.obj_d)) r.eta_r = std::numeric_limits<Real>::infinity();
  r.eta = std::max({r.eta_p, r.eta_d, r.eta_r});
  return r;
}

}  // namespace sqalm
