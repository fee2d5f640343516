#pragma once

// Semismooth Newton solver for the augmented Lagrangian subproblem
//
//   phi(x) = f(x) + (sigma/2) sum_l |max(v_l - proj_{B_kl}(v_l), 0)|^2
//                 + (sigma/2) |u - proj_X(u)|^2 + (M/(2 sigma)) |x - x_anchor|^2
//
// with v_l = A_l x + b_l + lambda_l / sigma and u = x + mu / sigma.
// The Newton matrix is
//
//   V = diag(D) + sigma * T~' T~,   D = hess f + M / sigma + sigma (1 - J_X),
//
// where T~ stacks the reduced factors of all blocks. V^{-1} is applied in
// the smaller of the n-space and the reduced row space.

#include <Eigen/Dense>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <concepts>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "sqalm/jacobian.hpp"
#include "sqalm/model.hpp"
#include "sqalm/projection.hpp"

namespace sqalm {

class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Wall-clock split of solver work.
struct SolveTimings {
  double sort = 0;
  double projection = 0;
  double gradient = 0;
  double linear_solve = 0;
  double total = 0;
  long projections = 0;
  long resorts = 0;

  SolveTimings& operator+=(const SolveTimings& o) {
    sort += o.sort;
    projection += o.projection;
    gradient += o.gradient;
    linear_solve += o.linear_solve;
    total += o.total;
    projections += o.projections;
    resorts += o.resorts;
    return *this;
  }
};

template <std::floating_point Real>
struct SubproblemContext {
  const Problem<Real>* prob = nullptr;
  Vector<Real> lambda;
  Vector<Real> mu;
  Real sigma = 1;
  /// Proximal term M = M_scale * I.
  Real M_scale = 0;
  Vector<Real> x_anchor;
  /// Per-block prefix length for the partial sort; 0 means full sort.
  std::vector<Index> hints;
  std::vector<ProjectionWorkspace<Real>> workspaces;

  SubproblemContext() = default;
  SubproblemContext(const Problem<Real>& p, Vector<Real> lam, Vector<Real> m, Real s, Real M,
                    Vector<Real> anchor)
      : prob(&p), lambda(std::move(lam)), mu(std::move(m)), sigma(s), M_scale(M), x_anchor(std::move(anchor)),
        hints(p.blocks.size(), 0), workspaces(p.blocks.size()) {
    if (!(sigma > Real{0})) throw std::invalid_argument("SubproblemContext: sigma must be positive");
    if (!(M_scale >= Real{0})) throw std::invalid_argument("SubproblemContext: M_scale must be >= 0");
  }
};

/// phi and its ingredients at one point.
template <std::floating_point Real>
struct Evaluation {
  Vector<Real> x;
  Real value = 0;
  Vector<Real> grad;
  /// v_l for each block.
  std::vector<Vector<Real>> v;
  std::vector<TopKProjection<Real>> proj;
  /// u = x + mu / sigma.
  Vector<Real> u;
};

namespace detail {

inline double elapsed(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

template <std::floating_point Real>
Index next_hint(Index k1, Index m) {
  const auto h = static_cast<Index>(std::ceil(1.05 * static_cast<double>(k1))) + 10;
  return std::min(h, m);
}

}  // namespace detail

/// Adds the gradient to an evaluation produced without one.
template <std::floating_point Real>
void complete_gradient(const SubproblemContext<Real>& ctx, Evaluation<Real>& e,
                       SolveTimings* timings = nullptr) {
  const auto t0 = std::chrono::steady_clock::now();
  const Problem<Real>& prob = *ctx.prob;
  const Real sigma = ctx.sigma;
  e.grad = objective_grad(prob.objective, e.x);
  for (std::size_t l = 0; l < prob.blocks.size(); ++l) {
    const auto& p = e.proj[l];
    const auto& v = e.v[l];
    for (Index i = 0; i < p.pair.k1; ++i) {
      const Index row = p.head[static_cast<std::size_t>(i)];
      const Real r = v[row] - p.ybar[static_cast<std::size_t>(row)];
      if (r != Real{0}) e.grad.noalias() += (sigma * r) * prob.blocks[l].A.row(row).transpose();
    }
  }
  const Vector<Real> pu = to_vector<Real>(project_box<Real>(as_span(e.u), prob.box));
  e.grad += sigma * (e.u - pu);
  e.grad += (ctx.M_scale / sigma) * (e.x - ctx.x_anchor);
  if (timings) timings->gradient += detail::elapsed(t0);
}

/// Evaluates phi (and optionally its gradient) at x. Updates the partial-sort
/// hints in `ctx`.
template <std::floating_point Real>
Evaluation<Real> evaluate_phi(SubproblemContext<Real>& ctx, const Vector<Real>& x, bool with_grad,
                              SolveTimings* timings = nullptr) {
  using Clock = std::chrono::steady_clock;
  const Problem<Real>& prob = *ctx.prob;
  SolveTimings local;
  SolveTimings& tm = timings ? *timings : local;
  Evaluation<Real> e;
  e.x = x;
  e.value = objective_value(prob.objective, x);
  const Real sigma = ctx.sigma;

  Index off = 0;
  e.v.resize(prob.blocks.size());
  e.proj.resize(prob.blocks.size());
  for (std::size_t l = 0; l < prob.blocks.size(); ++l) {
    const auto& blk = prob.blocks[l];
    const Index m = blk.rows();
    auto t0 = Clock::now();
    Vector<Real>& v = e.v[l];
    v.noalias() = blk.A * x;
    v += blk.b + ctx.lambda.segment(off, m) / sigma;
    tm.gradient += detail::elapsed(t0);

    ProjectionStats ps;
    const Index hint = ctx.hints.empty() ? 0 : ctx.hints[l];
    auto* ws = ctx.workspaces.empty() ? nullptr : &ctx.workspaces[l];
    e.proj[l] = hint > 0 ? project_topk_with_hint<Real>(as_span(v), blk.k, hint, &ps, ws)
                         : project_topk<Real>(as_span(v), blk.k, &ps, ws);
    tm.sort += ps.sort_seconds;
    tm.projection += ps.pivot_seconds;
    tm.projections += ps.calls;
    tm.resorts += ps.resorts;
    const auto& p = e.proj[l];
    if (!ctx.hints.empty()) ctx.hints[l] = detail::next_hint<Real>(p.pair.k1, m);

    t0 = Clock::now();
    // v - proj(v) is nonnegative and vanishes outside alpha ∪ beta, so the
    // max(., 0) is inactive and only the head rows enter the gradient.
    Real pen{0};
    Index head_support = 0;
    for (Index i = 0; i < p.pair.k1; ++i) {
      const Index row = p.head[static_cast<std::size_t>(i)];
      const Real r = v[row] - p.ybar[static_cast<std::size_t>(row)];
      if (r < Real{0}) {
        throw std::logic_error("evaluate_phi: negative projection residual in block " + std::to_string(l));
      }
      if (r != Real{0}) ++head_support;
      pen += r * r;
    }
    Index support = 0;
    for (Index i = 0; i < m; ++i) support += v[i] != p.ybar[static_cast<std::size_t>(i)];
    if (support != head_support) {
      throw std::logic_error("evaluate_phi: projection residual outside alpha ∪ beta in block " +
                             std::to_string(l));
    }
    e.value += Real{0.5} * sigma * pen;
    tm.gradient += detail::elapsed(t0);
    off += m;
  }

  e.u = x + ctx.mu / sigma;
  const Vector<Real> pu = to_vector<Real>(project_box<Real>(as_span(e.u), prob.box));
  e.value += Real{0.5} * sigma * (e.u - pu).squaredNorm();
  e.value += ctx.M_scale / (Real{2} * sigma) * (x - ctx.x_anchor).squaredNorm();
  if (with_grad) complete_gradient(ctx, e, &tm);
  return e;
}

template <std::floating_point Real>
Real phi_value(SubproblemContext<Real>& ctx, const Vector<Real>& x) {
  return evaluate_phi(ctx, x, false).value;
}

template <std::floating_point Real>
Vector<Real> phi_grad(SubproblemContext<Real>& ctx, const Vector<Real>& x) {
  return evaluate_phi(ctx, x, true).grad;
}

template <std::floating_point Real>
struct NewtonSystem {
  Vector<Real> D;
  Real sigma = 1;
  /// Stacked reduced factors of all blocks.
  RowMatrix<Real> T;
  /// 1 where the box projection is the identity (J_X = 1).
  std::vector<bool> box_free;

  Index n() const { return D.size(); }
  Index reduced_rows() const { return T.rows(); }

  /// V as a dense matrix.
  Matrix<Real> dense() const {
    Matrix<Real> V = sigma * (T.transpose() * T);
    V.diagonal() += D;
    return V;
  }
};

template <std::floating_point Real>
NewtonSystem<Real> assemble_newton(const SubproblemContext<Real>& ctx, const Evaluation<Real>& e) {
  const Problem<Real>& prob = *ctx.prob;
  const Index n = prob.n();
  NewtonSystem<Real> sys;
  sys.sigma = ctx.sigma;
  sys.D = objective_hess_diag(prob.objective);
  sys.D.array() += ctx.M_scale / ctx.sigma;
  sys.box_free.resize(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    const auto j = static_cast<std::size_t>(i);
    sys.box_free[j] = prob.box.contains(j, e.u[i]);
    if (!sys.box_free[j]) sys.D[i] += ctx.sigma;
  }
  std::vector<ReducedFactor<Real>> factors;
  Index rows = 0;
  for (std::size_t l = 0; l < prob.blocks.size(); ++l) {
    const auto c = classify<Real>(as_span(e.v[l]), prob.blocks[l].k, e.proj[l]);
    factors.push_back(build_reduced_factor<Real>(prob.blocks[l].A, e.proj[l], c, true));
    rows += factors.back().rows();
  }
  sys.T.resize(rows, n);
  Index r = 0;
  for (const auto& f : factors) {
    sys.T.middleRows(r, f.rows()) = f.T;
    r += f.rows();
  }
  return sys;
}

/// V^{-1} rhs. Uses the Woodbury form (r x r system sigma^{-1} I + T D^{-1} T')
/// when the factor has fewer rows than n and D > 0, a dense Cholesky of V
/// otherwise.
template <std::floating_point Real>
Vector<Real> solve_newton(const NewtonSystem<Real>& sys, const Vector<Real>& rhs) {
  const Index n = sys.n();
  const Index r = sys.reduced_rows();
  if (rhs.size() != n) throw std::invalid_argument("solve_newton: rhs has wrong size");
  const bool d_positive = (sys.D.array() > Real{0}).all();
  if (r == 0) {
    if (!d_positive) throw NumericalError("solve_newton: D has a zero entry and no factor rows");
    return rhs.cwiseQuotient(sys.D);
  }
  if (r < n && d_positive) {
    const Vector<Real> dinv = sys.D.cwiseInverse();
    const RowMatrix<Real> TD = sys.T * dinv.asDiagonal();
    Matrix<Real> S = TD * sys.T.transpose();
    S.diagonal().array() += Real{1} / sys.sigma;
    Eigen::LLT<Matrix<Real>> llt(S);
    if (llt.info() != Eigen::Success) {
      throw NumericalError("solve_newton: reduced system of size " + std::to_string(r) +
                           " is not positive definite (sigma=" + std::to_string(sys.sigma) + ")");
    }
    const Vector<Real> w = dinv.cwiseProduct(rhs);
    return w - TD.transpose() * llt.solve(sys.T * w);
  }
  Eigen::LLT<Matrix<Real>> llt(sys.dense());
  if (llt.info() != Eigen::Success) {
    throw NumericalError("solve_newton: Newton matrix of size " + std::to_string(n) +
                         " is not positive definite; use M_scale > 0 for objectives without curvature");
  }
  return llt.solve(rhs);
}

template <std::floating_point Real>
struct SsnSettings {
  Real armijo_c = Real{1e-4};
  Real shrink = Real{0.5};
  int max_backtracks = 50;
  int max_iter = 200;
};

template <std::floating_point Real>
struct SsnResult {
  Evaluation<Real> last;
  int iterations = 0;
  long backtracks = 0;
  Real grad_norm = 0;
  bool converged = false;
};

/// Newton iterations with Armijo backtracking until |grad phi| <= tol_at(x),
/// where the tolerance may depend on the current evaluation. Stops early
/// (not converged) when no step decreases phi.
template <std::floating_point Real, typename TolFn>
SsnResult<Real> ssn_solve_until(SubproblemContext<Real>& ctx, const Vector<Real>& x0, TolFn&& tol_at,
                                const SsnSettings<Real>& settings = {}, SolveTimings* timings = nullptr) {
  using Clock = std::chrono::steady_clock;
  SolveTimings local;
  SolveTimings& tm = timings ? *timings : local;
  const Real eps = std::numeric_limits<Real>::epsilon();

  SsnResult<Real> res;
  res.last = evaluate_phi(ctx, x0, true, &tm);
  for (;;) {
    Evaluation<Real>& cur = res.last;
    res.grad_norm = cur.grad.norm();
    if (res.grad_norm <= tol_at(cur)) {
      res.converged = true;
      return res;
    }
    if (res.iterations >= settings.max_iter) return res;

    const auto t0 = Clock::now();
    auto sys = assemble_newton(ctx, cur);
    Vector<Real> d;
    try {
      d = solve_newton(sys, Vector<Real>(-cur.grad));
    } catch (const NumericalError&) {
      // Singular V (no curvature and no proximal term): regularize with a
      // multiple of the gradient norm.
      sys.D.array() += std::min(Real{1}, res.grad_norm);
      d = solve_newton(sys, Vector<Real>(-cur.grad));
    }
    tm.linear_solve += detail::elapsed(t0);
    Real slope = cur.grad.dot(d);
    if (!(slope < Real{0}) || !d.allFinite()) {
      d = -cur.grad;
      slope = -res.grad_norm * res.grad_norm;
    }

    // Smallest rho in [0, max_backtracks] with step shrink^rho passing the
    // Armijo test. phi is convex, so the accepted steps form an interval
    // and the search below returns the same rho as plain backtracking.
    const Real allowance = Real{10} * eps * std::abs(cur.value);
    const int rho_max = settings.max_backtracks;
    std::optional<Evaluation<Real>> best;
    int best_rho = -1;
    int evals = 0;
    auto accepts = [&](int rho) {
      const Real step = std::pow(settings.shrink, Real(rho));
      auto trial = evaluate_phi(ctx, Vector<Real>(cur.x + step * d), false, &tm);
      ++evals;
      const bool ok = trial.value <= cur.value + settings.armijo_c * step * slope + allowance;
      if (ok && (best_rho < 0 || rho < best_rho)) {
        best = std::move(trial);
        best_rho = rho;
      }
      return std::pair<bool, Real>{ok, trial.value};
    };
    const auto [ok0, value1] = accepts(0);
    if (!ok0 && rho_max > 0) {
      int lo = 0;       // largest rho known to fail
      int hi = -1;      // smallest rho known to pass
      // Guess from the quadratic through phi(0), phi'(0) and phi(1).
      const Real curv = Real{2} * (value1 - cur.value - slope);
      int guess = 1;
      if (curv > Real{0} && std::isfinite(curv)) {
        const Real t_bar = Real{2} * (Real{1} - settings.armijo_c) * (-slope) / curv;
        if (t_bar > Real{0} && t_bar < Real{1}) {
          guess = static_cast<int>(std::ceil(std::log(t_bar) / std::log(settings.shrink) - Real{1e-9}));
        }
      }
      guess = std::clamp(guess, 1, rho_max);
      if (accepts(guess).first) {
        hi = guess;
      } else {
        lo = guess;
      }
      if (hi < 0) {
        for (int gap = 1; hi < 0 && lo < rho_max; gap *= 2) {
          const int probe = std::min(lo + gap, rho_max);
          if (accepts(probe).first) {
            hi = probe;
          } else {
            lo = probe;
          }
        }
      } else if (hi - 1 > lo) {
        if (accepts(hi - 1).first) {
          hi = hi - 1;
        } else {
          lo = hi - 1;
        }
      }
      while (hi >= 0 && hi - lo > 1) {
        const int mid = lo + (hi - lo) / 2;
        if (accepts(mid).first) {
          hi = mid;
        } else {
          lo = mid;
        }
      }
    }
    res.backtracks += evals - 1;
    if (!best) return res;
    complete_gradient(ctx, *best, &tm);
    const Real moved = std::pow(settings.shrink, Real(best_rho)) * d.norm();
    res.last = std::move(*best);
    ++res.iterations;
    if (moved <= eps * (Real{1} + res.last.x.norm())) {
      res.grad_norm = res.last.grad.norm();
      res.converged = res.grad_norm <= tol_at(res.last);
      return res;
    }
  }
}

template <std::floating_point Real>
SsnResult<Real> ssn_solve(SubproblemContext<Real>& ctx, const Vector<Real>& x0, Real tol,
                          const SsnSettings<Real>& settings = {}, SolveTimings* timings = nullptr) {
  if (!(tol > Real{0})) throw std::invalid_argument("ssn_solve: tol must be positive");
  return ssn_solve_until(ctx, x0, [tol](const Evaluation<Real>&) { return tol; }, settings, timings);
}

}  // namespace sqalm
