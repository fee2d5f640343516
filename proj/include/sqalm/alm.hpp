#pragma once

// Augmented Lagrangian outer loop.
//
// Each outer iteration solves the subproblem in x with the semismooth Newton
// method, recovers y = proj_B(v) and z = proj_X(u), and updates
//
//   lambda+ = sigma (v - y)   (= max(lambda + sigma (G(x) - y), 0)),
//   mu+     = mu + sigma (x - z).

#include <Eigen/Dense>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <concepts>
#include <limits>
#include <optional>
#include <stdexcept>
#include <vector>

#include "sqalm/model.hpp"
#include "sqalm/ssn.hpp"

namespace sqalm {

template <std::floating_point Real>
struct AlmSettings {
  Real tol = Real{1e-8};
  Real sigma0 = Real{1};
  Real sigma_growth = Real{2};
  Real sigma_max = Real{1e8};
  int max_outer = 200;
  /// eps_nu = eps0 * eps_rate^nu and delta_nu = delta0 * delta_rate^nu.
  Real eps0 = Real{10};
  Real eps_rate = Real{0.5};
  Real delta0 = Real{0.5};
  Real delta_rate = Real{0.5};
  /// M_scale / sigma, so the proximal weight in x is M_scale / sigma.
  /// Unset: default_prox_ratio.
  std::optional<Real> prox_ratio;
  /// Overrides the inner schedule with a fixed gradient tolerance.
  std::optional<Real> fixed_inner_tol;
  /// Inner tolerance never goes below inner_floor * tol * (1 + |grad f(x)|).
  Real inner_floor = Real{1e-2};
  /// sigma grows when eta_p did not drop below this fraction of its previous value.
  Real eta_p_decrease = Real{0.5};
  SsnSettings<Real> ssn;
};

template <std::floating_point Real>
Real default_prox_ratio() {
  return Real{1e-3};
}

template <std::floating_point Real>
struct IterateState {
  Vector<Real> x;
  Vector<Real> z;
  Vector<Real> y;
  Vector<Real> lambda;
  Vector<Real> mu;
  Real sigma = 1;
  int outer_iter = 0;

  static IterateState initial(const Problem<Real>& prob, Real sigma0) {
    IterateState s;
    const Index n = prob.n();
    const Index r = prob.total_rows();
    s.x = Vector<Real>::Zero(n);
    s.z = s.x;
    s.y = constraint_values(prob, s.x);
    s.lambda = Vector<Real>::Zero(r);
    s.mu = Vector<Real>::Zero(n);
    s.sigma = sigma0;
    return s;
  }

  /// Throws if the shapes do not match the problem.
  void check(const Problem<Real>& prob) const {
    const Index n = prob.n();
    const Index r = prob.total_rows();
    if (x.size() != n || z.size() != n || mu.size() != n || y.size() != r || lambda.size() != r) {
      throw std::invalid_argument("IterateState: shapes do not match the problem");
    }
    if (!(sigma > Real{0})) throw std::invalid_argument("IterateState: sigma must be positive");
  }
};

template <std::floating_point Real>
struct TraceEntry {
  int outer = 0;
  Real sigma = 0;
  Real inner_tol = 0;
  int inner_iterations = 0;
  bool inner_converged = false;
  Real grad_norm = 0;
  Residuals<Real> residuals;
  /// |grad f + A' lambda + mu| / (1 + |grad f|) right after the dual update.
  Real dual_feasibility = 0;
  double seconds = 0;
};

template <std::floating_point Real>
struct AlmResult {
  IterateState<Real> state;
  Residuals<Real> residuals;
  bool converged = false;
  int outer_iterations = 0;
  long inner_iterations = 0;
  std::vector<TraceEntry<Real>> trace;
  SolveTimings timings;
};

template <std::floating_point Real>
Real dual_feasibility(const Problem<Real>& prob, const IterateState<Real>& s) {
  const Vector<Real> g = objective_grad(prob.objective, s.x);
  return (g + constraint_adjoint(prob, s.lambda) + s.mu).norm() / (Real{1} + g.norm());
}

/// Grows sigma when the primal residual stalls.
template <std::floating_point Real>
Real update_sigma(Real sigma, Real eta_p_prev, Real eta_p, const AlmSettings<Real>& settings) {
  if (eta_p > settings.eta_p_decrease * eta_p_prev) {
    return std::min(sigma * settings.sigma_growth, settings.sigma_max);
  }
  return sigma;
}

template <std::floating_point Real>
AlmResult<Real> alm_solve(const Problem<Real>& prob, const AlmSettings<Real>& settings = {},
                          const IterateState<Real>* warm = nullptr) {
  using Clock = std::chrono::steady_clock;
  const auto t_start = Clock::now();
  prob.validate();
  if (!(settings.tol > Real{0})) throw std::invalid_argument("alm_solve: tol must be positive");
  if (!(settings.sigma0 > Real{0})) throw std::invalid_argument("alm_solve: sigma0 must be positive");
  if (settings.sigma_growth < Real{1}) throw std::invalid_argument("alm_solve: sigma_growth must be >= 1");

  AlmResult<Real> res;
  IterateState<Real> st;
  if (warm) {
    warm->check(prob);
    st = *warm;
    st.sigma = std::min(st.sigma, settings.sigma_max);
  } else {
    st = IterateState<Real>::initial(prob, settings.sigma0);
  }
  st.outer_iter = 0;
  const Real ratio = settings.prox_ratio.value_or(default_prox_ratio<Real>());

  res.residuals = kkt_residuals(prob, st.x, st.y, st.z, st.lambda, st.mu);
  res.state = st;
  if (res.residuals.eta <= settings.tol) {
    res.converged = true;
    res.timings.total = detail::elapsed(t_start);
    return res;
  }
  Real best_eta = res.residuals.eta;
  Real eta_p_prev = res.residuals.eta_p;
  std::vector<Index> hints(prob.blocks.size(), 0);
  std::vector<ProjectionWorkspace<Real>> workspaces(prob.blocks.size());

  for (int nu = 0; nu < settings.max_outer; ++nu) {
    const auto t_iter = Clock::now();
    const Real sigma = st.sigma;
    const Real M = ratio * sigma;
    SubproblemContext<Real> ctx(prob, st.lambda, st.mu, sigma, M, st.x);
    ctx.hints = hints;
    ctx.workspaces = std::move(workspaces);

    const Real eps_nu = settings.eps0 * std::pow(settings.eps_rate, Real(nu));
    const Real delta_nu = settings.delta0 * std::pow(settings.delta_rate, Real(nu));
    const Real floor = settings.inner_floor * settings.tol *
                       (Real{1} + objective_grad(prob.objective, st.x).norm());
    const Real sqrt_m = std::sqrt(M);
    Real last_tol = 0;
    auto tol_at = [&](const Evaluation<Real>& e) {
      if (settings.fixed_inner_tol) return last_tol = *settings.fixed_inner_tol;
      Real t = eps_nu / sigma;
      if (M > Real{0}) t = std::min(t, delta_nu * sqrt_m * (e.x - ctx.x_anchor).norm() / sigma);
      return last_tol = std::max(t, floor);
    };
    auto inner = ssn_solve_until(ctx, st.x, tol_at, settings.ssn, &res.timings);
    hints = ctx.hints;
    workspaces = std::move(ctx.workspaces);
    res.inner_iterations += inner.iterations;

    const Evaluation<Real>& e = inner.last;
    Index off = 0;
    for (std::size_t l = 0; l < prob.blocks.size(); ++l) {
      const Index m = prob.blocks[l].rows();
      const Vector<Real> ybar = to_vector<Real>(e.proj[l].ybar);
      st.y.segment(off, m) = ybar;
      st.lambda.segment(off, m) = (sigma * (e.v[l] - ybar)).cwiseMax(Real{0});
      off += m;
    }
    st.x = e.x;
    st.z = to_vector<Real>(project_box<Real>(as_span(e.u), prob.box));
    st.mu = st.mu + sigma * (st.x - st.z);
    st.outer_iter = nu + 1;

    const auto r = kkt_residuals(prob, st.x, st.y, st.z, st.lambda, st.mu);
    TraceEntry<Real> te;
    te.outer = nu + 1;
    te.sigma = sigma;
    te.inner_tol = last_tol;
    te.inner_iterations = inner.iterations;
    te.inner_converged = inner.converged;
    te.grad_norm = inner.grad_norm;
    te.residuals = r;
    te.dual_feasibility = dual_feasibility(prob, st);
    te.seconds = detail::elapsed(t_iter);
    res.trace.push_back(te);
    res.outer_iterations = nu + 1;

    if (r.eta <= best_eta || r.eta <= settings.tol) {
      best_eta = r.eta;
      res.state = st;
      res.residuals = r;
    }
    if (r.eta <= settings.tol) {
      res.converged = true;
      break;
    }
    st.sigma = update_sigma(sigma, eta_p_prev, r.eta_p, settings);
    eta_p_prev = r.eta_p;
  }
  res.timings.total = detail::elapsed(t_start);
  return res;
}

}  // namespace sqalm
