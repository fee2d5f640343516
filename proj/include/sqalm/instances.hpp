#pragma once

// Random test instances and quantile-regression problems.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "sqalm/alm.hpp"
#include "sqalm/model.hpp"
#include "sqalm/topk.hpp"

namespace sqalm {

/// SplitMix64 step; used to derive independent generator seeds.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Streams of a synthetic instance. Per-block arrays use the block index,
/// shared arrays use kSharedBlock.
enum class Stream : std::uint64_t { A = 1, B = 2, Witness = 3, Hessian = 4, Cost = 5, QrFeatures = 6, QrNoise = 7 };
inline constexpr std::uint64_t kSharedBlock = 0xffffffffULL;

/// Seed of stream `s` for block `block`: splitmix64(splitmix64(splitmix64(seed) ^ block) ^ s).
inline std::uint64_t stream_seed(std::uint64_t seed, std::uint64_t block, Stream s) {
  return splitmix64(splitmix64(splitmix64(seed) ^ block) ^ static_cast<std::uint64_t>(s));
}

struct SynthSpec {
  Index m = 0;
  Index n = 0;
  Index L = 1;
  double k_fraction = 0.01;
  bool quadratic = false;
  std::uint64_t seed = 0;

  /// k = ceil(k_fraction * m); throws when the result is outside [1, m].
  Index k() const {
    if (!(k_fraction > 0.0)) throw std::invalid_argument("SynthSpec: k_fraction must be positive");
    // The small offset keeps exact products such as 0.01 * 100 from rounding up.
    const auto k = static_cast<Index>(std::ceil(k_fraction * static_cast<double>(m) - 1e-9));
    if (k < 1 || k > m) {
      throw std::invalid_argument("SynthSpec: k=" + std::to_string(k) + " outside [1, " + std::to_string(m) + "]");
    }
    return k;
  }

  void validate() const {
    if (m < 1 || n < 1 || L < 1) throw std::invalid_argument("SynthSpec: m, n and L must be positive");
    (void)k();
  }
};

template <std::floating_point Real>
struct SyntheticInstance {
  Problem<Real> problem;
  /// Witness point that satisfies every block constraint.
  Vector<Real> witness;
  Index witness_index = 0;
  Index witness_count = 0;
  /// Per-block shift c_l with b_l = b~_l - c_l.
  std::vector<Real> shifts;
};

/// Largest T_k(A_l x + b_l) over the blocks.
template <std::floating_point Real>
Real max_block_topk(const Problem<Real>& prob, const Vector<Real>& x) {
  Real worst = -std::numeric_limits<Real>::infinity();
  for (const auto& blk : prob.blocks) {
    const Vector<Real> g = blk.A * x + blk.b;
    worst = std::max(worst, topk_sum<Real>(as_span(g), blk.k));
  }
  return worst;
}

/// Random instance with box [-1, 1]^n.
///
/// A_l has N(0, 10^2) entries scaled so every column has infinity-norm 1,
/// b~_l is N(0, 1). Witness candidates x~^p = -1 + 2u are drawn uniformly in
/// the box, ceil(ln(m L)) of them. The candidate with the smallest worst-case
/// superquantile max_l T_kl(A_l x~ + b~_l) / k_l is kept, and each block is
/// shifted by c_l = max(T_kl(A_l x~ + b~_l), 0) / k_l so the witness is
/// feasible and sits on the boundary of every block it violated.
template <std::floating_point Real>
SyntheticInstance<Real> generate_synthetic(const SynthSpec& spec) {
  spec.validate();
  const Index m = spec.m;
  const Index n = spec.n;
  const Index k = spec.k();
  SyntheticInstance<Real> out;
  auto& prob = out.problem;
  prob.box = Box<Real>::uniform(n, Real{-1}, Real{1});

  std::vector<Vector<Real>> b_tilde;
  for (Index l = 0; l < spec.L; ++l) {
    const auto bl = static_cast<std::uint64_t>(l);
    std::mt19937_64 rng_a(stream_seed(spec.seed, bl, Stream::A));
    std::normal_distribution<Real> nA(Real{0}, Real{10});
    ConstraintBlock<Real> blk;
    blk.A.resize(m, n);
    for (Index i = 0; i < m; ++i) {
      for (Index j = 0; j < n; ++j) blk.A(i, j) = nA(rng_a);
    }
    for (Index j = 0; j < n; ++j) {
      const Real s = blk.A.col(j).cwiseAbs().maxCoeff();
      if (s > Real{0}) blk.A.col(j) /= s;
    }
    std::mt19937_64 rng_b(stream_seed(spec.seed, bl, Stream::B));
    std::normal_distribution<Real> nb(Real{0}, Real{1});
    Vector<Real> bt(m);
    for (Index i = 0; i < m; ++i) bt[i] = nb(rng_b);
    blk.k = k;
    b_tilde.push_back(bt);
    prob.blocks.push_back(std::move(blk));
  }

  const auto count = std::max<Index>(
      1, static_cast<Index>(std::ceil(std::log(static_cast<double>(m) * static_cast<double>(spec.L)))));
  out.witness_count = count;
  std::mt19937_64 rng_w(stream_seed(spec.seed, kSharedBlock, Stream::Witness));
  std::uniform_real_distribution<Real> unif(Real{0}, Real{1});
  std::vector<Vector<Real>> cands;
  std::vector<std::vector<Real>> tks;
  Index best = 0;
  Real best_score = std::numeric_limits<Real>::infinity();
  for (Index p = 0; p < count; ++p) {
    Vector<Real> xt(n);
    for (Index j = 0; j < n; ++j) xt[j] = Real{-1} + Real{2} * unif(rng_w);
    std::vector<Real> t;
    Real score = -std::numeric_limits<Real>::infinity();
    for (Index l = 0; l < spec.L; ++l) {
      const auto& blk = prob.blocks[static_cast<std::size_t>(l)];
      const Vector<Real> g = blk.A * xt + b_tilde[static_cast<std::size_t>(l)];
      t.push_back(topk_sum<Real>(as_span(g), blk.k));
      score = std::max(score, t.back() / static_cast<Real>(blk.k));
    }
    if (score < best_score) {
      best_score = score;
      best = p;
    }
    cands.push_back(std::move(xt));
    tks.push_back(std::move(t));
  }
  out.witness = cands[static_cast<std::size_t>(best)];
  out.witness_index = best;
  for (Index l = 0; l < spec.L; ++l) {
    auto& blk = prob.blocks[static_cast<std::size_t>(l)];
    const Real c = std::max(tks[static_cast<std::size_t>(best)][static_cast<std::size_t>(l)], Real{0}) /
                   static_cast<Real>(blk.k);
    out.shifts.push_back(c);
    blk.b = b_tilde[static_cast<std::size_t>(l)].array() - c;
  }

  if (spec.quadratic) {
    std::mt19937_64 rng_h(stream_seed(spec.seed, kSharedBlock, Stream::Hessian));
    std::mt19937_64 rng_c(stream_seed(spec.seed, kSharedBlock, Stream::Cost));
    std::normal_distribution<Real> nd(Real{0}, Real{1});
    Vector<Real> h(n);
    Vector<Real> c(n);
    for (Index j = 0; j < n; ++j) h[j] = std::abs(nd(rng_h));
    for (Index j = 0; j < n; ++j) c[j] = nd(rng_c);
    prob.objective = Objective<Real>::diag_quadratic(std::move(h), std::move(c));
  } else {
    std::mt19937_64 rng_c(stream_seed(spec.seed, kSharedBlock, Stream::Cost));
    std::normal_distribution<Real> nd(Real{0}, Real{1});
    Vector<Real> c(n);
    for (Index j = 0; j < n; ++j) c[j] = nd(rng_c);
    prob.objective = Objective<Real>::linear(std::move(c));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Quantile regression

template <std::floating_point Real>
struct QrData {
  RowMatrix<Real> features;  // m x n
  Vector<Real> response;     // m
  std::vector<std::string> feature_names;

  Index m() const { return response.size(); }
  Index n() const { return features.cols(); }
};

/// Heteroscedastic linear data: features uniform on [0, 1], response
/// 1 + sum_j x_j + (1 + x_0) e with e standard normal.
template <std::floating_point Real>
QrData<Real> generate_qr_data(Index m, Index n, std::uint64_t seed) {
  if (m < 1 || n < 0) throw std::invalid_argument("generate_qr_data: need m >= 1 and n >= 0");
  QrData<Real> d;
  d.features.resize(m, n);
  d.response.resize(m);
  std::mt19937_64 rng_f(stream_seed(seed, kSharedBlock, Stream::QrFeatures));
  std::mt19937_64 rng_e(stream_seed(seed, kSharedBlock, Stream::QrNoise));
  std::uniform_real_distribution<Real> unif(Real{0}, Real{1});
  std::normal_distribution<Real> nd(Real{0}, Real{1});
  for (Index i = 0; i < m; ++i) {
    Real r = Real{1};
    for (Index j = 0; j < n; ++j) {
      d.features(i, j) = unif(rng_f);
      r += d.features(i, j);
    }
    const Real scale = Real{1} + (n > 0 ? d.features(i, 0) : Real{0});
    d.response[i] = r + scale * nd(rng_e);
  }
  for (Index j = 0; j < n; ++j) d.feature_names.push_back("x" + std::to_string(j));
  return d;
}

/// k(tau) = (1 - tau) m; throws unless it is an integer in [1, m].
inline Index qr_k(double tau, Index m) {
  if (!(tau > 0.0 && tau < 1.0)) throw std::invalid_argument("quantile level must lie in (0, 1)");
  const double kr = (1.0 - tau) * static_cast<double>(m);
  const double k = std::round(kr);
  if (std::abs(kr - k) > 1e-9 * std::max(1.0, static_cast<double>(m)) || k < 1 || k > static_cast<double>(m)) {
    throw std::invalid_argument("(1 - tau) * m = " + std::to_string(kr) + " is not an integer in [1, m] for tau=" +
                                std::to_string(tau));
  }
  return static_cast<Index>(k);
}

/// Superquantile form of tau-quantile regression,
///
///   minimize t + abar' x  s.t.  T_k(b_i - a_i' x - t) <= 0,  k = (1 - tau) m,
///
/// in the variables (x, t). For tau > 0.5 the problem is built for 1 - tau
/// on negated data; the slope is the same, and the objective maps back by
/// obj = sum(b) / k + ((m - k) / k) obj'.
template <std::floating_point Real>
struct QrProblem {
  Problem<Real> problem;
  double tau = 0;
  bool inverted = false;
  /// k of the original (not inverted) problem.
  Index k = 0;
  Index m = 0;
  Real response_sum = 0;
  Vector<Real> feature_mean;

  Real original_objective(Real solved_objective) const {
    if (!inverted) return solved_objective;
    return response_sum / static_cast<Real>(k) + static_cast<Real>(m - k) / static_cast<Real>(k) * solved_objective;
  }

  /// Slope and intercept of the original problem from a solution (x, t) of
  /// the built problem.
  std::pair<Vector<Real>, Real> original_solution(const Vector<Real>& xt) const {
    const Index n = xt.size() - 1;
    Vector<Real> slope = xt.head(n);
    if (!inverted) return {slope, xt[n]};
    const Real obj = original_objective(objective_value(problem.objective, xt));
    return {slope, obj - feature_mean.dot(slope)};
  }
};

template <std::floating_point Real>
QrProblem<Real> build_quantile_regression(const QrData<Real>& data, double tau) {
  const Index m = data.m();
  const Index n = data.n();
  if (m < 1) throw std::invalid_argument("build_quantile_regression: no observations");
  if (data.features.rows() != m) throw std::invalid_argument("build_quantile_regression: feature rows differ from m");
  QrProblem<Real> q;
  q.tau = tau;
  q.k = qr_k(tau, m);
  q.m = m;
  q.inverted = tau > 0.5;
  q.response_sum = data.response.sum();
  q.feature_mean = n > 0 ? Vector<Real>(data.features.colwise().mean().transpose()) : Vector<Real>(0);
  const Real sign = q.inverted ? Real{-1} : Real{1};

  ConstraintBlock<Real> blk;
  blk.A.resize(m, n + 1);
  blk.A.leftCols(n) = -sign * data.features;
  blk.A.col(n).setConstant(Real{-1});
  blk.b = sign * data.response;
  blk.k = q.inverted ? m - q.k : q.k;

  Vector<Real> c(n + 1);
  c.head(n) = sign * q.feature_mean;
  c[n] = Real{1};
  q.problem.objective = Objective<Real>::linear(std::move(c));
  q.problem.blocks.push_back(std::move(blk));
  q.problem.box = Box<Real>::unbounded(n + 1);
  return q;
}

/// Defaults for quantile regression. The multipliers of the CVaR rows are
/// of order 1/k, so a small starting penalty keeps lambda / sigma on the
/// scale of the residual spacing.
template <std::floating_point Real>
AlmSettings<Real> qr_default_settings() {
  AlmSettings<Real> s;
  s.tol = Real{1e-4};
  s.sigma0 = Real{1e-2};
  return s;
}

/// k-th largest residual b_i - a_i' slope: a minimizer over the intercept
/// of the check loss for k = (1 - tau) m.
template <std::floating_point Real>
Real quantile_intercept(const QrData<Real>& data, const Vector<Real>& slope, Index k) {
  const Vector<Real> z = data.response - data.features * slope;
  const auto view = partial_sort_desc<Real>(as_span(z), k);
  return view.values[static_cast<std::size_t>(k - 1)];
}

template <std::floating_point Real>
struct PathEntry {
  double tau = 0;
  Index k = 0;
  bool inverted = false;
  bool warm_started = false;
  bool converged = false;
  Vector<Real> slope;
  /// tau-quantile of the residuals b - F slope (the k-th largest).
  Real intercept = 0;
  /// Superquantile of the same residuals, the t variable of the model.
  Real superquantile = 0;
  Real objective = 0;
  Residuals<Real> residuals;
  int outer_iterations = 0;
  long inner_iterations = 0;
  SolveTimings timings;
  std::string error;
};

/// Solves the taus in order. Each solve is warm-started from the previous
/// one when both are built in the same orientation, keeping x and the
/// multipliers and restarting sigma at sigma0. Failures are recorded and
/// the path continues.
template <std::floating_point Real>
std::vector<PathEntry<Real>> solve_path(const QrData<Real>& data, const std::vector<double>& taus,
                                        const AlmSettings<Real>& settings, bool warm_start = true) {
  for (std::size_t i = 1; i < taus.size(); ++i) {
    if (!(taus[i] > taus[i - 1])) throw std::invalid_argument("solve_path: tau grid must be increasing");
  }
  std::vector<PathEntry<Real>> out;
  std::optional<IterateState<Real>> prev;
  bool prev_inverted = false;
  for (double tau : taus) {
    PathEntry<Real> e;
    e.tau = tau;
    try {
      const auto q = build_quantile_regression(data, tau);
      e.k = q.k;
      e.inverted = q.inverted;
      e.warm_started = warm_start && prev && prev_inverted == q.inverted;
      if (e.warm_started) prev->sigma = std::min(prev->sigma, settings.sigma0);
      const auto r = alm_solve(q.problem, settings, e.warm_started ? &*prev : nullptr);
      e.converged = r.converged;
      e.residuals = r.residuals;
      e.outer_iterations = r.outer_iterations;
      e.inner_iterations = r.inner_iterations;
      e.timings = r.timings;
      e.objective = q.original_objective(r.residuals.obj_p);
      std::tie(e.slope, e.superquantile) = q.original_solution(r.state.x);
      e.intercept = quantile_intercept(data, e.slope, q.k);
      prev = r.state;
      prev_inverted = q.inverted;
    } catch (const std::exception& ex) {
      e.error = ex.what();
      prev.reset();
    }
    out.push_back(std::move(e));
  }
  return out;
}

}  // namespace sqalm
