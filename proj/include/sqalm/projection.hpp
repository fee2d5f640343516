#pragma once

// Euclidean projection onto B_k = { y : T_k(y) <= 0 } and onto boxes.
//
// The top-k projection sorts the input (fully, or only a prefix when a hint
// is given) and walks the index pair (k0, k1) outward from (k-1, k) until
// the KKT system of the sorted problem is satisfied:
//
//   ybar_alpha = y_alpha - lambda,  ybar_beta = theta,  ybar_gamma = y_gamma,
//   sum(y_alpha) - k0 * lambda + (k - k0) * theta = 0,
//   sum(y_beta)  - (k1 - k0) * theta = (k - k0) * lambda,
//   lambda > 0,  y_{k0} - lambda > theta > y_{k1+1}.
//
// Each candidate pair costs O(1), so after sorting the walk is
// O(k - k0 + k1 - k).

#include <algorithm>
#include <chrono>
#include <cmath>
#include <concepts>
#include <limits>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "sqalm/topk.hpp"

namespace sqalm {

template <std::floating_point Real>
struct TopKProjection {
  Index k = 0;
  /// Projection in the original (unsorted) order.
  std::vector<Real> ybar;
  IndexPair pair;
  /// Multiplier of the top-k-sum constraint; zero when the input is feasible.
  Real lambda = 0;
  Real theta = 0;
  /// T_k of the input.
  Real input_topk = 0;
  /// Original indices of the k1 largest inputs (alpha then beta), in
  /// nonincreasing order of the input.
  std::vector<Index> head;
  /// Input values at `head`.
  std::vector<Real> head_values;

  bool interior() const { return lambda == Real{0}; }
  Partition partition() const { return Partition::from_pair(pair, static_cast<Index>(ybar.size())); }

  /// Multipliers (y_beta - theta) / lambda of the beta block; they lie in
  /// [0, 1] and sum to k - k0. Empty for the interior case.
  std::vector<Real> beta_multipliers() const {
    std::vector<Real> mu;
    if (interior()) return mu;
    for (Index i = pair.k0; i < pair.k1; ++i) {
      mu.push_back((head_values[static_cast<std::size_t>(i)] - theta) / lambda);
    }
    return mu;
  }
};

/// Accumulated cost counters for repeated projections.
struct ProjectionStats {
  long calls = 0;
  /// Number of times a partial sort had to be enlarged.
  long resorts = 0;
  double sort_seconds = 0;
  double pivot_seconds = 0;

  ProjectionStats& operator+=(const ProjectionStats& o) {
    calls += o.calls;
    resorts += o.resorts;
    sort_seconds += o.sort_seconds;
    pivot_seconds += o.pivot_seconds;
    return *this;
  }
};

/// Caller-owned scratch space; one workspace per concurrent caller.
template <std::floating_point Real>
struct ProjectionWorkspace {
  SortedView<Real> view;
  std::vector<Real> prefix_sums;
};

namespace detail {

using Clock = std::chrono::steady_clock;

inline double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

template <std::floating_point Real>
void partial_sort_into(std::span<const Real> x, Index top, SortedView<Real>& view) {
  const auto m = static_cast<Index>(x.size());
  view.perm.resize(x.size());
  std::iota(view.perm.begin(), view.perm.end(), Index{0});
  const DescendingByValue<Real> cmp{x};
  if (top < m) {
    std::nth_element(view.perm.begin(), view.perm.begin() + (top - 1), view.perm.end(), cmp);
  }
  std::sort(view.perm.begin(), view.perm.begin() + top, cmp);
  gather(x, view.perm, view.values);
  view.sorted_count = top;
}

template <std::floating_point Real>
struct PivotResult {
  IndexPair pair;
  Real lambda = 0;
  Real theta = 0;
  /// False when the walk needed an entry beyond the sorted prefix.
  bool complete = false;
};

// Rounding allowance for the strict KKT inequalities. Entries that satisfy
// them only up to rounding are moved into beta, which leaves the projected
// values unchanged.
template <std::floating_point Real>
Real strict_slack(Real a, Real b, Real c) {
  return Real{16} * std::numeric_limits<Real>::epsilon() *
         std::max({std::abs(a), std::abs(b), std::abs(c)});
}

// Pivot on a sorted prefix `s` of a length-m vector with T_k > 0.
// Requires s.size() >= k.
template <std::floating_point Real>
PivotResult<Real> pivot_sorted(std::span<const Real> s, Index m, Index k,
                               std::vector<Real>& prefix) {
  const auto top = static_cast<Index>(s.size());
  prefix.resize(static_cast<std::size_t>(k));
  prefix[0] = Real{0};
  for (Index i = 1; i < k; ++i) {
    prefix[static_cast<std::size_t>(i)] = prefix[static_cast<std::size_t>(i - 1)] +
                                          s[static_cast<std::size_t>(i - 1)];
  }
  Index k0 = k - 1;
  Index k1 = k;
  Real sum_beta = s[static_cast<std::size_t>(k - 1)];
  PivotResult<Real> out;
  for (;;) {
    const Real sum_alpha = prefix[static_cast<std::size_t>(k0)];
    const auto a = static_cast<Real>(k0);
    const auto b = static_cast<Real>(k - k0);
    const auto c = static_cast<Real>(k1 - k0);
    const Real rho = a * c + b * b;
    const Real lambda = (c * sum_alpha + b * sum_beta) / rho;
    const Real theta = (a * sum_beta - b * sum_alpha) / rho;
    if (k1 < m) {
      if (k1 >= top) return out;  // incomplete
      const Real next = s[static_cast<std::size_t>(k1)];
      if (next == s[static_cast<std::size_t>(k1 - 1)] ||
          theta - next <= strict_slack(theta, next, lambda)) {
        sum_beta += next;
        ++k1;
        continue;
      }
    }
    if (k0 > 0) {
      const Real prev = s[static_cast<std::size_t>(k0 - 1)];
      if (prev == s[static_cast<std::size_t>(k0)] ||
          prev - lambda - theta <= strict_slack(prev, lambda, theta)) {
        sum_beta += prev;
        --k0;
        continue;
      }
    }
    out.pair = {k0, k1};
    out.lambda = lambda;
    out.theta = theta;
    out.complete = true;
    return out;
  }
}

// Feasible input: the projection is the identity and the pair describes the
// input's own order structure. Returns false if the tie block around the
// k-th entry runs past the sorted prefix.
template <std::floating_point Real>
bool fill_identity(std::span<const Real> y, Index k, const SortedView<Real>& view, Real tk,
                   TopKProjection<Real>& out) {
  const auto m = static_cast<Index>(y.size());
  const Index top = view.sorted_count;
  const std::span<const Real> s(view.values.data(), static_cast<std::size_t>(top));
  const Real pivot = s[static_cast<std::size_t>(k - 1)];
  Index k0 = k - 1;
  while (k0 > 0 && s[static_cast<std::size_t>(k0 - 1)] == pivot) --k0;
  Index k1 = k;
  while (k1 < top && s[static_cast<std::size_t>(k1)] == pivot) ++k1;
  if (k1 == top && top < m) return false;
  out.k = k;
  out.ybar.assign(y.begin(), y.end());
  out.pair = {k0, k1};
  out.lambda = Real{0};
  out.theta = pivot;
  out.input_topk = tk;
  out.head.assign(view.perm.begin(), view.perm.begin() + k1);
  out.head_values.assign(view.values.begin(), view.values.begin() + k1);
  return true;
}

template <std::floating_point Real>
void fill_projection(std::span<const Real> y, Index k, const SortedView<Real>& view,
                     const PivotResult<Real>& piv, Real tk, TopKProjection<Real>& out) {
  out.k = k;
  out.pair = piv.pair;
  out.lambda = piv.lambda;
  out.theta = piv.theta;
  out.input_topk = tk;
  out.head.assign(view.perm.begin(), view.perm.begin() + piv.pair.k1);
  out.head_values.assign(view.values.begin(), view.values.begin() + piv.pair.k1);
  out.ybar.assign(y.begin(), y.end());
  for (Index i = 0; i < piv.pair.k0; ++i) {
    const auto j = static_cast<std::size_t>(view.perm[static_cast<std::size_t>(i)]);
    out.ybar[j] = y[j] - piv.lambda;
  }
  // theta <= y on beta in exact arithmetic; the min keeps y - ybar >= 0
  // when rounding puts theta an ulp above the smallest beta entry.
  for (Index i = piv.pair.k0; i < piv.pair.k1; ++i) {
    const auto j = static_cast<std::size_t>(view.perm[static_cast<std::size_t>(i)]);
    out.ybar[j] = std::min(piv.theta, y[j]);
  }
}

// k == 1: ybar = min(y, 0); beta holds the nonnegative entries.
template <std::floating_point Real>
TopKProjection<Real> project_k_equals_one(std::span<const Real> y, ProjectionStats& stats) {
  const auto m = static_cast<Index>(y.size());
  auto t0 = Clock::now();
  const Index nonneg = std::count_if(y.begin(), y.end(), [](Real v) { return v >= Real{0}; });
  Index top = nonneg;
  const Real ymax = *std::max_element(y.begin(), y.end());
  if (ymax <= Real{0}) {
    // Feasible: sort the tie block at the maximum and one entry past it.
    top = std::min<Index>(m, std::count(y.begin(), y.end(), ymax) + 1);
  }
  SortedView<Real> view;
  partial_sort_into(y, top, view);
  stats.sort_seconds += seconds_since(t0);
  t0 = Clock::now();
  TopKProjection<Real> out;
  const Real tk = view.values[0];
  if (tk <= Real{0}) {
    fill_identity(y, Index{1}, view, tk, out);
    stats.pivot_seconds += seconds_since(t0);
    return out;
  }
  out.k = 1;
  out.input_topk = tk;
  out.pair = {0, nonneg};
  out.theta = Real{0};
  Real lambda{0};
  for (Index i = 0; i < nonneg; ++i) lambda += view.values[static_cast<std::size_t>(i)];
  out.lambda = lambda;
  out.head.assign(view.perm.begin(), view.perm.begin() + nonneg);
  out.head_values.assign(view.values.begin(), view.values.begin() + nonneg);
  out.ybar.resize(static_cast<std::size_t>(m));
  std::transform(y.begin(), y.end(), out.ybar.begin(), [](Real v) { return std::min(v, Real{0}); });
  stats.pivot_seconds += seconds_since(t0);
  return out;
}

// k == m: ybar = y - (max(sum(y), 0) / m) * 1.
template <std::floating_point Real>
TopKProjection<Real> project_k_equals_m(std::span<const Real> y, ProjectionStats& stats) {
  const auto m = static_cast<Index>(y.size());
  auto t0 = Clock::now();
  SortedView<Real> view = sort_desc(y);
  stats.sort_seconds += seconds_since(t0);
  t0 = Clock::now();
  TopKProjection<Real> out;
  const Real total = std::accumulate(y.begin(), y.end(), Real{0});
  if (total <= Real{0}) {
    Real tk{0};
    for (Real v : view.values) tk += v;
    fill_identity(y, m, view, tk, out);
    stats.pivot_seconds += seconds_since(t0);
    return out;
  }
  const Real shift = total / static_cast<Real>(m);
  const Real smallest = view.values.back();
  Index k0 = m - 1;
  while (k0 > 0 && view.values[static_cast<std::size_t>(k0 - 1)] == smallest) --k0;
  out.k = m;
  out.input_topk = total;
  out.pair = {k0, m};
  out.lambda = shift;
  out.theta = smallest - shift;
  out.head = view.perm;
  out.head_values = view.values;
  out.ybar.resize(static_cast<std::size_t>(m));
  std::transform(y.begin(), y.end(), out.ybar.begin(), [shift](Real v) { return v - shift; });
  stats.pivot_seconds += seconds_since(t0);
  return out;
}

template <std::floating_point Real>
Real sorted_prefix_sum(const SortedView<Real>& view, Index k) {
  Real tk{0};
  for (Index i = 0; i < k; ++i) tk += view.values[static_cast<std::size_t>(i)];
  return tk;
}

}  // namespace detail

/// Projection of y onto { T_k <= 0 } using a full sort.
template <std::floating_point Real>
TopKProjection<Real> project_topk(std::span<const Real> y, Index k,
                                  ProjectionStats* stats = nullptr,
                                  ProjectionWorkspace<Real>* workspace = nullptr) {
  const auto m = static_cast<Index>(y.size());
  detail::check_k(k, m, "project_topk");
  detail::check_finite(y, "project_topk");
  ProjectionStats local;
  ProjectionStats& st = stats ? *stats : local;
  ++st.calls;
  if (k == 1) return detail::project_k_equals_one(y, st);
  if (k == m) return detail::project_k_equals_m(y, st);

  ProjectionWorkspace<Real> own;
  ProjectionWorkspace<Real>& ws = workspace ? *workspace : own;
  auto t0 = detail::Clock::now();
  detail::partial_sort_into(y, m, ws.view);
  st.sort_seconds += detail::seconds_since(t0);

  t0 = detail::Clock::now();
  TopKProjection<Real> out;
  const Real tk = detail::sorted_prefix_sum(ws.view, k);
  if (tk <= Real{0}) {
    detail::fill_identity(y, k, ws.view, tk, out);
  } else {
    const auto piv = detail::pivot_sorted<Real>(ws.view.values, m, k, ws.prefix_sums);
    if (piv.lambda <= Real{0}) {
      // T_k(y) > 0 only through rounding.
      detail::fill_identity(y, k, ws.view, tk, out);
    } else {
      detail::fill_projection(y, k, ws.view, piv, tk, out);
    }
  }
  st.pivot_seconds += detail::seconds_since(t0);
  return out;
}

template <std::floating_point Real>
TopKProjection<Real> project_topk(const std::vector<Real>& y, Index k) {
  return project_topk(std::span<const Real>(y), k);
}

/// Projection of y onto { T_k <= 0 } sorting only a prefix of length
/// max(hint_k1, k). If the pivot needs an entry past the prefix, the prefix
/// grows to max(2 * len, len + 16) (capped at m) and the projection is
/// recomputed. The result equals project_topk(y, k) exactly.
template <std::floating_point Real>
TopKProjection<Real> project_topk_with_hint(std::span<const Real> y, Index k, Index hint_k1,
                                            ProjectionStats* stats = nullptr,
                                            ProjectionWorkspace<Real>* workspace = nullptr) {
  const auto m = static_cast<Index>(y.size());
  detail::check_k(k, m, "project_topk_with_hint");
  detail::check_finite(y, "project_topk_with_hint");
  if (hint_k1 < 1 || hint_k1 > m) {
    throw std::invalid_argument("project_topk_with_hint: hint " + std::to_string(hint_k1) +
                                " outside [1, " + std::to_string(m) + "]");
  }
  ProjectionStats local;
  ProjectionStats& st = stats ? *stats : local;
  ++st.calls;
  if (k == 1) return detail::project_k_equals_one(y, st);
  if (k == m) return detail::project_k_equals_m(y, st);

  ProjectionWorkspace<Real> own;
  ProjectionWorkspace<Real>& ws = workspace ? *workspace : own;
  Index top = std::max(hint_k1, k);
  TopKProjection<Real> out;
  for (;;) {
    auto t0 = detail::Clock::now();
    detail::partial_sort_into(y, top, ws.view);
    st.sort_seconds += detail::seconds_since(t0);

    t0 = detail::Clock::now();
    const Real tk = detail::sorted_prefix_sum(ws.view, k);
    bool done = false;
    if (tk <= Real{0}) {
      done = detail::fill_identity(y, k, ws.view, tk, out);
    } else {
      const std::span<const Real> prefix(ws.view.values.data(), static_cast<std::size_t>(top));
      const auto piv = detail::pivot_sorted<Real>(prefix, m, k, ws.prefix_sums);
      if (piv.complete) {
        done = true;
        if (piv.lambda <= Real{0}) {
          done = detail::fill_identity(y, k, ws.view, tk, out);
        } else {
          detail::fill_projection(y, k, ws.view, piv, tk, out);
        }
      }
    }
    st.pivot_seconds += detail::seconds_since(t0);
    if (done) return out;
    top = std::min(std::max(2 * top, top + 16), m);
    ++st.resorts;
  }
}

template <std::floating_point Real>
TopKProjection<Real> project_topk_with_hint(const std::vector<Real>& y, Index k, Index hint_k1) {
  return project_topk_with_hint(std::span<const Real>(y), k, hint_k1);
}

/// Box [lower, upper] with possibly infinite bounds.
template <std::floating_point Real>
struct Box {
  std::vector<Real> lower;
  std::vector<Real> upper;

  static Box unbounded(Index n) {
    const Real inf = std::numeric_limits<Real>::infinity();
    return {std::vector<Real>(static_cast<std::size_t>(n), -inf),
            std::vector<Real>(static_cast<std::size_t>(n), inf)};
  }
  static Box uniform(Index n, Real lo, Real hi) {
    return {std::vector<Real>(static_cast<std::size_t>(n), lo),
            std::vector<Real>(static_cast<std::size_t>(n), hi)};
  }

  Index size() const { return static_cast<Index>(lower.size()); }

  void validate() const {
    if (lower.size() != upper.size()) throw std::invalid_argument("Box: bound sizes differ");
    for (std::size_t i = 0; i < lower.size(); ++i) {
      if (!(lower[i] <= upper[i])) {
        throw std::invalid_argument("Box: lower > upper at coordinate " + std::to_string(i));
      }
    }
  }

  bool contains(std::size_t i, Real v) const { return lower[i] <= v && v <= upper[i]; }
};

template <std::floating_point Real>
std::vector<Real> project_box(std::span<const Real> x, const Box<Real>& box) {
  if (static_cast<Index>(x.size()) != box.size()) {
    throw std::invalid_argument("project_box: dimension mismatch");
  }
  std::vector<Real> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = std::clamp(x[i], box.lower[i], box.upper[i]);
  return out;
}

template <std::floating_point Real>
std::vector<Real> project_box(const std::vector<Real>& x, const Box<Real>& box) {
  return project_box(std::span<const Real>(x), box);
}

}  // namespace sqalm
