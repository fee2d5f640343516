#pragma once

// Top-k-sum operator and the order-structure helpers shared by the
// projection, Jacobian and solver code.
//
// Index conventions are zero-based: for a vector sorted in nonincreasing
// order, the index pair (k0, k1) splits positions into
//   alpha = [0, k0), beta = [k0, k1), gamma = [k1, m).
// k0 and k1 are counts, so they agree with the one-based textbook
// definition 0 <= k0 <= k-1 < k <= k1 <= m.

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace sqalm {

using Index = std::ptrdiff_t;

struct IndexPair {
  Index k0 = 0;
  Index k1 = 0;

  friend bool operator==(const IndexPair&, const IndexPair&) = default;
};

/// Partition of {0..m-1} induced by an index pair.
struct Partition {
  Index alpha_end = 0;  // alpha = [0, alpha_end)
  Index beta_end = 0;   // beta  = [alpha_end, beta_end)
  Index size = 0;       // gamma = [beta_end, size)

  Index alpha_size() const { return alpha_end; }
  Index beta_size() const { return beta_end - alpha_end; }
  Index gamma_size() const { return size - beta_end; }

  static Partition from_pair(IndexPair p, Index m) { return {p.k0, p.k1, m}; }

  friend bool operator==(const Partition&, const Partition&) = default;
};

/// Nonincreasing rearrangement of a vector.
///
/// `values[i] == x[perm[i]]`. When produced by partial_sort_desc only the
/// first `sorted_count` entries are ordered; the remaining entries are all
/// <= values[sorted_count - 1] but otherwise unordered.
template <std::floating_point Real>
struct SortedView {
  std::vector<Index> perm;
  std::vector<Real> values;
  Index sorted_count = 0;
};

namespace detail {

inline void check_k(Index k, Index m, const char* what) {
  if (k < 1 || k > m) {
    throw std::invalid_argument(std::string(what) + ": k=" + std::to_string(k) +
                                " outside [1, " + std::to_string(m) + "]");
  }
}

template <typename Real>
void check_finite(std::span<const Real> y, const char* what) {
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (!std::isfinite(y[i])) {
      throw std::invalid_argument(std::string(what) + ": entry " + std::to_string(i) + " is not finite");
    }
  }
}

// Strict total order used by every sort in the library: larger value first,
// ties broken by smaller original index. A full sort under this order equals
// a stable nonincreasing sort, and every partial sort agrees with it on the
// sorted prefix.
template <std::floating_point Real>
struct DescendingByValue {
  std::span<const Real> x;
  bool operator()(Index a, Index b) const {
    const Real xa = x[static_cast<std::size_t>(a)];
    const Real xb = x[static_cast<std::size_t>(b)];
    return xa > xb || (xa == xb && a < b);
  }
};

template <std::floating_point Real>
void gather(std::span<const Real> x, const std::vector<Index>& perm,
            std::vector<Real>& out) {
  out.resize(perm.size());
  for (std::size_t i = 0; i < perm.size(); ++i) {
    out[i] = x[static_cast<std::size_t>(perm[i])];
  }
}

}  // namespace detail

/// Sum of the k largest entries of x.
///
/// Builds a binary max-heap in O(m) and pops k roots, so the cost is
/// O(m + k log m) with no full sort. Terms are accumulated largest first,
/// which makes the result independent of the input order.
template <std::floating_point Real>
Real topk_sum(std::span<const Real> x, Index k) {
  const auto m = static_cast<Index>(x.size());
  detail::check_k(k, m, "topk_sum");
  std::vector<Real> heap(x.begin(), x.end());
  std::make_heap(heap.begin(), heap.end());
  Real total{0};
  auto end = heap.end();
  for (Index i = 0; i < k; ++i) {
    total += heap.front();
    std::pop_heap(heap.begin(), end);
    --end;
  }
  return total;
}

template <std::floating_point Real>
Real topk_sum(const std::vector<Real>& x, Index k) {
  return topk_sum(std::span<const Real>(x), k);
}

/// Stable nonincreasing sort (equal values keep their original order).
template <std::floating_point Real>
SortedView<Real> sort_desc(std::span<const Real> x) {
  SortedView<Real> view;
  view.perm.resize(x.size());
  std::iota(view.perm.begin(), view.perm.end(), Index{0});
  std::sort(view.perm.begin(), view.perm.end(), detail::DescendingByValue<Real>{x});
  detail::gather(x, view.perm, view.values);
  view.sorted_count = static_cast<Index>(x.size());
  return view;
}

/// Sorts only the `top` largest entries: O(m + top log top).
template <std::floating_point Real>
SortedView<Real> partial_sort_desc(std::span<const Real> x, Index top) {
  const auto m = static_cast<Index>(x.size());
  if (top < 1 || top > m) {
    throw std::invalid_argument("partial_sort_desc: top=" + std::to_string(top) +
                                " outside [1, " + std::to_string(m) + "]");
  }
  SortedView<Real> view;
  view.perm.resize(x.size());
  std::iota(view.perm.begin(), view.perm.end(), Index{0});
  const detail::DescendingByValue<Real> cmp{x};
  if (top < m) {
    std::nth_element(view.perm.begin(), view.perm.begin() + (top - 1), view.perm.end(), cmp);
  }
  std::sort(view.perm.begin(), view.perm.begin() + top, cmp);
  detail::gather(x, view.perm, view.values);
  view.sorted_count = top;
  return view;
}

/// Index pair and partition of a nonincreasing vector with respect to k.
///
/// k0 counts entries strictly greater than the k-th largest, k1 is one past
/// the last entry tied with it. Ties are exact unless `rel_tol > 0`, in which
/// case |a - b| <= rel_tol * max(|a|, |b|) counts as equal.
template <std::floating_point Real>
std::pair<IndexPair, Partition> partition_of(std::span<const Real> sorted, Index k,
                                             Real rel_tol = Real{0}) {
  const auto m = static_cast<Index>(sorted.size());
  detail::check_k(k, m, "partition_of");
  const Real pivot = sorted[static_cast<std::size_t>(k - 1)];
  auto tied = [&](Real v) {
    if (v == pivot) return true;
    return rel_tol > 0 && std::abs(v - pivot) <= rel_tol * std::max(std::abs(v), std::abs(pivot));
  };
  Index k0 = k - 1;
  while (k0 > 0 && tied(sorted[static_cast<std::size_t>(k0 - 1)])) --k0;
  Index k1 = k;
  while (k1 < m && tied(sorted[static_cast<std::size_t>(k1)])) ++k1;
  const IndexPair pair{k0, k1};
  return {pair, Partition::from_pair(pair, m)};
}

template <std::floating_point Real>
std::pair<IndexPair, Partition> partition_of(const std::vector<Real>& sorted, Index k,
                                             Real rel_tol = Real{0}) {
  return partition_of(std::span<const Real>(sorted), k, rel_tol);
}

}  // namespace sqalm
