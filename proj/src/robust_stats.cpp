#include "inffor/robust_stats.hpp"

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>

#include "inffor/errors.hpp"

namespace inffor {

double median(std::span<const double> v) {
  if (v.empty()) throw std::invalid_argument("median of empty vector");
  std::vector<double> work(v.begin(), v.end());
  const std::size_t idx = (work.size() - 1) / 2;  // lower median
  std::nth_element(work.begin(), work.begin() + static_cast<long>(idx), work.end());
  return work[idx];
}

namespace {

std::uint64_t q_order_index(std::size_t n) {
  const std::uint64_t h = n / 2 + 1;
  return h * (h - 1) / 2;  // 1-based rank among the C(n,2) differences
}

// Weighted high median: smallest value such that the total weight of
// elements <= it exceeds half the total weight.
double weighted_high_median(std::vector<std::pair<double, std::uint64_t>>& items) {
  std::sort(items.begin(), items.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  std::uint64_t total = 0;
  for (const auto& it : items) total += it.second;
  std::uint64_t cum = 0;
  for (const auto& it : items) {
    cum += it.second;
    if (2 * cum > total) return it.first;
  }
  return items.back().first;
}

// k-th smallest (1-based) element of {y[b] - y[a] : a < b} for sorted y.
// Selection over the implicit matrix A(i,j) = y[i] - y[n-1-j] restricted to
// j in [n-i, n-1], whose rows and columns are sorted. Row medians are fed to
// a weighted median to pick a pivot, and window bounds shrink geometrically
// until the survivors fit in memory for direct selection.
double kth_pairwise_difference(const std::vector<double>& y, std::uint64_t k) {
  const std::size_t n = y.size();
  std::vector<std::size_t> left(n), right(n);
  std::uint64_t window_total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    left[i] = n - i;
    right[i] = n - 1;
    window_total += i;
  }

  const auto cell = [&](std::size_t i, std::size_t j) { return y[i] - y[n - 1 - j]; };
  const std::uint64_t gather_limit = std::max<std::uint64_t>(256, 2 * n);

  std::vector<std::pair<double, std::uint64_t>> row_medians;
  for (int guard = 0; guard < 512; ++guard) {
    if (window_total <= gather_limit) {
      std::vector<double> survivors;
      survivors.reserve(static_cast<std::size_t>(window_total));
      std::uint64_t excluded_below = 0;
      for (std::size_t i = 1; i < n; ++i) {
        excluded_below += left[i] - (n - i);
        for (std::size_t j = left[i]; j <= right[i] && j < n; ++j)
          survivors.push_back(cell(i, j));
      }
      const std::uint64_t rank = k - excluded_below;  // 1-based within survivors
      std::nth_element(survivors.begin(), survivors.begin() + static_cast<long>(rank - 1),
                       survivors.end());
      return survivors[static_cast<std::size_t>(rank - 1)];
    }

    row_medians.clear();
    for (std::size_t i = 1; i < n; ++i) {
      if (left[i] > right[i]) continue;
      const std::size_t mid = left[i] + (right[i] - left[i]) / 2;
      row_medians.emplace_back(cell(i, mid),
                               static_cast<std::uint64_t>(right[i] - left[i] + 1));
    }
    const double trial = weighted_high_median(row_medians);

    // Per-row counts over the full valid range, using that rows ascend in j.
    std::uint64_t below = 0, at_or_below = 0;
    std::vector<std::size_t> first_ge(n), first_gt(n);
    for (std::size_t i = 1; i < n; ++i) {
      // first j in [n-i, n] with cell >= trial (n means none)
      std::size_t lo = n - i, hi = n;
      while (lo < hi) {
        const std::size_t mid = lo + (hi - lo) / 2;
        if (cell(i, mid) < trial) lo = mid + 1; else hi = mid;
      }
      first_ge[i] = lo;
      below += lo - (n - i);
      std::size_t lo2 = lo, hi2 = n;
      while (lo2 < hi2) {
        const std::size_t mid = lo2 + (hi2 - lo2) / 2;
        if (cell(i, mid) <= trial) lo2 = mid + 1; else hi2 = mid;
      }
      first_gt[i] = lo2;
      at_or_below += lo2 - (n - i);
    }

    if (k <= below) {
      // answer is strictly below trial; windows never re-expand
      for (std::size_t i = 1; i < n; ++i)
        right[i] = std::min(right[i], first_ge[i] - 1);
    } else if (k > at_or_below) {
      for (std::size_t i = 1; i < n; ++i) left[i] = std::max(left[i], first_gt[i]);
    } else {
      return trial;
    }

    window_total = 0;
    for (std::size_t i = 1; i < n; ++i)
      if (right[i] >= left[i]) window_total += right[i] - left[i] + 1;
  }
  throw std::logic_error("pairwise-difference selection failed to converge");
}

}  // namespace

double q_estimator(std::span<const double> v) {
  const std::size_t n = v.size();
  if (n < 2) throw std::invalid_argument("q_estimator requires at least 2 values");
  std::vector<double> y(v.begin(), v.end());
  std::sort(y.begin(), y.end());
  return kQConsistency * kth_pairwise_difference(y, q_order_index(n));
}

double q_estimator_naive(std::span<const double> v) {
  const std::size_t n = v.size();
  if (n < 2) throw std::invalid_argument("q_estimator requires at least 2 values");
  std::vector<double> diffs;
  diffs.reserve(n * (n - 1) / 2);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t l = i + 1; l < n; ++l)
      diffs.push_back(std::abs(v[i] - v[l]));
  const std::uint64_t r = q_order_index(n);
  std::nth_element(diffs.begin(), diffs.begin() + static_cast<long>(r - 1), diffs.end());
  return kQConsistency * diffs[static_cast<std::size_t>(r - 1)];
}

AnomalyScores anomaly_scores(std::span<const double> values, std::span<const int> subset,
                             std::optional<int> class_label) {
  if (subset.size() < 2)
    throw std::invalid_argument("anomaly_scores requires a subset of at least 2 elements");
  std::vector<double> sub;
  sub.reserve(subset.size());
  for (int idx : subset) sub.push_back(values[static_cast<std::size_t>(idx)]);

  AnomalyScores out;
  out.center = median(sub);
  out.scale = q_estimator(sub);
  out.class_label = class_label;
  if (out.scale <= 0.0) {
    std::string where = class_label ? "class " + std::to_string(*class_label)
                                    : "subset of size " + std::to_string(subset.size());
    throw numeric_error("degenerate scale: Q estimator is zero over " + where);
  }
  out.ids.assign(subset.begin(), subset.end());
  out.scores.reserve(subset.size());
  for (double x : sub) out.scores.push_back((x - out.center) / out.scale);
  return out;
}

double tail_heaviness(std::span<const double> scores, int kappa) {
  const int n = static_cast<int>(scores.size());
  if (kappa < 1 || kappa > n)
    throw std::invalid_argument("tail_heaviness kappa out of range [1, n]");
  std::vector<double> work(scores.begin(), scores.end());
  const std::size_t idx = static_cast<std::size_t>(n - kappa);
  std::nth_element(work.begin(), work.begin() + static_cast<long>(idx), work.end());
  return work[idx];
}

}  // namespace inffor
