#pragma once

#include <optional>
#include <span>
#include <vector>

namespace inffor {

// Gaussian consistency constant for the Q scale estimator.
inline constexpr double kQConsistency = 2.2219;

// Lower median: element at index ceil(n/2)-1 of the sorted vector.
double median(std::span<const double> v);

// Rousseeuw-Croux Q scale: c times the r-th smallest of the C(n,2) pairwise
// absolute differences, r = C(floor(n/2)+1, 2). q_estimator uses an
// O(n log^2 n) selection; q_estimator_naive is the O(n^2) reference. The two
// agree exactly.
double q_estimator(std::span<const double> v);
double q_estimator_naive(std::span<const double> v);

// Standardized anomaly scores sigma_i = (v_i - mu)/s for the elements named
// by `subset`, with mu = median and s = Q computed over that subset.
struct AnomalyScores {
  double center = 0.0;
  double scale = 0.0;
  std::vector<int> ids;       // indices into the scored vector
  std::vector<double> scores; // aligned with ids
  std::optional<int> class_label;
};

// Throws numeric_error when Q over the subset is zero (degenerate scale).
AnomalyScores anomaly_scores(std::span<const double> values, std::span<const int> subset,
                             std::optional<int> class_label = {});

// kappa-th largest score, 1 <= kappa <= n.
double tail_heaviness(std::span<const double> scores, int kappa);

}  // namespace inffor
