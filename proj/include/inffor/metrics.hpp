#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "inffor/dataset.hpp"
#include "inffor/influence.hpp"
#include "inffor/trainer.hpp"

namespace inffor {

struct PRCurve {
  std::vector<std::pair<double, double>> points;  // (recall, precision) per score group
  double auprc = 0.0;
  int positives = 0;
  int total = 0;
};

// Average-precision step integral over a descending-score sweep; tied scores
// are processed as one block. Requires at least one positive and one negative.
PRCurve auprc(std::span<const double> scores, std::span<const int> positive_flags);

void write_pr_curve_csv(const PRCurve& curve, const std::filesystem::path& file);

// med ||grad|| over the adversarial set divided by med ||grad|| over the
// clean set, at the given parameters.
double gradient_norm_ratio(const ModelSpec& spec, std::span<const double> params,
                           std::span<const Example> adv, std::span<const Example> clean);

// Neighborhood label disagreement in penultimate-feature space: plurality
// count minus same-label count among the k nearest neighbors (self excluded).
// Higher means more suspicious. Scores are in [0, k].
std::vector<double> deep_knn_scores(const ModelSpec& spec, std::span<const double> final_params,
                                    const Dataset& dataset, int k);

// Suspicion scores over an analysis set (higher = more suspicious) for the
// four reference target-identification baselines plus a seeded random one.
struct TargetIdBaselines {
  std::vector<double> max_knn_distance;
  std::vector<double> min_knn_distance;
  std::vector<double> most_certain;   // ascending loss
  std::vector<double> least_certain;  // descending loss
  std::vector<double> random;
};

TargetIdBaselines target_id_baselines(const ModelSpec& spec,
                                      std::span<const double> final_params,
                                      const Dataset& dataset,
                                      std::span<const AnalysisInstance> tests, int kappa,
                                      std::uint64_t seed);

// Removes the top p% of `ranking` (most suspicious first), retrains
// `retrain_count` models per percentage with derived seeds, and reports
// z_filt's misclassification rate per percentage.
std::vector<double> filter_and_retrain(const ModelSpec& spec, const Dataset& dataset,
                                       std::span<const int> ranking,
                                       std::span<const double> percentages,
                                       int retrain_count, const Example& z_filt,
                                       const TrainConfig& cfg, int jobs = 1);

// Fraction of targets the final model predicts as their adversarial label.
double attack_success_rate(const ModelSpec& spec, std::span<const double> final_params,
                           std::span<const TargetInstance> targets);

// Averages one estimator's influence vector over independently trained
// models (fresh derived seed per model).
InfluenceVector average_influence_over_seeds(const ModelSpec& spec, const Dataset& dataset,
                                             const TrainConfig& train_cfg,
                                             const AnalysisInstance& test,
                                             const EstimatorConfig& est_cfg, int num_seeds);

}  // namespace inffor
