#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "inffor/dataset.hpp"
#include "inffor/influence.hpp"
#include "inffor/trainer.hpp"

namespace inffor {

struct TargetRow {
  int test_id = 0;
  int predicted_label = 0;
  double tail_heaviness = 0.0;
  int rank_within_class = 1;
  // (train id, anomaly score) for the kappa largest scores, descending.
  std::vector<std::pair<int, double>> top_scores;
};

struct TargetReport {
  std::string estimator;
  int kappa = 1;
  bool per_class = true;
  // Rows sorted by descending tail heaviness (ties toward smaller test_id).
  std::vector<TargetRow> rows;
};

// For each analysis instance: influence vector -> per-class anomaly scores
// -> kappa-th largest score -> rank within the predicted class.
TargetReport identify_targets(const CheckpointStore& store, const BatchLog* batch_log,
                              const Dataset& dataset,
                              std::span<const AnalysisInstance> analysis,
                              const EstimatorConfig& cfg, int kappa, bool per_class,
                              int jobs = 1);

// Phase 1 ranks with the coarse checkpoint subset (iteration numbers that
// must exist in the store); phase 2 re-ranks the top ceil(keep_fraction * m)
// with the full store. Unretained instances keep their phase-1 order after
// the retained ones. keep_fraction = 1 reproduces identify_targets exactly.
TargetReport two_phase_identify(const CheckpointStore& store, const BatchLog* batch_log,
                                const Dataset& dataset,
                                std::span<const AnalysisInstance> analysis,
                                std::span<const long> coarse_iterations,
                                double keep_fraction, const EstimatorConfig& cfg, int kappa,
                                bool per_class, int jobs = 1);

void write_target_report_csv(const TargetReport& report, const std::filesystem::path& file);
void write_target_report_json(const TargetReport& report, const std::filesystem::path& file);

}  // namespace inffor
