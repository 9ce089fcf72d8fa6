#pragma once

#include <filesystem>
#include <vector>

#include "inffor/dataset.hpp"
#include "inffor/influence.hpp"
#include "inffor/trainer.hpp"

namespace inffor {

struct MitigationConfig {
  double cutoff_initial = 3.0;  // zeta
  double anneal_step = 0.25;    // psi
  int anneal_step_count = 4;
  double max_removed_fraction = 0.1;  // of the original training set
  int max_iterations = 25;
  EstimatorConfig estimator;
  TrainConfig retrain;
};

enum class MitigationStatus { mitigated, safeguard_tripped, max_iterations };

struct MitigationIteration {
  double cutoff = 0.0;
  std::vector<int> removed_ids;
  double target_loss = 0.0;  // after the retrain
  int target_pred = 0;
};

struct MitigationOutcome {
  MitigationStatus status = MitigationStatus::mitigated;
  std::vector<MitigationIteration> iterations;
  Dataset sanitized;
  CheckpointStore final_store;
  int initial_pred = 0;
};

// Annealed cutoff: zeta_l = zeta_initial - psi * floor(l / step_count).
double cutoff_at(int iteration, const MitigationConfig& cfg);

// Iteratively removes training instances whose per-class anomaly score
// exceeds the annealed cutoff (at least one per iteration), retrains with a
// fresh derived seed, and stops when the target is no longer predicted as
// y_adv. The safeguard check precedes removal: an iteration that would push
// total removals past max_removed_fraction removes nothing and trips.
MitigationOutcome mitigate(const CheckpointStore& store, const Dataset& dataset,
                           const TargetInstance& target, const MitigationConfig& cfg,
                           int jobs = 1);

const char* mitigation_status_name(MitigationStatus status);
void write_mitigation_json(const MitigationOutcome& outcome, const std::filesystem::path& file);

}  // namespace inffor
