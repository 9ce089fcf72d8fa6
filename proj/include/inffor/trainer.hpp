#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "inffor/dataset.hpp"
#include "inffor/model.hpp"

namespace inffor {

enum class Optimizer { sgd, adam };
enum class LrSchedule { constant, one_cycle };

struct TrainConfig {
  Optimizer optimizer = Optimizer::sgd;
  double peak_lr = 0.1;
  LrSchedule lr_schedule = LrSchedule::constant;
  int batch_size = 32;
  int epochs = 10;
  int subepoch_checkpoints = 1;  // omega, clamped to iterations per epoch
  std::uint64_t seed = 0;
  bool record_batches = false;
  // Adam moment constants (fixed).
  static constexpr double adam_beta1 = 0.9;
  static constexpr double adam_beta2 = 0.999;
  static constexpr double adam_eps = 1e-8;
};

// One serialized trajectory point. `params` are the parameters *before* the
// recorded iteration ran; `learning_rate` is that iteration's rate. The
// store's first entry is always (0, eta_1, theta_0) and records the initial
// parameters; estimator sums run over the remaining omega*epochs entries.
struct CheckpointEntry {
  long iteration = 0;
  double learning_rate = 0.0;
  ParamVector params;
};

struct CheckpointStore {
  ModelSpec spec;
  int batch_size = 1;  // configured b, used as the per-checkpoint eta/b weight
  std::string config_digest;
  std::vector<CheckpointEntry> entries;
  ParamVector final_params;

  // Entries participating in trajectory-based estimators (skips entry 0).
  std::size_t first_estimator_entry() const { return 1; }
};

// Ordered example ids per training iteration (batches[t-1] holds B_t).
struct BatchLog {
  std::vector<std::vector<int>> batches;
};

struct TrainResult {
  ParamVector final_params;
  CheckpointStore store;
  std::optional<BatchLog> batch_log;
};

int iterations_per_epoch(int n, int batch_size);
double learning_rate_at(const TrainConfig& cfg, long iteration, long total_iterations);

// Deterministic for a fixed seed: init, shuffling and Adam state all derive
// from it. Throws numeric_error if the training loss becomes non-finite.
TrainResult train(const ModelSpec& spec, const Dataset& dataset, const TrainConfig& cfg);

// Checkpoint directory: manifest.json plus one little-endian float64 blob per
// checkpoint and one for the final parameters. Round-trips bit-exactly.
void save_checkpoints(const CheckpointStore& store, const std::filesystem::path& dir);
CheckpointStore load_checkpoints(const std::filesystem::path& dir);

void save_batch_log(const BatchLog& log, const std::filesystem::path& file);
BatchLog load_batch_log(const std::filesystem::path& file);

std::string config_digest(const std::string& serialized_config);

}  // namespace inffor
