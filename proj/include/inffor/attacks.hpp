#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "inffor/dataset.hpp"
#include "inffor/influence.hpp"
#include "inffor/trainer.hpp"

namespace inffor {

Dataset make_clean_dataset(const CleanSpec& spec, std::uint64_t seed);

enum class TriggerKind { one_pixel, four_pixel, blend };

struct TriggerSpec {
  TriggerKind kind = TriggerKind::one_pixel;
  // Max L2 perturbation before clipping to [0,1]. Pixel triggers spread it
  // evenly over their support, so the per-pixel step saturates at the
  // defaults (one_pixel 1.0, four_pixel 2.0) and application is a projection.
  double epsilon = 1.0;
  std::uint64_t noise_seed = 7;  // blend pattern
};

std::vector<double> apply_trigger(const TriggerSpec& trigger, std::span<const double> x,
                                  int grid_h, int grid_w);

// Injects m draws from a separate, well-separated cluster labeled y_adv
// (blob datasets only). Targets are fresh held-out draws from that cluster.
AttackedDataset group_flip_attack(const Dataset& clean, int m, int y_adv,
                                  std::uint64_t seed, int num_targets = 20);

// Perturbs ceil(rate*n) training instances of class y_target with the
// trigger and relabels them y_adv. Targets are held-out y_target instances
// with the trigger applied.
AttackedDataset backdoor_attack(const Dataset& train, const Dataset& heldout,
                                const TriggerSpec& trigger, double rate, int y_target,
                                int y_adv, std::uint64_t seed, int num_targets = 10);

// m noised feature collisions with the target, labeled y_adv.
AttackedDataset single_target_poison(const Dataset& train, const Example& target, int m,
                                     int y_adv, double noise_sd, std::uint64_t seed);

// Picks the m pool candidates with the smallest estimator value on the
// target under a surrogate trajectory. Ties break toward the smaller id.
std::vector<int> adaptive_seed_selection(std::span<const Example> pool,
                                         const CheckpointStore& surrogate,
                                         const TargetInstance& target, int m,
                                         const EstimatorConfig& cfg);

}  // namespace inffor
