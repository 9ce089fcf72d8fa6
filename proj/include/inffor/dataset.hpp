#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace inffor {

struct Example {
  int id = 0;
  std::vector<double> features;
  int label = 0;
  // Ground-truth attack flag. Read only by evaluation code, never by
  // estimators, target identification, or mitigation.
  bool is_adversarial = false;
};

enum class CleanKind { gaussian_blobs, grid_images };

// Generator description for the synthetic datasets. Kept alongside the data
// so attacks can place clusters / triggers consistently with the source
// distribution.
struct CleanSpec {
  CleanKind kind = CleanKind::gaussian_blobs;
  int classes = 2;
  int size = 200;  // total examples, split evenly across classes
  // gaussian_blobs
  int dim = 2;
  double separation = 6.0;  // min distance between class means, in noise sigmas
  // grid_images
  int grid_h = 8;
  int grid_w = 8;
  double grid_noise = 0.1;          // base per-pixel noise sigma
  double grid_noise_spread = 0.8;   // lognormal sigma of the per-example scale
  std::uint64_t template_seed = 17;  // per-class templates, shared across draws
};

struct Dataset {
  std::vector<Example> examples;
  int num_classes = 2;
  int input_dim = 0;
  std::optional<CleanSpec> origin;

  int size() const { return static_cast<int>(examples.size()); }
};

// One attack target: features to analyze, the true label (evaluation only)
// and the label the attacker wants the model to emit.
struct TargetInstance {
  int id = 0;
  std::vector<double> features;
  int y_true = -1;  // -1 when the instance has no clean class (group-flip cluster)
  int y_adv = 0;
};

// A test instance submitted for target identification. Labels are not part
// of the input; the predicted label is derived from the model.
struct AnalysisInstance {
  int id = 0;
  std::vector<double> features;
};

struct AttackDescriptor {
  std::string kind = "none";  // none | group_flip | backdoor | single_target_poison
  double rate = 0.0;
  int adversarial_count = 0;
  int y_target = -1;
  int y_adv = -1;
  std::string trigger = "";
  double epsilon = 0.0;
  // Set by an explicit post-craft verification run (CLI `attack --verify`).
  std::optional<bool> verified_success;
};

struct AttackedDataset {
  Dataset train;
  std::vector<TargetInstance> targets;
  AttackDescriptor descriptor;
};

// On-disk layout: <dir>/dataset.json manifest, <dir>/features.bin
// (row-major float64, little endian), <dir>/examples.csv with
// id,label,is_adversarial rows.  Attacked datasets add targets.csv
// and targets.bin in the same encoding.
void save_dataset(const Dataset& ds, const std::filesystem::path& dir,
                  const AttackDescriptor* descriptor = nullptr);
Dataset load_dataset(const std::filesystem::path& dir);

void save_targets(const std::vector<TargetInstance>& targets, int dim,
                  const std::filesystem::path& dir);
std::vector<TargetInstance> load_targets(const std::filesystem::path& dir);

AttackDescriptor load_descriptor(const std::filesystem::path& dir);

}  // namespace inffor
