#include "inffor/mitigation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <json.hpp>

#include "inffor/errors.hpp"
#include "inffor/robust_stats.hpp"
#include "inffor/rng.hpp"

namespace inffor {

double cutoff_at(int iteration, const MitigationConfig& cfg) {
  if (iteration < 0) throw config_error("cutoff_at: iteration must be >= 0");
  if (cfg.anneal_step_count < 1) throw config_error("cutoff_at: anneal_step_count must be >= 1");
  return cfg.cutoff_initial - cfg.anneal_step * (iteration / cfg.anneal_step_count);
}

MitigationOutcome mitigate(const CheckpointStore& store, const Dataset& dataset,
                           const TargetInstance& target, const MitigationConfig& cfg,
                           int jobs) {
  if (cfg.cutoff_initial <= 0.0) throw config_error("mitigate: cutoff_initial must be > 0");
  if (cfg.max_removed_fraction <= 0.0 || cfg.max_removed_fraction > 1.0)
    throw config_error("mitigate: max_removed_fraction must be in (0, 1]");
  if (cfg.estimator.kind == EstimatorKind::tracin)
    throw config_error("mitigate: tracin needs per-iteration batch logs; "
                       "use a checkpoint estimator");

  MitigationOutcome outcome;
  outcome.sanitized = dataset;
  outcome.final_store = store;

  const int y_adv = target.y_adv;
  outcome.initial_pred =
      predict_label(store.spec, store.final_params.values, target.features);
  if (outcome.initial_pred != y_adv) {
    outcome.status = MitigationStatus::mitigated;  // nothing to do
    return outcome;
  }

  const auto n_original = static_cast<double>(dataset.size());
  const auto budget = static_cast<long>(std::floor(cfg.max_removed_fraction * n_original));
  long removed_total = 0;

  for (int l = 0; l < cfg.max_iterations; ++l) {
    const auto& cur_store = outcome.final_store;
    Dataset& working = outcome.sanitized;

    AnalysisInstance inst{target.id, target.features};
    const auto v =
        batch_influence(cur_store, nullptr, working, std::span(&inst, 1), cfg.estimator,
                        jobs)[0];
    std::vector<int> subset;
    for (int i = 0; i < working.size(); ++i)
      if (working.examples[static_cast<std::size_t>(i)].label == v.predicted_label)
        subset.push_back(i);
    if (subset.size() < 2)
      throw numeric_error("mitigate: fewer than 2 training instances left in class " +
                          std::to_string(v.predicted_label));
    const auto scores = anomaly_scores(v.values, subset, v.predicted_label);

    const double cutoff = cutoff_at(l, cfg);
    std::vector<int> positions;  // into working.examples
    for (std::size_t j = 0; j < scores.scores.size(); ++j)
      if (scores.scores[j] > cutoff) positions.push_back(scores.ids[j]);
    if (positions.empty()) {
      // miscalibrated cutoff: fall back to the single largest score
      std::size_t best = 0;
      for (std::size_t j = 1; j < scores.scores.size(); ++j)
        if (scores.scores[j] > scores.scores[best]) best = j;
      positions.push_back(scores.ids[best]);
    }

    if (removed_total + static_cast<long>(positions.size()) > budget) {
      outcome.status = MitigationStatus::safeguard_tripped;
      return outcome;
    }

    MitigationIteration record;
    record.cutoff = cutoff;
    for (int pos : positions)
      record.removed_ids.push_back(working.examples[static_cast<std::size_t>(pos)].id);
    std::sort(record.removed_ids.begin(), record.removed_ids.end());

    std::sort(positions.begin(), positions.end());
    Dataset next;
    next.num_classes = working.num_classes;
    next.input_dim = working.input_dim;
    next.origin = working.origin;
    for (int i = 0; i < working.size(); ++i)
      if (!std::binary_search(positions.begin(), positions.end(), i))
        next.examples.push_back(working.examples[static_cast<std::size_t>(i)]);
    removed_total += static_cast<long>(positions.size());

    TrainConfig retrain_cfg = cfg.retrain;
    retrain_cfg.seed = derive_seed(cfg.retrain.seed, static_cast<std::uint64_t>(l + 1));
    retrain_cfg.record_batches = false;
    auto result = train(cur_store.spec, next, retrain_cfg);

    record.target_pred =
        predict_label(cur_store.spec, result.final_params.values, target.features);
    Example te;
    te.features = target.features;
    te.label = record.target_pred;
    record.target_loss =
        example_loss(cur_store.spec, result.final_params.values, te);

    outcome.sanitized = std::move(next);
    outcome.final_store = std::move(result.store);
    outcome.iterations.push_back(std::move(record));

    if (outcome.iterations.back().target_pred != y_adv) {
      outcome.status = MitigationStatus::mitigated;
      return outcome;
    }
  }
  outcome.status = MitigationStatus::max_iterations;
  return outcome;
}

const char* mitigation_status_name(MitigationStatus status) {
  switch (status) {
    case MitigationStatus::mitigated: return "mitigated";
    case MitigationStatus::safeguard_tripped: return "safeguard_tripped";
    case MitigationStatus::max_iterations: return "max_iterations";
  }
  return "?";
}

void write_mitigation_json(const MitigationOutcome& outcome,
                           const std::filesystem::path& file) {
  nlohmann::json j;
  j["status"] = mitigation_status_name(outcome.status);
  j["initial_pred"] = outcome.initial_pred;
  j["final_train_size"] = outcome.sanitized.size();
  nlohmann::json iters = nlohmann::json::array();
  for (const auto& it : outcome.iterations) {
    iters.push_back({{"cutoff", it.cutoff},
                     {"removed_ids", it.removed_ids},
                     {"target_loss", it.target_loss},
                     {"target_pred", it.target_pred}});
  }
  j["iterations"] = iters;
  std::ofstream out(file);
  if (!out) throw config_error("cannot write " + file.string());
  out << j.dump(2) << "\n";
}

}  // namespace inffor
