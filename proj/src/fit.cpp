#include "inffor/fit.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <json.hpp>
#include <map>
#include <numeric>

#include "inffor/errors.hpp"
#include "inffor/robust_stats.hpp"

namespace inffor {

namespace {

// score rows and order by heaviness; ranks assigned per predicted class
std::vector<TargetRow> score_and_rank(const std::vector<InfluenceVector>& vectors,
                                      const Dataset& dataset, int kappa, bool per_class) {
  std::vector<TargetRow> rows;
  rows.reserve(vectors.size());

  for (const auto& v : vectors) {
    std::vector<int> subset;
    for (int i = 0; i < dataset.size(); ++i) {
      if (!per_class || dataset.examples[static_cast<std::size_t>(i)].label == v.predicted_label)
        subset.push_back(i);
    }
    if (per_class && subset.size() < 2)
      throw config_error("identify_targets: predicted class " +
                         std::to_string(v.predicted_label) +
                         " has fewer than 2 labeled training instances");

    AnomalyScores scores;
    try {
      scores = anomaly_scores(v.values, subset,
                              per_class ? std::optional<int>(v.predicted_label) : std::nullopt);
    } catch (const numeric_error& e) {
      throw numeric_error(std::string(e.what()) + " (test_id " + std::to_string(v.test_id) + ")");
    }

    if (kappa < 1 || static_cast<std::size_t>(kappa) > scores.scores.size())
      throw config_error("identify_targets: kappa out of range for class subset");

    TargetRow row;
    row.test_id = v.test_id;
    row.predicted_label = v.predicted_label;
    row.tail_heaviness = tail_heaviness(scores.scores, kappa);

    // kappa largest scores, ties toward the smaller train id
    std::vector<std::size_t> order(scores.scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      if (scores.scores[a] != scores.scores[b]) return scores.scores[a] > scores.scores[b];
      return dataset.examples[static_cast<std::size_t>(scores.ids[a])].id <
             dataset.examples[static_cast<std::size_t>(scores.ids[b])].id;
    });
    for (int j = 0; j < kappa; ++j) {
      const std::size_t o = order[static_cast<std::size_t>(j)];
      row.top_scores.emplace_back(dataset.examples[static_cast<std::size_t>(scores.ids[o])].id,
                                  scores.scores[o]);
    }
    rows.push_back(std::move(row));
  }

  std::sort(rows.begin(), rows.end(), [](const TargetRow& a, const TargetRow& b) {
    if (a.tail_heaviness != b.tail_heaviness) return a.tail_heaviness > b.tail_heaviness;
    return a.test_id < b.test_id;
  });
  std::map<int, int> class_counter;
  for (auto& row : rows) row.rank_within_class = ++class_counter[row.predicted_label];
  return rows;
}

// ranks recomputed from an already-ordered row sequence
void assign_ranks_in_order(std::vector<TargetRow>& rows) {
  std::map<int, int> class_counter;
  for (auto& row : rows) row.rank_within_class = ++class_counter[row.predicted_label];
}

}  // namespace

TargetReport identify_targets(const CheckpointStore& store, const BatchLog* batch_log,
                              const Dataset& dataset,
                              std::span<const AnalysisInstance> analysis,
                              const EstimatorConfig& cfg, int kappa, bool per_class,
                              int jobs) {
  if (kappa < 1) throw config_error("identify_targets: kappa must be >= 1");
  const auto vectors = batch_influence(store, batch_log, dataset, analysis, cfg, jobs);

  TargetReport report;
  report.estimator = estimator_tag(cfg.kind, cfg.renorm);
  report.kappa = kappa;
  report.per_class = per_class;
  report.rows = score_and_rank(vectors, dataset, kappa, per_class);
  return report;
}

TargetReport two_phase_identify(const CheckpointStore& store, const BatchLog* batch_log,
                                const Dataset& dataset,
                                std::span<const AnalysisInstance> analysis,
                                std::span<const long> coarse_iterations,
                                double keep_fraction, const EstimatorConfig& cfg, int kappa,
                                bool per_class, int jobs) {
  if (keep_fraction <= 0.0 || keep_fraction > 1.0)
    throw config_error("two_phase_identify: keep_fraction must be in (0, 1]");
  if (coarse_iterations.empty())
    throw config_error("two_phase_identify: empty coarse checkpoint subset");

  CheckpointStore coarse;
  coarse.spec = store.spec;
  coarse.batch_size = store.batch_size;
  coarse.config_digest = store.config_digest;
  coarse.final_params = store.final_params;
  coarse.entries.push_back(store.entries.front());
  for (std::size_t e = store.first_estimator_entry(); e < store.entries.size(); ++e) {
    if (std::find(coarse_iterations.begin(), coarse_iterations.end(),
                  store.entries[e].iteration) != coarse_iterations.end())
      coarse.entries.push_back(store.entries[e]);
  }
  if (coarse.entries.size() < 2)
    throw config_error("two_phase_identify: coarse subset matches no stored checkpoints");

  const auto phase1 = identify_targets(coarse, batch_log, dataset, analysis, cfg, kappa,
                                       per_class, jobs);

  const auto keep = static_cast<std::size_t>(
      std::ceil(keep_fraction * static_cast<double>(analysis.size())));
  if (keep >= analysis.size())
    return identify_targets(store, batch_log, dataset, analysis, cfg, kappa, per_class, jobs);

  std::vector<AnalysisInstance> retained;
  for (std::size_t i = 0; i < keep; ++i) {
    const int id = phase1.rows[i].test_id;
    const auto it = std::find_if(analysis.begin(), analysis.end(),
                                 [&](const AnalysisInstance& a) { return a.id == id; });
    retained.push_back(*it);
  }
  const auto phase2 =
      identify_targets(store, batch_log, dataset, retained, cfg, kappa, per_class, jobs);

  TargetReport report;
  report.estimator = phase2.estimator;
  report.kappa = kappa;
  report.per_class = per_class;
  report.rows = phase2.rows;
  for (std::size_t i = keep; i < phase1.rows.size(); ++i)
    report.rows.push_back(phase1.rows[i]);
  assign_ranks_in_order(report.rows);
  return report;
}

void write_target_report_csv(const TargetReport& report, const std::filesystem::path& file) {
  std::ofstream out(file);
  if (!out) throw config_error("cannot write " + file.string());
  out << "test_id,pred_label,tail_heaviness,rank,estimator\n";
  char buf[128];
  for (const auto& row : report.rows) {
    std::snprintf(buf, sizeof(buf), "%d,%d,%.17g,%d,%s\n", row.test_id, row.predicted_label,
                  row.tail_heaviness, row.rank_within_class, report.estimator.c_str());
    out << buf;
  }
}

void write_target_report_json(const TargetReport& report, const std::filesystem::path& file) {
  nlohmann::json j;
  j["estimator"] = report.estimator;
  j["kappa"] = report.kappa;
  j["per_class"] = report.per_class;
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& row : report.rows) {
    nlohmann::json r;
    r["test_id"] = row.test_id;
    r["pred_label"] = row.predicted_label;
    r["tail_heaviness"] = row.tail_heaviness;
    r["rank_within_class"] = row.rank_within_class;
    nlohmann::json top = nlohmann::json::array();
    for (const auto& [id, score] : row.top_scores) top.push_back({{"train_id", id}, {"score", score}});
    r["top_contributors"] = top;
    rows.push_back(std::move(r));
  }
  j["rows"] = rows;
  std::ofstream out(file);
  if (!out) throw config_error("cannot write " + file.string());
  out << j.dump(2) << "\n";
}

}  // namespace inffor
