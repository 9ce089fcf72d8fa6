#include "inffor/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "inffor/errors.hpp"
#include "inffor/parallel.hpp"
#include "inffor/robust_stats.hpp"
#include "inffor/rng.hpp"

namespace inffor {

PRCurve auprc(std::span<const double> scores, std::span<const int> positive_flags) {
  if (scores.size() != positive_flags.size())
    throw std::invalid_argument("auprc: scores and flags must have equal length");
  const int total = static_cast<int>(scores.size());
  int positives = 0;
  for (int f : positive_flags) positives += f != 0 ? 1 : 0;
  if (positives == 0 || positives == total)
    throw config_error("auprc needs at least one positive and one negative");

  std::vector<int> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    return scores[static_cast<std::size_t>(a)] > scores[static_cast<std::size_t>(b)];
  });

  PRCurve curve;
  curve.positives = positives;
  curve.total = total;

  int tp = 0, seen = 0;
  double prev_recall = 0.0;
  std::size_t i = 0;
  while (i < order.size()) {
    // one block of tied scores
    std::size_t j = i;
    const double s = scores[static_cast<std::size_t>(order[i])];
    while (j < order.size() && scores[static_cast<std::size_t>(order[j])] == s) {
      tp += positive_flags[static_cast<std::size_t>(order[j])] != 0 ? 1 : 0;
      ++seen;
      ++j;
    }
    const double recall = static_cast<double>(tp) / positives;
    const double precision = static_cast<double>(tp) / seen;
    curve.auprc += (recall - prev_recall) * precision;
    curve.points.emplace_back(recall, precision);
    prev_recall = recall;
    i = j;
  }
  return curve;
}

void write_pr_curve_csv(const PRCurve& curve, const std::filesystem::path& file) {
  std::ofstream out(file);
  if (!out) throw config_error("cannot write " + file.string());
  out << "recall,precision\n";
  char buf[80];
  for (const auto& [r, p] : curve.points) {
    std::snprintf(buf, sizeof(buf), "%.17g,%.17g\n", r, p);
    out << buf;
  }
}

double gradient_norm_ratio(const ModelSpec& spec, std::span<const double> params,
                           std::span<const Example> adv, std::span<const Example> clean) {
  if (adv.empty() || clean.empty())
    throw std::invalid_argument("gradient_norm_ratio: both sets must be nonempty");
  const auto med_norm = [&](std::span<const Example> set) {
    std::vector<double> norms;
    norms.reserve(set.size());
    for (const auto& ex : set) {
      const auto g = grad(spec, params, ex);
      double acc = 0.0;
      for (double x : g) acc += x * x;
      norms.push_back(std::sqrt(acc));
    }
    return median(norms);
  };
  const double denom = med_norm(clean);
  if (denom == 0.0) throw numeric_error("gradient_norm_ratio: clean median norm is zero");
  return med_norm(adv) / denom;
}

namespace {

std::vector<std::vector<double>> all_penultimate(const ModelSpec& spec,
                                                 std::span<const double> params,
                                                 const Dataset& dataset) {
  std::vector<std::vector<double>> feats(dataset.examples.size());
  for (std::size_t i = 0; i < feats.size(); ++i)
    feats[i] = penultimate_features(spec, params, dataset.examples[i].features);
  return feats;
}

double sq_distance(std::span<const double> a, std::span<const double> b) {
  double acc = 0.0;
  for (std::size_t j = 0; j < a.size(); ++j) {
    const double diff = a[j] - b[j];
    acc += diff * diff;
  }
  return acc;
}

// indices of the k nearest rows (by squared distance, id tiebreak)
std::vector<int> k_nearest(const std::vector<std::vector<double>>& rows,
                           std::span<const double> query, int k, int exclude) {
  std::vector<std::pair<double, int>> dist;
  dist.reserve(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (static_cast<int>(i) == exclude) continue;
    dist.emplace_back(sq_distance(rows[i], query), static_cast<int>(i));
  }
  std::partial_sort(dist.begin(), dist.begin() + k, dist.end());
  std::vector<int> out;
  out.reserve(static_cast<std::size_t>(k));
  for (int i = 0; i < k; ++i) out.push_back(dist[static_cast<std::size_t>(i)].second);
  return out;
}

}  // namespace

std::vector<double> deep_knn_scores(const ModelSpec& spec, std::span<const double> final_params,
                                    const Dataset& dataset, int k) {
  const int n = dataset.size();
  if (k < 1 || k >= n) throw std::invalid_argument("deep_knn_scores: require 1 <= k < n");
  const auto feats = all_penultimate(spec, final_params, dataset);

  std::vector<double> scores(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const auto neighbors = k_nearest(feats, feats[static_cast<std::size_t>(i)], k, i);
    std::vector<int> counts(static_cast<std::size_t>(dataset.num_classes), 0);
    for (int nb : neighbors) ++counts[static_cast<std::size_t>(dataset.examples[static_cast<std::size_t>(nb)].label)];
    const int plurality = *std::max_element(counts.begin(), counts.end());
    const int same = counts[static_cast<std::size_t>(dataset.examples[static_cast<std::size_t>(i)].label)];
    scores[static_cast<std::size_t>(i)] = static_cast<double>(plurality - same);
  }
  return scores;
}

TargetIdBaselines target_id_baselines(const ModelSpec& spec,
                                      std::span<const double> final_params,
                                      const Dataset& dataset,
                                      std::span<const AnalysisInstance> tests, int kappa,
                                      std::uint64_t seed) {
  if (kappa < 1 || kappa >= dataset.size())
    throw std::invalid_argument("target_id_baselines: require 1 <= kappa < n");
  const auto feats = all_penultimate(spec, final_params, dataset);

  TargetIdBaselines out;
  Rng rng(seed);
  for (const auto& t : tests) {
    const auto f = penultimate_features(spec, final_params, t.features);
    std::vector<double> dists;
    dists.reserve(feats.size());
    for (const auto& row : feats) dists.push_back(sq_distance(row, f));
    std::nth_element(dists.begin(), dists.begin() + (kappa - 1), dists.end());
    const double kth = std::sqrt(dists[static_cast<std::size_t>(kappa - 1)]);
    out.max_knn_distance.push_back(kth);
    out.min_knn_distance.push_back(-kth);

    const int yhat = predict_label(spec, final_params, t.features);
    Example te;
    te.features = t.features;
    te.label = yhat;
    const double l = example_loss(spec, final_params, te);
    out.most_certain.push_back(-l);
    out.least_certain.push_back(l);
    out.random.push_back(rng.uniform01());
  }
  return out;
}

std::vector<double> filter_and_retrain(const ModelSpec& spec, const Dataset& dataset,
                                       std::span<const int> ranking,
                                       std::span<const double> percentages,
                                       int retrain_count, const Example& z_filt,
                                       const TrainConfig& cfg, int jobs) {
  if (ranking.size() != dataset.examples.size())
    throw std::invalid_argument("filter_and_retrain: ranking must cover all training ids");
  for (double p : percentages)
    if (p < 0.0 || p >= 100.0)
      throw config_error("filter_and_retrain: percentages must lie in [0, 100)");

  std::vector<double> rates(percentages.size(), 0.0);
  for (std::size_t pi = 0; pi < percentages.size(); ++pi) {
    const auto remove_count = static_cast<std::size_t>(
        std::floor(percentages[pi] / 100.0 * static_cast<double>(dataset.size()) + 0.5));
    std::vector<int> removed(ranking.begin(),
                             ranking.begin() + static_cast<long>(remove_count));
    std::sort(removed.begin(), removed.end());

    Dataset filtered;
    filtered.num_classes = dataset.num_classes;
    filtered.input_dim = dataset.input_dim;
    filtered.origin = dataset.origin;
    for (const auto& ex : dataset.examples)
      if (!std::binary_search(removed.begin(), removed.end(), ex.id))
        filtered.examples.push_back(ex);

    std::vector<int> errors(static_cast<std::size_t>(retrain_count), 0);
    parallel_for(static_cast<std::size_t>(retrain_count), jobs, [&](std::size_t rep) {
      TrainConfig rep_cfg = cfg;
      rep_cfg.seed = derive_seed(cfg.seed, pi * 1000 + rep);
      rep_cfg.record_batches = false;
      const auto result = train(spec, filtered, rep_cfg);
      const int pred = predict_label(spec, result.final_params.values, z_filt.features);
      errors[rep] = pred != z_filt.label ? 1 : 0;
    });
    rates[pi] = static_cast<double>(std::accumulate(errors.begin(), errors.end(), 0)) /
                static_cast<double>(retrain_count);
  }
  return rates;
}

double attack_success_rate(const ModelSpec& spec, std::span<const double> final_params,
                           std::span<const TargetInstance> targets) {
  if (targets.empty()) throw std::invalid_argument("attack_success_rate: empty target set");
  int hits = 0;
  for (const auto& t : targets)
    hits += predict_label(spec, final_params, t.features) == t.y_adv ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(targets.size());
}

InfluenceVector average_influence_over_seeds(const ModelSpec& spec, const Dataset& dataset,
                                             const TrainConfig& train_cfg,
                                             const AnalysisInstance& test,
                                             const EstimatorConfig& est_cfg, int num_seeds) {
  if (num_seeds < 1) throw config_error("average_influence_over_seeds: num_seeds >= 1");
  InfluenceVector avg;
  for (int s = 0; s < num_seeds; ++s) {
    TrainConfig cfg = train_cfg;
    cfg.seed = derive_seed(train_cfg.seed, static_cast<std::uint64_t>(s));
    cfg.record_batches = cfg.record_batches || est_cfg.kind == EstimatorKind::tracin;
    const auto result = train(spec, dataset, cfg);
    const BatchLog* log = result.batch_log ? &*result.batch_log : nullptr;
    const auto v = estimate_influence(result.store, log, dataset, test.features, test.id,
                                      est_cfg);
    if (s == 0) {
      avg = v;
    } else {
      for (std::size_t i = 0; i < avg.values.size(); ++i) avg.values[i] += v.values[i];
    }
  }
  for (auto& x : avg.values) x /= static_cast<double>(num_seeds);
  return avg;
}

}  // namespace inffor
