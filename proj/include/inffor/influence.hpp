#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "inffor/dataset.hpp"
#include "inffor/model.hpp"
#include "inffor/trainer.hpp"

namespace inffor {

enum class EstimatorKind { influence_functions, representer_point, tracin, tracincp };
enum class Renorm { none, global, layerwise };

struct EstimatorConfig {
  EstimatorKind kind = EstimatorKind::tracincp;
  Renorm renorm = Renorm::global;  // tracincp + global is the cosine aggregate
  LissaConfig lissa;
  std::uint64_t lissa_seed = 0x1f0b5eedULL;
};

// Short tags: if, if-rn, if-rn-l, rp, rp-rn, tracin, tracin-rn, tracin-rn-l,
// tracincp, gas, gas-l.
std::string estimator_tag(EstimatorKind kind, Renorm renorm);
EstimatorConfig parse_estimator_tag(const std::string& tag);

struct InfluenceVector {
  int test_id = 0;
  EstimatorKind kind = EstimatorKind::tracincp;
  Renorm renorm = Renorm::none;
  int predicted_label = 0;
  std::vector<double> values;  // aligned with dataset.examples order
};

// Argmax of the final activations; binary thresholds the single logit at 0.
// Ties break toward the smaller class index.
int predict_label(const ModelSpec& spec, std::span<const double> params,
                  std::span<const double> x);

// Per-checkpoint accumulation term: dot product of the two gradients, with
// unit normalization (global) or per-layer-span normalization (layerwise).
// Zero-norm (sub)vectors contribute zero.
double gradient_term(std::span<const double> g_train, std::span<const double> g_test,
                     std::span<const LayerSpan> spans, Renorm renorm);

InfluenceVector influence_functions(const ModelSpec& spec, std::span<const double> final_params,
                                    const Dataset& dataset, std::span<const double> x_test,
                                    int test_id, const LissaConfig& lissa, Renorm renorm,
                                    std::uint64_t lissa_seed);

// Requires weight_decay > 0.
InfluenceVector representer_point(const ModelSpec& spec, std::span<const double> final_params,
                                  const Dataset& dataset, std::span<const double> x_test,
                                  int test_id, Renorm renorm);

InfluenceVector tracin(const CheckpointStore& store, const BatchLog& batch_log,
                       const Dataset& dataset, std::span<const double> x_test, int test_id,
                       Renorm renorm);

InfluenceVector tracincp(const CheckpointStore& store, const Dataset& dataset,
                         std::span<const double> x_test, int test_id);

// Learning-rate-weighted gradient cosine similarity summed over checkpoints;
// layerwise normalizes each layer span of both gradients independently.
InfluenceVector gas(const CheckpointStore& store, const Dataset& dataset,
                    std::span<const double> x_test, int test_id, bool layerwise);

// Dispatch on an EstimatorConfig. batch_log may be null unless kind==tracin.
InfluenceVector estimate_influence(const CheckpointStore& store, const BatchLog* batch_log,
                                   const Dataset& dataset, std::span<const double> x_test,
                                   int test_id, const EstimatorConfig& cfg);

// Evaluates many test instances with training gradients computed once per
// checkpoint. Results are bitwise identical to sequential single calls.
std::vector<InfluenceVector> batch_influence(const CheckpointStore& store,
                                             const BatchLog* batch_log, const Dataset& dataset,
                                             std::span<const AnalysisInstance> tests,
                                             const EstimatorConfig& cfg, int jobs = 1);

void write_influence_csv(const InfluenceVector& v, const Dataset& dataset,
                         const std::filesystem::path& file);
// values as little-endian float64 plus a JSON sidecar naming
// estimator/renorm/test_id.
void write_influence_binary(const InfluenceVector& v, const std::filesystem::path& file);

}  // namespace inffor
