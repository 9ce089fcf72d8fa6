#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "inffor/dataset.hpp"
#include "inffor/rng.hpp"

namespace inffor {

struct LayerSpan {
  int layer_id = 0;
  std::size_t begin = 0;
  std::size_t end = 0;  // exclusive
};

// Flat parameter vector with its layer partition. Gradients produced for a
// model always share the model's length and spans.
struct ParamVector {
  std::vector<double> values;
  std::vector<LayerSpan> spans;
};

enum class Architecture { linear, mlp };
enum class Activation { relu, tanh };
enum class LossKind { bce_single_logit, softmax_ce };

struct ModelSpec {
  Architecture architecture = Architecture::linear;
  std::vector<int> hidden_sizes;  // mlp only
  Activation activation = Activation::relu;
  int num_classes = 2;
  int input_dim = 2;
  double weight_decay = 0.0;
};

// Binary classification uses a single output logit; multiclass uses one
// logit per class.
int output_dim(const ModelSpec& spec);
LossKind loss_kind(const ModelSpec& spec);
std::size_t param_count(const ModelSpec& spec);
std::vector<LayerSpan> layer_spans(const ModelSpec& spec);

// Throws config_error if the spans do not partition [0, len) in order.
void validate_param_vector(const ParamVector& pv);

// Seeded init: weights ~ N(0, 1/fan_in), biases zero.
ParamVector init_params(const ModelSpec& spec, Rng& rng);

// Pre-softmax activations.
std::vector<double> forward(const ModelSpec& spec, std::span<const double> params,
                            std::span<const double> x);

double loss(std::span<const double> activations, int label, LossKind kind);
double example_loss(const ModelSpec& spec, std::span<const double> params,
                    const Example& ex, std::optional<int> label_override = {});

// Analytic per-example gradient of l(z; theta), including the weight-decay
// term lambda*||theta||^2 when weight_decay > 0.
std::vector<double> grad(const ModelSpec& spec, std::span<const double> params,
                         const Example& ex, std::optional<int> label_override = {});

// Input to the final linear layer: x itself for a linear model, the last
// hidden activation for an MLP.
std::vector<double> penultimate_features(const ModelSpec& spec,
                                         std::span<const double> params,
                                         std::span<const double> x);

// H*v for H = (1/n) sum_i  d^2/dtheta^2 l(z_i; theta), computed exactly with
// a forward-over-reverse second differentiation pass.
std::vector<double> hvp(const ModelSpec& spec, std::span<const double> params,
                        const Dataset& dataset, std::span<const double> v);
std::vector<double> hvp_subset(const ModelSpec& spec, std::span<const double> params,
                               const Dataset& dataset, std::span<const int> indices,
                               std::span<const double> v);

struct LissaConfig {
  double damp = 1e-2;    // beta
  double scale = 1e4;    // gamma
  int depth = 1000;      // t
  int repeats = 10;      // r
  int batch_size = 1;
};

// Stochastic estimate of H^-1 v: averages r runs of the recursion
// h_j = v + (I - (H_batch + beta I)/gamma) h_{j-1}, rescaled by 1/gamma.
// Throws numeric_error when an iterate diverges (|h| > 1e8), which indicates
// a (damp, scale) misconfiguration.
std::vector<double> lissa_inverse_hvp(const ModelSpec& spec,
                                      std::span<const double> params,
                                      const Dataset& dataset,
                                      std::span<const double> v,
                                      const LissaConfig& cfg, Rng& rng);

}  // namespace inffor
