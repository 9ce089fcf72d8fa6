#include "inffor/model.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "inffor/detail/dual.hpp"
#include "inffor/errors.hpp"

namespace inffor {

namespace {

using detail::Dual;
using detail::value_of;

struct LayerShape {
  int in = 0;
  int out = 0;
  std::size_t w_off = 0;  // row-major (out x in) weights
  std::size_t b_off = 0;
};

std::vector<LayerShape> layer_shapes(const ModelSpec& spec) {
  std::vector<LayerShape> shapes;
  std::vector<int> widths;
  widths.push_back(spec.input_dim);
  if (spec.architecture == Architecture::mlp) {
    for (int h : spec.hidden_sizes) widths.push_back(h);
  }
  widths.push_back(output_dim(spec));

  std::size_t off = 0;
  for (std::size_t k = 0; k + 1 < widths.size(); ++k) {
    LayerShape s;
    s.in = widths[k];
    s.out = widths[k + 1];
    s.w_off = off;
    s.b_off = off + static_cast<std::size_t>(s.in) * s.out;
    off = s.b_off + s.out;
    shapes.push_back(s);
  }
  return shapes;
}

template <class T>
T softplus(T x) {
  if (value_of(x) > 0.0) return x + log1p(exp(-x));
  return log1p(exp(x));
}

template <class T>
T sigmoid(T x) {
  if (value_of(x) >= 0.0) {
    const T e = exp(-x);
    return T(1.0) / (T(1.0) + e);
  }
  const T e = exp(x);
  return e / (T(1.0) + e);
}

template <class T>
T activate(T x, Activation act) {
  return act == Activation::relu ? detail::relu(x) : tanh(x);
}

template <class T>
T activate_derivative(T post, T pre, Activation act) {
  if (act == Activation::relu) return value_of(pre) > 0.0 ? T(1.0) : T(0.0);
  return T(1.0) - post * post;  // tanh'
}

template <class T>
struct Trace {
  std::vector<std::vector<T>> pre;   // hidden pre-activations
  std::vector<std::vector<T>> post;  // hidden activations
  std::vector<T> logits;
};

template <class T>
void forward_impl(const ModelSpec& spec, std::span<const T> params,
                  std::span<const double> x, Trace<T>& tr) {
  const auto shapes = layer_shapes(spec);
  tr.pre.assign(shapes.size() - 1, {});
  tr.post.assign(shapes.size() - 1, {});

  std::vector<T> cur(x.begin(), x.end());
  for (std::size_t k = 0; k < shapes.size(); ++k) {
    const LayerShape& s = shapes[k];
    std::vector<T> next(static_cast<std::size_t>(s.out));
    for (int o = 0; o < s.out; ++o) {
      T acc = params[s.b_off + o];
      const T* w = params.data() + s.w_off + static_cast<std::size_t>(o) * s.in;
      for (int i = 0; i < s.in; ++i) acc += w[i] * cur[i];
      next[o] = acc;
    }
    if (k + 1 < shapes.size()) {
      tr.pre[k] = next;
      for (auto& u : next) u = activate(u, spec.activation);
      tr.post[k] = next;
      cur = std::move(next);
    } else {
      tr.logits = std::move(next);
    }
  }
}

template <class T>
T loss_from_logits(LossKind kind, std::span<const T> logits, int label) {
  if (kind == LossKind::bce_single_logit) {
    if (label != 0 && label != 1) throw std::invalid_argument("bce label must be 0 or 1");
    const T a = logits[0];
    return label == 1 ? softplus(-a) : softplus(a);
  }
  if (label < 0 || label >= static_cast<int>(logits.size()))
    throw std::invalid_argument("label index out of range for softmax loss");
  double m = value_of(logits[0]);
  for (const T& a : logits) m = std::max(m, value_of(a));
  // summing in value order keeps the loss exactly permutation-invariant
  std::vector<T> terms;
  terms.reserve(logits.size());
  for (const T& a : logits) terms.push_back(exp(a - T(m)));
  std::stable_sort(terms.begin(), terms.end(),
                   [](const T& a, const T& b) { return value_of(a) < value_of(b); });
  T sum(0.0);
  for (const T& t : terms) sum += t;
  return log(sum) - (logits[label] - T(m));
}

// d loss / d logits.
template <class T>
std::vector<T> logit_gradient(LossKind kind, std::span<const T> logits, int label) {
  std::vector<T> g(logits.size());
  if (kind == LossKind::bce_single_logit) {
    g[0] = sigmoid(logits[0]) - T(static_cast<double>(label));
    return g;
  }
  double m = value_of(logits[0]);
  for (const T& a : logits) m = std::max(m, value_of(a));
  T sum(0.0);
  for (const T& a : logits) sum += exp(a - T(m));
  for (std::size_t j = 0; j < logits.size(); ++j) g[j] = exp(logits[j] - T(m)) / sum;
  g[label] -= T(1.0);
  return g;
}

template <class T>
void grad_impl(const ModelSpec& spec, std::span<const T> params,
               std::span<const double> x, int label, std::vector<T>& out) {
  const auto shapes = layer_shapes(spec);
  Trace<T> tr;
  forward_impl(spec, params, x, tr);

  out.assign(params.size(), T(0.0));
  std::vector<T> delta =
      logit_gradient<T>(loss_kind(spec), std::span<const T>(tr.logits), label);

  for (std::size_t k = shapes.size(); k-- > 0;) {
    const LayerShape& s = shapes[k];
    // inputs to this layer
    std::vector<T> input;
    if (k == 0) {
      input.assign(x.begin(), x.end());
    } else {
      input = tr.post[k - 1];
    }
    std::vector<T> prev_delta(static_cast<std::size_t>(s.in), T(0.0));
    for (int o = 0; o < s.out; ++o) {
      const std::size_t row = s.w_off + static_cast<std::size_t>(o) * s.in;
      out[s.b_off + o] += delta[o];
      for (int i = 0; i < s.in; ++i) {
        out[row + i] += delta[o] * input[i];
        prev_delta[i] += params[row + i] * delta[o];
      }
    }
    if (k > 0) {
      for (int i = 0; i < s.in; ++i)
        prev_delta[i] *= activate_derivative(tr.post[k - 1][i], tr.pre[k - 1][i],
                                             spec.activation);
      delta = std::move(prev_delta);
    }
  }

  if (spec.weight_decay > 0.0) {
    const T two_lambda(2.0 * spec.weight_decay);
    for (std::size_t j = 0; j < params.size(); ++j) out[j] += two_lambda * params[j];
  }
}

void check_input(const ModelSpec& spec, std::span<const double> x) {
  if (static_cast<int>(x.size()) != spec.input_dim)
    throw std::invalid_argument("feature vector length does not match model input_dim");
}

void check_params(const ModelSpec& spec, std::span<const double> params) {
  if (params.size() != param_count(spec))
    throw std::invalid_argument("parameter vector length does not match model spec");
}

}  // namespace

int output_dim(const ModelSpec& spec) {
  return spec.num_classes == 2 ? 1 : spec.num_classes;
}

LossKind loss_kind(const ModelSpec& spec) {
  return spec.num_classes == 2 ? LossKind::bce_single_logit : LossKind::softmax_ce;
}

std::size_t param_count(const ModelSpec& spec) {
  std::size_t count = 0;
  for (const auto& s : layer_shapes(spec))
    count += static_cast<std::size_t>(s.in) * s.out + s.out;
  return count;
}

std::vector<LayerSpan> layer_spans(const ModelSpec& spec) {
  std::vector<LayerSpan> spans;
  int id = 0;
  for (const auto& s : layer_shapes(spec)) {
    spans.push_back({id++, s.w_off, s.b_off + s.out});
  }
  return spans;
}

void validate_param_vector(const ParamVector& pv) {
  std::size_t expect = 0;
  for (const auto& s : pv.spans) {
    if (s.begin != expect || s.end <= s.begin)
      throw config_error("layer spans must partition the parameter vector contiguously");
    expect = s.end;
  }
  if (expect != pv.values.size())
    throw config_error("layer spans do not cover the full parameter vector");
}

ParamVector init_params(const ModelSpec& spec, Rng& rng) {
  ParamVector pv;
  pv.values.assign(param_count(spec), 0.0);
  pv.spans = layer_spans(spec);
  for (const auto& s : layer_shapes(spec)) {
    const double sd = 1.0 / std::sqrt(static_cast<double>(s.in));
    for (std::size_t j = 0; j < static_cast<std::size_t>(s.in) * s.out; ++j)
      pv.values[s.w_off + j] = sd * rng.normal();
  }
  return pv;
}

std::vector<double> forward(const ModelSpec& spec, std::span<const double> params,
                            std::span<const double> x) {
  check_input(spec, x);
  check_params(spec, params);
  Trace<double> tr;
  forward_impl<double>(spec, params, x, tr);
  return tr.logits;
}

double loss(std::span<const double> activations, int label, LossKind kind) {
  return loss_from_logits<double>(kind, activations, label);
}

double example_loss(const ModelSpec& spec, std::span<const double> params,
                    const Example& ex, std::optional<int> label_override) {
  const auto logits = forward(spec, params, ex.features);
  double l = loss(logits, label_override.value_or(ex.label), loss_kind(spec));
  if (spec.weight_decay > 0.0) {
    double sq = 0.0;
    for (double p : params) sq += p * p;
    l += spec.weight_decay * sq;
  }
  return l;
}

std::vector<double> grad(const ModelSpec& spec, std::span<const double> params,
                         const Example& ex, std::optional<int> label_override) {
  check_input(spec, ex.features);
  check_params(spec, params);
  std::vector<double> g;
  grad_impl<double>(spec, params, ex.features, label_override.value_or(ex.label), g);
  return g;
}

std::vector<double> penultimate_features(const ModelSpec& spec,
                                         std::span<const double> params,
                                         std::span<const double> x) {
  check_input(spec, x);
  check_params(spec, params);
  if (spec.architecture == Architecture::linear)
    return std::vector<double>(x.begin(), x.end());
  Trace<double> tr;
  forward_impl<double>(spec, params, x, tr);
  return tr.post.back();
}

std::vector<double> hvp_subset(const ModelSpec& spec, std::span<const double> params,
                               const Dataset& dataset, std::span<const int> indices,
                               std::span<const double> v) {
  check_params(spec, params);
  if (v.size() != params.size())
    throw std::invalid_argument("hvp direction length does not match parameter count");
  if (indices.empty()) throw std::invalid_argument("hvp over empty example set");

  std::vector<Dual> dual_params(params.size());
  for (std::size_t j = 0; j < params.size(); ++j) dual_params[j] = {params[j], v[j]};

  std::vector<double> result(params.size(), 0.0);
  std::vector<Dual> g;
  for (int idx : indices) {
    const Example& ex = dataset.examples.at(static_cast<std::size_t>(idx));
    check_input(spec, ex.features);
    grad_impl<Dual>(spec, std::span<const Dual>(dual_params), ex.features, ex.label, g);
    for (std::size_t j = 0; j < params.size(); ++j) result[j] += g[j].d;
  }
  const double inv = 1.0 / static_cast<double>(indices.size());
  for (double& r : result) r *= inv;
  return result;
}

std::vector<double> hvp(const ModelSpec& spec, std::span<const double> params,
                        const Dataset& dataset, std::span<const double> v) {
  std::vector<int> all(dataset.examples.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = static_cast<int>(i);
  return hvp_subset(spec, params, dataset, all, v);
}

std::vector<double> lissa_inverse_hvp(const ModelSpec& spec,
                                      std::span<const double> params,
                                      const Dataset& dataset,
                                      std::span<const double> v,
                                      const LissaConfig& cfg, Rng& rng) {
  if (cfg.damp < 0.0 || cfg.scale <= 0.0 || cfg.depth < 1 || cfg.repeats < 1 ||
      cfg.batch_size < 1)
    throw config_error("lissa config requires damp >= 0, scale > 0, depth/repeats/batch >= 1");
  check_params(spec, params);
  if (v.size() != params.size())
    throw std::invalid_argument("lissa rhs length does not match parameter count");

  const std::size_t d = params.size();
  const std::size_t n = dataset.examples.size();
  std::vector<double> acc(d, 0.0);
  std::vector<int> batch(static_cast<std::size_t>(cfg.batch_size));

  for (int rep = 0; rep < cfg.repeats; ++rep) {
    std::vector<double> h(v.begin(), v.end());
    for (int step = 0; step < cfg.depth; ++step) {
      for (auto& b : batch) b = static_cast<int>(rng.uniform_int(n));
      const std::vector<double> hv = hvp_subset(spec, params, dataset, batch, h);
      double norm_sq = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        h[j] = v[j] + h[j] - (hv[j] + cfg.damp * h[j]) / cfg.scale;
        norm_sq += h[j] * h[j];
      }
      if (!(norm_sq < 1e16))
        throw numeric_error("lissa iterate diverged (|h| > 1e8): damp/scale misconfigured");
    }
    for (std::size_t j = 0; j < d; ++j) acc[j] += h[j] / cfg.scale;
  }
  for (double& a : acc) a /= static_cast<double>(cfg.repeats);
  return acc;
}

}  // namespace inffor
