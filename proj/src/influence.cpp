#include "inffor/influence.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <json.hpp>
#include <stdexcept>

#include "inffor/errors.hpp"
#include "inffor/parallel.hpp"
#include "inffor/rng.hpp"

namespace inffor {

namespace {

double dot(std::span<const double> a, std::span<const double> b, std::size_t begin,
           std::size_t end) {
  double acc = 0.0;
  for (std::size_t j = begin; j < end; ++j) acc += a[j] * b[j];
  return acc;
}

double norm(std::span<const double> a, std::size_t begin, std::size_t end) {
  double acc = 0.0;
  for (std::size_t j = begin; j < end; ++j) acc += a[j] * a[j];
  return std::sqrt(acc);
}

std::vector<double> normalize_gradient(std::span<const double> g,
                                       std::span<const LayerSpan> spans, Renorm renorm) {
  std::vector<double> out(g.begin(), g.end());
  if (renorm == Renorm::none) return out;
  if (renorm == Renorm::global) {
    const double nrm = norm(g, 0, g.size());
    if (nrm == 0.0) {
      std::fill(out.begin(), out.end(), 0.0);
      return out;
    }
    for (double& x : out) x /= nrm;
    return out;
  }
  for (const auto& s : spans) {
    const double nrm = norm(g, s.begin, s.end);
    if (nrm == 0.0) {
      for (std::size_t j = s.begin; j < s.end; ++j) out[j] = 0.0;
    } else {
      for (std::size_t j = s.begin; j < s.end; ++j) out[j] /= nrm;
    }
  }
  return out;
}

}  // namespace

std::string estimator_tag(EstimatorKind kind, Renorm renorm) {
  switch (kind) {
    case EstimatorKind::influence_functions:
      return renorm == Renorm::none ? "if" : (renorm == Renorm::global ? "if-rn" : "if-rn-l");
    case EstimatorKind::representer_point:
      return renorm == Renorm::none ? "rp" : "rp-rn";
    case EstimatorKind::tracin:
      return renorm == Renorm::none ? "tracin"
                                    : (renorm == Renorm::global ? "tracin-rn" : "tracin-rn-l");
    case EstimatorKind::tracincp:
      return renorm == Renorm::none ? "tracincp"
                                    : (renorm == Renorm::global ? "gas" : "gas-l");
  }
  return "?";
}

EstimatorConfig parse_estimator_tag(const std::string& tag) {
  EstimatorConfig cfg;
  const auto set = [&](EstimatorKind k, Renorm r) {
    cfg.kind = k;
    cfg.renorm = r;
  };
  if (tag == "if") set(EstimatorKind::influence_functions, Renorm::none);
  else if (tag == "if-rn") set(EstimatorKind::influence_functions, Renorm::global);
  else if (tag == "if-rn-l") set(EstimatorKind::influence_functions, Renorm::layerwise);
  else if (tag == "rp") set(EstimatorKind::representer_point, Renorm::none);
  else if (tag == "rp-rn") set(EstimatorKind::representer_point, Renorm::global);
  else if (tag == "tracin") set(EstimatorKind::tracin, Renorm::none);
  else if (tag == "tracin-rn") set(EstimatorKind::tracin, Renorm::global);
  else if (tag == "tracin-rn-l") set(EstimatorKind::tracin, Renorm::layerwise);
  else if (tag == "tracincp") set(EstimatorKind::tracincp, Renorm::none);
  else if (tag == "gas") set(EstimatorKind::tracincp, Renorm::global);
  else if (tag == "gas-l") set(EstimatorKind::tracincp, Renorm::layerwise);
  else throw config_error("unknown estimator tag: " + tag);
  return cfg;
}

int predict_label(const ModelSpec& spec, std::span<const double> params,
                  std::span<const double> x) {
  const auto a = forward(spec, params, x);
  if (loss_kind(spec) == LossKind::bce_single_logit) return a[0] > 0.0 ? 1 : 0;
  int best = 0;
  for (int j = 1; j < static_cast<int>(a.size()); ++j)
    if (a[static_cast<std::size_t>(j)] > a[static_cast<std::size_t>(best)]) best = j;
  return best;
}

double gradient_term(std::span<const double> g_train, std::span<const double> g_test,
                     std::span<const LayerSpan> spans, Renorm renorm) {
  if (g_train.size() != g_test.size())
    throw std::invalid_argument("gradient_term: mismatched gradient lengths");
  if (renorm == Renorm::none) return dot(g_train, g_test, 0, g_train.size());
  if (renorm == Renorm::global) {
    const double na = norm(g_train, 0, g_train.size());
    const double nb = norm(g_test, 0, g_test.size());
    if (na == 0.0 || nb == 0.0) return 0.0;
    return dot(g_train, g_test, 0, g_train.size()) / (na * nb);
  }
  double acc = 0.0;
  for (const auto& s : spans) {
    const double na = norm(g_train, s.begin, s.end);
    const double nb = norm(g_test, s.begin, s.end);
    if (na == 0.0 || nb == 0.0) continue;
    acc += dot(g_train, g_test, s.begin, s.end) / (na * nb);
  }
  return acc;
}

InfluenceVector influence_functions(const ModelSpec& spec, std::span<const double> final_params,
                                    const Dataset& dataset, std::span<const double> x_test,
                                    int test_id, const LissaConfig& lissa, Renorm renorm,
                                    std::uint64_t lissa_seed) {
  const int yhat = predict_label(spec, final_params, x_test);
  Example test;
  test.id = test_id;
  test.features.assign(x_test.begin(), x_test.end());
  test.label = yhat;

  const auto g_test = grad(spec, final_params, test);
  Rng rng(derive_seed(lissa_seed, static_cast<std::uint64_t>(test_id)));
  const auto inv_hvp = lissa_inverse_hvp(spec, final_params, dataset, g_test, lissa, rng);

  const auto spans = layer_spans(spec);
  const double inv_n = 1.0 / static_cast<double>(dataset.size());

  InfluenceVector out;
  out.test_id = test_id;
  out.kind = EstimatorKind::influence_functions;
  out.renorm = renorm;
  out.predicted_label = yhat;
  out.values.resize(dataset.examples.size());
  for (std::size_t i = 0; i < dataset.examples.size(); ++i) {
    const auto g_i = grad(spec, final_params, dataset.examples[i]);
    const auto g_tilde = normalize_gradient(g_i, spans, renorm);
    out.values[i] = inv_n * dot(inv_hvp, g_tilde, 0, g_tilde.size());
  }
  return out;
}

InfluenceVector representer_point(const ModelSpec& spec, std::span<const double> final_params,
                                  const Dataset& dataset, std::span<const double> x_test,
                                  int test_id, Renorm renorm) {
  if (spec.weight_decay <= 0.0)
    throw config_error("representer_point requires weight_decay > 0");

  const int yhat = predict_label(spec, final_params, x_test);
  const auto f_test = penultimate_features(spec, final_params, x_test);
  const double coeff =
      -1.0 / (2.0 * spec.weight_decay * static_cast<double>(dataset.size()));

  InfluenceVector out;
  out.test_id = test_id;
  out.kind = EstimatorKind::representer_point;
  out.renorm = renorm;
  out.predicted_label = yhat;
  out.values.resize(dataset.examples.size());
  for (std::size_t i = 0; i < dataset.examples.size(); ++i) {
    const Example& ex = dataset.examples[i];
    const auto logits = forward(spec, final_params, ex.features);
    double dlda;
    if (loss_kind(spec) == LossKind::bce_single_logit) {
      const double p = 1.0 / (1.0 + std::exp(-logits[0]));
      dlda = p - static_cast<double>(ex.label);
    } else {
      double m = logits[0];
      for (double a : logits) m = std::max(m, a);
      double sum = 0.0;
      for (double a : logits) sum += std::exp(a - m);
      dlda = std::exp(logits[static_cast<std::size_t>(ex.label)] - m) / sum - 1.0;
    }
    if (renorm != Renorm::none) dlda = dlda > 0.0 ? 1.0 : (dlda < 0.0 ? -1.0 : 0.0);
    const auto f_i = penultimate_features(spec, final_params, ex.features);
    out.values[i] = coeff * dlda * dot(f_i, f_test, 0, f_test.size());
  }
  return out;
}

InfluenceVector tracin(const CheckpointStore& store, const BatchLog& batch_log,
                       const Dataset& dataset, std::span<const double> x_test, int test_id,
                       Renorm renorm) {
  EstimatorConfig cfg;
  cfg.kind = EstimatorKind::tracin;
  cfg.renorm = renorm;
  AnalysisInstance t{test_id, std::vector<double>(x_test.begin(), x_test.end())};
  return batch_influence(store, &batch_log, dataset, std::span(&t, 1), cfg, 1)[0];
}

InfluenceVector tracincp(const CheckpointStore& store, const Dataset& dataset,
                         std::span<const double> x_test, int test_id) {
  EstimatorConfig cfg;
  cfg.kind = EstimatorKind::tracincp;
  cfg.renorm = Renorm::none;
  AnalysisInstance t{test_id, std::vector<double>(x_test.begin(), x_test.end())};
  return batch_influence(store, nullptr, dataset, std::span(&t, 1), cfg, 1)[0];
}

InfluenceVector gas(const CheckpointStore& store, const Dataset& dataset,
                    std::span<const double> x_test, int test_id, bool layerwise) {
  EstimatorConfig cfg;
  cfg.kind = EstimatorKind::tracincp;
  cfg.renorm = layerwise ? Renorm::layerwise : Renorm::global;
  AnalysisInstance t{test_id, std::vector<double>(x_test.begin(), x_test.end())};
  return batch_influence(store, nullptr, dataset, std::span(&t, 1), cfg, 1)[0];
}

InfluenceVector estimate_influence(const CheckpointStore& store, const BatchLog* batch_log,
                                   const Dataset& dataset, std::span<const double> x_test,
                                   int test_id, const EstimatorConfig& cfg) {
  AnalysisInstance t{test_id, std::vector<double>(x_test.begin(), x_test.end())};
  return batch_influence(store, batch_log, dataset, std::span(&t, 1), cfg, 1)[0];
}

std::vector<InfluenceVector> batch_influence(const CheckpointStore& store,
                                             const BatchLog* batch_log, const Dataset& dataset,
                                             std::span<const AnalysisInstance> tests,
                                             const EstimatorConfig& cfg, int jobs) {
  const ModelSpec& spec = store.spec;
  const auto& final_params = store.final_params.values;
  std::vector<InfluenceVector> results(tests.size());

  if (cfg.kind == EstimatorKind::influence_functions) {
    parallel_for(tests.size(), jobs, [&](std::size_t t) {
      results[t] = influence_functions(spec, final_params, dataset, tests[t].features,
                                       tests[t].id, cfg.lissa, cfg.renorm, cfg.lissa_seed);
    });
    return results;
  }
  if (cfg.kind == EstimatorKind::representer_point) {
    parallel_for(tests.size(), jobs, [&](std::size_t t) {
      results[t] = representer_point(spec, final_params, dataset, tests[t].features,
                                     tests[t].id, cfg.renorm);
    });
    return results;
  }

  // Dynamic estimators share training gradients across test instances.
  if (cfg.kind == EstimatorKind::tracin && batch_log == nullptr)
    throw config_error("tracin requires a batch log (train with record_batches)");

  const std::size_t n = dataset.examples.size();
  const std::size_t d = final_params.size();
  const auto& spans = store.final_params.spans;
  const double inv_b = 1.0 / static_cast<double>(store.batch_size);

  std::vector<int> yhat(tests.size());
  for (std::size_t t = 0; t < tests.size(); ++t) {
    yhat[t] = predict_label(spec, final_params, tests[t].features);
    results[t].test_id = tests[t].id;
    results[t].kind = cfg.kind;
    results[t].renorm = cfg.renorm;
    results[t].predicted_label = yhat[t];
    results[t].values.assign(n, 0.0);
  }

  std::vector<double> train_grads(n * d);
  std::vector<std::vector<double>> test_grads(tests.size());
  std::vector<long> occurrences(n);

  const auto& entries = store.entries;
  for (std::size_t e = store.first_estimator_entry(); e < entries.size(); ++e) {
    const auto& entry = entries[e];
    const double weight = entry.learning_rate * inv_b;

    if (cfg.kind == EstimatorKind::tracin) {
      // batches after the previous checkpoint attribute to this one
      std::fill(occurrences.begin(), occurrences.end(), 0);
      const long lo = entries[e - 1].iteration;  // exclusive
      const long hi = entry.iteration;           // inclusive
      if (static_cast<std::size_t>(hi) > batch_log->batches.size())
        throw config_error("batch log does not cover checkpointed iterations");
      for (long t = lo + 1; t <= hi; ++t)
        for (int idx : batch_log->batches[static_cast<std::size_t>(t - 1)])
          ++occurrences[static_cast<std::size_t>(idx)];
    }

    parallel_for(n, jobs, [&](std::size_t i) {
      if (cfg.kind == EstimatorKind::tracin && occurrences[i] == 0) return;
      const auto g = grad(spec, entry.params.values, dataset.examples[i]);
      std::copy(g.begin(), g.end(), train_grads.begin() + static_cast<long>(i * d));
    });
    parallel_for(tests.size(), jobs, [&](std::size_t t) {
      Example te;
      te.id = tests[t].id;
      te.features = tests[t].features;
      te.label = yhat[t];
      test_grads[t] = grad(spec, entry.params.values, te);
    });

    // norms hoisted out of the (test x example) accumulation
    const std::size_t n_spans = cfg.renorm == Renorm::layerwise ? spans.size() : 1;
    std::vector<double> train_norms(n * n_spans, 0.0);
    std::vector<double> test_norms(tests.size() * n_spans, 0.0);
    if (cfg.renorm != Renorm::none) {
      parallel_for(n, jobs, [&](std::size_t i) {
        if (cfg.kind == EstimatorKind::tracin && occurrences[i] == 0) return;
        const std::span<const double> g_i(train_grads.data() + i * d, d);
        if (cfg.renorm == Renorm::global) {
          train_norms[i] = norm(g_i, 0, d);
        } else {
          for (std::size_t s = 0; s < spans.size(); ++s)
            train_norms[i * n_spans + s] = norm(g_i, spans[s].begin, spans[s].end);
        }
      });
      for (std::size_t t = 0; t < tests.size(); ++t) {
        if (cfg.renorm == Renorm::global) {
          test_norms[t] = norm(test_grads[t], 0, d);
        } else {
          for (std::size_t s = 0; s < spans.size(); ++s)
            test_norms[t * n_spans + s] = norm(test_grads[t], spans[s].begin, spans[s].end);
        }
      }
    }

    parallel_for(tests.size(), jobs, [&](std::size_t t) {
      for (std::size_t i = 0; i < n; ++i) {
        double mult = weight;
        if (cfg.kind == EstimatorKind::tracin) {
          if (occurrences[i] == 0) continue;
          mult *= static_cast<double>(occurrences[i]);
        }
        const std::span<const double> g_i(train_grads.data() + i * d, d);
        double term = 0.0;
        if (cfg.renorm == Renorm::none) {
          term = dot(g_i, test_grads[t], 0, d);
        } else if (cfg.renorm == Renorm::global) {
          const double na = train_norms[i];
          const double nb = test_norms[t];
          term = na == 0.0 || nb == 0.0 ? 0.0 : dot(g_i, test_grads[t], 0, d) / (na * nb);
        } else {
          for (std::size_t s = 0; s < spans.size(); ++s) {
            const double na = train_norms[i * n_spans + s];
            const double nb = test_norms[t * n_spans + s];
            if (na == 0.0 || nb == 0.0) continue;
            term += dot(g_i, test_grads[t], spans[s].begin, spans[s].end) / (na * nb);
          }
        }
        results[t].values[i] += mult * term;
      }
    });
  }
  return results;
}

void write_influence_csv(const InfluenceVector& v, const Dataset& dataset,
                         const std::filesystem::path& file) {
  std::ofstream out(file);
  if (!out) throw config_error("cannot write " + file.string());
  out << "train_id,value\n";
  char buf[64];
  for (std::size_t i = 0; i < v.values.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%d,%.17g\n", dataset.examples[i].id, v.values[i]);
    out << buf;
  }
}

void write_influence_binary(const InfluenceVector& v, const std::filesystem::path& file) {
  std::ofstream out(file, std::ios::binary);
  if (!out) throw config_error("cannot write " + file.string());
  out.write(reinterpret_cast<const char*>(v.values.data()),
            static_cast<std::streamsize>(v.values.size() * sizeof(double)));

  nlohmann::json side;
  side["estimator"] = estimator_tag(v.kind, v.renorm);
  side["renorm"] = v.renorm == Renorm::none ? "none"
                   : v.renorm == Renorm::global ? "global" : "layerwise";
  side["test_id"] = v.test_id;
  side["predicted_label"] = v.predicted_label;
  side["count"] = v.values.size();
  std::filesystem::path sidecar = file;
  sidecar += ".json";
  std::ofstream sout(sidecar);
  sout << side.dump(2) << "\n";
}

}  // namespace inffor
