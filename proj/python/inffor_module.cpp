// Python bindings for the main operations: dataset generation, attacks,
// checkpointed training, influence estimation, target identification,
// mitigation and the core metrics.

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "inffor/attacks.hpp"
#include "inffor/errors.hpp"
#include "inffor/fit.hpp"
#include "inffor/metrics.hpp"
#include "inffor/mitigation.hpp"
#include "inffor/robust_stats.hpp"
#include "inffor/trainer.hpp"

namespace py = pybind11;
using namespace inffor;

namespace {

ModelSpec make_model_spec(const std::string& architecture, std::vector<int> hidden,
                          const std::string& activation, int num_classes, int input_dim,
                          double weight_decay) {
  ModelSpec spec;
  if (architecture == "linear") spec.architecture = Architecture::linear;
  else if (architecture == "mlp") spec.architecture = Architecture::mlp;
  else throw config_error("architecture must be linear or mlp");
  spec.hidden_sizes = std::move(hidden);
  if (activation == "relu") spec.activation = Activation::relu;
  else if (activation == "tanh") spec.activation = Activation::tanh;
  else throw config_error("activation must be relu or tanh");
  spec.num_classes = num_classes;
  spec.input_dim = input_dim;
  spec.weight_decay = weight_decay;
  return spec;
}

TrainConfig make_train_config(const std::string& optimizer, double peak_lr,
                              const std::string& lr_schedule, int batch_size, int epochs,
                              int subepoch_checkpoints, std::uint64_t seed,
                              bool record_batches) {
  TrainConfig tc;
  if (optimizer == "sgd") tc.optimizer = Optimizer::sgd;
  else if (optimizer == "adam") tc.optimizer = Optimizer::adam;
  else throw config_error("optimizer must be sgd or adam");
  tc.peak_lr = peak_lr;
  if (lr_schedule == "constant") tc.lr_schedule = LrSchedule::constant;
  else if (lr_schedule == "one_cycle") tc.lr_schedule = LrSchedule::one_cycle;
  else throw config_error("lr_schedule must be constant or one_cycle");
  tc.batch_size = batch_size;
  tc.epochs = epochs;
  tc.subepoch_checkpoints = subepoch_checkpoints;
  tc.seed = seed;
  tc.record_batches = record_batches;
  return tc;
}

}  // namespace

PYBIND11_MODULE(_inffor, m) {
  m.doc() = "influence forensics toolkit";

  py::register_exception<config_error>(m, "ConfigError");
  py::register_exception<numeric_error>(m, "NumericError");

  py::class_<Example>(m, "Example")
      .def(py::init<>())
      .def_readwrite("id", &Example::id)
      .def_readwrite("features", &Example::features)
      .def_readwrite("label", &Example::label)
      .def_readwrite("is_adversarial", &Example::is_adversarial);

  py::class_<Dataset>(m, "Dataset")
      .def(py::init<>())
      .def_readwrite("examples", &Dataset::examples)
      .def_readwrite("num_classes", &Dataset::num_classes)
      .def_readwrite("input_dim", &Dataset::input_dim)
      .def("__len__", &Dataset::size);

  py::class_<TargetInstance>(m, "TargetInstance")
      .def(py::init<>())
      .def_readwrite("id", &TargetInstance::id)
      .def_readwrite("features", &TargetInstance::features)
      .def_readwrite("y_true", &TargetInstance::y_true)
      .def_readwrite("y_adv", &TargetInstance::y_adv);

  py::class_<AnalysisInstance>(m, "AnalysisInstance")
      .def(py::init<int, std::vector<double>>(), py::arg("id"), py::arg("features"))
      .def_readwrite("id", &AnalysisInstance::id)
      .def_readwrite("features", &AnalysisInstance::features);

  py::class_<AttackedDataset>(m, "AttackedDataset")
      .def_readwrite("train", &AttackedDataset::train)
      .def_readwrite("targets", &AttackedDataset::targets);

  py::class_<ModelSpec>(m, "ModelSpec")
      .def(py::init(&make_model_spec), py::arg("architecture"),
           py::arg("hidden") = std::vector<int>{}, py::arg("activation") = "relu",
           py::arg("num_classes") = 2, py::arg("input_dim") = 2,
           py::arg("weight_decay") = 0.0)
      .def_readonly("num_classes", &ModelSpec::num_classes)
      .def_readonly("input_dim", &ModelSpec::input_dim)
      .def_readonly("weight_decay", &ModelSpec::weight_decay)
      .def("param_count", [](const ModelSpec& s) { return param_count(s); });

  py::class_<TrainConfig>(m, "TrainConfig")
      .def(py::init(&make_train_config), py::arg("optimizer") = "sgd",
           py::arg("peak_lr") = 0.1, py::arg("lr_schedule") = "constant",
           py::arg("batch_size") = 32, py::arg("epochs") = 10,
           py::arg("subepoch_checkpoints") = 1, py::arg("seed") = 0,
           py::arg("record_batches") = false)
      .def_readwrite("seed", &TrainConfig::seed);

  py::class_<ParamVector>(m, "ParamVector")
      .def_readonly("values", &ParamVector::values);

  py::class_<CheckpointStore>(m, "CheckpointStore")
      .def_readonly("final_params", &CheckpointStore::final_params)
      .def("num_entries", [](const CheckpointStore& s) { return s.entries.size(); });

  py::class_<BatchLog>(m, "BatchLog").def_readonly("batches", &BatchLog::batches);

  py::class_<TrainResult>(m, "TrainResult")
      .def_readonly("final_params", &TrainResult::final_params)
      .def_readonly("store", &TrainResult::store)
      .def_readonly("batch_log", &TrainResult::batch_log);

  py::class_<InfluenceVector>(m, "InfluenceVector")
      .def_readonly("test_id", &InfluenceVector::test_id)
      .def_readonly("predicted_label", &InfluenceVector::predicted_label)
      .def_readonly("values", &InfluenceVector::values);

  py::class_<TargetRow>(m, "TargetRow")
      .def_readonly("test_id", &TargetRow::test_id)
      .def_readonly("predicted_label", &TargetRow::predicted_label)
      .def_readonly("tail_heaviness", &TargetRow::tail_heaviness)
      .def_readonly("rank_within_class", &TargetRow::rank_within_class)
      .def_readonly("top_scores", &TargetRow::top_scores);

  py::class_<TargetReport>(m, "TargetReport")
      .def_readonly("estimator", &TargetReport::estimator)
      .def_readonly("rows", &TargetReport::rows);

  py::class_<MitigationOutcome>(m, "MitigationOutcome")
      .def_readonly("sanitized", &MitigationOutcome::sanitized)
      .def_property_readonly("status",
                             [](const MitigationOutcome& o) {
                               return std::string(mitigation_status_name(o.status));
                             })
      .def_property_readonly("removed_ids", [](const MitigationOutcome& o) {
        std::vector<std::vector<int>> out;
        for (const auto& it : o.iterations) out.push_back(it.removed_ids);
        return out;
      });

  py::class_<PRCurve>(m, "PRCurve")
      .def_readonly("points", &PRCurve::points)
      .def_readonly("auprc", &PRCurve::auprc);

  // data and attacks
  m.def(
      "make_blobs",
      [](int classes, int dim, double separation, int size, std::uint64_t seed) {
        CleanSpec cs;
        cs.kind = CleanKind::gaussian_blobs;
        cs.classes = classes;
        cs.dim = dim;
        cs.separation = separation;
        cs.size = size;
        return make_clean_dataset(cs, seed);
      },
      py::arg("classes") = 2, py::arg("dim") = 2, py::arg("separation") = 6.0,
      py::arg("size") = 200, py::arg("seed") = 0);
  m.def(
      "make_grid_images",
      [](int classes, int h, int w, double noise, double noise_spread, int size,
         std::uint64_t template_seed, std::uint64_t seed) {
        CleanSpec cs;
        cs.kind = CleanKind::grid_images;
        cs.classes = classes;
        cs.grid_h = h;
        cs.grid_w = w;
        cs.grid_noise = noise;
        cs.grid_noise_spread = noise_spread;
        cs.size = size;
        cs.template_seed = template_seed;
        return make_clean_dataset(cs, seed);
      },
      py::arg("classes") = 2, py::arg("h") = 8, py::arg("w") = 8, py::arg("noise") = 0.1,
      py::arg("noise_spread") = 0.8, py::arg("size") = 200, py::arg("template_seed") = 17,
      py::arg("seed") = 0);
  m.def("group_flip_attack", &group_flip_attack, py::arg("clean"), py::arg("m"),
        py::arg("y_adv"), py::arg("seed"), py::arg("num_targets") = 20);
  m.def(
      "backdoor_attack",
      [](const Dataset& train, const Dataset& heldout, const std::string& trigger,
         double epsilon, double rate, int y_target, int y_adv, std::uint64_t seed,
         int num_targets) {
        TriggerSpec trig;
        if (trigger == "one_pixel") trig.kind = TriggerKind::one_pixel;
        else if (trigger == "four_pixel") trig.kind = TriggerKind::four_pixel;
        else if (trigger == "blend") trig.kind = TriggerKind::blend;
        else throw config_error("trigger must be one_pixel, four_pixel or blend");
        trig.epsilon = epsilon;
        trig.noise_seed = derive_seed(seed, 7);
        return backdoor_attack(train, heldout, trig, rate, y_target, y_adv, seed,
                               num_targets);
      },
      py::arg("train"), py::arg("heldout"), py::arg("trigger") = "four_pixel",
      py::arg("epsilon") = 2.0, py::arg("rate") = 0.015, py::arg("y_target") = 0,
      py::arg("y_adv") = 1, py::arg("seed") = 0, py::arg("num_targets") = 10);

  // training and prediction
  m.def("train", &train, py::arg("spec"), py::arg("dataset"), py::arg("config"));
  m.def(
      "predict_label",
      [](const ModelSpec& spec, const ParamVector& params, const std::vector<double>& x) {
        return predict_label(spec, params.values, x);
      },
      py::arg("spec"), py::arg("params"), py::arg("x"));

  // influence estimation
  m.def(
      "estimate_influence",
      [](const CheckpointStore& store, const Dataset& dataset, const std::vector<double>& x,
         int test_id, const std::string& estimator, const BatchLog* batch_log) {
        const EstimatorConfig cfg = parse_estimator_tag(estimator);
        return estimate_influence(store, batch_log, dataset, x, test_id, cfg);
      },
      py::arg("store"), py::arg("dataset"), py::arg("x"), py::arg("test_id") = 0,
      py::arg("estimator") = "gas", py::arg("batch_log") = nullptr);

  // robust statistics
  m.def("median", [](const std::vector<double>& v) { return median(v); });
  m.def("q_estimator", [](const std::vector<double>& v) { return q_estimator(v); });
  m.def(
      "tail_heaviness",
      [](const std::vector<double>& scores, int kappa) { return tail_heaviness(scores, kappa); },
      py::arg("scores"), py::arg("kappa"));

  // target identification and mitigation
  m.def(
      "identify_targets",
      [](const CheckpointStore& store, const Dataset& dataset,
         const std::vector<AnalysisInstance>& analysis, const std::string& estimator,
         int kappa, bool per_class, int jobs) {
        const EstimatorConfig cfg = parse_estimator_tag(estimator);
        return identify_targets(store, nullptr, dataset, analysis, cfg, kappa, per_class,
                                jobs);
      },
      py::arg("store"), py::arg("dataset"), py::arg("analysis"), py::arg("estimator") = "gas",
      py::arg("kappa") = 10, py::arg("per_class") = true, py::arg("jobs") = 1);
  m.def(
      "mitigate",
      [](const CheckpointStore& store, const Dataset& dataset, const TargetInstance& target,
         const std::string& estimator, double cutoff_initial, double anneal_step,
         int anneal_step_count, double max_removed_fraction, int max_iterations,
         const TrainConfig& retrain, int jobs) {
        MitigationConfig cfg;
        cfg.estimator = parse_estimator_tag(estimator);
        cfg.cutoff_initial = cutoff_initial;
        cfg.anneal_step = anneal_step;
        cfg.anneal_step_count = anneal_step_count;
        cfg.max_removed_fraction = max_removed_fraction;
        cfg.max_iterations = max_iterations;
        cfg.retrain = retrain;
        return mitigate(store, dataset, target, cfg, jobs);
      },
      py::arg("store"), py::arg("dataset"), py::arg("target"), py::arg("estimator") = "gas-l",
      py::arg("cutoff_initial") = 3.0, py::arg("anneal_step") = 0.25,
      py::arg("anneal_step_count") = 4, py::arg("max_removed_fraction") = 0.1,
      py::arg("max_iterations") = 25, py::arg("retrain") = TrainConfig{},
      py::arg("jobs") = 1);

  // metrics
  m.def(
      "auprc",
      [](const std::vector<double>& scores, const std::vector<int>& flags) {
        return auprc(scores, flags);
      },
      py::arg("scores"), py::arg("positive_flags"));
  m.def(
      "attack_success_rate",
      [](const ModelSpec& spec, const ParamVector& params,
         const std::vector<TargetInstance>& targets) {
        return attack_success_rate(spec, params.values, targets);
      },
      py::arg("spec"), py::arg("final_params"), py::arg("targets"));
}
