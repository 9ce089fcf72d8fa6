// inffor: train small checkpointed models, estimate training-data influence,
// identify training-set-attack targets, and sanitize the training set.

#include <CLI11.hpp>
#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <string>

#include "inffor/attacks.hpp"
#include "inffor/errors.hpp"
#include "inffor/fit.hpp"
#include "inffor/metrics.hpp"
#include "inffor/mitigation.hpp"
#include "inffor/trainer.hpp"

using namespace inffor;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitNumeric = 3;
constexpr int kExitSafeguard = 4;

int log_level() {
  const char* env = std::getenv("INFFOR_LOG");
  if (!env) return 0;
  const std::string v(env);
  if (v == "debug") return 2;
  if (v == "info") return 1;
  return 0;
}

void log_info(const std::string& msg) {
  if (log_level() >= 1) std::cerr << "[inffor] " << msg << "\n";
}

// --- config document -------------------------------------------------------

json load_config(const std::string& path) {
  if (path.empty()) return json::object();
  std::ifstream in(path);
  if (!in) throw config_error("cannot open config file: " + path);
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw config_error("config parse error in " + path + ": " + e.what());
  }
}

const json& require_field(const json& j, const std::string& section, const std::string& key) {
  if (!j.contains(key))
    throw config_error("missing required config field: " +
                       (section.empty() ? key : section + "." + key));
  return j.at(key);
}

ModelSpec model_from_config(const json& cfg) {
  const json& m = require_field(cfg, "", "model");
  ModelSpec spec;
  const std::string arch = require_field(m, "model", "architecture").get<std::string>();
  if (arch == "linear") spec.architecture = Architecture::linear;
  else if (arch == "mlp") spec.architecture = Architecture::mlp;
  else throw config_error("model.architecture must be linear or mlp");
  spec.hidden_sizes = m.value("hidden", std::vector<int>{});
  if (spec.architecture == Architecture::mlp && spec.hidden_sizes.empty())
    throw config_error("missing required config field: model.hidden");
  const std::string act = m.value("activation", "relu");
  if (act == "relu") spec.activation = Activation::relu;
  else if (act == "tanh") spec.activation = Activation::tanh;
  else throw config_error("model.activation must be relu or tanh");
  spec.num_classes = require_field(m, "model", "num_classes").get<int>();
  spec.input_dim = require_field(m, "model", "input_dim").get<int>();
  spec.weight_decay = m.value("weight_decay", 0.0);
  return spec;
}

TrainConfig train_from_config(const json& cfg, std::uint64_t master_seed) {
  const json& t = require_field(cfg, "", "train");
  TrainConfig tc;
  const std::string opt = t.value("optimizer", "sgd");
  if (opt == "sgd") tc.optimizer = Optimizer::sgd;
  else if (opt == "adam") tc.optimizer = Optimizer::adam;
  else throw config_error("train.optimizer must be sgd or adam");
  tc.peak_lr = require_field(t, "train", "peak_lr").get<double>();
  const std::string sched = t.value("lr_schedule", "constant");
  if (sched == "constant") tc.lr_schedule = LrSchedule::constant;
  else if (sched == "one_cycle") tc.lr_schedule = LrSchedule::one_cycle;
  else throw config_error("train.lr_schedule must be constant or one_cycle");
  tc.batch_size = require_field(t, "train", "batch_size").get<int>();
  tc.epochs = require_field(t, "train", "epochs").get<int>();
  tc.subepoch_checkpoints = t.value("subepoch_checkpoints", 1);
  tc.record_batches = t.value("record_batches", false);
  tc.seed = derive_seed(master_seed, 0x71);
  return tc;
}

CleanSpec data_from_config(const json& cfg) {
  const json& d = require_field(cfg, "", "data");
  CleanSpec cs;
  const std::string kind = require_field(d, "data", "kind").get<std::string>();
  if (kind == "gaussian_blobs") cs.kind = CleanKind::gaussian_blobs;
  else if (kind == "grid_images") cs.kind = CleanKind::grid_images;
  else throw config_error("data.kind must be gaussian_blobs or grid_images");
  cs.classes = d.value("classes", 2);
  cs.size = require_field(d, "data", "size").get<int>();
  cs.dim = d.value("dim", 2);
  cs.separation = d.value("separation", 6.0);
  cs.grid_h = d.value("grid_h", 8);
  cs.grid_w = d.value("grid_w", 8);
  cs.grid_noise = d.value("grid_noise", 0.1);
  cs.grid_noise_spread = d.value("grid_noise_spread", 0.8);
  cs.template_seed = d.value("template_seed", 17);
  return cs;
}

EstimatorConfig estimator_from_config(const json& cfg, const std::string& tag_override,
                                      const std::string& renorm_override) {
  EstimatorConfig ec;
  if (cfg.contains("estimator")) {
    const json& e = cfg["estimator"];
    ec = parse_estimator_tag(e.value("kind", "gas"));
    if (e.contains("renorm")) {
      const std::string r = e["renorm"].get<std::string>();
      if (r == "none") ec.renorm = Renorm::none;
      else if (r == "global") ec.renorm = Renorm::global;
      else if (r == "layerwise") ec.renorm = Renorm::layerwise;
      else throw config_error("estimator.renorm must be none, global or layerwise");
    }
    if (e.contains("lissa")) {
      const json& l = e["lissa"];
      ec.lissa.damp = l.value("damp", ec.lissa.damp);
      ec.lissa.scale = l.value("scale", ec.lissa.scale);
      ec.lissa.depth = l.value("depth", ec.lissa.depth);
      ec.lissa.repeats = l.value("repeats", ec.lissa.repeats);
      ec.lissa.batch_size = l.value("batch_size", ec.lissa.batch_size);
    }
    ec.lissa_seed = e.value("lissa_seed", ec.lissa_seed);
  }
  if (!tag_override.empty()) {
    const auto parsed = parse_estimator_tag(tag_override);
    ec.kind = parsed.kind;
    ec.renorm = parsed.renorm;
  }
  if (!renorm_override.empty()) {
    if (renorm_override == "none") ec.renorm = Renorm::none;
    else if (renorm_override == "global") ec.renorm = Renorm::global;
    else if (renorm_override == "layerwise") ec.renorm = Renorm::layerwise;
    else throw config_error("--renorm must be none, global or layerwise");
  }
  return ec;
}

// Resolved-config snapshot written into every output directory. The output
// path itself is deliberately excluded so identical runs produce identical
// bytes wherever they land.
void write_snapshot(const json& resolved, const fs::path& out_dir) {
  fs::create_directories(out_dir);
  std::ofstream out(out_dir / "config.json");
  if (!out) throw config_error("cannot write " + (out_dir / "config.json").string());
  out << resolved.dump(2) << "\n";
}

json resolved_config(const json& base, std::uint64_t seed, const std::string& estimator,
                     int kappa, int jobs) {
  json r = base;
  r["seed"] = seed;
  if (!estimator.empty()) r["resolved_estimator"] = estimator;
  if (kappa > 0) r["resolved_kappa"] = kappa;
  r["jobs"] = jobs;
  return r;
}

struct CommonArgs {
  std::string config_path;
  std::string out_dir;
  std::uint64_t seed = 1;
  bool seed_set = false;
  int jobs = 1;
  std::string estimator;
  std::string renorm;
  int kappa = 10;
  int test_id = 0;
};

std::uint64_t pick_seed(const json& cfg, const CommonArgs& args) {
  if (args.seed_set) return args.seed;
  return cfg.value("seed", std::uint64_t{1});
}

// --- commands ---------------------------------------------------------------

int cmd_gen_data(const CommonArgs& args) {
  const json cfg = load_config(args.config_path);
  const CleanSpec cs = data_from_config(cfg);
  const auto seed = pick_seed(cfg, args);
  const auto ds = make_clean_dataset(cs, derive_seed(seed, 0xd1));
  save_dataset(ds, args.out_dir);
  write_snapshot(resolved_config(cfg, seed, "", 0, args.jobs), args.out_dir);
  log_info("wrote dataset with " + std::to_string(ds.size()) + " examples");
  return kExitOk;
}

AttackedDataset run_attack(const json& cfg, std::uint64_t seed, const Dataset& train_ds) {
  const json& a = require_field(cfg, "", "attack");
  const std::string kind = require_field(a, "attack", "kind").get<std::string>();
  if (kind == "group_flip") {
    return group_flip_attack(train_ds, require_field(a, "attack", "m").get<int>(),
                             require_field(a, "attack", "y_adv").get<int>(),
                             derive_seed(seed, 0xa1), a.value("num_targets", 20));
  }
  if (kind == "backdoor") {
    CleanSpec held_spec = *train_ds.origin;
    held_spec.size = a.value("heldout_size", held_spec.size);
    const auto heldout = make_clean_dataset(held_spec, derive_seed(seed, 0xa2));
    TriggerSpec trig;
    const std::string tk = a.value("trigger", "four_pixel");
    if (tk == "one_pixel") trig.kind = TriggerKind::one_pixel;
    else if (tk == "four_pixel") trig.kind = TriggerKind::four_pixel;
    else if (tk == "blend") trig.kind = TriggerKind::blend;
    else throw config_error("attack.trigger must be one_pixel, four_pixel or blend");
    trig.epsilon = a.value("epsilon", trig.kind == TriggerKind::four_pixel ? 2.0 : 1.0);
    trig.noise_seed = derive_seed(seed, 0xa3);
    return backdoor_attack(train_ds, heldout, trig,
                           require_field(a, "attack", "rate").get<double>(),
                           require_field(a, "attack", "y_target").get<int>(),
                           require_field(a, "attack", "y_adv").get<int>(),
                           derive_seed(seed, 0xa4), a.value("num_targets", 10));
  }
  if (kind == "single_target_poison") {
    const int victim = require_field(a, "attack", "victim_id").get<int>();
    const Example* target = nullptr;
    for (const auto& ex : train_ds.examples)
      if (ex.id == victim) target = &ex;
    if (!target) throw config_error("attack.victim_id not found in the dataset");
    return single_target_poison(train_ds, *target, require_field(a, "attack", "m").get<int>(),
                                require_field(a, "attack", "y_adv").get<int>(),
                                a.value("noise_sd", 0.05), derive_seed(seed, 0xa5));
  }
  throw config_error("attack.kind must be group_flip, backdoor or single_target_poison");
}

int cmd_attack(const CommonArgs& args, const std::string& data_dir, bool verify) {
  const json cfg = load_config(args.config_path);
  const auto seed = pick_seed(cfg, args);
  const Dataset train_ds =
      data_dir.empty() ? make_clean_dataset(data_from_config(cfg), derive_seed(seed, 0xd1))
                       : load_dataset(data_dir);
  auto attacked = run_attack(cfg, seed, train_ds);

  if (verify) {
    const ModelSpec spec = model_from_config(cfg);
    const TrainConfig tc = train_from_config(cfg, seed);
    const auto result = train(spec, attacked.train, tc);
    const double asr =
        attack_success_rate(spec, result.final_params.values, attacked.targets);
    attacked.descriptor.verified_success = asr >= 0.5;
    log_info("verified attack: ASR " + std::to_string(asr));
  }

  save_dataset(attacked.train, args.out_dir, &attacked.descriptor);
  save_targets(attacked.targets, attacked.train.input_dim, args.out_dir);
  write_snapshot(resolved_config(cfg, seed, "", 0, args.jobs), args.out_dir);
  return kExitOk;
}

int cmd_train(const CommonArgs& args, const std::string& data_dir) {
  const json cfg = load_config(args.config_path);
  const auto seed = pick_seed(cfg, args);
  const ModelSpec spec = model_from_config(cfg);
  const TrainConfig tc = train_from_config(cfg, seed);
  const Dataset ds = load_dataset(data_dir);

  auto result = train(spec, ds, tc);
  result.store.config_digest = config_digest(cfg.dump());
  save_checkpoints(result.store, args.out_dir);
  if (result.batch_log) save_batch_log(*result.batch_log, fs::path(args.out_dir) / "batches.jsonl");
  write_snapshot(resolved_config(cfg, seed, "", 0, args.jobs), args.out_dir);
  log_info("trained; " + std::to_string(result.store.entries.size()) + " checkpoint entries");
  return kExitOk;
}

std::vector<AnalysisInstance> analysis_from_dirs(const std::string& data_dir,
                                                 const std::string& test_source,
                                                 const Dataset& ds) {
  std::vector<AnalysisInstance> out;
  if (test_source == "targets") {
    const auto targets = load_targets(data_dir);
    for (const auto& t : targets) out.push_back({t.id, t.features});
  } else {
    for (const auto& ex : ds.examples) out.push_back({ex.id, ex.features});
  }
  return out;
}

int cmd_influence(const CommonArgs& args, const std::string& ckpt_dir,
                  const std::string& data_dir, const std::string& test_source) {
  const json cfg = load_config(args.config_path);
  const auto store = load_checkpoints(ckpt_dir);
  const Dataset ds = load_dataset(data_dir);
  const EstimatorConfig ec = estimator_from_config(cfg, args.estimator, args.renorm);

  std::string source = test_source;
  if (source.empty())
    source = fs::exists(fs::path(data_dir) / "targets.csv") ? "targets" : "train";
  const auto analysis = analysis_from_dirs(data_dir, source, ds);
  const auto it = std::find_if(analysis.begin(), analysis.end(),
                               [&](const AnalysisInstance& a) { return a.id == args.test_id; });
  if (it == analysis.end())
    throw config_error("--test-id " + std::to_string(args.test_id) + " not found in " + source);

  std::optional<BatchLog> batch_log;
  if (ec.kind == EstimatorKind::tracin) {
    batch_log = load_batch_log(fs::path(ckpt_dir) / "batches.jsonl");
  }
  const auto v = estimate_influence(store, batch_log ? &*batch_log : nullptr, ds,
                                    it->features, it->id, ec);
  fs::create_directories(args.out_dir);
  write_influence_csv(v, ds, fs::path(args.out_dir) / "influence.csv");
  write_influence_binary(v, fs::path(args.out_dir) / "influence.bin");
  write_snapshot(resolved_config(cfg, pick_seed(cfg, args),
                                 estimator_tag(ec.kind, ec.renorm), 0, args.jobs),
                 args.out_dir);
  return kExitOk;
}

int cmd_identify(const CommonArgs& args, const std::string& ckpt_dir,
                 const std::string& data_dir, const std::string& analysis_dir,
                 bool per_class) {
  const json cfg = load_config(args.config_path);
  const auto store = load_checkpoints(ckpt_dir);
  const Dataset ds = load_dataset(data_dir);
  const EstimatorConfig ec = estimator_from_config(cfg, args.estimator, args.renorm);
  const int kappa = args.kappa > 0 ? args.kappa : cfg.value("kappa", 10);

  const std::string adir = analysis_dir.empty() ? data_dir : analysis_dir;
  const auto targets = load_targets(adir);
  std::vector<AnalysisInstance> analysis;
  for (const auto& t : targets) analysis.push_back({t.id, t.features});

  std::optional<BatchLog> batch_log;
  if (ec.kind == EstimatorKind::tracin)
    batch_log = load_batch_log(fs::path(ckpt_dir) / "batches.jsonl");

  const auto report = identify_targets(store, batch_log ? &*batch_log : nullptr, ds,
                                       analysis, ec, kappa, per_class, args.jobs);
  fs::create_directories(args.out_dir);
  write_target_report_csv(report, fs::path(args.out_dir) / "targets.csv");
  write_target_report_json(report, fs::path(args.out_dir) / "targets.json");
  write_snapshot(resolved_config(cfg, pick_seed(cfg, args), report.estimator, kappa, args.jobs),
                 args.out_dir);
  return kExitOk;
}

MitigationConfig mitigation_from_config(const json& cfg, std::uint64_t seed,
                                        const EstimatorConfig& ec) {
  MitigationConfig mc;
  if (cfg.contains("mitigation")) {
    const json& m = cfg["mitigation"];
    mc.cutoff_initial = m.value("cutoff_initial", mc.cutoff_initial);
    mc.anneal_step = m.value("anneal_step", mc.anneal_step);
    mc.anneal_step_count = m.value("anneal_step_count", mc.anneal_step_count);
    mc.max_removed_fraction = m.value("max_removed_fraction", mc.max_removed_fraction);
    mc.max_iterations = m.value("max_iterations", mc.max_iterations);
  }
  mc.estimator = ec;
  mc.retrain = train_from_config(cfg, seed);
  return mc;
}

int cmd_mitigate(const CommonArgs& args, const std::string& ckpt_dir,
                 const std::string& data_dir) {
  const json cfg = load_config(args.config_path);
  const auto seed = pick_seed(cfg, args);
  const auto store = load_checkpoints(ckpt_dir);
  const Dataset ds = load_dataset(data_dir);
  const auto targets = load_targets(data_dir);
  const auto it = std::find_if(targets.begin(), targets.end(),
                               [&](const TargetInstance& t) { return t.id == args.test_id; });
  if (it == targets.end())
    throw config_error("--test-id " + std::to_string(args.test_id) + " not found in targets");

  const EstimatorConfig ec = estimator_from_config(cfg, args.estimator, args.renorm);
  const MitigationConfig mc = mitigation_from_config(cfg, seed, ec);
  const auto outcome = mitigate(store, ds, *it, mc, args.jobs);

  fs::create_directories(args.out_dir);
  write_mitigation_json(outcome, fs::path(args.out_dir) / "mitigation.json");
  save_dataset(outcome.sanitized, fs::path(args.out_dir) / "sanitized");
  write_snapshot(resolved_config(cfg, seed, estimator_tag(ec.kind, ec.renorm), 0, args.jobs),
                 args.out_dir);
  if (outcome.status == MitigationStatus::safeguard_tripped) {
    std::cerr << "safeguard tripped: removal budget exhausted before the target flipped\n";
    return kExitSafeguard;
  }
  return kExitOk;
}

int cmd_evaluate(const CommonArgs& args, const std::string& ckpt_dir,
                 const std::string& data_dir) {
  const json cfg = load_config(args.config_path);
  const auto store = load_checkpoints(ckpt_dir);
  const Dataset ds = load_dataset(data_dir);
  const auto targets = load_targets(data_dir);
  const EstimatorConfig ec = estimator_from_config(cfg, args.estimator, args.renorm);

  const auto it = std::find_if(targets.begin(), targets.end(),
                               [&](const TargetInstance& t) { return t.id == args.test_id; });
  if (it == targets.end())
    throw config_error("--test-id " + std::to_string(args.test_id) + " not found in targets");

  std::optional<BatchLog> batch_log;
  if (ec.kind == EstimatorKind::tracin)
    batch_log = load_batch_log(fs::path(ckpt_dir) / "batches.jsonl");
  const auto v = estimate_influence(store, batch_log ? &*batch_log : nullptr, ds,
                                    it->features, it->id, ec);

  std::vector<int> flags;
  for (const auto& ex : ds.examples) flags.push_back(ex.is_adversarial ? 1 : 0);
  const auto curve = auprc(v.values, flags);

  std::vector<Example> adv, clean;
  for (const auto& ex : ds.examples) (ex.is_adversarial ? adv : clean).push_back(ex);
  const auto& last = store.entries.back();
  const double gnr =
      gradient_norm_ratio(store.spec, last.params.values, adv, clean);
  const double asr = attack_success_rate(store.spec, store.final_params.values, targets);

  json report;
  report["estimator"] = estimator_tag(ec.kind, ec.renorm);
  report["test_id"] = it->id;
  report["adversarial_auprc"] = curve.auprc;
  report["gradient_norm_ratio_final"] = gnr;
  report["attack_success_rate"] = asr;
  fs::create_directories(args.out_dir);
  std::ofstream out(fs::path(args.out_dir) / "metrics.json");
  out << report.dump(2) << "\n";
  write_pr_curve_csv(curve, fs::path(args.out_dir) / "pr_curve.csv");
  write_snapshot(resolved_config(cfg, pick_seed(cfg, args),
                                 estimator_tag(ec.kind, ec.renorm), 0, args.jobs),
                 args.out_dir);
  return kExitOk;
}

// --- repro runs -------------------------------------------------------------

// Desk-scale renormalization comparison: one group-flip attack per trial,
// all eight estimators scored by adversarial-set AUPRC.
int repro_toy_renorm(const CommonArgs& args, int trials) {
  CleanSpec cs;
  cs.kind = CleanKind::grid_images;
  cs.classes = 2;
  cs.size = 200;
  cs.grid_noise = 0.3;
  cs.template_seed = 17;

  ModelSpec spec;
  spec.architecture = Architecture::mlp;
  spec.hidden_sizes = {16};
  spec.activation = Activation::relu;
  spec.num_classes = 2;
  spec.input_dim = 64;
  spec.weight_decay = 1e-3;

  TrainConfig tc;
  tc.optimizer = Optimizer::adam;
  tc.peak_lr = 0.02;
  tc.batch_size = 32;
  tc.epochs = 10;
  tc.subepoch_checkpoints = 5;
  tc.record_batches = true;

  LissaConfig lissa;
  lissa.damp = 0.01;
  lissa.scale = 50.0;
  lissa.depth = 800;
  lissa.repeats = 4;
  lissa.batch_size = 8;

  const std::vector<std::string> tags = {"if",     "if-rn",     "rp",       "rp-rn",
                                         "tracin", "tracin-rn", "tracincp", "gas"};
  std::map<std::string, double> mean_auprc;
  int used = 0;
  for (int trial = 0; trial < trials; ++trial) {
    const auto base = derive_seed(args.seed, static_cast<std::uint64_t>(trial));
    const auto clean = make_clean_dataset(cs, derive_seed(base, 1));
    const auto attacked = group_flip_attack(clean, 20, 1, derive_seed(base, 2), 5);
    tc.seed = derive_seed(base, 3);
    const auto result = train(spec, attacked.train, tc);

    int pick = -1;
    for (std::size_t i = 0; i < attacked.targets.size(); ++i) {
      if (predict_label(spec, result.final_params.values, attacked.targets[i].features) ==
          attacked.targets[i].y_adv) {
        pick = static_cast<int>(i);
        break;
      }
    }
    if (pick < 0) continue;  // attack failed on this trial
    ++used;
    const auto& x_te = attacked.targets[static_cast<std::size_t>(pick)].features;

    std::vector<int> flags;
    for (const auto& ex : attacked.train.examples) flags.push_back(ex.is_adversarial ? 1 : 0);

    for (const auto& tag : tags) {
      EstimatorConfig ec = parse_estimator_tag(tag);
      ec.lissa = lissa;
      ec.lissa_seed = derive_seed(base, 4);
      const BatchLog* log = result.batch_log ? &*result.batch_log : nullptr;
      const auto v = estimate_influence(result.store, log, attacked.train, x_te, 0, ec);
      mean_auprc[tag] += auprc(v.values, flags).auprc;
    }
  }
  if (used == 0) throw numeric_error("toy-renorm: attack failed on every trial");

  fs::create_directories(args.out_dir);
  std::ofstream out(fs::path(args.out_dir) / "auprc_table.csv");
  out << "estimator,mean_adversarial_auprc,trials\n";
  char buf[96];
  for (const auto& tag : tags) {
    std::snprintf(buf, sizeof(buf), "%s,%.17g,%d\n", tag.c_str(), mean_auprc[tag] / used, used);
    out << buf;
  }
  json snapshot = {{"repro", "toy-renorm"}, {"trials", trials}};
  write_snapshot(resolved_config(snapshot, args.seed, "", 0, args.jobs), args.out_dir);
  return kExitOk;
}

// Filter-and-retrain comparison of a gas ranking against a random one.
int repro_filtering(const CommonArgs& args, int trials) {
  CleanSpec cs;
  cs.kind = CleanKind::grid_images;
  cs.classes = 2;
  cs.size = 200;
  cs.grid_noise = 0.3;
  cs.template_seed = 17;

  ModelSpec spec;
  spec.architecture = Architecture::mlp;
  spec.hidden_sizes = {16};
  spec.activation = Activation::relu;
  spec.num_classes = 2;
  spec.input_dim = 64;
  spec.weight_decay = 1e-3;

  TrainConfig tc;
  tc.optimizer = Optimizer::adam;
  tc.peak_lr = 0.02;
  tc.batch_size = 32;
  tc.epochs = 10;
  tc.subepoch_checkpoints = 5;

  const std::vector<double> percentages = {0.0, 5.0, 10.0, 20.0, 30.0};
  std::vector<double> gas_rates(percentages.size(), 0.0);
  std::vector<double> random_rates(percentages.size(), 0.0);

  for (int trial = 0; trial < trials; ++trial) {
    const auto base = derive_seed(args.seed, 1000 + static_cast<std::uint64_t>(trial));
    const auto clean = make_clean_dataset(cs, derive_seed(base, 1));
    const auto attacked = group_flip_attack(clean, 20, 1, derive_seed(base, 2), 5);
    tc.seed = derive_seed(base, 3);
    const auto result = train(spec, attacked.train, tc);

    // the filtered instance is an attacked-cluster target; removing its
    // supporters flips it back
    const auto& x_te = attacked.targets[0].features;
    Example z_filt;
    z_filt.id = -1;
    z_filt.features = x_te;
    z_filt.label = predict_label(spec, result.final_params.values, x_te);

    const auto v = gas(result.store, attacked.train, x_te, 0, false);
    std::vector<int> gas_rank(attacked.train.examples.size());
    std::iota(gas_rank.begin(), gas_rank.end(), 0);
    std::sort(gas_rank.begin(), gas_rank.end(), [&](int a, int b) {
      return v.values[static_cast<std::size_t>(a)] > v.values[static_cast<std::size_t>(b)];
    });
    std::vector<int> random_rank(attacked.train.examples.size());
    std::iota(random_rank.begin(), random_rank.end(), 0);
    Rng shuffler(derive_seed(base, 4));
    shuffler.shuffle(random_rank);

    TrainConfig retrain = tc;
    retrain.seed = derive_seed(base, 5);
    const auto g = filter_and_retrain(spec, attacked.train, gas_rank, percentages, 5,
                                      z_filt, retrain, args.jobs);
    const auto r = filter_and_retrain(spec, attacked.train, random_rank, percentages, 5,
                                      z_filt, retrain, args.jobs);
    for (std::size_t i = 0; i < percentages.size(); ++i) {
      gas_rates[i] += g[i] / trials;
      random_rates[i] += r[i] / trials;
    }
  }

  fs::create_directories(args.out_dir);
  std::ofstream out(fs::path(args.out_dir) / "filtering.csv");
  out << "percent_removed,gas_misclassification,random_misclassification\n";
  char buf[120];
  for (std::size_t i = 0; i < percentages.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%.17g,%.17g,%.17g\n", percentages[i], gas_rates[i],
                  random_rates[i]);
    out << buf;
  }
  json snapshot = {{"repro", "filtering"}, {"trials", trials}};
  write_snapshot(resolved_config(snapshot, args.seed, "", 0, args.jobs), args.out_dir);
  return kExitOk;
}

// Backdoor attack, FIT identification, target-driven sanitization.
int repro_mitigation(const CommonArgs& args, int trials) {
  CleanSpec cs;
  cs.kind = CleanKind::grid_images;
  cs.classes = 2;
  cs.size = 1000;
  cs.grid_noise = 0.08;
  cs.grid_noise_spread = 0.8;
  cs.template_seed = 17;

  ModelSpec spec;
  spec.architecture = Architecture::mlp;
  spec.hidden_sizes = {16};
  spec.activation = Activation::tanh;
  spec.num_classes = 2;
  spec.input_dim = 64;
  spec.weight_decay = 1e-4;

  TrainConfig tc;
  tc.optimizer = Optimizer::sgd;
  tc.peak_lr = 1.0;
  tc.batch_size = 32;
  tc.epochs = 40;
  tc.subepoch_checkpoints = 5;

  fs::create_directories(args.out_dir);
  std::ofstream out(fs::path(args.out_dir) / "mitigation.csv");
  out << "trial,pre_asr,status,adv_removed,clean_removed,post_asr\n";

  for (int trial = 0; trial < trials; ++trial) {
    const auto base = derive_seed(args.seed, 2000 + static_cast<std::uint64_t>(trial));
    const auto train_ds = make_clean_dataset(cs, derive_seed(base, 1));
    CleanSpec held_spec = cs;
    held_spec.size = 600;
    const auto heldout = make_clean_dataset(held_spec, derive_seed(base, 2));
    TriggerSpec trig;
    trig.kind = TriggerKind::four_pixel;
    trig.epsilon = 2.0;
    const auto attacked =
        backdoor_attack(train_ds, heldout, trig, 0.015, 0, 1, derive_seed(base, 3), 60);
    tc.seed = derive_seed(base, 4);
    const auto result = train(spec, attacked.train, tc);
    const double pre_asr =
        attack_success_rate(spec, result.final_params.values, attacked.targets);

    std::vector<AnalysisInstance> flipped;
    for (std::size_t i = 0; i < attacked.targets.size(); ++i)
      if (predict_label(spec, result.final_params.values, attacked.targets[i].features) ==
          attacked.targets[i].y_adv)
        flipped.push_back({static_cast<int>(i), attacked.targets[i].features});
    if (flipped.empty()) {
      out << trial << "," << pre_asr << ",attack_failed,0,0," << pre_asr << "\n";
      continue;
    }
    EstimatorConfig gas_cfg = parse_estimator_tag("gas");
    const auto rank = identify_targets(result.store, nullptr, attacked.train, flipped,
                                       gas_cfg, 10, true, args.jobs);
    const auto& target = attacked.targets[static_cast<std::size_t>(rank.rows[0].test_id)];

    MitigationConfig mc;
    mc.cutoff_initial = 5.5;
    mc.anneal_step = 0.25;
    mc.anneal_step_count = 1;
    mc.max_removed_fraction = 0.1;
    mc.max_iterations = 30;
    mc.estimator = parse_estimator_tag("gas-l");
    mc.retrain = tc;
    const auto outcome = mitigate(result.store, attacked.train, target, mc, args.jobs);

    int adv_removed = 0, clean_removed = 0;
    std::set<int> adv_ids;
    for (const auto& ex : attacked.train.examples)
      if (ex.is_adversarial) adv_ids.insert(ex.id);
    for (const auto& iter : outcome.iterations)
      for (int id : iter.removed_ids) (adv_ids.count(id) ? adv_removed : clean_removed)++;
    std::vector<TargetInstance> unanalyzed;
    for (std::size_t i = 0; i < attacked.targets.size(); ++i)
      if (static_cast<int>(i) != rank.rows[0].test_id) unanalyzed.push_back(attacked.targets[i]);
    const double post_asr = attack_success_rate(
        spec, outcome.final_store.final_params.values, unanalyzed);

    out << trial << "," << pre_asr << "," << mitigation_status_name(outcome.status) << ","
        << adv_removed << "," << clean_removed << "," << post_asr << "\n";
  }
  json snapshot = {{"repro", "mitigation"}, {"trials", trials}};
  write_snapshot(resolved_config(snapshot, args.seed, "", 0, args.jobs), args.out_dir);
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"influence forensics toolkit"};
  app.require_subcommand(1);

  CommonArgs args;
  std::string data_dir, ckpt_dir, analysis_dir, test_source, repro_name;
  bool verify = false;
  bool no_per_class = false;
  int trials = 3;

  const auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", args.config_path, "JSON run configuration");
    cmd->add_option("--out", args.out_dir, "output directory")->required();
    cmd->add_option("--seed", args.seed, "master seed (overrides config)")
        ->each([&](const std::string&) { args.seed_set = true; });
    cmd->add_option("--jobs", args.jobs, "internal parallelism");
  };

  auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
  add_common(gen);

  auto* atk = app.add_subcommand("attack", "inject a training-set attack");
  add_common(atk);
  atk->add_option("--data", data_dir, "clean dataset directory (default: generate)");
  atk->add_flag("--verify", verify, "train once and record attack success");

  auto* tr = app.add_subcommand("train", "train with checkpoint capture");
  add_common(tr);
  tr->add_option("--data", data_dir, "dataset directory")->required();

  auto* inf = app.add_subcommand("influence", "influence vector for one test instance");
  add_common(inf);
  inf->add_option("--ckpts", ckpt_dir, "checkpoint directory")->required();
  inf->add_option("--data", data_dir, "training dataset directory")->required();
  inf->add_option("--test-id", args.test_id, "test instance id");
  inf->add_option("--estimator", args.estimator,
                  "if|rp|tracin|tracincp|gas|gas-l (or tagged variants)");
  inf->add_option("--renorm", args.renorm, "none|global|layerwise");
  inf->add_option("--test-source", test_source, "targets|train");

  auto* ident = app.add_subcommand("identify", "rank analysis instances by tail heaviness");
  add_common(ident);
  ident->add_option("--ckpts", ckpt_dir, "checkpoint directory")->required();
  ident->add_option("--data", data_dir, "training dataset directory")->required();
  ident->add_option("--analysis", analysis_dir, "analysis set directory (default: data targets)");
  ident->add_option("--estimator", args.estimator, "estimator tag");
  ident->add_option("--renorm", args.renorm, "none|global|layerwise");
  ident->add_option("--kappa", args.kappa, "upper-tail order");
  ident->add_flag("--no-per-class", no_per_class, "pool statistics across classes");

  auto* mit = app.add_subcommand("mitigate", "target-driven data sanitization");
  add_common(mit);
  mit->add_option("--ckpts", ckpt_dir, "checkpoint directory")->required();
  mit->add_option("--data", data_dir, "attacked dataset directory")->required();
  mit->add_option("--test-id", args.test_id, "target id within targets.csv");
  mit->add_option("--estimator", args.estimator, "estimator tag");
  mit->add_option("--renorm", args.renorm, "none|global|layerwise");

  auto* ev = app.add_subcommand("evaluate", "attack metrics for one analyzed target");
  add_common(ev);
  ev->add_option("--ckpts", ckpt_dir, "checkpoint directory")->required();
  ev->add_option("--data", data_dir, "attacked dataset directory")->required();
  ev->add_option("--test-id", args.test_id, "target id within targets.csv");
  ev->add_option("--estimator", args.estimator, "estimator tag");
  ev->add_option("--renorm", args.renorm, "none|global|layerwise");

  auto* rep = app.add_subcommand("repro", "desk-scale reproduction runs");
  add_common(rep);
  rep->add_option("name", repro_name, "toy-renorm|filtering|mitigation")->required();
  rep->add_option("--trials", trials, "number of trials");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) return cmd_gen_data(args);
    if (atk->parsed()) return cmd_attack(args, data_dir, verify);
    if (tr->parsed()) return cmd_train(args, data_dir);
    if (inf->parsed()) return cmd_influence(args, ckpt_dir, data_dir, test_source);
    if (ident->parsed()) return cmd_identify(args, ckpt_dir, data_dir, analysis_dir, !no_per_class);
    if (mit->parsed()) return cmd_mitigate(args, ckpt_dir, data_dir);
    if (ev->parsed()) return cmd_evaluate(args, ckpt_dir, data_dir);
    if (rep->parsed()) {
      if (repro_name == "toy-renorm") return repro_toy_renorm(args, trials);
      if (repro_name == "filtering") return repro_filtering(args, trials);
      if (repro_name == "mitigation") return repro_mitigation(args, trials);
      throw config_error("unknown repro run: " + repro_name);
    }
  } catch (const config_error& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const numeric_error& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return kExitOk;
}
