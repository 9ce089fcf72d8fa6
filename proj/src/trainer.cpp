#include "inffor/trainer.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <json.hpp>

#include "inffor/errors.hpp"
#include "inffor/rng.hpp"

namespace inffor {

using nlohmann::json;

int iterations_per_epoch(int n, int batch_size) {
  return (n + batch_size - 1) / batch_size;
}

double learning_rate_at(const TrainConfig& cfg, long iteration, long total) {
  if (cfg.lr_schedule == LrSchedule::constant) return cfg.peak_lr;
  // one_cycle: linear warmup over the first 30% of iterations from peak/10 to
  // peak, then linear decay down to peak/100.
  const long warm = std::max<long>(1, static_cast<long>(0.3 * static_cast<double>(total)));
  const double lo = cfg.peak_lr / 10.0;
  const double tail = cfg.peak_lr / 100.0;
  if (iteration <= warm) {
    const double t = warm == 1 ? 1.0 : static_cast<double>(iteration - 1) / (warm - 1);
    return lo + (cfg.peak_lr - lo) * t;
  }
  const long rest = total - warm;
  const double t = rest == 0 ? 1.0 : static_cast<double>(iteration - warm) / rest;
  return cfg.peak_lr + (tail - cfg.peak_lr) * t;
}

namespace {

std::vector<std::size_t> checkpoint_positions(int iters_per_epoch, int omega) {
  // omega evenly spaced iteration indices within one epoch, 1-based local.
  const int w = std::min(omega, iters_per_epoch);
  std::vector<std::size_t> pos;
  for (int j = 1; j <= w; ++j) {
    pos.push_back(static_cast<std::size_t>(
        (static_cast<long>(j) * iters_per_epoch + w - 1) / w));
  }
  return pos;
}

}  // namespace

TrainResult train(const ModelSpec& spec, const Dataset& dataset, const TrainConfig& cfg) {
  if (dataset.examples.empty()) throw config_error("train: dataset is empty");
  if (cfg.batch_size < 1 || cfg.epochs < 1 || cfg.subepoch_checkpoints < 1)
    throw config_error("train: batch_size, epochs and subepoch_checkpoints must be >= 1");

  const int n = dataset.size();
  const int k = iterations_per_epoch(n, cfg.batch_size);
  const long total = static_cast<long>(k) * cfg.epochs;
  const auto ckpt_local = checkpoint_positions(k, cfg.subepoch_checkpoints);

  Rng rng(cfg.seed);
  ParamVector params = init_params(spec, rng);
  const std::size_t d = params.values.size();

  CheckpointStore store;
  store.spec = spec;
  store.batch_size = cfg.batch_size;
  store.entries.push_back({0, learning_rate_at(cfg, 1, total), params});

  std::optional<BatchLog> batch_log;
  if (cfg.record_batches) batch_log.emplace();

  std::vector<double> adam_m, adam_v;
  if (cfg.optimizer == Optimizer::adam) {
    adam_m.assign(d, 0.0);
    adam_v.assign(d, 0.0);
  }

  std::vector<int> order(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;

  std::vector<double> batch_grad(d);
  long t = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order);
    std::size_t cursor = 0;
    for (int it = 1; it <= k; ++it) {
      ++t;
      const double lr = learning_rate_at(cfg, t, total);

      const std::size_t take =
          std::min<std::size_t>(static_cast<std::size_t>(cfg.batch_size),
                                order.size() - cursor);
      std::vector<int> batch(order.begin() + static_cast<long>(cursor),
                             order.begin() + static_cast<long>(cursor + take));
      cursor += take;
      if (batch_log) batch_log->batches.push_back(batch);

      if (std::find(ckpt_local.begin(), ckpt_local.end(),
                    static_cast<std::size_t>(it)) != ckpt_local.end()) {
        store.entries.push_back({t, lr, params});
      }

      std::fill(batch_grad.begin(), batch_grad.end(), 0.0);
      double batch_loss = 0.0;
      for (int idx : batch) {
        const Example& ex = dataset.examples[static_cast<std::size_t>(idx)];
        const auto g = grad(spec, params.values, ex);
        for (std::size_t j = 0; j < d; ++j) batch_grad[j] += g[j];
        batch_loss += example_loss(spec, params.values, ex);
      }
      const double inv = 1.0 / static_cast<double>(batch.size());
      for (std::size_t j = 0; j < d; ++j) batch_grad[j] *= inv;
      batch_loss *= inv;
      if (!std::isfinite(batch_loss))
        throw numeric_error("train: loss diverged (non-finite) at iteration " +
                            std::to_string(t));

      if (cfg.optimizer == Optimizer::sgd) {
        for (std::size_t j = 0; j < d; ++j) params.values[j] -= lr * batch_grad[j];
      } else {
        const double b1 = TrainConfig::adam_beta1;
        const double b2 = TrainConfig::adam_beta2;
        const double bc1 = 1.0 - std::pow(b1, static_cast<double>(t));
        const double bc2 = 1.0 - std::pow(b2, static_cast<double>(t));
        for (std::size_t j = 0; j < d; ++j) {
          adam_m[j] = b1 * adam_m[j] + (1.0 - b1) * batch_grad[j];
          adam_v[j] = b2 * adam_v[j] + (1.0 - b2) * batch_grad[j] * batch_grad[j];
          const double mhat = adam_m[j] / bc1;
          const double vhat = adam_v[j] / bc2;
          params.values[j] -= lr * mhat / (std::sqrt(vhat) + TrainConfig::adam_eps);
        }
      }
    }
  }

  store.final_params = params;
  TrainResult result;
  result.final_params = std::move(params);
  result.store = std::move(store);
  result.batch_log = std::move(batch_log);
  return result;
}

namespace {

constexpr int kFormatVersion = 1;

void write_doubles(const std::filesystem::path& file, const std::vector<double>& v) {
  static_assert(std::endian::native == std::endian::little,
                "checkpoint blobs are little-endian float64");
  std::ofstream out(file, std::ios::binary);
  if (!out) throw config_error("cannot write " + file.string());
  out.write(reinterpret_cast<const char*>(v.data()),
            static_cast<std::streamsize>(v.size() * sizeof(double)));
}

std::vector<double> read_doubles(const std::filesystem::path& file, std::size_t count,
                                 const std::string& what) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw config_error("cannot read " + file.string());
  in.seekg(0, std::ios::end);
  const auto bytes = static_cast<std::size_t>(in.tellg());
  if (bytes != count * sizeof(double))
    throw config_error("corrupted parameter file for " + what + ": expected " +
                       std::to_string(count * sizeof(double)) + " bytes, found " +
                       std::to_string(bytes));
  in.seekg(0);
  std::vector<double> v(count);
  in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(bytes));
  return v;
}

json spec_to_json(const ModelSpec& spec) {
  json j;
  j["architecture"] = spec.architecture == Architecture::linear ? "linear" : "mlp";
  j["hidden_sizes"] = spec.hidden_sizes;
  j["activation"] = spec.activation == Activation::relu ? "relu" : "tanh";
  j["num_classes"] = spec.num_classes;
  j["input_dim"] = spec.input_dim;
  j["weight_decay"] = spec.weight_decay;
  return j;
}

ModelSpec spec_from_json(const json& j) {
  ModelSpec spec;
  spec.architecture = j.at("architecture") == "linear" ? Architecture::linear : Architecture::mlp;
  spec.hidden_sizes = j.at("hidden_sizes").get<std::vector<int>>();
  spec.activation = j.at("activation") == "relu" ? Activation::relu : Activation::tanh;
  spec.num_classes = j.at("num_classes").get<int>();
  spec.input_dim = j.at("input_dim").get<int>();
  spec.weight_decay = j.at("weight_decay").get<double>();
  return spec;
}

}  // namespace

void save_checkpoints(const CheckpointStore& store, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const std::size_t d = store.final_params.values.size();

  json manifest;
  manifest["format_version"] = kFormatVersion;
  manifest["model_spec"] = spec_to_json(store.spec);
  manifest["config_digest"] = store.config_digest;
  manifest["batch_size"] = store.batch_size;
  manifest["param_count"] = d;
  json spans = json::array();
  for (const auto& s : store.final_params.spans)
    spans.push_back({s.layer_id, s.begin, s.end});
  manifest["layer_spans"] = spans;

  json ckpts = json::array();
  for (std::size_t i = 0; i < store.entries.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "ckpt_%06zu.bin", i);
    const auto& e = store.entries[i];
    ckpts.push_back({{"iteration", e.iteration},
                     {"learning_rate", e.learning_rate},
                     {"file", name}});
    write_doubles(dir / name, e.params.values);
  }
  manifest["checkpoints"] = ckpts;
  manifest["final"] = {{"file", "final.bin"}};
  write_doubles(dir / "final.bin", store.final_params.values);

  std::ofstream out(dir / "manifest.json");
  if (!out) throw config_error("cannot write " + (dir / "manifest.json").string());
  out << manifest.dump(2) << "\n";
}

CheckpointStore load_checkpoints(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw config_error("cannot read " + (dir / "manifest.json").string());
  json manifest = json::parse(in);

  if (!manifest.contains("format_version") ||
      manifest["format_version"].get<int>() != kFormatVersion)
    throw config_error("checkpoint manifest has unknown format_version");

  CheckpointStore store;
  store.spec = spec_from_json(manifest.at("model_spec"));
  store.batch_size = manifest.at("batch_size").get<int>();
  store.config_digest = manifest.value("config_digest", "");
  const auto d = manifest.at("param_count").get<std::size_t>();

  std::vector<LayerSpan> spans;
  for (const auto& s : manifest.at("layer_spans"))
    spans.push_back({s.at(0).get<int>(), s.at(1).get<std::size_t>(), s.at(2).get<std::size_t>()});

  std::size_t idx = 0;
  for (const auto& c : manifest.at("checkpoints")) {
    CheckpointEntry e;
    e.iteration = c.at("iteration").get<long>();
    e.learning_rate = c.at("learning_rate").get<double>();
    e.params.values = read_doubles(dir / c.at("file").get<std::string>(), d,
                                   "checkpoint " + std::to_string(idx));
    e.params.spans = spans;
    store.entries.push_back(std::move(e));
    ++idx;
  }
  store.final_params.values =
      read_doubles(dir / manifest.at("final").at("file").get<std::string>(), d, "final");
  store.final_params.spans = spans;
  return store;
}

void save_batch_log(const BatchLog& log, const std::filesystem::path& file) {
  std::ofstream out(file);
  if (!out) throw config_error("cannot write " + file.string());
  for (std::size_t i = 0; i < log.batches.size(); ++i) {
    json line;
    line["t"] = i + 1;
    line["ids"] = log.batches[i];
    out << line.dump() << "\n";
  }
}

BatchLog load_batch_log(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw config_error("cannot read " + file.string());
  BatchLog log;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json j = json::parse(line);
    const auto t = j.at("t").get<std::size_t>();
    if (t != log.batches.size() + 1)
      throw config_error("batch log iterations out of order at t=" + std::to_string(t));
    log.batches.push_back(j.at("ids").get<std::vector<int>>());
  }
  return log;
}

std::string config_digest(const std::string& serialized_config) {
  // FNV-1a 64-bit.
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : serialized_config) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace inffor
