#include "inffor/dataset.hpp"

#include <bit>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "inffor/errors.hpp"

namespace inffor {

using nlohmann::json;

namespace {

void write_matrix(const std::filesystem::path& file, const std::vector<double>& flat) {
  static_assert(std::endian::native == std::endian::little);
  std::ofstream out(file, std::ios::binary);
  if (!out) throw config_error("cannot write " + file.string());
  out.write(reinterpret_cast<const char*>(flat.data()),
            static_cast<std::streamsize>(flat.size() * sizeof(double)));
}

std::vector<double> read_matrix(const std::filesystem::path& file, std::size_t count) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw config_error("cannot read " + file.string());
  in.seekg(0, std::ios::end);
  const auto bytes = static_cast<std::size_t>(in.tellg());
  if (bytes != count * sizeof(double))
    throw config_error("feature matrix " + file.string() + " has wrong size: expected " +
                       std::to_string(count * sizeof(double)) + " bytes");
  in.seekg(0);
  std::vector<double> flat(count);
  in.read(reinterpret_cast<char*>(flat.data()), static_cast<std::streamsize>(bytes));
  return flat;
}

json clean_spec_to_json(const CleanSpec& s) {
  json j;
  j["kind"] = s.kind == CleanKind::gaussian_blobs ? "gaussian_blobs" : "grid_images";
  j["classes"] = s.classes;
  j["size"] = s.size;
  j["dim"] = s.dim;
  j["separation"] = s.separation;
  j["grid_h"] = s.grid_h;
  j["grid_w"] = s.grid_w;
  j["grid_noise"] = s.grid_noise;
  j["grid_noise_spread"] = s.grid_noise_spread;
  j["template_seed"] = s.template_seed;
  return j;
}

CleanSpec clean_spec_from_json(const json& j) {
  CleanSpec s;
  s.kind = j.at("kind") == "gaussian_blobs" ? CleanKind::gaussian_blobs : CleanKind::grid_images;
  s.classes = j.at("classes").get<int>();
  s.size = j.at("size").get<int>();
  s.dim = j.at("dim").get<int>();
  s.separation = j.at("separation").get<double>();
  s.grid_h = j.at("grid_h").get<int>();
  s.grid_w = j.at("grid_w").get<int>();
  s.grid_noise = j.at("grid_noise").get<double>();
  s.grid_noise_spread = j.value("grid_noise_spread", 0.8);
  s.template_seed = j.at("template_seed").get<std::uint64_t>();
  return s;
}

json descriptor_to_json(const AttackDescriptor& d) {
  json j;
  j["kind"] = d.kind;
  j["rate"] = d.rate;
  j["adversarial_count"] = d.adversarial_count;
  j["y_target"] = d.y_target;
  j["y_adv"] = d.y_adv;
  j["trigger"] = d.trigger;
  j["epsilon"] = d.epsilon;
  if (d.verified_success) j["verified_success"] = *d.verified_success;
  return j;
}

AttackDescriptor descriptor_from_json(const json& j) {
  AttackDescriptor d;
  d.kind = j.at("kind").get<std::string>();
  d.rate = j.at("rate").get<double>();
  d.adversarial_count = j.at("adversarial_count").get<int>();
  d.y_target = j.at("y_target").get<int>();
  d.y_adv = j.at("y_adv").get<int>();
  d.trigger = j.at("trigger").get<std::string>();
  d.epsilon = j.at("epsilon").get<double>();
  if (j.contains("verified_success")) d.verified_success = j["verified_success"].get<bool>();
  return d;
}

}  // namespace

void save_dataset(const Dataset& ds, const std::filesystem::path& dir,
                  const AttackDescriptor* descriptor) {
  std::filesystem::create_directories(dir);

  json manifest;
  manifest["format_version"] = 1;
  manifest["n"] = ds.examples.size();
  manifest["dim"] = ds.input_dim;
  manifest["num_classes"] = ds.num_classes;
  if (ds.origin) manifest["origin"] = clean_spec_to_json(*ds.origin);
  manifest["attack"] = descriptor ? descriptor_to_json(*descriptor) : json(nullptr);
  std::ofstream mo(dir / "dataset.json");
  if (!mo) throw config_error("cannot write " + (dir / "dataset.json").string());
  mo << manifest.dump(2) << "\n";

  std::vector<double> flat;
  flat.reserve(ds.examples.size() * static_cast<std::size_t>(ds.input_dim));
  for (const auto& ex : ds.examples)
    flat.insert(flat.end(), ex.features.begin(), ex.features.end());
  write_matrix(dir / "features.bin", flat);

  std::ofstream csv(dir / "examples.csv");
  csv << "id,label,is_adversarial\n";
  for (const auto& ex : ds.examples)
    csv << ex.id << "," << ex.label << "," << (ex.is_adversarial ? 1 : 0) << "\n";
}

Dataset load_dataset(const std::filesystem::path& dir) {
  std::ifstream mi(dir / "dataset.json");
  if (!mi) throw config_error("cannot read " + (dir / "dataset.json").string());
  json manifest = json::parse(mi);
  if (manifest.at("format_version").get<int>() != 1)
    throw config_error("dataset manifest has unknown format_version");

  Dataset ds;
  const auto n = manifest.at("n").get<std::size_t>();
  ds.input_dim = manifest.at("dim").get<int>();
  ds.num_classes = manifest.at("num_classes").get<int>();
  if (manifest.contains("origin") && !manifest["origin"].is_null())
    ds.origin = clean_spec_from_json(manifest["origin"]);

  const auto flat = read_matrix(dir / "features.bin", n * static_cast<std::size_t>(ds.input_dim));

  std::ifstream csv(dir / "examples.csv");
  if (!csv) throw config_error("cannot read " + (dir / "examples.csv").string());
  std::string line;
  std::getline(csv, line);  // header
  std::size_t row = 0;
  while (std::getline(csv, line)) {
    if (line.empty()) continue;
    Example ex;
    std::istringstream ss(line);
    char comma;
    int adv;
    ss >> ex.id >> comma >> ex.label >> comma >> adv;
    ex.is_adversarial = adv != 0;
    const std::size_t off = row * static_cast<std::size_t>(ds.input_dim);
    ex.features.assign(flat.begin() + static_cast<long>(off),
                       flat.begin() + static_cast<long>(off + ds.input_dim));
    ds.examples.push_back(std::move(ex));
    ++row;
  }
  if (row != n) throw config_error("examples.csv row count does not match manifest");
  return ds;
}

void save_targets(const std::vector<TargetInstance>& targets, int dim,
                  const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::vector<double> flat;
  flat.reserve(targets.size() * static_cast<std::size_t>(dim));
  for (const auto& t : targets) flat.insert(flat.end(), t.features.begin(), t.features.end());
  write_matrix(dir / "targets.bin", flat);

  std::ofstream csv(dir / "targets.csv");
  csv << "id,y_true,y_adv\n";
  for (const auto& t : targets) csv << t.id << "," << t.y_true << "," << t.y_adv << "\n";
}

std::vector<TargetInstance> load_targets(const std::filesystem::path& dir) {
  std::ifstream csv(dir / "targets.csv");
  if (!csv) throw config_error("cannot read " + (dir / "targets.csv").string());
  std::vector<TargetInstance> targets;
  std::string line;
  std::getline(csv, line);
  while (std::getline(csv, line)) {
    if (line.empty()) continue;
    TargetInstance t;
    std::istringstream ss(line);
    char comma;
    ss >> t.id >> comma >> t.y_true >> comma >> t.y_adv;
    targets.push_back(std::move(t));
  }

  std::ifstream in(dir / "targets.bin", std::ios::binary);
  if (!in) throw config_error("cannot read " + (dir / "targets.bin").string());
  in.seekg(0, std::ios::end);
  const auto bytes = static_cast<std::size_t>(in.tellg());
  in.seekg(0);
  if (targets.empty()) return targets;
  if (bytes % (targets.size() * sizeof(double)) != 0)
    throw config_error("targets.bin size is not a multiple of the target count");
  const std::size_t dim = bytes / (targets.size() * sizeof(double));
  std::vector<double> flat(targets.size() * dim);
  in.read(reinterpret_cast<char*>(flat.data()), static_cast<std::streamsize>(bytes));
  for (std::size_t i = 0; i < targets.size(); ++i)
    targets[i].features.assign(flat.begin() + static_cast<long>(i * dim),
                               flat.begin() + static_cast<long>((i + 1) * dim));
  return targets;
}

AttackDescriptor load_descriptor(const std::filesystem::path& dir) {
  std::ifstream mi(dir / "dataset.json");
  if (!mi) throw config_error("cannot read " + (dir / "dataset.json").string());
  json manifest = json::parse(mi);
  if (!manifest.contains("attack") || manifest["attack"].is_null()) {
    return AttackDescriptor{};
  }
  return descriptor_from_json(manifest["attack"]);
}

}  // namespace inffor
