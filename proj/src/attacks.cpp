#include "inffor/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

#include "inffor/errors.hpp"
#include "inffor/rng.hpp"

namespace inffor {

namespace {

constexpr double kPi = 3.14159265358979323846;

std::vector<std::vector<double>> blob_means(const CleanSpec& spec) {
  // Class means on a circle in the first two feature dimensions, radius
  // chosen so adjacent means sit `separation` noise-sigmas apart.
  const int k = spec.classes;
  const double radius =
      k == 1 ? 0.0 : spec.separation / (2.0 * std::sin(kPi / static_cast<double>(k)));
  std::vector<std::vector<double>> means;
  for (int c = 0; c < k; ++c) {
    std::vector<double> mu(static_cast<std::size_t>(spec.dim), 0.0);
    const double angle = 2.0 * kPi * c / static_cast<double>(k);
    mu[0] = radius * std::cos(angle);
    if (spec.dim > 1) mu[1] = radius * std::sin(angle);
    means.push_back(std::move(mu));
  }
  return means;
}

std::vector<std::vector<double>> grid_templates(const CleanSpec& spec) {
  Rng rng(spec.template_seed);
  std::vector<std::vector<double>> templates;
  const int d = spec.grid_h * spec.grid_w;
  for (int c = 0; c < spec.classes; ++c) {
    std::vector<double> t(static_cast<std::size_t>(d));
    for (auto& v : t) v = rng.uniform(0.2, 0.6);
    templates.push_back(std::move(t));
  }
  return templates;
}

double clip01(double x) { return std::min(1.0, std::max(0.0, x)); }

}  // namespace

Dataset make_clean_dataset(const CleanSpec& spec, std::uint64_t seed) {
  if (spec.classes < 2) throw config_error("make_clean_dataset: need at least 2 classes");
  if (spec.size < spec.classes) throw config_error("make_clean_dataset: size < classes");

  Dataset ds;
  ds.num_classes = spec.classes;
  ds.origin = spec;
  Rng rng(seed);

  if (spec.kind == CleanKind::gaussian_blobs) {
    ds.input_dim = spec.dim;
    const auto means = blob_means(spec);
    for (int i = 0; i < spec.size; ++i) {
      Example ex;
      ex.id = i;
      ex.label = i % spec.classes;
      ex.features.resize(static_cast<std::size_t>(spec.dim));
      for (int j = 0; j < spec.dim; ++j)
        ex.features[static_cast<std::size_t>(j)] =
            means[static_cast<std::size_t>(ex.label)][static_cast<std::size_t>(j)] +
            rng.normal();
      ds.examples.push_back(std::move(ex));
    }
  } else {
    ds.input_dim = spec.grid_h * spec.grid_w;
    const auto templates = grid_templates(spec);
    for (int i = 0; i < spec.size; ++i) {
      Example ex;
      ex.id = i;
      ex.label = i % spec.classes;
      ex.features.resize(static_cast<std::size_t>(ds.input_dim));
      const auto& t = templates[static_cast<std::size_t>(ex.label)];
      // heteroscedastic noise: each image draws its own noise scale
      const double scale = spec.grid_noise * std::exp(spec.grid_noise_spread * rng.normal());
      for (int j = 0; j < ds.input_dim; ++j)
        ex.features[static_cast<std::size_t>(j)] =
            clip01(t[static_cast<std::size_t>(j)] + scale * rng.normal());
      ds.examples.push_back(std::move(ex));
    }
  }
  return ds;
}

std::vector<double> apply_trigger(const TriggerSpec& trigger, std::span<const double> x,
                                  int grid_h, int grid_w) {
  const int d = grid_h * grid_w;
  if (static_cast<int>(x.size()) != d)
    throw config_error("apply_trigger: feature length does not match grid dimensions");
  std::vector<double> out(x.begin(), x.end());

  std::vector<double> delta(static_cast<std::size_t>(d), 0.0);
  if (trigger.kind == TriggerKind::one_pixel) {
    const int center = (grid_h / 2) * grid_w + grid_w / 2;
    delta[static_cast<std::size_t>(center)] = trigger.epsilon;
  } else if (trigger.kind == TriggerKind::four_pixel) {
    const int r = grid_h / 2, c = grid_w / 2;
    const int idx[4] = {r * grid_w + c, r * grid_w + c - 1, (r - 1) * grid_w + c,
                        (r - 1) * grid_w + c - 1};
    for (int i : idx) delta[static_cast<std::size_t>(i)] = trigger.epsilon / 2.0;
  } else {
    Rng rng(trigger.noise_seed);
    double norm_sq = 0.0;
    for (auto& v : delta) {
      v = rng.normal();
      norm_sq += v * v;
    }
    const double scale = trigger.epsilon / std::sqrt(norm_sq);
    for (auto& v : delta) v *= scale;
  }

  for (int j = 0; j < d; ++j)
    out[static_cast<std::size_t>(j)] =
        clip01(out[static_cast<std::size_t>(j)] + delta[static_cast<std::size_t>(j)]);
  return out;
}

AttackedDataset group_flip_attack(const Dataset& clean, int m, int y_adv,
                                  std::uint64_t seed, int num_targets) {
  if (!clean.origin)
    throw config_error("group_flip_attack requires a generated dataset (origin spec)");
  if (y_adv < 0 || y_adv >= clean.num_classes)
    throw config_error("group_flip_attack: y_adv out of range");

  const CleanSpec& spec = *clean.origin;
  AttackedDataset out;
  out.train = clean;
  Rng rng(seed);
  int next_id = 0;
  for (const auto& ex : clean.examples) next_id = std::max(next_id, ex.id + 1);

  std::function<std::vector<double>()> draw;
  if (spec.kind == CleanKind::gaussian_blobs) {
    // distinct cluster, at least 6 sigmas (or `separation`) above every mean
    const double radius =
        spec.classes == 1 ? 0.0
                          : spec.separation / (2.0 * std::sin(kPi / spec.classes));
    std::vector<double> adv_mean(static_cast<std::size_t>(spec.dim), 0.0);
    adv_mean[spec.dim > 1 ? 1 : 0] = radius + std::max(6.0, spec.separation);
    draw = [&rng, adv_mean]() {
      std::vector<double> x(adv_mean);
      for (auto& v : x) v += rng.normal();
      return x;
    };
  } else {
    // distinct simple cluster: a template anti-correlated with the class
    // templates, drawn with a small fixed noise so the group is learned fast
    const auto templates = grid_templates(spec);
    std::vector<double> adv_template(static_cast<std::size_t>(spec.grid_h * spec.grid_w));
    for (std::size_t j = 0; j < adv_template.size(); ++j) {
      double avg = 0.0;
      for (const auto& t : templates) avg += t[j];
      avg /= static_cast<double>(templates.size());
      adv_template[j] = avg > 0.4 ? 0.1 : 0.7;
    }
    const double adv_noise = std::min(0.25 * spec.grid_noise, 0.04);
    draw = [&rng, adv_template, adv_noise]() {
      std::vector<double> x(adv_template);
      for (auto& v : x) v = clip01(v + adv_noise * rng.normal());
      return x;
    };
  }

  for (int i = 0; i < m; ++i) {
    Example ex;
    ex.id = next_id++;
    ex.features = draw();
    ex.label = y_adv;
    ex.is_adversarial = true;
    out.train.examples.push_back(std::move(ex));
  }
  for (int i = 0; i < num_targets; ++i) {
    TargetInstance t;
    t.id = i;
    t.features = draw();
    t.y_true = -1;  // the cluster has no clean class
    t.y_adv = y_adv;
    out.targets.push_back(std::move(t));
  }

  out.descriptor.kind = "group_flip";
  out.descriptor.rate = m == 0 ? 0.0
                               : static_cast<double>(m) /
                                     static_cast<double>(out.train.examples.size());
  out.descriptor.adversarial_count = m;
  out.descriptor.y_adv = y_adv;
  return out;
}

AttackedDataset backdoor_attack(const Dataset& train, const Dataset& heldout,
                                const TriggerSpec& trigger, double rate, int y_target,
                                int y_adv, std::uint64_t seed, int num_targets) {
  if (!train.origin || train.origin->kind != CleanKind::grid_images)
    throw config_error("backdoor_attack requires a grid_images dataset");
  if (rate <= 0.0 || rate >= 1.0) throw config_error("backdoor_attack: rate must be in (0,1)");
  const CleanSpec& spec = *train.origin;

  const int n = train.size();
  const int count = static_cast<int>(std::ceil(rate * n));

  // Bases come from the most prototypical fifth of the class (nearest the
  // class centroid), so the trigger is the dominant adversarial signal and
  // the clean content does not fight the relabeling.
  const auto prototypical = [&](const Dataset& ds) {
    std::vector<double> centroid(static_cast<std::size_t>(ds.input_dim), 0.0);
    int cls_count = 0;
    for (const auto& ex : ds.examples) {
      if (ex.label != y_target) continue;
      for (std::size_t j = 0; j < centroid.size(); ++j) centroid[j] += ex.features[j];
      ++cls_count;
    }
    for (auto& v : centroid) v /= std::max(1, cls_count);
    std::vector<std::pair<double, int>> ranked;
    for (int i = 0; i < ds.size(); ++i) {
      const Example& ex = ds.examples[static_cast<std::size_t>(i)];
      if (ex.label != y_target) continue;
      double d2 = 0.0;
      for (std::size_t j = 0; j < centroid.size(); ++j) {
        const double d = ex.features[j] - centroid[j];
        d2 += d * d;
      }
      ranked.emplace_back(d2, i);
    }
    std::sort(ranked.begin(), ranked.end());
    return ranked;
  };

  const auto train_ranked = prototypical(train);
  if (static_cast<int>(train_ranked.size()) < count)
    throw config_error("backdoor_attack: not enough class-" + std::to_string(y_target) +
                       " instances (" + std::to_string(train_ranked.size()) + " < " +
                       std::to_string(count) + ")");
  const std::size_t pool =
      std::max<std::size_t>(static_cast<std::size_t>(count), train_ranked.size() / 5);
  std::vector<int> candidates;
  for (std::size_t i = 0; i < pool; ++i) candidates.push_back(train_ranked[i].second);
  Rng rng(seed);
  rng.shuffle(candidates);
  candidates.resize(static_cast<std::size_t>(count));

  AttackedDataset out;
  out.train = train;
  for (int idx : candidates) {
    Example& ex = out.train.examples[static_cast<std::size_t>(idx)];
    ex.features = apply_trigger(trigger, ex.features, spec.grid_h, spec.grid_w);
    ex.label = y_adv;
    ex.is_adversarial = true;
  }

  const auto held_ranked = prototypical(heldout);
  if (static_cast<int>(held_ranked.size()) < num_targets)
    throw config_error("backdoor_attack: heldout set has too few class-" +
                       std::to_string(y_target) + " instances for the target set");
  for (int i = 0; i < num_targets; ++i) {
    const Example& base =
        heldout.examples[static_cast<std::size_t>(held_ranked[static_cast<std::size_t>(i)].second)];
    TargetInstance t;
    t.id = i;
    t.features = apply_trigger(trigger, base.features, spec.grid_h, spec.grid_w);
    t.y_true = y_target;
    t.y_adv = y_adv;
    out.targets.push_back(std::move(t));
  }

  out.descriptor.kind = "backdoor";
  out.descriptor.rate = rate;
  out.descriptor.adversarial_count = count;
  out.descriptor.y_target = y_target;
  out.descriptor.y_adv = y_adv;
  out.descriptor.trigger = trigger.kind == TriggerKind::one_pixel    ? "one_pixel"
                           : trigger.kind == TriggerKind::four_pixel ? "four_pixel"
                                                                     : "blend";
  out.descriptor.epsilon = trigger.epsilon;
  return out;
}

AttackedDataset single_target_poison(const Dataset& train, const Example& target, int m,
                                     int y_adv, double noise_sd, std::uint64_t seed) {
  AttackedDataset out;
  out.train = train;
  Rng rng(seed);
  int next_id = 0;
  for (const auto& ex : train.examples) next_id = std::max(next_id, ex.id + 1);

  const bool clip = train.origin && train.origin->kind == CleanKind::grid_images;
  for (int i = 0; i < m; ++i) {
    Example ex;
    ex.id = next_id++;
    ex.features = target.features;
    for (auto& v : ex.features) {
      v += noise_sd * rng.normal();
      if (clip) v = clip01(v);
    }
    ex.label = y_adv;
    ex.is_adversarial = true;
    out.train.examples.push_back(std::move(ex));
  }

  TargetInstance t;
  t.id = 0;
  t.features = target.features;
  t.y_true = target.label;
  t.y_adv = y_adv;
  out.targets.push_back(std::move(t));

  out.descriptor.kind = "single_target_poison";
  out.descriptor.rate =
      m == 0 ? 0.0 : static_cast<double>(m) / static_cast<double>(out.train.examples.size());
  out.descriptor.adversarial_count = m;
  out.descriptor.y_target = target.label;
  out.descriptor.y_adv = y_adv;
  return out;
}

std::vector<int> adaptive_seed_selection(std::span<const Example> pool,
                                         const CheckpointStore& surrogate,
                                         const TargetInstance& target, int m,
                                         const EstimatorConfig& cfg) {
  if (m < 0 || static_cast<std::size_t>(m) > pool.size())
    throw config_error("adaptive_seed_selection: pool smaller than requested m");
  if (cfg.kind == EstimatorKind::tracin)
    throw config_error("adaptive_seed_selection: tracin is membership-based; "
                       "use a checkpoint estimator");

  Dataset pool_ds;
  pool_ds.num_classes = surrogate.spec.num_classes;
  pool_ds.input_dim = surrogate.spec.input_dim;
  pool_ds.examples.assign(pool.begin(), pool.end());

  const auto v = estimate_influence(surrogate, nullptr, pool_ds, target.features,
                                    target.id, cfg);

  std::vector<int> order(pool.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    const double va = v.values[static_cast<std::size_t>(a)];
    const double vb = v.values[static_cast<std::size_t>(b)];
    if (va != vb) return va < vb;
    return pool[static_cast<std::size_t>(a)].id < pool[static_cast<std::size_t>(b)].id;
  });
  order.resize(static_cast<std::size_t>(m));
  std::vector<int> ids;
  ids.reserve(order.size());
  for (int idx : order) ids.push_back(pool[static_cast<std::size_t>(idx)].id);
  return ids;
}

}  // namespace inffor
