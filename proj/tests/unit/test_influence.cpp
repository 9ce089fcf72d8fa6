#include <doctest.h>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "inffor/attacks.hpp"
#include "inffor/errors.hpp"
#include "inffor/influence.hpp"
#include "inffor/trainer.hpp"
#include "test_util.hpp"

using namespace inffor;

namespace {

ModelSpec binary_linear(int input_dim, double wd = 0.0) {
  ModelSpec spec;
  spec.architecture = Architecture::linear;
  spec.num_classes = 2;
  spec.input_dim = input_dim;
  spec.weight_decay = wd;
  return spec;
}

Example make_example(int id, std::vector<double> x, int y) {
  Example ex;
  ex.id = id;
  ex.features = std::move(x);
  ex.label = y;
  return ex;
}

// store with hand-set checkpoints; entry 0 mirrors the first checkpoint
CheckpointStore hand_store(const ModelSpec& spec,
                           const std::vector<std::pair<double, std::vector<double>>>& ckpts,
                           std::vector<double> final_params, int batch_size) {
  CheckpointStore store;
  store.spec = spec;
  store.batch_size = batch_size;
  const auto spans = layer_spans(spec);
  ParamVector first;
  first.values = ckpts.front().second;
  first.spans = spans;
  store.entries.push_back({0, ckpts.front().first, first});
  long t = 1;
  for (const auto& [lr, params] : ckpts) {
    ParamVector pv;
    pv.values = params;
    pv.spans = spans;
    store.entries.push_back({t++, lr, pv});
  }
  store.final_params.values = std::move(final_params);
  store.final_params.spans = spans;
  return store;
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

}  // namespace

TEST_CASE("predict_label: argmax and tie rules") {
  SUBCASE("multiclass argmax") {
    ModelSpec spec;
    spec.architecture = Architecture::linear;
    spec.num_classes = 3;
    spec.input_dim = 1;
    // logits = [0.1, 0.9, 0.2] for x = [1]
    std::vector<double> params = {0.1, 0.9, 0.2, 0.0, 0.0, 0.0};
    CHECK(predict_label(spec, params, std::vector<double>{1.0}) == 1);
    // tie between classes 0 and 1 breaks toward the smaller index
    std::vector<double> tie = {2.0, 2.0, 0.0, 0.0, 0.0, 0.0};
    CHECK(predict_label(spec, tie, std::vector<double>{1.0}) == 0);
  }
  SUBCASE("binary logit at zero predicts class 0") {
    const auto spec = binary_linear(2);
    std::vector<double> params(param_count(spec), 0.0);
    CHECK(predict_label(spec, params, std::vector<double>{1.0, -1.0}) == 0);
  }
}

TEST_CASE("gradient_term: renormalization core") {
  const std::vector<LayerSpan> two_spans = {{0, 0, 2}, {1, 2, 4}};
  const std::vector<double> g = {1.0, 0.0, 0.0, 2.0};
  const std::vector<double> t = {2.0, 0.0, 0.0, 1.0};

  CHECK(gradient_term(g, t, two_spans, Renorm::none) == doctest::Approx(4.0));
  CHECK(gradient_term(g, t, two_spans, Renorm::global) ==
        doctest::Approx(4.0 / (std::sqrt(5.0) * std::sqrt(5.0))));
  // layerwise: each span is a 1-d direction, cosine 1 per span
  CHECK(gradient_term(g, t, two_spans, Renorm::layerwise) == doctest::Approx(2.0));

  SUBCASE("zero vectors contribute nothing under renormalization") {
    const std::vector<double> zero = {0.0, 0.0, 0.0, 0.0};
    CHECK(gradient_term(zero, t, two_spans, Renorm::global) == 0.0);
    CHECK(gradient_term(zero, t, two_spans, Renorm::layerwise) == 0.0);
    const std::vector<double> half_zero = {0.0, 0.0, 0.0, 2.0};
    CHECK(gradient_term(half_zero, t, two_spans, Renorm::layerwise) == doctest::Approx(1.0));
  }
}

TEST_CASE("gradient_term: scale invariance and the low-loss penalty") {
  // scaled copies of the same gradient stand in for a pair of training
  // points whose losses differ but whose gradient directions agree
  Rng rng(5);
  const std::vector<LayerSpan> one_span = {{0, 0, 6}};
  std::vector<double> g(6), t(6);
  for (auto& x : g) x = rng.normal();
  for (auto& x : t) x = rng.normal();
  for (double c : {0.5, 2.0, 17.0}) {
    std::vector<double> scaled(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) scaled[i] = c * g[i];
    // cosine unchanged, dot product scales with c
    CHECK(gradient_term(scaled, t, one_span, Renorm::global) ==
          doctest::Approx(gradient_term(g, t, one_span, Renorm::global)).epsilon(1e-12));
    CHECK(gradient_term(scaled, t, one_span, Renorm::none) ==
          doctest::Approx(c * gradient_term(g, t, one_span, Renorm::none)).epsilon(1e-12));
  }
  // the smaller-gradient twin contributes strictly less unnormalized mass
  std::vector<double> low(g.size());
  for (std::size_t i = 0; i < g.size(); ++i) low[i] = 0.3 * g[i];
  CHECK(std::abs(gradient_term(low, t, one_span, Renorm::none)) <
        std::abs(gradient_term(g, t, one_span, Renorm::none)));
}

TEST_CASE("representer point: closed forms") {
  const double lambda = 0.01;
  const auto spec = binary_linear(2, lambda);
  std::vector<double> params(param_count(spec), 0.0);  // all logits are 0

  Dataset ds;
  ds.input_dim = 2;
  ds.examples = {make_example(0, {1.0, 0.0}, 1), make_example(1, {0.0, 1.0}, 1)};
  const std::vector<double> x_te = {1.0, 0.0};
  const double n = 2.0;

  SUBCASE("orthogonal features yield zero influence") {
    const auto v = representer_point(spec, params, ds, x_te, 0, Renorm::none);
    CHECK(v.values[1] == 0.0);
  }
  SUBCASE("zero-logit value") {
    // dl/da = sigma(0) - 1 = -0.5, so v = <f_i, f_te> / (4 lambda n)
    const auto v = representer_point(spec, params, ds, x_te, 0, Renorm::none);
    CHECK(v.values[0] == doctest::Approx(1.0 / (4.0 * lambda * n)));
  }
  SUBCASE("signum form is activation independent") {
    const auto v0 = representer_point(spec, params, ds, x_te, 0, Renorm::global);
    std::vector<double> other_params = {0.7, -0.3, 0.2};
    const auto v1 = representer_point(spec, other_params, ds, x_te, 0, Renorm::global);
    CHECK(v0.values[0] == doctest::Approx(1.0 / (2.0 * lambda * n)));
    CHECK(v1.values[0] == doctest::Approx(1.0 / (2.0 * lambda * n)));
  }
  SUBCASE("weight decay must be positive") {
    const auto bare = binary_linear(2, 0.0);
    std::vector<double> p(param_count(bare), 0.0);
    CHECK_THROWS_AS(representer_point(bare, p, ds, x_te, 0, Renorm::none), config_error);
  }
}

TEST_CASE("influence functions: identity-Hessian sanity and zero-gradient rule") {
  // H = I exactly: pure weight-decay objective with lambda = 0.5
  const auto spec = binary_linear(2, 0.5);
  std::vector<double> params = {1.0, -2.0, 0.5};
  Dataset ds;
  ds.input_dim = 2;
  // saturated examples: huge margin, matching labels -> data gradient is 0
  ds.examples = {make_example(0, {1e7, 0.0}, 1), make_example(1, {-1e7, 0.0}, 0)};
  REQUIRE(forward(spec, params, ds.examples[0].features)[0] > 100.0);

  LissaConfig cfg;
  cfg.damp = 0.0;
  cfg.scale = 1.0;
  cfg.depth = 1;
  cfg.repeats = 1;
  cfg.batch_size = 2;

  const std::vector<double> x_te = {0.5, 0.5};
  const auto v = influence_functions(spec, params, ds, x_te, 0, cfg, Renorm::none, 7);

  // with H = I this reduces to <g_te, g_i> / n; every g_i = 2*lambda*theta
  Example te;
  te.features = x_te;
  te.label = predict_label(spec, params, x_te);
  const auto g_te = grad(spec, params, te);
  for (std::size_t i = 0; i < ds.examples.size(); ++i) {
    const auto g_i = grad(spec, params, ds.examples[i]);
    CHECK(v.values[i] == doctest::Approx(dot(g_te, g_i) / 2.0).epsilon(1e-9));
  }

  SUBCASE("zero training gradient stays zero under renormalization") {
    const auto bare = binary_linear(2, 0.0);  // no decay: saturated gradient is exactly 0
    std::vector<double> p = {1.0, -2.0, 0.5};
    LissaConfig damped = cfg;
    damped.damp = 1.0;  // keeps the solve bounded despite the singular Hessian
    damped.depth = 50;
    const auto vr = influence_functions(bare, p, ds, x_te, 0, damped, Renorm::global, 7);
    CHECK(vr.values[0] == 0.0);
    CHECK(vr.values[1] == 0.0);
  }
}

TEST_CASE("influence functions: dense-inverse oracle on logistic regression") {
  const auto spec = binary_linear(5, 0.1);
  Rng rng(2);
  const auto pv = init_params(spec, rng);
  Dataset ds;
  ds.input_dim = 5;
  for (int i = 0; i < 20; ++i) {
    std::vector<double> x(5);
    for (auto& u : x) u = rng.normal();
    ds.examples.push_back(make_example(i, x, i % 2));
  }
  std::vector<double> x_te(5);
  for (auto& u : x_te) u = rng.normal();

  LissaConfig cfg;
  cfg.damp = 0.0;
  cfg.scale = 10.0;
  cfg.depth = 1200;
  cfg.repeats = 2;
  cfg.batch_size = ds.size();
  const auto v = influence_functions(spec, pv.values, ds, x_te, 0, cfg, Renorm::none, 3);

  Example te;
  te.features = x_te;
  te.label = predict_label(spec, pv.values, x_te);
  const auto g_te = grad(spec, pv.values, te);
  const auto dense = testutil::dense_hessian(spec, pv.values, ds);
  const auto hinv_gte = testutil::solve(dense, g_te);
  for (std::size_t i = 0; i < ds.examples.size(); ++i) {
    const auto g_i = grad(spec, pv.values, ds.examples[i]);
    const double exact = dot(hinv_gte, g_i) / static_cast<double>(ds.size());
    CHECK(v.values[i] == doctest::Approx(exact).epsilon(0.02));
  }
}

TEST_CASE("tracin: single-batch self similarity and membership") {
  const auto spec = binary_linear(2);
  std::vector<double> theta(param_count(spec), 0.0);
  const double lr = 0.2;
  const int b = 4;
  auto store = hand_store(spec, {{lr, theta}}, theta, b);

  Dataset ds;
  ds.input_dim = 2;
  ds.examples = {make_example(0, {2.0, 1.0}, 0), make_example(1, {0.0, 1.0}, 0)};
  BatchLog log;
  log.batches = {{0}};  // only example 0 ever trained

  // test instance equals example 0; theta=0 predicts 0, matching its label
  const auto v = tracin(store, log, ds, ds.examples[0].features, 0, Renorm::none);
  const auto g = grad(spec, theta, ds.examples[0]);
  CHECK(v.values[0] == doctest::Approx((lr / b) * dot(g, g)));
  CHECK(v.values[1] == 0.0);  // never in a recorded batch

  const auto vr = tracin(store, log, ds, ds.examples[0].features, 0, Renorm::global);
  CHECK(vr.values[0] == doctest::Approx(lr / b));

  SUBCASE("missing batch log is rejected") {
    EstimatorConfig cfg;
    cfg.kind = EstimatorKind::tracin;
    AnalysisInstance t{0, ds.examples[0].features};
    CHECK_THROWS_AS(batch_influence(store, nullptr, ds, std::span(&t, 1), cfg, 1),
                    config_error);
  }
}

TEST_CASE("tracincp: orthogonal gradients, duplicates, hand-set checkpoints") {
  const auto spec = binary_linear(2);
  std::vector<double> theta(param_count(spec), 0.0);

  Dataset ds;
  ds.input_dim = 2;
  // <x_i, x_te> = -1 makes the padded feature dot product exactly 0
  ds.examples = {make_example(0, {1.0, 0.0}, 0), make_example(1, {0.5, 0.5}, 1),
                 make_example(2, {0.5, 0.5}, 1)};
  const std::vector<double> x_te = {-1.0, 0.0};

  auto store = hand_store(spec, {{0.1, theta}}, theta, 1);
  const auto v = tracincp(store, ds, x_te, 0);
  CHECK(v.values[0] == doctest::Approx(0.0));
  CHECK(v.values[1] == v.values[2]);  // duplicates get identical influence

  SUBCASE("two checkpoints sum their weighted dot products") {
    std::vector<double> theta2 = {0.3, -0.1, 0.2};
    auto two = hand_store(spec, {{0.1, theta}, {0.05, theta2}}, theta2, 2);
    const auto v2 = tracincp(two, ds, x_te, 0);

    Example te;
    te.features = x_te;
    te.label = predict_label(spec, theta2, x_te);
    double expected = 0.0;
    for (const auto& [lr, params] : std::vector<std::pair<double, std::vector<double>>>{
             {0.1, theta}, {0.05, theta2}}) {
      const auto gi = grad(spec, params, ds.examples[1]);
      const auto gt = grad(spec, params, te);
      expected += (lr / 2.0) * dot(gi, gt);
    }
    CHECK(v2.values[1] == doctest::Approx(expected).epsilon(1e-12));
  }
}

TEST_CASE("gas: aligned and anti-aligned gradients, bound, layerwise collapse") {
  const auto spec = binary_linear(2);
  std::vector<double> theta(param_count(spec), 0.0);
  auto store = hand_store(spec, {{0.1, theta}, {0.2, theta}}, theta, 4);

  Dataset ds;
  ds.input_dim = 2;
  ds.examples = {make_example(0, {1.0, 2.0}, 0), make_example(1, {1.0, 2.0}, 1)};
  // theta = 0 predicts label 0, so the test gradient matches example 0's
  const std::vector<double> x_te = {1.0, 2.0};
  const double weight_sum = 0.1 / 4 + 0.2 / 4;

  const auto v = gas(store, ds, x_te, 0, false);
  CHECK(v.values[0] == doctest::Approx(weight_sum));    // cosine +1 at both checkpoints
  CHECK(v.values[1] == doctest::Approx(-weight_sum));   // flipped label: cosine -1

  SUBCASE("bound |v_i| <= sum eta_t/b") {
    Rng rng(9);
    Dataset rand_ds;
    rand_ds.input_dim = 2;
    for (int i = 0; i < 10; ++i)
      rand_ds.examples.push_back(
          make_example(i, {rng.normal(), rng.normal()}, static_cast<int>(rng.uniform_int(2))));
    std::vector<double> p = {0.4, -0.2, 0.1};
    auto s2 = hand_store(spec, {{0.1, p}, {0.2, p}}, p, 4);
    const auto vb = gas(s2, rand_ds, std::vector<double>{0.3, 0.9}, 0, false);
    for (double x : vb.values) CHECK(std::abs(x) <= weight_sum + 1e-12);
  }
  SUBCASE("single layer span: layerwise equals global") {
    const auto vl = gas(store, ds, x_te, 0, true);
    for (std::size_t i = 0; i < v.values.size(); ++i)
      CHECK(std::abs(vl.values[i] - v.values[i]) <= 1e-12);
  }
}

TEST_CASE("if-rn-l with one layer equals if-rn") {
  const auto spec = binary_linear(3, 0.05);
  Rng rng(21);
  const auto pv = init_params(spec, rng);
  Dataset ds;
  ds.input_dim = 3;
  for (int i = 0; i < 12; ++i)
    ds.examples.push_back(
        make_example(i, {rng.normal(), rng.normal(), rng.normal()}, i % 2));
  const std::vector<double> x_te = {0.2, -0.4, 1.0};
  LissaConfig cfg;
  cfg.scale = 10.0;
  cfg.depth = 300;
  cfg.repeats = 1;
  cfg.batch_size = ds.size();
  const auto a = influence_functions(spec, pv.values, ds, x_te, 0, cfg, Renorm::global, 5);
  const auto b = influence_functions(spec, pv.values, ds, x_te, 0, cfg, Renorm::layerwise, 5);
  for (std::size_t i = 0; i < a.values.size(); ++i)
    CHECK(std::abs(a.values[i] - b.values[i]) <= 1e-12);
}

TEST_CASE("batch influence: identical to single calls, order independent, amortized") {
  ModelSpec spec;
  spec.architecture = Architecture::mlp;
  spec.hidden_sizes = {16};
  spec.activation = Activation::relu;
  spec.num_classes = 2;
  spec.input_dim = 8;
  spec.weight_decay = 1e-3;

  CleanSpec cs;
  cs.kind = CleanKind::gaussian_blobs;
  cs.classes = 2;
  cs.dim = 8;
  cs.separation = 4.0;
  cs.size = 400;
  const auto ds = make_clean_dataset(cs, 31);

  TrainConfig tc;
  tc.batch_size = 64;
  tc.epochs = 2;
  tc.subepoch_checkpoints = 2;
  tc.seed = 6;
  const auto result = train(spec, ds, tc);

  EstimatorConfig cfg;
  cfg.kind = EstimatorKind::tracincp;
  cfg.renorm = Renorm::global;

  std::vector<AnalysisInstance> tests;
  for (int i = 0; i < 8; ++i) tests.push_back({i, ds.examples[static_cast<std::size_t>(i * 7)].features});

  const auto t0 = std::chrono::steady_clock::now();
  const auto single = estimate_influence(result.store, nullptr, ds, tests[0].features,
                                         tests[0].id, cfg);
  const auto t1 = std::chrono::steady_clock::now();
  const auto batch = batch_influence(result.store, nullptr, ds, tests, cfg, 1);
  const auto t2 = std::chrono::steady_clock::now();

  CHECK(batch[0].values == single.values);  // bitwise

  std::vector<AnalysisInstance> shuffled(tests.rbegin(), tests.rend());
  const auto batch_rev = batch_influence(result.store, nullptr, ds, shuffled, cfg, 1);
  for (std::size_t t = 0; t < tests.size(); ++t)
    CHECK(batch_rev[tests.size() - 1 - t].values == batch[t].values);

  // training-gradient amortization: evaluating 8 tests costs well under
  // 8x one test (soft wall-clock check)
  const double one = std::chrono::duration<double>(t1 - t0).count();
  const double eight = std::chrono::duration<double>(t2 - t1).count();
  CHECK(eight < 7.0 * one + 0.05);

  SUBCASE("jobs > 1 gives identical results") {
    const auto parallel = batch_influence(result.store, nullptr, ds, tests, cfg, 4);
    for (std::size_t t = 0; t < tests.size(); ++t)
      CHECK(parallel[t].values == batch[t].values);
  }
}

TEST_CASE("estimator tags round trip") {
  for (const std::string tag : {"if", "if-rn", "if-rn-l", "rp", "rp-rn", "tracin",
                                "tracin-rn", "tracin-rn-l", "tracincp", "gas", "gas-l"}) {
    const auto cfg = parse_estimator_tag(tag);
    CHECK(estimator_tag(cfg.kind, cfg.renorm) == tag);
  }
  CHECK_THROWS_AS(parse_estimator_tag("nope"), config_error);
}

TEST_CASE("influence exports: csv and binary with sidecar") {
  const auto spec = binary_linear(2);
  std::vector<double> theta(param_count(spec), 0.0);
  Dataset ds;
  ds.input_dim = 2;
  ds.examples = {make_example(4, {1.0, 0.0}, 0), make_example(9, {0.0, 1.0}, 1)};
  auto store = hand_store(spec, {{0.1, theta}}, theta, 2);
  const auto v = gas(store, ds, ds.examples[0].features, 3, false);

  const auto dir = std::filesystem::temp_directory_path() / "inffor_test_influence_io";
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  write_influence_csv(v, ds, dir / "v.csv");
  write_influence_binary(v, dir / "v.bin");

  std::ifstream csv(dir / "v.csv");
  std::string line;
  std::getline(csv, line);
  CHECK(line == "train_id,value");
  std::getline(csv, line);
  CHECK(line.rfind("4,", 0) == 0);  // ids come from the dataset, not positions

  CHECK(std::filesystem::file_size(dir / "v.bin") == v.values.size() * sizeof(double));
  std::ifstream side(dir / "v.bin.json");
  REQUIRE(side.good());
  std::string text((std::istreambuf_iterator<char>(side)), std::istreambuf_iterator<char>());
  CHECK(text.find("\"gas\"") != std::string::npos);
  CHECK(text.find("\"test_id\": 3") != std::string::npos);
  std::filesystem::remove_all(dir);
}
