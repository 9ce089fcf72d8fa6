#include <doctest.h>

#include <cmath>

#include "inffor/errors.hpp"
#include "inffor/model.hpp"
#include "inffor/rng.hpp"
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

ModelSpec small_mlp(int input_dim, std::vector<int> hidden, Activation act,
                    int classes = 2, double wd = 0.0) {
  ModelSpec spec;
  spec.architecture = Architecture::mlp;
  spec.hidden_sizes = std::move(hidden);
  spec.activation = act;
  spec.num_classes = classes;
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

// Dataset whose empirical loss term vanishes: hugely scaled features with
// labels matching the sign of the initial logit saturate the sigmoid, so
// only the weight-decay term survives in gradients and Hessians.
Dataset saturated_dataset(const ModelSpec& spec, const std::vector<double>& params, int n) {
  Dataset ds;
  ds.num_classes = 2;
  ds.input_dim = spec.input_dim;
  for (int i = 0; i < n; ++i) {
    std::vector<double> x(static_cast<std::size_t>(spec.input_dim), 0.0);
    x[0] = 1e6 * (i % 2 == 0 ? 1.0 : -1.0);
    const auto a = forward(spec, params, x);
    ds.examples.push_back(make_example(i, x, a[0] > 0.0 ? 1 : 0));
  }
  return ds;
}

}  // namespace

TEST_CASE("forward: linear model with zero parameters maps any input to zero") {
  const auto spec = binary_linear(3);
  std::vector<double> params(param_count(spec), 0.0);
  const auto a = forward(spec, params, std::vector<double>{1.5, -2.0, 0.25});
  REQUIRE(a.size() == 1);
  CHECK(a[0] == 0.0);
}

TEST_CASE("forward: linear binary dot product") {
  const auto spec = binary_linear(2);
  // weights [1, -1], bias 0
  std::vector<double> params = {1.0, -1.0, 0.0};
  const auto a = forward(spec, params, std::vector<double>{2.0, 1.0});
  CHECK(a[0] == doctest::Approx(1.0));
}

TEST_CASE("forward: mlp matches an independent hand-rolled pass") {
  const auto spec = small_mlp(3, {4}, Activation::relu);
  Rng rng(11);
  const auto pv = init_params(spec, rng);
  const std::vector<double> x = {0.3, -1.2, 0.7};
  const auto a = forward(spec, pv.values, x);

  // independent forward: layer 0 is 4x3 weights + 4 biases, then 1x4 + 1
  const auto& p = pv.values;
  std::vector<double> h(4, 0.0);
  for (int o = 0; o < 4; ++o) {
    double acc = p[12 + static_cast<std::size_t>(o)];
    for (int i = 0; i < 3; ++i) acc += p[static_cast<std::size_t>(o * 3 + i)] * x[static_cast<std::size_t>(i)];
    h[static_cast<std::size_t>(o)] = acc > 0.0 ? acc : 0.0;
  }
  double logit = p[16 + 4];
  for (int i = 0; i < 4; ++i) logit += p[16 + static_cast<std::size_t>(i)] * h[static_cast<std::size_t>(i)];
  CHECK(a[0] == doctest::Approx(logit).epsilon(1e-12));
}

TEST_CASE("loss: closed forms") {
  CHECK(loss(std::vector<double>{0.0}, 1, LossKind::bce_single_logit) ==
        doctest::Approx(std::log(2.0)));
  CHECK(loss(std::vector<double>{0.0, 0.0, 0.0}, 2, LossKind::softmax_ce) ==
        doctest::Approx(std::log(3.0)));
  CHECK(loss(std::vector<double>{2.0}, 1, LossKind::bce_single_logit) ==
        doctest::Approx(std::log1p(std::exp(-2.0))));
  CHECK_THROWS_AS(loss(std::vector<double>{0.0, 0.0}, 5, LossKind::softmax_ce),
                  std::invalid_argument);
}

TEST_CASE("loss: softmax is exactly permutation equivariant") {
  Rng rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> a(5);
    for (auto& v : a) v = 3.0 * rng.normal();
    std::vector<int> perm = {0, 1, 2, 3, 4};
    rng.shuffle(perm);
    std::vector<double> b(5);
    for (int j = 0; j < 5; ++j) b[static_cast<std::size_t>(perm[static_cast<std::size_t>(j)])] = a[static_cast<std::size_t>(j)];
    const int label = static_cast<int>(rng.uniform_int(5));
    const double l1 = loss(a, label, LossKind::softmax_ce);
    const double l2 = loss(b, perm[static_cast<std::size_t>(label)], LossKind::softmax_ce);
    CHECK(l1 == l2);
  }
}

TEST_CASE("grad: linear binary at zero weights") {
  const auto spec = binary_linear(2);
  std::vector<double> params(param_count(spec), 0.0);
  const auto ex = make_example(0, {3.0, -1.0}, 1);
  const auto g = grad(spec, params, ex);
  // (sigma(0) - 1) * x = -0.5 x over the weights, -0.5 on the bias
  CHECK(g[0] == doctest::Approx(-1.5));
  CHECK(g[1] == doctest::Approx(0.5));
  CHECK(g[2] == doctest::Approx(-0.5));
}

TEST_CASE("grad: label_override replaces the stored label") {
  const auto spec = binary_linear(2);
  std::vector<double> params = {0.2, -0.4, 0.1};
  const auto ex = make_example(0, {1.0, 2.0}, 1);
  const auto g_override = grad(spec, params, ex, 0);
  auto flipped = ex;
  flipped.label = 0;
  const auto g_flipped = grad(spec, params, flipped);
  CHECK(g_override == g_flipped);
}

TEST_CASE("grad: finite-difference agreement across architectures and losses") {
  Rng rng(101);
  const std::vector<ModelSpec> specs = {
      binary_linear(4, 0.01),
      small_mlp(3, {5}, Activation::tanh, 2, 0.001),
      small_mlp(3, {4, 3}, Activation::tanh, 3, 0.0),
      [] {
        ModelSpec s;
        s.architecture = Architecture::linear;
        s.num_classes = 4;
        s.input_dim = 3;
        s.weight_decay = 0.005;
        return s;
      }(),
  };
  for (const auto& spec : specs) {
    for (int draw = 0; draw < 10; ++draw) {
      auto pv = init_params(spec, rng);
      std::vector<double> x(static_cast<std::size_t>(spec.input_dim));
      for (auto& v : x) v = rng.normal();
      const auto ex = make_example(0, x, static_cast<int>(rng.uniform_int(
                                             static_cast<std::uint64_t>(spec.num_classes))));
      const auto analytic = grad(spec, pv.values, ex);
      const auto fd = testutil::fd_gradient(spec, pv.values, ex);
      CHECK(testutil::rel_error(analytic, fd) <= 1e-5);
    }
  }
}

TEST_CASE("grad: relu finite differences away from kinks") {
  // central differences straddle relu kinks, so draws whose pre-activations
  // sit within the step size of zero are rejected
  const auto spec = small_mlp(3, {4}, Activation::relu, 2, 0.001);
  Rng rng(409);
  int accepted = 0;
  while (accepted < 10) {
    auto pv = init_params(spec, rng);
    for (auto& p : pv.values) p += 0.3 * rng.normal();  // break zero biases
    std::vector<double> x = {rng.normal(), rng.normal(), rng.normal()};
    bool near_kink = false;
    for (int o = 0; o < 4; ++o) {
      double pre = pv.values[12 + static_cast<std::size_t>(o)];
      for (int i = 0; i < 3; ++i)
        pre += pv.values[static_cast<std::size_t>(o * 3 + i)] * x[static_cast<std::size_t>(i)];
      if (std::abs(pre) < 1e-3) near_kink = true;
    }
    if (near_kink) continue;
    ++accepted;
    const auto ex = make_example(0, x, static_cast<int>(rng.uniform_int(2)));
    const auto analytic = grad(spec, pv.values, ex);
    const auto fd = testutil::fd_gradient(spec, pv.values, ex);
    CHECK(testutil::rel_error(analytic, fd) <= 1e-5);
  }
}

TEST_CASE("grad: perfectly fit point has vanishing data-term gradient") {
  const auto spec = binary_linear(1);
  std::vector<double> params = {40.0, 0.0};  // logit 40 for x=1
  const auto ex = make_example(0, {1.0}, 1);
  const auto g = grad(spec, params, ex);
  CHECK(testutil::l2(g) < 1e-12);
}

TEST_CASE("penultimate features") {
  SUBCASE("linear model returns the input") {
    const auto spec = binary_linear(2);
    std::vector<double> params = {1.0, 2.0, 3.0};
    const auto f = penultimate_features(spec, params, std::vector<double>{3.0, 4.0});
    CHECK(f == std::vector<double>{3.0, 4.0});
  }
  SUBCASE("relu clamps known pre-activations") {
    auto spec = small_mlp(2, {2}, Activation::relu);
    // W = [[1,0],[0,1]], b = [-2, 1]; x = [1, 1] -> pre [-1, 2] -> f [0, 2]
    std::vector<double> params(param_count(spec), 0.0);
    params[0] = 1.0;
    params[3] = 1.0;
    params[4] = -2.0;
    params[5] = 1.0;
    const auto f = penultimate_features(spec, params, std::vector<double>{1.0, 1.0});
    CHECK(f == std::vector<double>{0.0, 2.0});
  }
  SUBCASE("mlp matches an independent truncated pass") {
    const auto spec = small_mlp(3, {4}, Activation::tanh);
    Rng rng(5);
    const auto pv = init_params(spec, rng);
    const std::vector<double> x = {0.1, 0.2, -0.3};
    const auto f = penultimate_features(spec, pv.values, x);
    for (int o = 0; o < 4; ++o) {
      double acc = pv.values[12 + static_cast<std::size_t>(o)];
      for (int i = 0; i < 3; ++i)
        acc += pv.values[static_cast<std::size_t>(o * 3 + i)] * x[static_cast<std::size_t>(i)];
      CHECK(f[static_cast<std::size_t>(o)] == doctest::Approx(std::tanh(acc)).epsilon(1e-12));
    }
  }
}

TEST_CASE("hvp: pure weight-decay objective gives 2*lambda*v") {
  auto spec = binary_linear(2, 0.1);
  Rng rng(7);
  const auto pv = init_params(spec, rng);
  const auto ds = saturated_dataset(spec, pv.values, 6);
  std::vector<double> v = {0.5, -1.0, 2.0};
  const auto hv = hvp(spec, pv.values, ds, v);
  for (std::size_t j = 0; j < v.size(); ++j)
    CHECK(hv[j] == doctest::Approx(0.2 * v[j]).epsilon(1e-10));
}

TEST_CASE("hvp: zero direction maps to zero") {
  auto spec = small_mlp(2, {3}, Activation::tanh, 2, 0.01);
  Rng rng(9);
  const auto pv = init_params(spec, rng);
  Dataset ds;
  ds.input_dim = 2;
  ds.examples = {make_example(0, {0.4, -0.2}, 1), make_example(1, {-0.1, 0.9}, 0)};
  std::vector<double> zero(pv.values.size(), 0.0);
  const auto hv = hvp(spec, pv.values, ds, zero);
  CHECK(testutil::l2(hv) == 0.0);
}

TEST_CASE("hvp: agrees with central differences of the mean gradient") {
  auto spec = small_mlp(3, {4}, Activation::tanh, 3, 0.01);
  Rng rng(13);
  const auto pv = init_params(spec, rng);
  Dataset ds;
  ds.input_dim = 3;
  ds.num_classes = 3;
  for (int i = 0; i < 8; ++i) {
    std::vector<double> x = {rng.normal(), rng.normal(), rng.normal()};
    ds.examples.push_back(make_example(i, x, i % 3));
  }
  std::vector<double> v(pv.values.size());
  for (auto& u : v) u = rng.normal();

  const auto hv = hvp(spec, pv.values, ds, v);

  const double h = 1e-5;
  auto plus = pv.values, minus = pv.values;
  for (std::size_t j = 0; j < v.size(); ++j) {
    plus[j] += h * v[j];
    minus[j] -= h * v[j];
  }
  const auto gp = testutil::mean_gradient(spec, plus, ds);
  const auto gm = testutil::mean_gradient(spec, minus, ds);
  std::vector<double> fd(v.size());
  for (std::size_t j = 0; j < v.size(); ++j) fd[j] = (gp[j] - gm[j]) / (2.0 * h);
  CHECK(testutil::rel_error(hv, fd) <= 1e-4);
}

TEST_CASE("hvp: dense-Hessian oracle on a 10-point logistic regression") {
  auto spec = binary_linear(3, 0.05);
  Rng rng(17);
  const auto pv = init_params(spec, rng);
  Dataset ds;
  ds.input_dim = 3;
  for (int i = 0; i < 10; ++i)
    ds.examples.push_back(
        make_example(i, {rng.normal(), rng.normal(), rng.normal()}, i % 2));

  // dense Hessian assembled from finite differences of the mean gradient
  const std::size_t d = pv.values.size();
  std::vector<std::vector<double>> dense(d, std::vector<double>(d, 0.0));
  const double h = 1e-6;
  for (std::size_t j = 0; j < d; ++j) {
    auto plus = pv.values, minus = pv.values;
    plus[j] += h;
    minus[j] -= h;
    const auto gp = testutil::mean_gradient(spec, plus, ds);
    const auto gm = testutil::mean_gradient(spec, minus, ds);
    for (std::size_t i = 0; i < d; ++i) dense[i][j] = (gp[i] - gm[i]) / (2.0 * h);
  }
  std::vector<double> v(d);
  for (auto& u : v) u = rng.normal();
  std::vector<double> dense_hv(d, 0.0);
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < d; ++j) dense_hv[i] += dense[i][j] * v[j];

  const auto hv = hvp(spec, pv.values, ds, v);
  CHECK(testutil::rel_error(hv, dense_hv) <= 1e-4);
}

TEST_CASE("hvp: symmetric as a bilinear form") {
  auto spec = small_mlp(2, {3}, Activation::tanh, 2, 0.001);
  Rng rng(23);
  const auto pv = init_params(spec, rng);
  Dataset ds;
  ds.input_dim = 2;
  for (int i = 0; i < 5; ++i)
    ds.examples.push_back(make_example(i, {rng.normal(), rng.normal()}, i % 2));
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> u(pv.values.size()), v(pv.values.size());
    for (auto& x : u) x = rng.normal();
    for (auto& x : v) x = rng.normal();
    const auto hu = hvp(spec, pv.values, ds, u);
    const auto hv = hvp(spec, pv.values, ds, v);
    double uhv = 0.0, vhu = 0.0;
    for (std::size_t j = 0; j < u.size(); ++j) {
      uhv += u[j] * hv[j];
      vhu += v[j] * hu[j];
    }
    CHECK(std::abs(uhv - vhu) <= 1e-8 * std::max({std::abs(uhv), std::abs(vhu), 1e-12}));
  }
}

TEST_CASE("lissa: identity Hessian returns v after one step") {
  auto spec = binary_linear(2, 0.5);  // 2*lambda = 1 -> H = I on saturated data
  Rng rng(31);
  const auto pv = init_params(spec, rng);
  const auto ds = saturated_dataset(spec, pv.values, 4);
  LissaConfig cfg;
  cfg.damp = 0.0;
  cfg.scale = 1.0;
  cfg.depth = 1;
  cfg.repeats = 1;
  cfg.batch_size = 2;
  std::vector<double> v = {1.0, -2.0, 0.5};
  Rng lissa_rng(1);
  const auto out = lissa_inverse_hvp(spec, pv.values, ds, v, cfg, lissa_rng);
  for (std::size_t j = 0; j < v.size(); ++j)
    CHECK(out[j] == doctest::Approx(v[j]).epsilon(1e-9));
}

TEST_CASE("lissa: zero rhs returns zero") {
  auto spec = binary_linear(2, 0.1);
  Rng rng(37);
  const auto pv = init_params(spec, rng);
  Dataset ds;
  ds.input_dim = 2;
  ds.examples = {make_example(0, {1.0, 0.0}, 1), make_example(1, {0.0, 1.0}, 0)};
  LissaConfig cfg;
  cfg.depth = 10;
  cfg.repeats = 2;
  cfg.scale = 10.0;
  std::vector<double> zero(pv.values.size(), 0.0);
  Rng lissa_rng(2);
  const auto out = lissa_inverse_hvp(spec, pv.values, ds, zero, cfg, lissa_rng);
  CHECK(testutil::l2(out) == 0.0);
}

TEST_CASE("lissa: matches dense inverse on a strictly convex logistic regression") {
  auto spec = binary_linear(5, 0.1);
  Rng rng(41);
  const auto pv = init_params(spec, rng);
  Dataset ds;
  ds.input_dim = 5;
  for (int i = 0; i < 20; ++i) {
    std::vector<double> x(5);
    for (auto& u : x) u = rng.normal();
    ds.examples.push_back(make_example(i, x, i % 2));
  }
  std::vector<double> v(pv.values.size());
  for (auto& u : v) u = rng.normal();

  const auto dense = testutil::dense_hessian(spec, pv.values, ds);
  const auto exact = testutil::solve(dense, v);

  LissaConfig cfg;
  cfg.damp = 0.0;
  cfg.scale = 10.0;
  cfg.depth = 1000;
  cfg.repeats = 10;
  cfg.batch_size = ds.size();
  Rng lissa_rng(3);
  const auto est = lissa_inverse_hvp(spec, pv.values, ds, v, cfg, lissa_rng);
  CHECK(testutil::rel_error(est, exact) <= 0.02);
}

TEST_CASE("lissa: diverging iterates raise a numeric error") {
  auto spec = binary_linear(2, 50.0);  // H ~ 100 I, scale far too small
  Rng rng(43);
  const auto pv = init_params(spec, rng);
  Dataset ds;
  ds.input_dim = 2;
  ds.examples = {make_example(0, {1.0, 0.0}, 1), make_example(1, {0.0, 1.0}, 0)};
  LissaConfig cfg;
  cfg.damp = 0.0;
  cfg.scale = 1.0;
  cfg.depth = 500;
  cfg.repeats = 1;
  std::vector<double> v = {1.0, 1.0, 1.0};
  Rng lissa_rng(4);
  CHECK_THROWS_AS(lissa_inverse_hvp(spec, pv.values, ds, v, cfg, lissa_rng), numeric_error);
}

TEST_CASE("theorem-1 ordering for the single-logit loss (sampled)") {
  Rng rng(47);
  for (int y : {0, 1}) {
    for (int trial = 0; trial < 1000; ++trial) {
      const double a1 = 20.0 * (rng.uniform01() - 0.5);
      const double a2 = 20.0 * (rng.uniform01() - 0.5);
      const double l1 = loss(std::vector<double>{a1}, y, LossKind::bce_single_logit);
      const double l2 = loss(std::vector<double>{a2}, y, LossKind::bce_single_logit);
      const double p1 = 1.0 / (1.0 + std::exp(-a1));
      const double p2 = 1.0 / (1.0 + std::exp(-a2));
      const double d1 = std::abs(p1 - y);
      const double d2 = std::abs(p2 - y);
      if (l1 < l2) CHECK(d1 < d2);
    }
  }
}

TEST_CASE("param vector validation") {
  ParamVector pv;
  pv.values = {1.0, 2.0, 3.0};
  pv.spans = {{0, 0, 2}, {1, 2, 3}};
  CHECK_NOTHROW(validate_param_vector(pv));
  pv.spans = {{0, 0, 2}};
  CHECK_THROWS_AS(validate_param_vector(pv), config_error);
  pv.spans = {{0, 0, 2}, {1, 1, 3}};
  CHECK_THROWS_AS(validate_param_vector(pv), config_error);
}

TEST_CASE("dimension mismatches are rejected") {
  const auto spec = binary_linear(3);
  std::vector<double> params(param_count(spec), 0.0);
  CHECK_THROWS_AS(forward(spec, params, std::vector<double>{1.0, 2.0}),
                  std::invalid_argument);
  std::vector<double> bad_params(2, 0.0);
  CHECK_THROWS_AS(forward(spec, bad_params, std::vector<double>{1.0, 2.0, 3.0}),
                  std::invalid_argument);
}
