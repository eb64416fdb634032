#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "chno/nncore.hpp"
#include "grad_check.hpp"

using namespace chno;
using namespace chno::nn;

namespace {

TensorPtr random_tensor(Shape4 s, unsigned seed, bool grad = true) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd;
  auto t = make_tensor(s);
  for (double &v : t->values) v = nd(rng);
  t->requires_grad = grad;
  return t;
}

std::string temp_path(const std::string &name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

} // namespace

TEST_CASE("pointwise linear forward matches a direct sum", "[nncore]") {
  ParamStore ps;
  auto &w = ps.add("w", {2, 3});
  auto &b = ps.add("b", {2});
  w.values = {1, 2, 3, -1, 0, 0.5};
  b.values = {0.25, -1};
  auto x = random_tensor({2, 3, 2, 2}, 1, false);
  auto y = pointwise_linear(nullptr, x, w, &b);
  REQUIRE(y->shape == Shape4{2, 2, 2, 2});
  for (int n = 0; n < 2; ++n)
    for (int i = 0; i < 2; ++i)
      for (int j = 0; j < 2; ++j) {
        const double x0 = x->at(n, 0, i, j), x1 = x->at(n, 1, i, j), x2 = x->at(n, 2, i, j);
        CHECK(y->at(n, 0, i, j) == Catch::Approx(0.25 + x0 + 2 * x1 + 3 * x2));
        CHECK(y->at(n, 1, i, j) == Catch::Approx(-1 - x0 + 0.5 * x2));
      }
  auto bad = random_tensor({1, 4, 2, 2}, 2, false);
  CHECK_THROWS_AS(pointwise_linear(nullptr, bad, w, &b), ShapeError);
}

TEST_CASE("layer gradients match finite differences", "[nncore][grad]") {
  std::mt19937_64 rng(3);
  ParamStore ps;
  auto &w1 = ps.add("w1", {4, 3});
  auto &b1 = ps.add("b1", {4});
  auto &w2 = ps.add("w2", {2, 4});
  for (auto *p : {&w1, &b1, &w2}) init_uniform(*p, 0.8, rng);
  auto x = random_tensor({2, 3, 4, 4}, 4);
  auto z = random_tensor({2, 2, 4, 4}, 5);
  const D4Element g{1, true};

  auto build = [&](Tape *t) {
    auto h = pointwise_linear(t, x, w1, &b1);
    h = gelu(t, h);
    auto u = pointwise_linear(t, h, w2, nullptr);
    u = add(t, u, z);
    u = d4_transform(t, u, g);
    return concat_channels(t, u, x);
  };
  const auto r = gradcheck::check(build, {&x->values, &z->values, &w1.values, &b1.values, &w2.values},
                                  {&x->grad, &z->grad, &w1.grad, &b1.grad, &w2.grad});
  CHECK(r.checked > 100);
  CHECK(r.max_rel <= 1e-5);
}

TEST_CASE("gelu derivative and values", "[nncore]") {
  CHECK(gelu_scalar(0.0) == 0.0);
  CHECK(gelu_scalar(10.0) == Catch::Approx(10.0));
  CHECK(gelu_scalar(-10.0) == Catch::Approx(0.0).margin(1e-12));
  for (double x : {-3.0, -0.7, 0.0, 0.4, 2.5}) {
    const double h = 1e-6;
    const double fd = (gelu_scalar(x + h) - gelu_scalar(x - h)) / (2 * h);
    CHECK(gelu_derivative(x) == Catch::Approx(fd).epsilon(1e-8));
  }
}

TEST_CASE("d4_transform matches the field action", "[nncore][d4]") {
  auto x = random_tensor({1, 2, 6, 6}, 9, false);
  const Grid2D grid(6, 6, 1, 1, Boundary::Periodic);
  for (const auto &g : d4_elements()) {
    auto y = d4_transform(nullptr, x, g);
    for (int c = 0; c < 2; ++c) {
      ScalarField2D f(grid, std::vector<double>(x->plane(0, c).begin(), x->plane(0, c).end()));
      const auto gf = d4_apply(g, f);
      for (std::size_t k = 0; k < gf.size(); ++k) CHECK(y->plane(0, c)[k] == gf[k]);
    }
  }
  CHECK_THROWS_AS(d4_transform(nullptr, random_tensor({1, 1, 4, 6}, 1), D4Element::r()), ShapeError);
}

TEST_CASE("add and concat validate shapes", "[nncore]") {
  auto a = random_tensor({1, 2, 4, 4}, 1), b = random_tensor({1, 3, 4, 4}, 2);
  CHECK_THROWS_AS(add(nullptr, a, b), ShapeError);
  auto c = concat_channels(nullptr, a, b);
  CHECK(c->shape == Shape4{1, 5, 4, 4});
  CHECK(c->at(0, 4, 3, 3) == b->at(0, 2, 3, 3));
  CHECK_THROWS_AS(concat_channels(nullptr, a, random_tensor({1, 1, 4, 2}, 3)), ShapeError);
}

TEST_CASE("adam", "[nncore][adam]") {
  SECTION("zero gradients leave parameters unchanged but count the step") {
    ParamStore ps;
    auto &p = ps.add("p", {3});
    p.values = {1, -2, 3};
    adam_step(ps, 0.1);
    CHECK(p.values == std::vector<double>{1, -2, 3});
    CHECK(ps.step_count == 1);
  }
  SECTION("first step moves each parameter by about lr against the gradient sign") {
    ParamStore ps;
    auto &p = ps.add("p", {2});
    p.values = {0.0, 5.0};
    p.grad = {1.0, -3.0};
    adam_step(ps, 0.1);
    CHECK(p.values[0] == Catch::Approx(-0.1).epsilon(1e-6));
    CHECK(p.values[1] == Catch::Approx(5.1).epsilon(1e-6));
    CHECK(p.grad == std::vector<double>{0.0, 0.0});
  }
  SECTION("reference trajectory on a quadratic") {
    // Independent transcription of the bias-corrected update.
    ParamStore ps;
    auto &p = ps.add("p", {1});
    p.values = {2.0};
    double x = 2.0, m = 0, v = 0;
    for (int t = 1; t <= 20; ++t) {
      p.grad = {2 * p.values[0]};
      const double g = 2 * x;
      m = 0.9 * m + 0.1 * g;
      v = 0.999 * v + 0.001 * g * g;
      x -= 0.05 * (m / (1 - std::pow(0.9, t))) / (std::sqrt(v / (1 - std::pow(0.999, t))) + 1e-8);
      adam_step(ps, 0.05);
    }
    CHECK(p.values[0] == Catch::Approx(x).epsilon(1e-14));
  }
  SECTION("missing gradient buffer is rejected") {
    ParamStore ps;
    ps.add("p", {2}).grad.clear();
    CHECK_THROWS_AS(adam_step(ps, 0.1), ConfigError);
  }
}

TEST_CASE("cosine learning rate", "[nncore]") {
  const LRSchedule s{5e-4, 1e-5, 200};
  CHECK(cosine_lr(s, 0) == Catch::Approx(5e-4).epsilon(1e-14));
  CHECK(cosine_lr(s, 200) == Catch::Approx(1e-5).epsilon(1e-14));
  CHECK(cosine_lr(s, 100) == Catch::Approx(2.55e-4).epsilon(1e-14));
  double prev = 1.0;
  for (int e = 0; e <= 200; ++e) {
    const double lr = cosine_lr(s, e);
    CHECK(lr <= prev);
    prev = lr;
  }
  CHECK_THROWS_AS(cosine_lr(s, 201), ConfigError);
  CHECK_THROWS_AS(cosine_lr({1e-5, 5e-4, 10}, 0), ConfigError);
  CHECK_THROWS_AS(cosine_lr({5e-4, 1e-5, 0}, 0), ConfigError);
}

TEST_CASE("parameter store", "[nncore]") {
  ParamStore ps;
  ps.add("b", {2, 3});
  ps.add("a", {4});
  CHECK(ps.total_count() == 10);
  CHECK(ps.entries().begin()->first == "a");
  CHECK_THROWS_AS(ps.add("a", {1}), ConfigError);
  CHECK_THROWS_AS(ps.add("c", {0}), ConfigError);
  CHECK_THROWS_AS(ps.get("zz"), ConfigError);
}

TEST_CASE("checkpoint round trip and errors", "[nncore][io]") {
  std::mt19937_64 rng(11);
  ParamStore ps;
  init_uniform(ps.add("layer.weight", {3, 2}), 1.0, rng);
  init_uniform(ps.add("layer.bias", {3}), 1.0, rng);
  ps.get("layer.bias").grad = {1, 2, 3};
  adam_step(ps, 0.01);
  const auto path = temp_path("chno_test.chck");
  save_checkpoint(path, ps);

  ParamStore other;
  other.add("layer.weight", {3, 2});
  other.add("layer.bias", {3});
  load_checkpoint(path, other);
  CHECK(other.step_count == 1);
  for (const auto &[name, p] : ps.entries()) {
    CHECK(other.get(name).values == p.values);
    CHECK(other.get(name).m == p.m);
    CHECK(other.get(name).v == p.v);
  }

  ParamStore wrong;
  wrong.add("layer.weight", {2, 3});
  wrong.add("layer.bias", {3});
  CHECK_THROWS_AS(load_checkpoint(path, wrong), FormatError);
  ParamStore smaller;
  smaller.add("layer.weight", {3, 2});
  CHECK_THROWS_AS(load_checkpoint(path, smaller), FormatError);
  CHECK_THROWS_AS(load_checkpoint(temp_path("chno_missing.chck"), other), MissingFileError);
  {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(4);
    const char v = 9;
    f.write(&v, 1);
  }
  CHECK_THROWS_AS(load_checkpoint(path, other), VersionError);
  {
    std::ofstream f(path, std::ios::binary);
    f << "JUNKJUNK";
  }
  CHECK_THROWS_AS(load_checkpoint(path, other), FormatError);
  std::filesystem::remove(path);
}
