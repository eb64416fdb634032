#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <numbers>

#include "chno/operators.hpp"
#include "chno/solver.hpp"
#include "fixtures.hpp"
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

/// Smooth band-limited test plane: content only below |k| = kmax.
TensorPtr smooth_tensor(Shape4 s, int kmax, unsigned seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd;
  auto t = make_tensor(s);
  for (int b = 0; b < s.b; ++b)
    for (int c = 0; c < s.c; ++c)
      for (int ky = -kmax; ky <= kmax; ++ky)
        for (int kx = -kmax; kx <= kmax; ++kx) {
          const double a = nd(rng), ph = nd(rng);
          for (int i = 0; i < s.h; ++i)
            for (int j = 0; j < s.w; ++j)
              t->at(b, c, i, j) += 0.1 * a *
                                   std::cos(2 * std::numbers::pi * (kx * (j + 0.5) / s.w + ky * (i + 0.5) / s.h) + ph);
        }
  return t;
}

double max_diff(const std::vector<double> &a, const std::vector<double> &b) {
  REQUIRE(a.size() == b.size());
  double m = 0;
  for (std::size_t k = 0; k < a.size(); ++k) m = std::max(m, std::abs(a[k] - b[k]));
  return m;
}

Param spectral_param(const ModeSet &m, int cout, int cin, unsigned seed) {
  Param p;
  const std::size_t n = static_cast<std::size_t>(ops::mode_count(m)) * cout * cin * 2;
  p.shape = {ops::mode_count(m), cout, cin, 2};
  p.values.resize(n);
  p.grad.assign(n, 0.0);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd;
  for (double &v : p.values) v = nd(rng);
  return p;
}

ModelConfig small_uno() {
  ModelConfig c;
  c.kind = ModelKind::UNO;
  c.n_in = 2;
  c.n_out = 1;
  c.uno.hidden = 3;
  c.uno.out_channels = {3, 4, 3};
  c.uno.modes = {{2, 2}, {2, 2}, {3, 3}};
  c.uno.scalings = {{1, 1}, {0.5, 0.5}, {2, 2}};
  c.uno.skip_pairs = {{0, 2}};
  c.uno.lift_channels = 4;
  c.uno.proj_channels = 4;
  return c;
}

ModelConfig small_fno() {
  ModelConfig c;
  c.kind = ModelKind::FNO;
  c.n_in = 2;
  c.n_out = 1;
  c.fno.width = 3;
  c.fno.n_layers = 2;
  c.fno.modes = {3, 3};
  c.fno.lift_channels = 4;
  c.fno.proj_channels = 4;
  return c;
}

} // namespace

TEST_CASE("mode map enumerates the square mode set", "[operators]") {
  const auto mm = ops::make_mode_map(16, 16, 16, 16, {3, 3});
  CHECK(mm.size() == 7 * 4);
  CHECK(ops::mode_count({3, 3}) == 28);
  CHECK_THROWS_AS(ops::make_mode_map(16, 16, 8, 8, {5, 5}), ConfigError);
  CHECK_NOTHROW(ops::make_mode_map(16, 16, 8, 8, {4, 4}));
  CHECK_THROWS_AS(ops::make_mode_map(1, 16, 16, 16, {0, 0}), ShapeError);
  CHECK_NOTHROW(ops::make_mode_map(25, 25, 25, 25, {12, 12}));
  CHECK_THROWS_AS(ops::make_mode_map(25, 25, 25, 25, {13, 13}), ConfigError);
}

TEST_CASE("spectral conv equals direct circular convolution", "[operators][oracle]") {
  // Kernel from the full-spectrum multiplier implied by the half-spectrum
  // weights (column 0 keeps the Hermitian part), applied as an O(N^2) sum.
  const int n = 8, K = 3;
  const ModeSet ms{K, K};
  auto w = spectral_param(ms, 1, 1, 21);
  const auto mm = ops::make_mode_map(n, n, n, n, ms);
  auto x = random_tensor({1, 1, n, n}, 22, false);
  const auto y = ops::spectral_conv(nullptr, x, w, 1, mm);

  auto W = [&](int ky, int kx) {
    const int m = (ky + K) * (K + 1) + kx;
    return cplx(w.values[2 * m], w.values[2 * m + 1]);
  };
  std::vector<std::vector<cplx>> mult(n, std::vector<cplx>(n));
  for (int ky = -K; ky <= K; ++ky)
    for (int kx = -K; kx <= K; ++kx) {
      cplx v;
      if (kx > 0) v = W(ky, kx);
      else if (kx < 0) v = std::conj(W(-ky, -kx));
      else v = 0.5 * (W(ky, 0) + std::conj(W(-ky, 0)));
      mult[(ky + n) % n][(kx + n) % n] = v;
    }
  std::vector<double> kernel(n * n);
  for (int p = 0; p < n; ++p)
    for (int q = 0; q < n; ++q) {
      cplx s;
      for (int a = 0; a < n; ++a)
        for (int b = 0; b < n; ++b)
          s += mult[a][b] * std::polar(1.0, 2 * std::numbers::pi * (double(a * p) / n + double(b * q) / n));
      CHECK(std::abs(s.imag()) <= 1e-12);
      kernel[p * n + q] = s.real() / (n * n);
    }
  double worst = 0;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      double s = 0;
      for (int a = 0; a < n; ++a)
        for (int b = 0; b < n; ++b) s += kernel[((i - a + n) % n) * n + (j - b + n) % n] * x->at(0, 0, a, b);
      worst = std::max(worst, std::abs(s - y->at(0, 0, i, j)));
    }
  CHECK(worst <= 1e-12);
}

TEST_CASE("identity weights at full Nyquist reproduce the input", "[operators]") {
  for (int n : {4, 8, 12, 5, 9}) {
    const ModeSet ms{n / 2, n / 2};
    auto w = spectral_param(ms, 2, 2, 1);
    // identity channel mixing: W[m][o][c] = delta(o, c)
    std::fill(w.values.begin(), w.values.end(), 0.0);
    for (int m = 0; m < ops::mode_count(ms); ++m)
      for (int c = 0; c < 2; ++c) w.values[((m * 2 + c) * 2 + c) * 2] = 1.0;
    const auto mm = ops::make_mode_map(n, n, n, n, ms);
    auto x = random_tensor({2, 2, n, n}, 5, false);
    CHECK(max_diff(ops::spectral_conv(nullptr, x, w, 2, mm)->values, x->values) <= 1e-13);
  }
}

TEST_CASE("zero weights give zero output", "[operators]") {
  const ModeSet ms{2, 2};
  auto w = spectral_param(ms, 3, 2, 1);
  std::fill(w.values.begin(), w.values.end(), 0.0);
  const auto mm = ops::make_mode_map(8, 8, 16, 16, ms);
  const auto y = ops::spectral_conv(nullptr, random_tensor({1, 2, 8, 8}, 3, false), w, 3, mm);
  CHECK(y->shape == Shape4{1, 3, 16, 16});
  for (double v : y->values) CHECK(v == 0.0);
}

TEST_CASE("resample keeps the coarse Nyquist sine", "[operators][resample]") {
  // cos at the Nyquist index vanishes at cell centres, sin does not
  auto sine = [](int n, int K) {
    auto t = make_tensor({1, 1, n, n});
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        const double x = (j + 0.5) / n, y = (i + 0.5) / n;
        t->at(0, 0, i, j) = std::sin(2 * std::numbers::pi * K * x) + 0.5 * std::sin(2 * std::numbers::pi * K * y) +
                            0.25 * std::sin(2 * std::numbers::pi * K * x) * std::sin(2 * std::numbers::pi * 2 * y);
      }
    return t;
  };
  for (auto [a, b] : {std::pair{16, 32}, std::pair{8, 12}}) {
    const int K = a / 2;
    CHECK(max_diff(ops::resample(nullptr, sine(a, K), ops::resample_map(a, a, b, b))->values, sine(b, K)->values) <=
          1e-12);
    CHECK(max_diff(ops::resample(nullptr, sine(b, K), ops::resample_map(b, b, a, a))->values, sine(a, K)->values) <=
          1e-12);
  }
}

TEST_CASE("resample reproduces band-limited functions", "[operators][resample]") {
  // sampled on 16^2 and 32^2 from the same continuous function
  auto coarse = smooth_tensor({1, 1, 16, 16}, 5, 3);
  auto fine = smooth_tensor({1, 1, 32, 32}, 5, 3);
  CHECK(max_diff(ops::resample(nullptr, coarse, ops::resample_map(16, 16, 32, 32))->values, fine->values) <= 1e-12);
  CHECK(max_diff(ops::resample(nullptr, fine, ops::resample_map(32, 32, 16, 16))->values, coarse->values) <= 1e-12);
  auto odd = smooth_tensor({1, 1, 9, 9}, 4, 3);
  auto even = smooth_tensor({1, 1, 18, 18}, 4, 3);
  CHECK(max_diff(ops::resample(nullptr, odd, ops::resample_map(9, 9, 18, 18))->values, even->values) <= 1e-12);
  CHECK(max_diff(ops::resample(nullptr, even, ops::resample_map(18, 18, 9, 9))->values, odd->values) <= 1e-12);
}

TEST_CASE("spectral conv is D4-equivariant for real scalar weights", "[operators][d4]") {
  for (auto [a, b] : {std::pair{16, 16}, std::pair{16, 8}, std::pair{8, 16}}) {
    const ModeSet ms{3, 3};
    auto w = spectral_param(ms, 1, 1, 1);
    for (std::size_t k = 0; k < w.values.size(); ++k) w.values[k] = (k % 2 == 0) ? 0.7 : 0.0;
    const auto mm = ops::make_mode_map(a, a, b, b, ms);
    auto x = random_tensor({1, 1, a, a}, 4, false);
    const auto y = ops::spectral_conv(nullptr, x, w, 1, mm);
    for (const auto &g : d4_elements()) {
      const auto lhs = ops::spectral_conv(nullptr, d4_transform(nullptr, x, g), w, 1, mm);
      const auto rhs = d4_transform(nullptr, y, g);
      CHECK(max_diff(lhs->values, rhs->values) <= 1e-12);
    }
  }
}

TEST_CASE("spectral conv and resample gradients", "[operators][grad]") {
  for (auto [a, b, K] : {std::tuple{8, 8, 4}, std::tuple{8, 16, 4}, std::tuple{16, 8, 4}, std::tuple{12, 8, 2}, std::tuple{10, 5, 2},
                        std::tuple{5, 10, 2}, std::tuple{9, 9, 4}}) {
    const ModeSet ms{K, K};
    auto w = spectral_param(ms, 2, 3, 9);
    const auto mm = ops::make_mode_map(a, a, b, b, ms);
    auto x = random_tensor({2, 3, a, a}, 10);
    auto build = [&](Tape *t) { return ops::spectral_conv(t, x, w, 2, mm); };
    const auto r = gradcheck::check(build, {&x->values, &w.values}, {&x->grad, &w.grad});
    INFO("sizes " << a << "->" << b << " K=" << K);
    CHECK(r.max_rel <= 1e-6);

    const auto rm = ops::resample_map(a, a, b, b);
    auto x2 = random_tensor({1, 2, a, a}, 12);
    auto build2 = [&](Tape *t) { return ops::resample(t, x2, rm); };
    CHECK(gradcheck::check(build2, {&x2->values}, {&x2->grad}).max_rel <= 1e-6);
  }
}

TEST_CASE("full model gradients match finite differences", "[operators][grad]") {
  for (const auto &cfg : {small_uno(), small_fno()}) {
    OperatorModel model(cfg);
    auto x = random_tensor({2, 2, 16, 16}, 31);
    auto build = [&](Tape *t) { return model.forward(t, x); };
    std::vector<std::vector<double> *> vals{&x->values};
    std::vector<const std::vector<double> *> grads{&x->grad};
    for (auto &[name, p] : model.params().entries()) {
      vals.push_back(&p.values);
      grads.push_back(&p.grad);
    }
    // roundoff dominates central differences below h ~ 1e-5 at this depth
    const auto r = gradcheck::check(build, vals, grads, 3, 1e-4, 12);
    INFO(to_string(cfg.kind));
    CHECK(r.max_rel <= 1e-5);
  }
}

TEST_CASE("forward is batch invariant and deterministic", "[operators]") {
  OperatorModel m1(small_uno()), m2(small_uno());
  auto x = random_tensor({3, 2, 16, 16}, 2, false);
  const auto y = m1.forward(nullptr, x);
  CHECK(y->shape == Shape4{3, 1, 16, 16});
  CHECK(m2.forward(nullptr, x)->values == y->values);
  for (int b = 0; b < 3; ++b) {
    auto xb = make_tensor({1, 2, 16, 16});
    for (int c = 0; c < 2; ++c) std::copy(x->plane(b, c).begin(), x->plane(b, c).end(), xb->plane(0, c).begin());
    const auto yb = m1.forward(nullptr, xb);
    double worst = 0;
    for (std::size_t k = 0; k < yb->size(); ++k) worst = std::max(worst, std::abs(yb->values[k] - y->plane(b, 0)[k]));
    CHECK(worst <= 1e-13);
  }
  auto other = small_uno();
  other.seed = 99;
  CHECK(OperatorModel(other).forward(nullptr, x)->values != y->values);
}

TEST_CASE("models run at a different resolution than trained", "[operators][superres]") {
  for (const auto &cfg : {small_uno(), small_fno()}) {
    OperatorModel m(cfg);
    for (int n : {16, 32, 64}) {
      const auto y = m.forward(nullptr, random_tensor({1, 2, n, n}, 4, false));
      CHECK(y->shape == Shape4{1, 1, n, n});
      CHECK(y->all_finite());
    }
  }
  // 18 -> 9 -> 4.5 has no integer resolution at layer 1
  auto cfg = small_uno();
  cfg.uno.scalings = {{0.5, 0.5}, {0.5, 0.5}, {4, 4}};
  OperatorModel m(cfg);
  CHECK_NOTHROW(m.layer_resolutions(32, 32));
  try {
    m.layer_resolutions(18, 18);
    FAIL("expected ConfigError");
  } catch (const ConfigError &e) {
    CHECK(std::string(e.what()).find("layer 1") != std::string::npos);
  }
}

TEST_CASE("config validation", "[operators][config]") {
  auto c = small_uno();
  c.uno.scalings[2] = {1, 1};
  CHECK_THROWS_AS(OperatorModel(c), ConfigError);
  c = small_uno();
  c.uno.modes.pop_back();
  CHECK_THROWS_AS(OperatorModel(c), ConfigError);
  c = small_uno();
  c.uno.skip_pairs = {{2, 1}};
  CHECK_THROWS_AS(OperatorModel(c), ConfigError);
  c = small_uno();
  c.uno.modes[1] = {5, 5}; // exceeds Nyquist of the 8x8 output at 16x16 input
  OperatorModel m(c);
  CHECK_THROWS_AS(m.forward(nullptr, random_tensor({1, 2, 16, 16}, 1, false)), ConfigError);
  CHECK_THROWS_AS(OperatorModel(small_uno()).forward(nullptr, random_tensor({1, 3, 16, 16}, 1, false)), ShapeError);
}

TEST_CASE("parameter counts follow the layer shapes", "[operators][config]") {
  const auto f = small_fno();
  const int cin = 4, L = 4, P = 4, w = 3, K = 3;
  const std::size_t expect = (cin * L + L) + (L * w + w) + 2 * ((2 * K + 1) * (K + 1) * w * w * 2 + w * w + w) +
                             (w * P + P) + (P * 1 + 1);
  CHECK(OperatorModel(f).parameter_count() == expect);

  // UNO: lift 4->4->3, block0 3->3 (K=2), block1 3->4 (K=2), block2 (4+3)->3 (K=3),
  // horizontal skip 3x3, projection 3->4->1
  const std::size_t uno = (4 * 4 + 4) + (4 * 3 + 3) + (15 * 3 * 3 * 2 + 3 * 3 + 3) + (15 * 4 * 3 * 2 + 4 * 3 + 4) +
                          (28 * 3 * 7 * 2 + 3 * 7 + 3) + 9 + (3 * 4 + 4) + (4 + 1);
  CHECK(OperatorModel(small_uno()).parameter_count() == uno);
}

TEST_CASE("table configurations build", "[operators][config]") {
  ModelConfig u;
  u.kind = ModelKind::UNO;
  u.uno = uno_table4();
  const OperatorModel mu(u);
  ModelConfig f;
  f.kind = ModelKind::FNO;
  f.fno = fno_table4();
  const OperatorModel mf(f);
  CHECK(mu.parameter_count() > 1'000'000);
  CHECK(mf.parameter_count() > 1'000'000);
  CHECK(mu.layer_resolutions(100, 100).back() == std::pair{100, 100});
  auto scaled = uno_width_scaled(4);
  CHECK(scaled.out_channels == std::vector<int>{8, 16, 16, 32, 16, 16, 8});
}

TEST_CASE("config sidecar and model save/load round trip", "[operators][io]") {
  const auto dir = std::filesystem::temp_directory_path();
  const auto ck = (dir / "chno_model.chck").string(), side = (dir / "chno_model.cfg").string();
  for (auto cfg : {small_uno(), small_fno()}) {
    cfg.seed = 1234;
    OperatorModel m(cfg);
    save_model(ck, side, m);
    auto loaded = load_model(ck, side);
    CHECK(config_to_map(loaded.config()) == config_to_map(cfg));
    auto x = random_tensor({1, 2, 16, 16}, 5, false);
    CHECK(loaded.forward(nullptr, x)->values == m.forward(nullptr, x)->values);
  }
  std::istringstream bad("kind = uno\nthis line is wrong\n");
  CHECK_THROWS_AS(read_kv(bad, "mem"), ConfigError);
  std::istringstream partial("kind = fno\nn_in = 2\n");
  CHECK_THROWS_AS(config_from_map(read_kv(partial, "mem")), ConfigError);
  std::filesystem::remove(ck);
  std::filesystem::remove(side);
}

TEST_CASE("rollout", "[operators][rollout]") {
  auto cfg = small_fno();
  cfg.n_in = 3;
  cfg.n_out = 2;
  OperatorModel m(cfg);
  const Grid2D g(16, 16, 1, 1, Boundary::Periodic);
  Trajectory hist;
  hist.dt = 0.5;
  for (int k = 0; k < 3; ++k) hist.fields.push_back(noise_field(g, 0.1, k));
  const auto out = rollout(m, hist, 4);
  CHECK(out.size() == 8);
  CHECK(out.t0 == Catch::Approx(1.5));
  // window 2 consumes frames {pred1, pred2, pred3}: its first output equals a direct call
  std::vector<const ScalarField2D *> win{&out.fields[1], &out.fields[2], &out.fields[3]};
  const auto y = m.forward(nullptr, stack_frames(win));
  CHECK(max_diff(std::vector<double>(y->plane(0, 0).begin(), y->plane(0, 0).end()), out.fields[4].data()) == 0.0);

  hist.fields.pop_back();
  CHECK_THROWS_AS(rollout(m, hist, 1), ShapeError);
  hist.fields.push_back(noise_field(g, 0.1, 9));
  m.params().get("proj.1.bias").values[0] = std::numeric_limits<double>::quiet_NaN();
  try {
    rollout(m, hist, 3);
    FAIL("expected RolloutError");
  } catch (const RolloutError &e) {
    CHECK(e.window() == 0);
  }
}

TEST_CASE("zero spectral weights leave a pointwise network", "[operators][oracle]") {
  auto cfg = small_fno();
  OperatorModel m(cfg);
  for (auto &[name, p] : m.params().entries())
    if (name.find("spectral") != std::string::npos) std::fill(p.values.begin(), p.values.end(), 0.0);
  auto x = random_tensor({2, 2, 8, 8}, 31, false);
  const auto y = m.forward(nullptr, x);

  // per-pixel oracle: plain matrix-vector products with the stored weights
  auto &ps = m.params();
  auto affine = [&](const std::string &name, const std::vector<double> &in) {
    const auto &w = ps.get(name + ".weight");
    const int co = w.shape[0], ci = w.shape[1];
    std::vector<double> out(co, 0.0);
    for (int o = 0; o < co; ++o) {
      out[o] = ps.contains(name + ".bias") ? ps.get(name + ".bias").values[o] : 0.0;
      for (int i = 0; i < ci; ++i) out[o] += w.values[o * ci + i] * in[i];
    }
    return out;
  };
  auto act = [](std::vector<double> v) {
    for (double &a : v) a = gelu_scalar(a);
    return v;
  };
  double worst = 0.0;
  for (int b = 0; b < 2; ++b)
    for (int i = 0; i < 8; ++i)
      for (int j = 0; j < 8; ++j) {
        std::vector<double> v{x->at(b, 0, i, j), x->at(b, 1, i, j), (j + 0.5) / 8, (i + 0.5) / 8};
        v = affine("lift.1", act(affine("lift.0", v)));
        v = act(affine("block0.skip", v));
        v = affine("block1.skip", v);
        v = affine("proj.1", act(affine("proj.0", v)));
        worst = std::max(worst, std::abs(v[0] - y->at(b, 0, i, j)));
      }
  CHECK(worst <= 1e-13);
}

TEST_CASE("initial weights respect their bounds", "[operators][init]") {
  for (const auto &cfg : {small_uno(), small_fno()}) {
    OperatorModel m(cfg);
    for (const auto &[name, p] : m.params().entries()) {
      if (name.find("spectral") != std::string::npos) {
        const double bound = 1.0 / (static_cast<double>(p.shape[1]) * p.shape[2]);
        for (std::size_t k = 0; k < p.values.size(); k += 2)
          CHECK(std::hypot(p.values[k], p.values[k + 1]) <= bound);
      } else {
        const int cin = m.params().get(name.substr(0, name.rfind('.')) + ".weight").shape[1];
        for (double v : p.values) CHECK(std::abs(v) <= 1.0 / std::sqrt(static_cast<double>(cin)));
      }
    }
  }
}

TEST_CASE("identity model continues a sequence with its last frame", "[operators][rollout]") {
  auto m = fixtures::identity_fno(3, 2);
  const Grid2D g(8, 8, 1.0, 1.0, Boundary::NeumannCosine);
  Trajectory hist;
  std::mt19937_64 rng(8);
  for (int k = 0; k < 3; ++k) hist.fields.push_back(noise_field(g, 0.9, rng()));
  const auto out = rollout(m, hist, 3);
  REQUIRE(out.size() == 6);
  for (const auto &f : out.fields) CHECK(l2_norm_sq(f - hist.fields.back()) <= 1e-26);
}
