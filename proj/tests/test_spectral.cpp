#include <catch2/catch_amalgamated.hpp>

#include <numbers>
#include <random>

#include "chno/spectral.hpp"

using namespace chno;
using std::numbers::pi;

namespace {

ScalarField2D random_field(const Grid2D &g, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> d;
  ScalarField2D f(g);
  for (double &v : f.data()) v = d(rng);
  return f;
}

double max_abs_diff(const ScalarField2D &a, const ScalarField2D &b) {
  double m = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) m = std::max(m, std::abs(a[k] - b[k]));
  return m;
}

double rel_l2(const ScalarField2D &a, const ScalarField2D &b) {
  return std::sqrt(l2_norm_sq(a - b) / l2_norm_sq(b));
}

// Band-limited random field: a few low Fourier/cosine modes.
ScalarField2D smooth_field(const Grid2D &g, std::uint64_t seed, int kmax = 3) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> d;
  ScalarField2D f(g);
  for (int a = 0; a <= kmax; ++a)
    for (int b = 0; b <= kmax; ++b) {
      const double c1 = d(rng), c2 = d(rng), c3 = d(rng), c4 = d(rng);
      for (int i = 0; i < g.ny; ++i)
        for (int j = 0; j < g.nx; ++j) {
          const double x = g.x(j) / g.lx, y = g.y(i) / g.ly;
          if (g.boundary == Boundary::Periodic) {
            f(i, j) += c1 * std::cos(2 * pi * (a * x + b * y)) + c2 * std::sin(2 * pi * (a * x + b * y)) +
                       c3 * std::cos(2 * pi * (a * x - b * y)) + c4 * std::sin(2 * pi * (a * x - b * y));
          } else {
            f(i, j) += c1 * std::cos(pi * a * x) * std::cos(pi * b * y);
          }
        }
    }
  return f;
}

const std::array<Boundary, 2> kBases{Boundary::Periodic, Boundary::NeumannCosine};

} // namespace

TEST_CASE("forward/inverse round trip and Parseval", "[spectral]") {
  for (auto b : kBases) {
    const Grid2D g(16, 12, 1.3, 0.7, b);
    const auto f = random_field(g, 3);
    const auto sf = forward(f);
    CHECK(max_abs_diff(inverse(sf), f) <= 1e-12);
    const double parseval = parseval_sum(sf);
    CHECK(std::abs(parseval - l2_norm_sq(f)) <= 1e-12 * l2_norm_sq(f));
  }
}

TEST_CASE("constant field maps to the mean mode only", "[spectral]") {
  for (auto b : kBases) {
    const Grid2D g(8, 8, 2.0, 2.0, b);
    const auto sf = forward(ScalarField2D(g, 0.7));
    const double expect = 0.7 * std::sqrt(g.area());
    if (b == Boundary::Periodic) {
      CHECK(std::abs(sf.coeffs[0] - cplx(expect, 0.0)) <= 1e-13);
      for (std::size_t k = 1; k < sf.coeffs.size(); ++k) CHECK(std::abs(sf.coeffs[k]) <= 1e-13);
    } else {
      CHECK(std::abs(sf.rcoeffs[0] - expect) <= 1e-13);
      for (std::size_t k = 1; k < sf.rcoeffs.size(); ++k) CHECK(std::abs(sf.rcoeffs[k]) <= 1e-13);
    }
  }
}

TEST_CASE("cos(2 pi x) has exactly two conjugate modes", "[spectral]") {
  const Grid2D g(16, 16);
  const auto f = ScalarField2D::from_function(g, [](double x, double) { return std::cos(2 * pi * x); });
  const auto sf = forward(f);
  int nonzero = 0;
  for (const auto &c : sf.coeffs) nonzero += std::abs(c) > 1e-12;
  // Half spectrum stores +1; the -1 partner is implied by conjugate symmetry.
  CHECK(nonzero == 1);
  CHECK(std::abs(sf.coeffs[1] - cplx(0.5, 0.0)) <= 1e-13);
  CHECK(parseval_sum(sf) == Catch::Approx(0.5).epsilon(1e-13));
}

TEST_CASE("odd periodic dimensions are rejected", "[spectral]") {
  CHECK_THROWS_AS(forward(ScalarField2D(Grid2D(9, 8))), ShapeError);
  CHECK_NOTHROW(forward(ScalarField2D(Grid2D(9, 8, 1, 1, Boundary::NeumannCosine))));
}

TEST_CASE("random spectrum round trip", "[spectral]") {
  // forward(inverse(s)) == s for a Hermitian-consistent spectrum, built as the
  // transform of a random field and then perturbed in physical space.
  for (auto b : kBases) {
    const Grid2D g(8, 8, 1, 1, b);
    const auto s = forward(random_field(g, 21));
    const auto s2 = forward(inverse(s));
    if (b == Boundary::Periodic)
      for (std::size_t k = 0; k < s.coeffs.size(); ++k) CHECK(std::abs(s.coeffs[k] - s2.coeffs[k]) <= 1e-12);
    else
      for (std::size_t k = 0; k < s.rcoeffs.size(); ++k) CHECK(std::abs(s.rcoeffs[k] - s2.rcoeffs[k]) <= 1e-12);
    SpectralField2D zero = s;
    std::fill(zero.coeffs.begin(), zero.coeffs.end(), cplx{});
    std::fill(zero.rcoeffs.begin(), zero.rcoeffs.end(), 0.0);
    CHECK(inverse(zero).max_abs() == 0.0);
  }
}

TEST_CASE("linearity", "[spectral]") {
  for (auto b : kBases) {
    const Grid2D g(12, 8, 1, 1, b);
    const auto f = random_field(g, 1), h = random_field(g, 2);
    const auto lhs = forward(2.5 * f + (-0.5) * h);
    const auto a = forward(f), c = forward(h);
    if (b == Boundary::Periodic)
      for (std::size_t k = 0; k < lhs.coeffs.size(); ++k)
        CHECK(std::abs(lhs.coeffs[k] - (2.5 * a.coeffs[k] - 0.5 * c.coeffs[k])) <= 1e-12);
    else
      for (std::size_t k = 0; k < lhs.rcoeffs.size(); ++k)
        CHECK(std::abs(lhs.rcoeffs[k] - (2.5 * a.rcoeffs[k] - 0.5 * c.rcoeffs[k])) <= 1e-12);
  }
}

TEST_CASE("laplacian eigenfunctions", "[spectral]") {
  const Grid2D g(32, 32);
  const auto f = ScalarField2D::from_function(g, [](double x, double) { return std::sin(2 * pi * x); });
  const auto expect = -(4 * pi * pi) * f;
  CHECK(rel_l2(laplacian(f), expect) <= 1e-10);
  CHECK(laplacian(ScalarField2D(g, 3.0)).max_abs() <= 1e-10);

  const Grid2D gn(32, 16, 1.0, 0.5, Boundary::NeumannCosine);
  const auto c = ScalarField2D::from_function(gn, [](double x, double y) {
    return std::cos(3 * pi * x) * std::cos(2 * pi * y / 0.5);
  });
  const double k2 = 9 * pi * pi + 16 * pi * pi;
  CHECK(rel_l2(laplacian(c), -k2 * c) <= 1e-10);
  CHECK(laplacian(ScalarField2D(gn, 3.0)).max_abs() <= 1e-10);
}

TEST_CASE("laplacian agrees with a fine-grid finite-difference stencil", "[spectral]") {
  const Grid2D g(256, 256);
  const auto f = smooth_field(g, 5, 4);
  const auto lap = laplacian(f);
  ScalarField2D fd(g);
  const double h2 = g.dx() * g.dx();
  const int n = g.nx;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      fd(i, j) = (f((i + 1) % n, j) + f((i + n - 1) % n, j) + f(i, (j + 1) % n) +
                  f(i, (j + n - 1) % n) - 4 * f(i, j)) /
                 h2;
  CHECK(std::sqrt(l2_norm_sq(lap - fd) / l2_norm_sq(fd)) <= 1e-3);
}

TEST_CASE("gradient", "[spectral]") {
  const Grid2D g(16, 16);
  const auto f = ScalarField2D::from_function(g, [](double x, double) { return std::sin(2 * pi * x); });
  auto [gx, gy] = gradient(f);
  const auto expect = ScalarField2D::from_function(g, [](double x, double) { return 2 * pi * std::cos(2 * pi * x); });
  CHECK(max_abs_diff(gx, expect) <= 1e-11);
  CHECK(gy.max_abs() <= 1e-12);
  auto [cx, cy] = gradient(ScalarField2D(g, 2.0));
  CHECK(cx.max_abs() <= 1e-12);
  CHECK(cy.max_abs() <= 1e-12);

  // Neumann: d/dx cos(pi p x) = -pi p sin(pi p x)
  const Grid2D gn(32, 16, 1.0, 1.0, Boundary::NeumannCosine);
  const auto c = ScalarField2D::from_function(gn, [](double x, double y) {
    return std::cos(3 * pi * x) * std::cos(2 * pi * y);
  });
  auto [nx_, ny_] = gradient(c);
  const auto ex = ScalarField2D::from_function(gn, [](double x, double y) {
    return -3 * pi * std::sin(3 * pi * x) * std::cos(2 * pi * y);
  });
  const auto ey = ScalarField2D::from_function(gn, [](double x, double y) {
    return -2 * pi * std::cos(3 * pi * x) * std::sin(2 * pi * y);
  });
  CHECK(max_abs_diff(nx_, ex) <= 1e-10);
  CHECK(max_abs_diff(ny_, ey) <= 1e-10);
}

TEST_CASE("div grad equals laplacian (periodic)", "[spectral]") {
  const Grid2D g(16, 24, 1.0, 1.5);
  const auto f = random_field(g, 8);
  auto [gx, gy] = gradient(f);
  const auto dg = divergence(gx, gy);
  CHECK(rel_l2(dg, laplacian(f)) <= 1e-10);
}

TEST_CASE("gradient energy matches k^2-weighted Parseval sum (Neumann)", "[spectral]") {
  const Grid2D g(16, 16, 1.0, 1.0, Boundary::NeumannCosine);
  const auto f = random_field(g, 4);
  auto [gx, gy] = gradient(f);
  const double lhs = l2_norm_sq(gx) + l2_norm_sq(gy);
  // -<f, lap f> = sum k^2 |c|^2
  const auto lap = laplacian(f);
  double rhs = 0.0;
  for (std::size_t k = 0; k < f.size(); ++k) rhs -= f[k] * lap[k] * g.cell_area();
  CHECK(lhs == Catch::Approx(rhs).epsilon(1e-11));
}

TEST_CASE("laplacian commutes with the D4 action", "[spectral][d4]") {
  for (auto b : kBases) {
    const Grid2D g(16, 16, 1, 1, b);
    const auto f = random_field(g, 13);
    const auto lf = laplacian(f);
    for (const auto &e : d4_elements())
      CHECK(rel_l2(laplacian(d4_apply(e, f)), d4_apply(e, lf)) <= 1e-10);
  }
}

TEST_CASE("truncate_modes", "[spectral]") {
  for (auto b : kBases) {
    const Grid2D g(16, 16, 1, 1, b);
    const auto s = forward(random_field(g, 2));
    const auto full = truncate_modes(s, nyquist_modes(g));
    CHECK(full.coeffs == s.coeffs);
    CHECK(full.rcoeffs == s.rcoeffs);
    const auto zero = truncate_modes(s, {0, 0});
    const auto f0 = inverse(zero);
    const double m = mean(inverse(s));
    for (double v : f0.values()) CHECK(std::abs(v - m) <= 1e-12);
    const ModeSet m3{3, 2};
    const auto t1 = truncate_modes(s, m3);
    const auto t2 = truncate_modes(t1, m3);
    CHECK(t1.coeffs == t2.coeffs);
    CHECK(t1.rcoeffs == t2.rcoeffs);
    CHECK(parseval_sum(t1) <= parseval_sum(s));
  }
  CHECK_THROWS_AS(truncate_modes(forward(ScalarField2D(Grid2D(8, 8))), {5, 1}), ConfigError);
}

TEST_CASE("resample", "[spectral]") {
  for (auto b : kBases) {
    const Grid2D g(32, 32, 1, 1, b);
    const auto c = resample(ScalarField2D(g, 0.4), 64, 64);
    CHECK(c.nx() == 64);
    for (double v : c.values()) CHECK(std::abs(v - 0.4) <= 1e-13);

    const auto f = smooth_field(g.with_size(16, 16), 17);
    const auto up = resample(f, 32, 32);
    const auto direct = smooth_field(g.with_size(32, 32), 17);
    CHECK(max_abs_diff(up, direct) <= 1e-11);
    CHECK(max_abs_diff(resample(up, 16, 16), f) <= 1e-11);

    const auto r = random_field(g, 23);
    CHECK(l2_norm_sq(resample(r, 16, 16)) <= l2_norm_sq(r) * (1 + 1e-14));
    const auto rect = resample(r, 48, 16);
    CHECK(rect.nx() == 48);
    CHECK(rect.ny() == 16);
  }
  const Grid2D g(16, 16);
  const auto cosx = [](double x, double) { return std::cos(2 * pi * x); };
  const auto up = resample(ScalarField2D::from_function(g, cosx), 32, 32);
  CHECK(max_abs_diff(up, ScalarField2D::from_function(g.with_size(32, 32), cosx)) <= 1e-12);
}

TEST_CASE("resample splits the Nyquist mode when refining", "[spectral]") {
  // Sampled at cell centres the Nyquist content is a sine; its band-limited
  // interpolant on the finer grid is the same sine.
  const Grid2D g(8, 8);
  const auto nyq = [](double x, double y) { return std::sin(2 * pi * 4 * x) + std::sin(2 * pi * 4 * y) + std::sin(2 * pi * 4 * x) * std::sin(2 * pi * 4 * y); };
  const auto f = ScalarField2D::from_function(g, nyq);
  const auto up = resample(f, 16, 16);
  CHECK(max_abs_diff(up, ScalarField2D::from_function(g.with_size(16, 16), nyq)) <= 1e-12);
}
