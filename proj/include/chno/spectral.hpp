#pragma once

// Transform-domain machinery for both boundary types.
//
// Periodic: half spectrum of the real DFT, ny rows x (nx/2+1) columns, with
// coefficients scaled by sqrt(cell_area / N). NeumannCosine: DCT-II on both
// axes, orthonormal and scaled by sqrt(cell_area). Under either scaling the
// sum of squared coefficients equals l2_norm_sq of the field, and a given
// physical mode has the same coefficient at every resolution.
//
// Wavenumbers: 2*pi*index/L (Periodic, signed index) and pi*index/L
// (NeumannCosine). First derivatives drop the Nyquist mode; the Laplacian
// does the same per axis so that div(grad f) == laplacian(f).

#include <cmath>
#include <complex>
#include <numbers>
#include <utility>
#include <vector>

#include "chno/fft.hpp"
#include "chno/fields.hpp"

namespace chno {

using cplx = std::complex<double>;

struct ModeSet {
  int kmax_x = 0;
  int kmax_y = 0;
  friend bool operator==(const ModeSet &, const ModeSet &) = default;
};

struct SpectralField2D {
  Grid2D grid;
  Boundary basis = Boundary::Periodic;
  std::vector<cplx> coeffs;    // Periodic
  std::vector<double> rcoeffs; // NeumannCosine

  int rows() const { return grid.ny; }
  int cols() const { return basis == Boundary::Periodic ? grid.nx / 2 + 1 : grid.nx; }
};

namespace spectral {

inline void require_even(const Grid2D &g) {
  if (g.nx % 2 != 0 || g.ny % 2 != 0)
    throw ShapeError("periodic transforms need even grid dimensions, got " +
                     std::to_string(g.ny) + "x" + std::to_string(g.nx));
}

/// Multiplicity of a half-spectrum column in the full spectrum.
inline double column_weight(int c, int nx) { return (c == 0 || 2 * c == nx) ? 1.0 : 2.0; }

inline double periodic_scale(const Grid2D &g) {
  return std::sqrt(g.cell_area() / static_cast<double>(g.size()));
}

/// Samples sit at cell centres, half a cell from the origin. Folding that
/// offset into the coefficients makes them the Fourier coefficients of the
/// sampled function, identical across resolutions and D4-consistent.
inline cplx half_cell_phase(int r, int c, const Grid2D &g) {
  using std::numbers::pi;
  const double theta = pi * (static_cast<double>(fft::signed_index(r, g.ny)) / g.ny +
                             static_cast<double>(c) / g.nx);
  return {std::cos(theta), -std::sin(theta)};
}

/// Multiplies a half spectrum by the half-cell phase (or its conjugate).
inline void apply_half_cell_phase(std::vector<cplx> &coeffs, const Grid2D &g, bool conjugate) {
  const int cols = g.nx / 2 + 1;
  for (int r = 0; r < g.ny; ++r)
    for (int c = 0; c < cols; ++c) {
      const cplx ph = half_cell_phase(r, c, g);
      coeffs[static_cast<std::size_t>(r) * cols + c] *= conjugate ? std::conj(ph) : ph;
    }
}

/// Orthonormal DCT-II factor for index k of an n-point axis, relative to
/// FFTW's unnormalised REDFT10.
inline double dct_factor(int k, int n) {
  return (k == 0 ? std::sqrt(0.5) : 1.0) / std::sqrt(2.0 * n);
}

} // namespace spectral

inline SpectralField2D forward(const ScalarField2D &f) {
  const Grid2D &g = f.grid();
  SpectralField2D out{g, g.boundary, {}, {}};
  if (g.boundary == Boundary::Periodic) {
    spectral::require_even(g);
    out.coeffs.resize(fft::half_size(g.ny, g.nx));
    fft::rfft2(g.ny, g.nx, f.values().data(), out.coeffs.data());
    const double s = spectral::periodic_scale(g);
    for (auto &c : out.coeffs) c *= s;
    spectral::apply_half_cell_phase(out.coeffs, g, false);
  } else {
    out.rcoeffs.resize(g.size());
    fft::r2r2(g.ny, g.nx, FFTW_REDFT10, FFTW_REDFT10, f.values().data(), out.rcoeffs.data());
    const double sa = std::sqrt(g.cell_area());
    for (int q = 0; q < g.ny; ++q)
      for (int p = 0; p < g.nx; ++p)
        out.rcoeffs[static_cast<std::size_t>(q) * g.nx + p] *=
            sa * spectral::dct_factor(q, g.ny) * spectral::dct_factor(p, g.nx);
  }
  return out;
}

inline ScalarField2D inverse(const SpectralField2D &sf) {
  const Grid2D &g = sf.grid;
  ScalarField2D out(g.with_boundary(sf.basis));
  if (sf.basis == Boundary::Periodic) {
    const double s = 1.0 / (spectral::periodic_scale(g) * static_cast<double>(g.size()));
    std::vector<cplx> tmp(sf.coeffs);
    for (auto &c : tmp) c *= s;
    spectral::apply_half_cell_phase(tmp, g, true);
    fft::irfft2(g.ny, g.nx, tmp.data(), out.values().data());
  } else {
    std::vector<double> tmp(sf.rcoeffs);
    const double sa = std::sqrt(g.cell_area());
    // REDFT01 o REDFT10 = 2n per axis.
    const double norm = 1.0 / (4.0 * g.nx * g.ny);
    for (int q = 0; q < g.ny; ++q)
      for (int p = 0; p < g.nx; ++p)
        tmp[static_cast<std::size_t>(q) * g.nx + p] /=
            sa * spectral::dct_factor(q, g.ny) * spectral::dct_factor(p, g.nx) / norm;
    fft::r2r2(g.ny, g.nx, FFTW_REDFT01, FFTW_REDFT01, tmp.data(), out.values().data());
  }
  return out;
}

/// Sum of squared magnitudes over the full spectrum (Parseval).
inline double parseval_sum(const SpectralField2D &sf) {
  double s = 0.0;
  if (sf.basis == Boundary::Periodic) {
    const int cols = sf.cols();
    for (int r = 0; r < sf.rows(); ++r)
      for (int c = 0; c < cols; ++c)
        s += spectral::column_weight(c, sf.grid.nx) *
             std::norm(sf.coeffs[static_cast<std::size_t>(r) * cols + c]);
  } else {
    for (double v : sf.rcoeffs) s += v * v;
  }
  return s;
}

/// Zero every coefficient whose |index| exceeds kmax on its axis.
inline SpectralField2D truncate_modes(SpectralField2D sf, const ModeSet &m) {
  const Grid2D &g = sf.grid;
  if (m.kmax_x < 0 || m.kmax_y < 0) throw ConfigError("mode counts must be non-negative");
  if (sf.basis == Boundary::Periodic) {
    if (m.kmax_x > g.nx / 2 || m.kmax_y > g.ny / 2)
      throw ConfigError("mode set exceeds the Nyquist index of the grid");
    const int cols = sf.cols();
    for (int r = 0; r < g.ny; ++r) {
      const int ky = std::abs(fft::signed_index(r, g.ny));
      for (int c = 0; c < cols; ++c)
        if (ky > m.kmax_y || c > m.kmax_x) sf.coeffs[static_cast<std::size_t>(r) * cols + c] = 0.0;
    }
  } else {
    if (m.kmax_x > g.nx - 1 || m.kmax_y > g.ny - 1)
      throw ConfigError("mode set exceeds the cosine basis of the grid");
    for (int q = 0; q < g.ny; ++q)
      for (int p = 0; p < g.nx; ++p)
        if (q > m.kmax_y || p > m.kmax_x) sf.rcoeffs[static_cast<std::size_t>(q) * g.nx + p] = 0.0;
  }
  return sf;
}

inline ModeSet nyquist_modes(const Grid2D &g) {
  if (g.boundary == Boundary::Periodic) return {g.nx / 2, g.ny / 2};
  return {g.nx - 1, g.ny - 1};
}

namespace spectral {

/// Physical wavenumber along x for half-spectrum column c (Periodic) or
/// cosine index c (NeumannCosine).
inline double wavenumber(int index, int n, double length, Boundary b) {
  using std::numbers::pi;
  if (b == Boundary::Periodic) return 2.0 * pi * fft::signed_index(index, n) / length;
  return pi * index / length;
}

/// Nyquist-masked wavenumber used by first derivatives.
inline double derivative_wavenumber(int index, int n, double length) {
  if (2 * index == n) return 0.0;
  return wavenumber(index, n, length, Boundary::Periodic);
}

} // namespace spectral

inline ScalarField2D laplacian(const ScalarField2D &f) {
  const Grid2D &g = f.grid();
  SpectralField2D sf = forward(f);
  if (g.boundary == Boundary::Periodic) {
    const int cols = sf.cols();
    for (int r = 0; r < g.ny; ++r) {
      const double ky = spectral::derivative_wavenumber(r, g.ny, g.ly);
      for (int c = 0; c < cols; ++c) {
        const double kx = spectral::derivative_wavenumber(c, g.nx, g.lx);
        sf.coeffs[static_cast<std::size_t>(r) * cols + c] *= -(kx * kx + ky * ky);
      }
    }
  } else {
    for (int q = 0; q < g.ny; ++q) {
      const double ky = spectral::wavenumber(q, g.ny, g.ly, Boundary::NeumannCosine);
      for (int p = 0; p < g.nx; ++p) {
        const double kx = spectral::wavenumber(p, g.nx, g.lx, Boundary::NeumannCosine);
        sf.rcoeffs[static_cast<std::size_t>(q) * g.nx + p] *= -(kx * kx + ky * ky);
      }
    }
  }
  return inverse(sf);
}

/// Spectral (d/dx, d/dy). Under NeumannCosine the derivative of the cosine
/// series is evaluated as a sine series on the same cell centres.
inline std::pair<ScalarField2D, ScalarField2D> gradient(const ScalarField2D &f) {
  const Grid2D &g = f.grid();
  ScalarField2D dx(g), dy(g);
  if (g.boundary == Boundary::Periodic) {
    spectral::require_even(g);
    const int cols = g.nx / 2 + 1;
    std::vector<cplx> hat(fft::half_size(g.ny, g.nx)), tx(hat.size()), ty(hat.size());
    fft::rfft2(g.ny, g.nx, f.values().data(), hat.data());
    const double inv_n = 1.0 / static_cast<double>(g.size());
    for (int r = 0; r < g.ny; ++r) {
      const double ky = spectral::derivative_wavenumber(r, g.ny, g.ly);
      for (int c = 0; c < cols; ++c) {
        const double kx = spectral::derivative_wavenumber(c, g.nx, g.lx);
        const std::size_t k = static_cast<std::size_t>(r) * cols + c;
        tx[k] = cplx(0.0, kx * inv_n) * hat[k];
        ty[k] = cplx(0.0, ky * inv_n) * hat[k];
      }
    }
    fft::irfft2(g.ny, g.nx, tx.data(), dx.values().data());
    fft::irfft2(g.ny, g.nx, ty.data(), dy.values().data());
  } else {
    using std::numbers::pi;
    const int nx = g.nx, ny = g.ny;
    std::vector<double> hat(g.size()), bx(g.size(), 0.0), by(g.size(), 0.0);
    fft::r2r2(ny, nx, FFTW_REDFT10, FFTW_REDFT10, f.values().data(), hat.data());
    const double norm = 1.0 / (4.0 * nx * ny);
    // Sine coefficient for frequency p sits at index p-1 of the RODFT01 input.
    for (int q = 0; q < ny; ++q)
      for (int p = 1; p < nx; ++p)
        bx[static_cast<std::size_t>(q) * nx + p - 1] =
            -(pi * p / g.lx) * hat[static_cast<std::size_t>(q) * nx + p] * norm;
    for (int q = 1; q < ny; ++q)
      for (int p = 0; p < nx; ++p)
        by[static_cast<std::size_t>(q - 1) * nx + p] =
            -(pi * q / g.ly) * hat[static_cast<std::size_t>(q) * nx + p] * norm;
    fft::r2r2(ny, nx, FFTW_REDFT01, FFTW_RODFT01, bx.data(), dx.values().data());
    fft::r2r2(ny, nx, FFTW_RODFT01, FFTW_REDFT01, by.data(), dy.values().data());
  }
  return {std::move(dx), std::move(dy)};
}

/// Periodic divergence of a vector field, used to check div(grad) == laplacian.
inline ScalarField2D divergence(const ScalarField2D &vx, const ScalarField2D &vy) {
  ScalarField2D out = gradient(vx).first;
  out += gradient(vy).second;
  return out;
}

// ---------------------------------------------------------------------------
// Retained-mode maps between periodic planes of possibly different size.
//
// A map lists, for each retained mode, where it is read from the source half
// spectrum, where it is written in the target half spectrum, and a complex
// factor carrying the half-cell phase change plus the Nyquist split/fold.
// On a cell-centred grid an even-size Nyquist coefficient v measures
// a(+K) - a(-K): reading splits it as a(+K) = v/2, a(-K) = -v/2 and writing
// folds b(+K) - b(-K) back. Columns enumerate only kx >= 0 (negative columns
// are Hermitian mirrors), so a Nyquist column reads v/2 and writes twice the
// value; at equal size the two cancel. Odd sizes have no Nyquist mode.

namespace spectral {

struct ModeMap {
  int hin = 0, win = 0, hout = 0, wout = 0;
  ModeSet modes;
  std::vector<int> in_idx, out_idx;
  std::vector<cplx> alpha;

  std::size_t size() const { return in_idx.size(); }
  std::size_t in_half_size() const { return fft::half_size(hin, win); }
  std::size_t out_half_size() const { return fft::half_size(hout, wout); }
};

inline int mode_count(const ModeSet &m) { return (2 * m.kmax_y + 1) * (m.kmax_x + 1); }

inline cplx cell_phase(int r, int c, int ny, int nx) {
  const double theta = std::numbers::pi * (static_cast<double>(fft::signed_index(r, ny)) / ny +
                                           static_cast<double>(c) / nx);
  return {std::cos(theta), -std::sin(theta)};
}

/// Modes |ky| <= kmax_y, 0 <= kx <= kmax_x in row-major (ky, kx) order.
inline ModeMap make_mode_map(int hin, int win, int hout, int wout, const ModeSet &m) {
  for (int d : {hin, win, hout, wout})
    if (d < 2) throw ShapeError("spectral planes need at least 2 points per axis, got " + std::to_string(d));
  if (m.kmax_x < 0 || m.kmax_y < 0) throw ConfigError("mode counts must be non-negative");
  if (2 * m.kmax_x > std::min(win, wout) || 2 * m.kmax_y > std::min(hin, hout))
    throw ConfigError("retained modes (" + std::to_string(m.kmax_x) + "," + std::to_string(m.kmax_y) +
                      ") exceed the Nyquist index of a " + std::to_string(std::min(hin, hout)) + "x" +
                      std::to_string(std::min(win, wout)) + " plane");
  ModeMap mm{hin, win, hout, wout, m, {}, {}, {}};
  const int ci = win / 2 + 1, co = wout / 2 + 1;
  for (int ky = -m.kmax_y; ky <= m.kmax_y; ++ky) {
    for (int kx = 0; kx <= m.kmax_x; ++kx) {
      const int rin = ((ky % hin) + hin) % hin;
      const int rout = ((ky % hout) + hout) % hout;
      const double sign = ky < 0 ? -1.0 : 1.0;
      double s_in = 1.0, s_out = 1.0;
      if (2 * std::abs(ky) == hin) s_in *= 0.5 * sign;
      if (2 * kx == win) s_in *= 0.5;
      if (2 * std::abs(ky) == hout) s_out *= sign;
      if (2 * kx == wout) s_out *= 2.0;
      mm.in_idx.push_back(rin * ci + kx);
      mm.out_idx.push_back(rout * co + kx);
      mm.alpha.push_back(s_in * s_out * std::conj(cell_phase(rout, kx, hout, wout)) *
                         cell_phase(rin, kx, hin, win));
    }
  }
  return mm;
}

/// Every mode representable on both planes.
inline ModeMap resample_map(int hin, int win, int hout, int wout) {
  return make_mode_map(hin, win, hout, wout, {std::min(win, wout) / 2, std::min(hin, hout) / 2});
}

/// Keeps the Hermitian part of the self-mirrored columns (0, and w/2 for even
/// w). c2r of the result equals sum_c w_c Re(Z e^{ik.x}) for the original Z,
/// whose adjoint is w_c * rfft.
inline void hermitian_columns(std::vector<cplx> &z, int h, int w) {
  const int cols = w / 2 + 1;
  for (int c : {0, w / 2}) {
    if (c != 0 && 2 * c != w) continue;
    for (int r = 0; r < h; ++r) {
      const int rm = (h - r) % h;
      if (rm < r) continue;
      cplx &a = z[static_cast<std::size_t>(r) * cols + c];
      if (rm == r) {
        a = a.real();
      } else {
        cplx &b = z[static_cast<std::size_t>(rm) * cols + c];
        const cplx s = 0.5 * (a + std::conj(b));
        a = s;
        b = std::conj(s);
      }
    }
  }
}

/// Plane -> retained spectrum (forward-normalised).
inline void gather_modes(const double *plane, const ModeMap &mm, cplx *out) {
  thread_local std::vector<cplx> raw;
  raw.resize(mm.in_half_size());
  fft::rfft2(mm.hin, mm.win, plane, raw.data());
  const double inv_n = 1.0 / (static_cast<double>(mm.hin) * mm.win);
  for (std::size_t m = 0; m < mm.size(); ++m) out[m] = mm.alpha[m] * raw[mm.in_idx[m]] * inv_n;
}

/// Retained spectrum -> plane (overwrites).
inline void scatter_modes(const cplx *spec, const ModeMap &mm, double *plane) {
  thread_local std::vector<cplx> raw;
  raw.assign(mm.out_half_size(), cplx{});
  for (std::size_t m = 0; m < mm.size(); ++m) raw[mm.out_idx[m]] += spec[m];
  hermitian_columns(raw, mm.hout, mm.wout);
  fft::irfft2(mm.hout, mm.wout, raw.data(), plane);
}

/// Adjoint of scatter_modes.
inline void scatter_modes_adjoint(const double *gplane, const ModeMap &mm, cplx *gspec) {
  thread_local std::vector<cplx> raw;
  raw.resize(mm.out_half_size());
  fft::rfft2(mm.hout, mm.wout, gplane, raw.data());
  const int cols = mm.wout / 2 + 1;
  for (std::size_t m = 0; m < mm.size(); ++m)
    gspec[m] = column_weight(mm.out_idx[m] % cols, mm.wout) * raw[mm.out_idx[m]];
}

/// Adjoint of gather_modes; accumulates into gplane.
inline void gather_modes_adjoint(const cplx *gspec, const ModeMap &mm, double *gplane) {
  thread_local std::vector<cplx> raw;
  thread_local std::vector<double> tmp;
  raw.assign(mm.in_half_size(), cplx{});
  tmp.resize(static_cast<std::size_t>(mm.hin) * mm.win);
  const int cols = mm.win / 2 + 1;
  const double inv_n = 1.0 / (static_cast<double>(mm.hin) * mm.win);
  for (std::size_t m = 0; m < mm.size(); ++m) raw[mm.in_idx[m]] += std::conj(mm.alpha[m]) * gspec[m] * inv_n;
  for (std::size_t k = 0; k < raw.size(); ++k) raw[k] /= column_weight(static_cast<int>(k % cols), mm.win);
  hermitian_columns(raw, mm.hin, mm.win);
  fft::irfft2(mm.hin, mm.win, raw.data(), tmp.data());
  for (std::size_t p = 0; p < tmp.size(); ++p) gplane[p] += tmp[p];
}

} // namespace spectral

/// Band-limited change of resolution. Periodic: keeps every mode both grids
/// represent; Nyquist coefficients split or fold as in ModeMap, so sampling
/// a band-limited function on either grid commutes with resampling.
/// NeumannCosine: copies the shared DCT coefficients.
inline ScalarField2D resample(const ScalarField2D &f, int nx2, int ny2) {
  const Grid2D &g = f.grid();
  const Grid2D g2 = g.with_size(nx2, ny2);
  if (nx2 == g.nx && ny2 == g.ny) return f;
  if (g.boundary == Boundary::Periodic) {
    const auto mm = spectral::resample_map(g.ny, g.nx, ny2, nx2);
    std::vector<cplx> spec(mm.size());
    ScalarField2D out(g2);
    spectral::gather_modes(f.data().data(), mm, spec.data());
    spectral::scatter_modes(spec.data(), mm, out.data().data());
    return out;
  }
  SpectralField2D src = forward(f);
  SpectralField2D dst{g2, g.boundary, {}, {}};
  dst.rcoeffs.assign(g2.size(), 0.0);
  const int qn = std::min(g.ny, ny2), pn = std::min(g.nx, nx2);
  for (int q = 0; q < qn; ++q)
    for (int p = 0; p < pn; ++p)
      dst.rcoeffs[static_cast<std::size_t>(q) * nx2 + p] = src.rcoeffs[static_cast<std::size_t>(q) * g.nx + p];
  return inverse(dst);
}

} // namespace chno
