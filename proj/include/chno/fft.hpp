#pragma once

// Thin FFTW wrapper: cached plans, new-array execution, unnormalised
// transforms. Plans are created under a mutex and are immutable afterwards,
// so execution is safe from any thread.

#include <fftw3.h>

#include <complex>
#include <map>
#include <mutex>
#include <tuple>
#include <vector>

#include "chno/error.hpp"

namespace chno::fft {

using cplx = std::complex<double>;

namespace detail {

enum class Kind { R2C, C2R, R2R };

class PlanCache {
public:
  static PlanCache &instance() {
    static PlanCache cache;
    return cache;
  }

  fftw_plan r2c(int ny, int nx) { return get({Kind::R2C, ny, nx, 0, 0}); }
  fftw_plan c2r(int ny, int nx) { return get({Kind::C2R, ny, nx, 0, 0}); }
  fftw_plan r2r(int ny, int nx, fftw_r2r_kind ky, fftw_r2r_kind kx) {
    return get({Kind::R2R, ny, nx, static_cast<int>(ky), static_cast<int>(kx)});
  }

  PlanCache(const PlanCache &) = delete;
  PlanCache &operator=(const PlanCache &) = delete;

private:
  using Key = std::tuple<Kind, int, int, int, int>;
  PlanCache() = default;
  ~PlanCache() {
    for (auto &[k, p] : plans_) fftw_destroy_plan(p);
  }

  fftw_plan get(const Key &key) {
    std::lock_guard lock(mutex_);
    if (auto it = plans_.find(key); it != plans_.end()) return it->second;
    const auto [kind, ny, nx, a, b] = key;
    const unsigned flags = FFTW_ESTIMATE | FFTW_UNALIGNED;
    std::vector<double> real(static_cast<std::size_t>(ny) * nx);
    std::vector<cplx> spec(static_cast<std::size_t>(ny) * (nx / 2 + 1));
    fftw_plan p = nullptr;
    switch (kind) {
    case Kind::R2C:
      p = fftw_plan_dft_r2c_2d(ny, nx, real.data(), reinterpret_cast<fftw_complex *>(spec.data()),
                               flags);
      break;
    case Kind::C2R:
      p = fftw_plan_dft_c2r_2d(ny, nx, reinterpret_cast<fftw_complex *>(spec.data()), real.data(),
                               flags);
      break;
    case Kind::R2R: {
      std::vector<double> out(real.size());
      p = fftw_plan_r2r_2d(ny, nx, real.data(), out.data(), static_cast<fftw_r2r_kind>(a),
                           static_cast<fftw_r2r_kind>(b), flags);
      break;
    }
    }
    if (!p) throw Error("FFTW failed to create a plan");
    plans_.emplace(key, p);
    return p;
  }

  std::mutex mutex_;
  std::map<Key, fftw_plan> plans_;
};

} // namespace detail

/// Unnormalised forward real-to-half-complex transform of an ny x nx plane.
/// Output holds ny * (nx/2 + 1) coefficients.
inline void rfft2(int ny, int nx, const double *in, cplx *out) {
  auto p = detail::PlanCache::instance().r2c(ny, nx);
  // r2c with FFTW_ESTIMATE leaves the input untouched.
  fftw_execute_dft_r2c(p, const_cast<double *>(in), reinterpret_cast<fftw_complex *>(out));
}

/// Unnormalised inverse (c2r). Only the real parts of self-conjugate modes
/// contribute. The input is left untouched.
inline void irfft2(int ny, int nx, const cplx *in, double *out) {
  auto p = detail::PlanCache::instance().c2r(ny, nx);
  thread_local std::vector<cplx> scratch;
  scratch.assign(in, in + static_cast<std::size_t>(ny) * (nx / 2 + 1));
  fftw_execute_dft_c2r(p, reinterpret_cast<fftw_complex *>(scratch.data()), out);
}

/// Real-to-real 2D transform with FFTW kinds per axis (REDFT10 = DCT-II etc).
inline void r2r2(int ny, int nx, fftw_r2r_kind ky, fftw_r2r_kind kx, const double *in,
                 double *out) {
  auto p = detail::PlanCache::instance().r2r(ny, nx, ky, kx);
  // The plan is out-of-place; going through scratch also permits in == out.
  thread_local std::vector<double> scratch;
  scratch.assign(in, in + static_cast<std::size_t>(ny) * nx);
  fftw_execute_r2r(p, scratch.data(), out);
}

inline std::size_t half_size(int ny, int nx) { return static_cast<std::size_t>(ny) * (nx / 2 + 1); }

/// Signed frequency index for position k of an n-point transform axis.
inline int signed_index(int k, int n) { return k <= n / 2 ? k : k - n; }

} // namespace chno::fft
