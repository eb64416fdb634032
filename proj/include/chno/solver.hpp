#pragma once

// Cahn-Hilliard dynamics d(phi)/dt = div(gamma grad mu),
// mu = lambda (W'(phi)/eps - eps lap phi), W = (phi^2 - 1)^2 / 4,
// integrated with a stabilised semi-implicit spectral scheme.

#include <cmath>
#include <complex>
#include <fstream>
#include <functional>
#include <iomanip>
#include <random>
#include <string>
#include <vector>

#include "chno/fft.hpp"
#include "chno/fields.hpp"
#include "chno/spectral.hpp"

namespace chno {

struct CHParams {
  double gamma = 1.0;
  double lambda = 0.01;
  double epsilon = 0.01;
  double dt = 1e-4;
  double stabilization = 2.0;
  Boundary boundary = Boundary::NeumannCosine;

  void validate() const {
    if (!(gamma >= 0.0)) throw ConfigError("mobility gamma must be non-negative");
    if (!(lambda > 0.0)) throw ConfigError("lambda must be positive");
    if (!(epsilon > 0.0)) throw ConfigError("epsilon must be positive");
    if (!(dt > 0.0)) throw ConfigError("solver dt must be positive");
    if (!(stabilization >= 0.0)) throw ConfigError("stabilization must be non-negative");
  }
};

struct EnergyReport {
  double bulk = 0.0;
  double interfacial = 0.0;
  double total = 0.0;
  double time = 0.0;
};

inline double double_well(double phi) {
  const double a = phi * phi - 1.0;
  return 0.25 * a * a;
}

inline double equilibrium_profile_1d(double s, double epsilon) {
  if (!(epsilon > 0.0)) throw ConfigError("epsilon must be positive");
  return std::tanh(s / (epsilon * std::sqrt(2.0)));
}

/// Free-energy density of the 1D equilibrium profile.
inline double equilibrium_energy_density(double s, double epsilon, double lambda) {
  const double sech = 1.0 / std::cosh(s / (epsilon * std::sqrt(2.0)));
  return lambda / (2.0 * epsilon) * std::pow(sech, 4);
}

inline ScalarField2D chemical_potential(const ScalarField2D &f, const CHParams &p) {
  ScalarField2D lap = laplacian(f);
  ScalarField2D mu(f.grid());
  for (std::size_t k = 0; k < f.size(); ++k) {
    const double phi = f[k];
    mu[k] = p.lambda * (phi * (phi * phi - 1.0) / p.epsilon - p.epsilon * lap[k]);
  }
  return mu;
}

inline EnergyReport free_energy(const ScalarField2D &f, const CHParams &p, double time = 0.0) {
  const double da = f.grid().cell_area();
  double bulk = 0.0;
  for (double v : f.values()) bulk += double_well(v);
  bulk *= p.lambda / p.epsilon * da;
  auto [gx, gy] = gradient(f);
  double grad2 = 0.0;
  for (std::size_t k = 0; k < f.size(); ++k) grad2 += gx[k] * gx[k] + gy[k] * gy[k];
  const double interfacial = 0.5 * p.lambda * p.epsilon * grad2 * da;
  return {bulk, interfacial, bulk + interfacial, time};
}

/// Precomputed per-mode factors of the semi-implicit update for one grid.
class CHStepper {
public:
  CHStepper(const Grid2D &g, const CHParams &p) : grid_(g), p_(p) {
    p.validate();
    g.validate();
    periodic_ = p.boundary == Boundary::Periodic;
    if (periodic_) spectral::require_even(g);
    cols_ = periodic_ ? g.nx / 2 + 1 : g.nx;
    const std::size_t n = static_cast<std::size_t>(g.ny) * cols_;
    k2_.resize(n);
    denom_.resize(n);
    for (int r = 0; r < g.ny; ++r) {
      const double ky = spectral::wavenumber(r, g.ny, g.ly, p.boundary);
      for (int c = 0; c < cols_; ++c) {
        const double kx = spectral::wavenumber(c, g.nx, g.lx, p.boundary);
        const double k2 = kx * kx + ky * ky;
        const std::size_t m = static_cast<std::size_t>(r) * cols_ + c;
        k2_[m] = k2;
        denom_[m] = 1.0 + p.dt * p.gamma *
                              (p.lambda * p.epsilon * k2 * k2 +
                               p.stabilization * (p.lambda / p.epsilon) * k2);
      }
    }
    nonlin_.resize(g.size());
    if (periodic_) {
      chat_.resize(n);
      nhat_c_.resize(n);
    } else {
      rhat_.resize(n);
      nhat_r_.resize(n);
    }
  }

  const Grid2D &grid() const { return grid_; }
  const CHParams &params() const { return p_; }

  /// Advance `phi` in place by one step.
  void advance(std::vector<double> &phi, long step_index = 0) {
    for (double v : phi)
      if (!std::isfinite(v)) throw IntegrationError("non-finite solver input", step_index);
    for (std::size_t k = 0; k < phi.size(); ++k) nonlin_[k] = phi[k] * (phi[k] * phi[k] - 1.0);
    const double a = p_.dt * p_.gamma * p_.lambda / p_.epsilon;
    const double s = p_.stabilization;
    const int ny = grid_.ny, nx = grid_.nx;
    if (periodic_) {
      fft::rfft2(ny, nx, phi.data(), chat_.data());
      fft::rfft2(ny, nx, nonlin_.data(), nhat_c_.data());
      const double inv_n = 1.0 / static_cast<double>(grid_.size());
      for (std::size_t m = 0; m < chat_.size(); ++m)
        chat_[m] = (chat_[m] - a * k2_[m] * (nhat_c_[m] - s * chat_[m])) * (inv_n / denom_[m]);
      fft::irfft2(ny, nx, chat_.data(), phi.data());
    } else {
      fft::r2r2(ny, nx, FFTW_REDFT10, FFTW_REDFT10, phi.data(), rhat_.data());
      fft::r2r2(ny, nx, FFTW_REDFT10, FFTW_REDFT10, nonlin_.data(), nhat_r_.data());
      const double inv_n = 1.0 / (4.0 * static_cast<double>(grid_.size()));
      for (std::size_t m = 0; m < rhat_.size(); ++m)
        rhat_[m] = (rhat_[m] - a * k2_[m] * (nhat_r_[m] - s * rhat_[m])) * (inv_n / denom_[m]);
      fft::r2r2(ny, nx, FFTW_REDFT01, FFTW_REDFT01, rhat_.data(), phi.data());
    }
    for (double v : phi)
      if (!std::isfinite(v)) throw IntegrationError("solver produced non-finite values", step_index);
  }

private:
  Grid2D grid_;
  CHParams p_;
  bool periodic_ = false;
  int cols_ = 0;
  std::vector<double> k2_, denom_, nonlin_;
  std::vector<std::complex<double>> chat_, nhat_c_;
  std::vector<double> rhat_, nhat_r_;
};

inline void check_basis(const ScalarField2D &f, const CHParams &p) {
  if (f.grid().boundary != p.boundary)
    throw ConfigError(std::string("field grid uses ") + to_string(f.grid().boundary) +
                      " boundary but solver is configured for " + to_string(p.boundary));
}

inline ScalarField2D step(const ScalarField2D &f, const CHParams &p, long step_index = 0) {
  check_basis(f, p);
  CHStepper stepper(f.grid(), p);
  ScalarField2D out = f;
  stepper.advance(out.data(), step_index);
  return out;
}

/// Called after every internal step with (step index, state).
using StepObserver = std::function<void(long, const ScalarField2D &)>;

/// Runs n_steps steps and keeps every save_every-th state, the initial one
/// included. `seed` is accepted for interface symmetry with callers that
/// randomise f0; the integration itself is deterministic.
inline Trajectory simulate(const ScalarField2D &f0, const CHParams &p, long n_steps, long save_every,
                           std::uint64_t seed = 0, const StepObserver &observer = {}) {
  (void)seed;
  if (n_steps < 1) throw ConfigError("simulate needs n_steps >= 1");
  if (save_every < 1) throw ConfigError("simulate needs save_every >= 1");
  check_basis(f0, p);
  CHStepper stepper(f0.grid(), p);
  Trajectory traj;
  traj.dt = p.dt * static_cast<double>(save_every);
  traj.fields.push_back(f0);
  ScalarField2D cur = f0;
  if (observer) observer(0, cur);
  for (long n = 1; n <= n_steps; ++n) {
    stepper.advance(cur.data(), n);
    if (observer) observer(n, cur);
    if (n % save_every == 0) traj.fields.push_back(cur);
  }
  return traj;
}

/// Uniform noise in [-amplitude, amplitude] around `offset`.
inline ScalarField2D noise_field(const Grid2D &g, double amplitude, std::uint64_t seed,
                                 double offset = 0.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(-amplitude, amplitude);
  ScalarField2D f(g);
  for (double &v : f.data()) v = offset + dist(rng);
  return f;
}

/// Per-step energy CSV: step,time,bulk,interfacial,total.
class EnergyCsvWriter {
public:
  EnergyCsvWriter(const std::string &path, const CHParams &p) : os_(path), p_(p) {
    if (!os_) throw IoError("cannot open " + path + " for writing");
    os_ << "step,time,bulk,interfacial,total\n" << std::setprecision(17);
  }
  void operator()(long n, const ScalarField2D &f) {
    const auto e = free_energy(f, p_, static_cast<double>(n) * p_.dt);
    os_ << n << ',' << e.time << ',' << e.bulk << ',' << e.interfacial << ',' << e.total << '\n';
  }

private:
  std::ofstream os_;
  CHParams p_;
};

} // namespace chno
