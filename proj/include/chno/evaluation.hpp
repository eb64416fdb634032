#pragma once

// Metrics and evaluation drivers: relative error, windowed box statistics,
// normalised free energy, equivariance deviation, super-resolution and CSV
// exports.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "chno/datasets.hpp"
#include "chno/operators.hpp"
#include "chno/solver.hpp"

namespace chno {

/// ||truth - pred||^2 / ||truth||^2 (squared over squared).
inline double rel_error(const ScalarField2D &truth, const ScalarField2D &pred) {
  truth.check_same(pred);
  const double den = l2_norm_sq(truth);
  if (!(den > 0.0)) throw MetricError("relative error is undefined for a zero-norm reference");
  return l2_norm_sq(truth - pred) / den;
}

/// ||truth - pred|| / ||truth||. Not used for reported figures.
inline double rel_error_unsquared(const ScalarField2D &truth, const ScalarField2D &pred) {
  return std::sqrt(rel_error(truth, pred));
}

inline ScalarField2D error_map(const ScalarField2D &truth, const ScalarField2D &pred) {
  truth.check_same(pred);
  ScalarField2D out(truth.grid());
  for (std::size_t k = 0; k < out.size(); ++k) out[k] = std::abs(truth[k] - pred[k]);
  return out;
}

// ---------------------------------------------------------------------------
// Window statistics

struct WindowStats {
  int window_index = 0;
  double median = std::numeric_limits<double>::quiet_NaN();
  double q25 = std::numeric_limits<double>::quiet_NaN();
  double q75 = std::numeric_limits<double>::quiet_NaN();
  double whisker_lo = std::numeric_limits<double>::quiet_NaN();
  double whisker_hi = std::numeric_limits<double>::quiet_NaN();
  int n = 0;

  bool defined() const { return n > 0; }
};

/// Quantile of sorted data, linear interpolation between order statistics.
inline double quantile_sorted(const std::vector<double> &v, double q) {
  if (v.empty()) throw MetricError("quantile of an empty sample");
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

inline WindowStats box_stats(std::vector<double> v, int index = 0) {
  WindowStats s;
  s.window_index = index;
  s.n = static_cast<int>(v.size());
  if (v.empty()) return s;
  std::sort(v.begin(), v.end());
  s.median = quantile_sorted(v, 0.5);
  s.q25 = quantile_sorted(v, 0.25);
  s.q75 = quantile_sorted(v, 0.75);
  const double iqr = s.q75 - s.q25;
  const double lo_fence = s.q25 - 1.5 * iqr, hi_fence = s.q75 + 1.5 * iqr;
  s.whisker_lo = *std::find_if(v.begin(), v.end(), [&](double x) { return x >= lo_fence; });
  s.whisker_hi = *std::find_if(v.rbegin(), v.rend(), [&](double x) { return x <= hi_fence; });
  return s;
}

/// Equal-width windows over [0, t_end], t_end the largest time present.
/// Non-finite values (undefined metrics) are left out of the statistics.
inline std::vector<WindowStats> window_stats(const std::vector<std::pair<double, double>> &errors, int n_windows) {
  if (n_windows < 1) throw ConfigError("window_stats needs at least one window");
  if (errors.empty()) throw MetricError("window_stats needs at least one value");
  double t_end = 0.0;
  for (const auto &[t, v] : errors) t_end = std::max(t_end, t);
  std::vector<std::vector<double>> bins(n_windows);
  for (const auto &[t, v] : errors) {
    if (!std::isfinite(v)) continue;
    int w = t_end > 0.0 ? static_cast<int>(std::floor(t / t_end * n_windows)) : 0;
    bins[std::clamp(w, 0, n_windows - 1)].push_back(v);
  }
  std::vector<WindowStats> out;
  for (int w = 0; w < n_windows; ++w) out.push_back(box_stats(std::move(bins[w]), w));
  return out;
}

// ---------------------------------------------------------------------------
// Energy

struct EnergyTrajectory {
  std::vector<double> times;
  std::vector<double> f_over_f0;
};

/// Free energy per frame over the first frame's value (`f0` overrides the
/// reference, so predictions can be normalised by the true initial energy).
inline EnergyTrajectory energy_trajectory(const Trajectory &traj, const CHParams &p, double f0 = 0.0) {
  if (traj.size() == 0) throw ShapeError("energy trajectory of an empty trajectory");
  EnergyTrajectory e;
  const double ref = f0 != 0.0 ? f0 : free_energy(traj.fields.front(), p).total;
  if (ref == 0.0) throw MetricError("initial free energy is zero; normalisation undefined");
  for (std::size_t k = 0; k < traj.size(); ++k) {
    e.times.push_back(traj.time(k));
    e.f_over_f0.push_back(free_energy(traj.fields[k], p).total / ref);
  }
  return e;
}

// ---------------------------------------------------------------------------
// Equivariance deviation

/// Mean over D4 of ||g^-1 model(g x) - model(x)||^2 / ||model(x)||^2.
inline double equivariance_deviation(OperatorModel &model, const nn::TensorPtr &input) {
  if (input->shape.h != input->shape.w) throw ShapeError("equivariance deviation needs square inputs");
  const auto ref = model.forward(nullptr, input);
  double den = 0.0;
  for (double v : ref->values) den += v * v;
  if (!(den > 0.0)) throw MetricError("equivariance deviation undefined for a zero model output");
  double total = 0.0;
  for (const auto &g : d4_elements()) {
    if (g == D4Element::identity()) continue;
    const auto y = nn::d4_transform(nullptr, model.forward(nullptr, nn::d4_transform(nullptr, input, g)), d4_inverse(g));
    double num = 0.0;
    for (std::size_t k = 0; k < y->size(); ++k) {
      const double d = y->values[k] - ref->values[k];
      num += d * d;
    }
    total += num / den;
  }
  return total / 8.0;
}

// ---------------------------------------------------------------------------
// Rollout evaluation

struct FrameError {
  int case_id = 0;
  int frame = 0; // index in the reference trajectory
  double t = 0.0;
  double t_star = 0.0;
  double rel_error = 0.0;
  double max_abs = 0.0;
};

struct CaseRollout {
  int case_id = 0;
  Trajectory prediction; // frames n_in .. end of the reference
  std::vector<FrameError> errors;
};

/// Rolls out from the first n_in frames over the rest of `truth` and scores
/// every predicted frame. t_star uses the reference's own duration.
inline CaseRollout evaluate_rollout(OperatorModel &model, const Trajectory &truth, int case_id = 0) {
  const int n_in = model.config().n_in, n_out = model.config().n_out;
  const int len = static_cast<int>(truth.size());
  if (len <= n_in) throw ShapeError("reference trajectory is too short for the model's input window");
  Trajectory hist;
  hist.dt = truth.dt;
  hist.t0 = truth.t0;
  hist.fields.assign(truth.fields.begin(), truth.fields.begin() + n_in);
  const int n_pred = len - n_in;
  const int n_windows = (n_pred + n_out - 1) / n_out;
  CaseRollout r;
  r.case_id = case_id;
  r.prediction = rollout(model, hist, n_windows);
  r.prediction.fields.resize(n_pred);
  const double t_end = truth.t_end() - truth.t0;
  for (int k = 0; k < n_pred; ++k) {
    const auto &tf = truth.fields[n_in + k];
    const auto &pf = r.prediction.fields[k];
    FrameError e;
    e.case_id = case_id;
    e.frame = n_in + k;
    e.t = truth.time(n_in + k);
    e.t_star = t_end > 0.0 ? (e.t - truth.t0) / t_end : 0.0;
    try {
      e.rel_error = rel_error(tf, pf);
    } catch (const MetricError &) {
      e.rel_error = std::numeric_limits<double>::quiet_NaN(); // reported per frame, run continues
    }
    e.max_abs = error_map(tf, pf).max_abs();
    r.errors.push_back(e);
  }
  return r;
}

/// The same rollout scored on a finer reference. The model runs unchanged at
/// the reference's resolution.
inline std::vector<FrameError> superres_eval(OperatorModel &model, const Trajectory &fine_traj, int n_in, int n_out,
                                             int case_id = 0) {
  if (model.config().n_in != n_in || model.config().n_out != n_out)
    throw ConfigError("super-resolution frame counts differ from the model's");
  const int n = fine_traj.grid().nx;
  // surfaces a Nyquist violation as a config error before any rollout
  (void)model.layer_resolutions(fine_traj.grid().ny, n);
  return evaluate_rollout(model, fine_traj, case_id).errors;
}

/// Fine-grid reference for a dataset case: the case's initial condition
/// interpolated onto the finer grid, then simulated there.
inline Trajectory fine_reference(const DatasetManifest &m, const Trajectory &coarse, int factor) {
  if (factor < 1) throw ConfigError("super-resolution factor must be positive");
  const Grid2D fine = m.grid.with_size(m.grid.nx * factor, m.grid.ny * factor);
  const auto f0 = resample(coarse.fields.front(), fine.nx, fine.ny);
  const long every = m.steps_per_sample();
  auto t = simulate(f0, m.params, every * (static_cast<long>(coarse.size()) - 1), every);
  t.dt = m.dt_sample;
  return t;
}

inline double median_of(std::vector<double> v) {
  if (v.empty()) throw MetricError("median of an empty sample");
  std::sort(v.begin(), v.end());
  return quantile_sorted(v, 0.5);
}

// ---------------------------------------------------------------------------
// CSV exports

inline std::ofstream open_csv(const std::string &path, const std::string &header) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open " + path + " for writing");
  os << header << '\n' << std::setprecision(17);
  return os;
}

inline void write_frame_errors_csv(const std::string &path, const std::vector<FrameError> &rows) {
  auto os = open_csv(path, "case_id,t,t_star,rel_error,max_abs");
  for (const auto &r : rows) os << r.case_id << ',' << r.t << ',' << r.t_star << ',' << r.rel_error << ',' << r.max_abs << '\n';
}

inline void write_window_stats_csv(const std::string &path, const std::vector<WindowStats> &rows) {
  auto os = open_csv(path, "window,median,q25,q75,lo,hi,n");
  for (const auto &r : rows)
    os << r.window_index << ',' << r.median << ',' << r.q25 << ',' << r.q75 << ',' << r.whisker_lo << ','
       << r.whisker_hi << ',' << r.n << '\n';
}

struct EnergyRow {
  int case_id = 0;
  double t = 0.0;
  double truth = 0.0;
  double pred = 0.0;
};

inline void write_energy_csv(const std::string &path, const std::vector<EnergyRow> &rows) {
  auto os = open_csv(path, "case_id,t,F_over_F0_truth,F_over_F0_pred");
  for (const auto &r : rows) os << r.case_id << ',' << r.t << ',' << r.truth << ',' << r.pred << '\n';
}

/// Truth and prediction normalised by the true initial energy, over the
/// predicted frames.
inline std::vector<EnergyRow> energy_rows(const Trajectory &truth, const CaseRollout &r, const CHParams &p) {
  const double f0 = free_energy(truth.fields.front(), p).total;
  const auto et = energy_trajectory(truth, p, f0);
  Trajectory pred = r.prediction;
  const auto ep = energy_trajectory(pred, p, f0);
  std::vector<EnergyRow> rows;
  const std::size_t offset = truth.size() - pred.size();
  for (std::size_t k = 0; k < pred.size(); ++k)
    rows.push_back({r.case_id, truth.time(offset + k), et.f_over_f0[offset + k], ep.f_over_f0[k]});
  return rows;
}

} // namespace chno
