#pragma once

// Neural operators: spectral convolution (with resolution change and adjoint),
// the FNO stack, the U-shaped stack, and model assembly from configs.
//
// Spectral layers act on the periodic half spectrum with the same half-cell
// phase convention as chno::forward, so a retained mode means the same
// physical frequency at every resolution. Retained modes form the square
// |ky| <= Ky, 0 <= kx <= Kx of the half spectrum; its Hermitian closure is
// invariant under the D4 action when Kx == Ky.

#include <cmath>
#include <complex>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "chno/fft.hpp"
#include "chno/kv.hpp"
#include "chno/fields.hpp"
#include "chno/nncore.hpp"
#include "chno/spectral.hpp"

namespace chno {

namespace ops {

using nn::Param;
using nn::Shape4;
using nn::Tape;
using nn::Tensor4;
using nn::TensorPtr;

using spectral::ModeMap;
using spectral::make_mode_map;
using spectral::mode_count;
using spectral::resample_map;

/// Planes of x -> retained spectra, layout [b][c][mode].
inline void gather_spectra(const Tensor4 &x, const ModeMap &mm, std::vector<cplx> &out) {
  const std::size_t M = mm.size(), planes = static_cast<std::size_t>(x.shape.b) * x.shape.c;
  out.resize(planes * M);
  for (std::size_t k = 0; k < planes; ++k)
    spectral::gather_modes(x.values.data() + k * x.shape.plane(), mm, out.data() + k * M);
}

/// Retained output spectra [b][c][mode] -> planes of y (overwrites y).
inline void scatter_to_planes(const std::vector<cplx> &spec, const ModeMap &mm, Tensor4 &y) {
  const std::size_t M = mm.size(), planes = static_cast<std::size_t>(y.shape.b) * y.shape.c;
  for (std::size_t k = 0; k < planes; ++k)
    spectral::scatter_modes(spec.data() + k * M, mm, y.values.data() + k * y.shape.plane());
}

inline void gather_output_grad(const std::vector<double> &gy, const Shape4 &s, const ModeMap &mm,
                               std::vector<cplx> &out) {
  const std::size_t M = mm.size(), planes = static_cast<std::size_t>(s.b) * s.c;
  out.resize(planes * M);
  for (std::size_t k = 0; k < planes; ++k)
    spectral::scatter_modes_adjoint(gy.data() + k * s.plane(), mm, out.data() + k * M);
}

inline void scatter_input_grad(const std::vector<cplx> &g, const Shape4 &s, const ModeMap &mm,
                               std::vector<double> &gx) {
  const std::size_t M = mm.size(), planes = static_cast<std::size_t>(s.b) * s.c;
  for (std::size_t k = 0; k < planes; ++k)
    spectral::gather_modes_adjoint(g.data() + k * M, mm, gx.data() + k * s.plane());
}

/// Weight layout: [mode][c_out][c_in][re, im].
inline TensorPtr spectral_conv(Tape *tape, const TensorPtr &x, Param &weight, int cout, const ModeMap &mm) {
  const int B = x->shape.b, cin = x->shape.c;
  if (x->shape.h != mm.hin || x->shape.w != mm.win) throw ShapeError("spectral_conv: mode map resolution mismatch");
  const std::size_t M = mm.size();
  if (weight.size() != M * cout * cin * 2)
    throw ShapeError("spectral_conv: weight holds " + std::to_string(weight.size()) + " values, expected " +
                     std::to_string(M * cout * cin * 2));
  auto xs = std::make_shared<std::vector<cplx>>();
  gather_spectra(*x, mm, *xs);
  const cplx *W = reinterpret_cast<const cplx *>(weight.values.data());
  std::vector<cplx> ys(static_cast<std::size_t>(B) * cout * M);
  for (int b = 0; b < B; ++b)
    for (int o = 0; o < cout; ++o) {
      cplx *yo = ys.data() + (static_cast<std::size_t>(b) * cout + o) * M;
      for (int c = 0; c < cin; ++c) {
        const cplx *xc = xs->data() + (static_cast<std::size_t>(b) * cin + c) * M;
        for (std::size_t m = 0; m < M; ++m)
          yo[m] += W[(m * cout + o) * cin + c] * xc[m];
      }
    }
  auto y = nn::output_like(tape, {B, cout, mm.hout, mm.wout});
  scatter_to_planes(ys, mm, *y);
  if (tape) {
    tape->record([x, y, xs, &weight, cout, cin, M, &mm]() {
      if (y->grad.empty()) return;
      const int B = y->shape.b;
      std::vector<cplx> gy;
      gather_output_grad(y->grad, y->shape, mm, gy);
      cplx *gW = reinterpret_cast<cplx *>(weight.grad.data());
      const cplx *W = reinterpret_cast<const cplx *>(weight.values.data());
      for (int b = 0; b < B; ++b)
        for (int o = 0; o < cout; ++o) {
          const cplx *go = gy.data() + (static_cast<std::size_t>(b) * cout + o) * M;
          for (int c = 0; c < cin; ++c) {
            const cplx *xc = xs->data() + (static_cast<std::size_t>(b) * cin + c) * M;
            for (std::size_t m = 0; m < M; ++m) gW[(m * cout + o) * cin + c] += go[m] * std::conj(xc[m]);
          }
        }
      if (!x->requires_grad) return;
      std::vector<cplx> gx(static_cast<std::size_t>(B) * cin * M);
      for (int b = 0; b < B; ++b)
        for (int c = 0; c < cin; ++c) {
          cplx *gc = gx.data() + (static_cast<std::size_t>(b) * cin + c) * M;
          for (int o = 0; o < cout; ++o) {
            const cplx *go = gy.data() + (static_cast<std::size_t>(b) * cout + o) * M;
            for (std::size_t m = 0; m < M; ++m) gc[m] += std::conj(W[(m * cout + o) * cin + c]) * go[m];
          }
        }
      scatter_input_grad(gx, x->shape, mm, x->ensure_grad());
    });
  }
  return y;
}

/// Band-limited change of resolution, channel by channel. Identity when the
/// sizes already match.
inline TensorPtr resample(Tape *tape, const TensorPtr &x, const ModeMap &mm) {
  if (mm.hin == mm.hout && mm.win == mm.wout) return x;
  std::vector<cplx> spec;
  gather_spectra(*x, mm, spec);
  auto y = nn::output_like(tape, {x->shape.b, x->shape.c, mm.hout, mm.wout});
  scatter_to_planes(spec, mm, *y);
  if (tape) {
    tape->record([x, y, &mm]() {
      if (y->grad.empty() || !x->requires_grad) return;
      std::vector<cplx> g;
      gather_output_grad(y->grad, y->shape, mm, g);
      scatter_input_grad(g, x->shape, mm, x->ensure_grad());
    });
  }
  return y;
}


} // namespace ops

// ---------------------------------------------------------------------------
// Configs

enum class ModelKind { FNO, UNO };

inline const char *to_string(ModelKind k) { return k == ModelKind::FNO ? "fno" : "uno"; }

inline ModelKind model_kind_from_string(const std::string &s) {
  if (s == "fno") return ModelKind::FNO;
  if (s == "uno") return ModelKind::UNO;
  throw ConfigError("unknown model kind '" + s + "' (expected fno|uno)");
}

struct Scaling {
  double sx = 1.0, sy = 1.0;
  friend bool operator==(const Scaling &, const Scaling &) = default;
};

struct FNOConfig {
  int width = 64;
  int n_layers = 4;
  ModeSet modes{8, 8};
  int lift_channels = 256;
  int proj_channels = 256;
};

struct UNOConfig {
  int hidden = 64; // width after lifting
  std::vector<int> out_channels;
  std::vector<ModeSet> modes;
  std::vector<Scaling> scalings;
  std::vector<std::pair<int, int>> skip_pairs{{0, 6}, {1, 5}, {2, 4}};
  bool concat_skips = true;
  int lift_channels = 256;
  int proj_channels = 256;
};

struct ModelConfig {
  ModelKind kind = ModelKind::UNO;
  FNOConfig fno;
  UNOConfig uno;
  int n_in = 5;
  int n_out = 3;
  bool coord_channels = true;
  std::uint64_t seed = 0;

  int input_channels() const { return n_in + (coord_channels ? 2 : 0); }

  void validate() const {
    if (n_in < 1 || n_out < 1) throw ConfigError("n_in and n_out must be positive");
    if (kind == ModelKind::FNO) {
      if (fno.n_layers < 1) throw ConfigError("FNO needs n_layers >= 1");
      if (fno.width < 1 || fno.lift_channels < 1 || fno.proj_channels < 1)
        throw ConfigError("FNO widths must be positive");
      return;
    }
    const auto &u = uno;
    const std::size_t L = u.out_channels.size();
    if (L == 0) throw ConfigError("UNO needs at least one layer");
    if (u.modes.size() != L || u.scalings.size() != L)
      throw ConfigError("UNO out_channels, modes and scalings must have equal lengths");
    if (u.hidden < 1 || u.lift_channels < 1 || u.proj_channels < 1)
      throw ConfigError("UNO widths must be positive");
    double px = 1.0, py = 1.0;
    for (const auto &s : u.scalings) {
      if (!(s.sx > 0) || !(s.sy > 0)) throw ConfigError("UNO scalings must be positive");
      px *= s.sx;
      py *= s.sy;
    }
    if (std::abs(px - 1.0) > 1e-12 || std::abs(py - 1.0) > 1e-12)
      throw ConfigError("UNO scalings must multiply to 1 on each axis");
    std::vector<int> used(L, 0);
    for (const auto &[e, d] : u.skip_pairs) {
      if (e < 0 || d < 0 || e >= static_cast<int>(L) || d >= static_cast<int>(L) || e >= d)
        throw ConfigError("skip pair (" + std::to_string(e) + "," + std::to_string(d) + ") is invalid");
      if (used[d]++) throw ConfigError("layer " + std::to_string(d) + " receives more than one skip");
    }
  }
};

/// Table-4 UNO: channels [32,64,64,128,64,64,32], mode counts
/// [32,16,8,4,8,16,32] (so kmax is half of each) and scalings 1,.5,.5,1,2,2,1.
inline UNOConfig uno_table4() {
  UNOConfig u;
  u.hidden = 64;
  u.out_channels = {32, 64, 64, 128, 64, 64, 32};
  for (int m : {32, 16, 8, 4, 8, 16, 32}) u.modes.push_back({m / 2, m / 2});
  u.scalings = {{1, 1}, {0.5, 0.5}, {0.5, 0.5}, {1, 1}, {2, 2}, {2, 2}, {1, 1}};
  return u;
}

/// Table-4 FNO: 16 modes per axis (kmax 8), package-default depth and widths.
inline FNOConfig fno_table4() {
  FNOConfig f;
  f.width = 64;
  f.n_layers = 4;
  f.modes = {8, 8};
  f.lift_channels = 256;
  f.proj_channels = 256;
  return f;
}

/// Table-4 UNO shape with every channel count divided by `divisor`.
inline UNOConfig uno_width_scaled(int divisor) {
  UNOConfig u = uno_table4();
  u.hidden = std::max(1, u.hidden / divisor);
  for (int &c : u.out_channels) c = std::max(1, c / divisor);
  u.lift_channels = std::max(1, u.lift_channels / divisor);
  u.proj_channels = std::max(1, u.proj_channels / divisor);
  return u;
}

inline FNOConfig fno_width_scaled(int divisor) {
  FNOConfig f = fno_table4();
  f.width = std::max(1, f.width / divisor);
  f.lift_channels = std::max(1, f.lift_channels / divisor);
  f.proj_channels = std::max(1, f.proj_channels / divisor);
  return f;
}

// ---------------------------------------------------------------------------
// Model

class OperatorModel {
public:
  explicit OperatorModel(ModelConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    std::mt19937_64 rng(cfg_.seed);
    const int cin = cfg_.input_channels();
    if (cfg_.kind == ModelKind::FNO) {
      const auto &f = cfg_.fno;
      add_linear("lift.0", cin, f.lift_channels, true, rng);
      add_linear("lift.1", f.lift_channels, f.width, true, rng);
      for (int l = 0; l < f.n_layers; ++l) {
        add_spectral(block(l) + ".spectral", f.width, f.width, f.modes, rng);
        add_linear(block(l) + ".skip", f.width, f.width, true, rng);
      }
      add_linear("proj.0", f.width, f.proj_channels, true, rng);
      add_linear("proj.1", f.proj_channels, cfg_.n_out, true, rng);
    } else {
      const auto &u = cfg_.uno;
      add_linear("lift.0", cin, u.lift_channels, true, rng);
      add_linear("lift.1", u.lift_channels, u.hidden, true, rng);
      int prev = u.hidden;
      for (std::size_t l = 0; l < u.out_channels.size(); ++l) {
        const int li = static_cast<int>(l);
        int in_ch = prev;
        if (const int e = skip_source(li); e >= 0) {
          const int ce = u.out_channels[e];
          if (u.concat_skips) {
            add_linear("hskip" + std::to_string(e), ce, ce, false, rng);
            in_ch += ce;
          } else {
            add_linear("hskip" + std::to_string(e), ce, prev, false, rng);
          }
        }
        add_spectral(block(li) + ".spectral", in_ch, u.out_channels[l], u.modes[l], rng);
        add_linear(block(li) + ".skip", in_ch, u.out_channels[l], true, rng);
        prev = u.out_channels[l];
      }
      add_linear("proj.0", prev, u.proj_channels, true, rng);
      add_linear("proj.1", u.proj_channels, cfg_.n_out, true, rng);
    }
  }

  const ModelConfig &config() const { return cfg_; }
  nn::ParamStore &params() { return params_; }
  const nn::ParamStore &params() const { return params_; }
  std::size_t parameter_count() const { return params_.total_count(); }

  /// x: (batch, n_in, h, w) -> (batch, n_out, h, w).
  nn::TensorPtr forward(nn::Tape *tape, const nn::TensorPtr &x) {
    if (x->shape.c != cfg_.n_in)
      throw ShapeError("model expects " + std::to_string(cfg_.n_in) + " input frames, got " +
                       std::to_string(x->shape.c));
    auto v = cfg_.coord_channels ? nn::concat_channels(tape, x, coords(x->shape)) : x;
    v = linear(tape, "lift.0", v);
    v = nn::gelu(tape, v);
    v = linear(tape, "lift.1", v);
    v = cfg_.kind == ModelKind::FNO ? fno_body(tape, v) : uno_body(tape, v);
    v = linear(tape, "proj.0", v);
    v = nn::gelu(tape, v);
    return linear(tape, "proj.1", v);
  }

  /// Per-layer output resolution for an h x w input (UNO); errors name the layer.
  std::vector<std::pair<int, int>> layer_resolutions(int h, int w) const {
    std::vector<std::pair<int, int>> out;
    if (cfg_.kind == ModelKind::FNO) return out;
    double ch = h, cw = w;
    for (std::size_t l = 0; l < cfg_.uno.scalings.size(); ++l) {
      ch *= cfg_.uno.scalings[l].sy;
      cw *= cfg_.uno.scalings[l].sx;
      const int ih = static_cast<int>(std::lround(ch)), iw = static_cast<int>(std::lround(cw));
      if (std::abs(ch - ih) > 1e-9 || std::abs(cw - iw) > 1e-9 || ih < 2 || iw < 2)
        throw ConfigError("UNO layer " + std::to_string(l) + ": input " + std::to_string(h) + "x" +
                          std::to_string(w) + " does not scale to an integer resolution (" +
                          std::to_string(ch) + "x" + std::to_string(cw) + ")");
      out.emplace_back(ih, iw);
    }
    return out;
  }

private:
  static std::string block(int l) { return "block" + std::to_string(l); }

  int skip_source(int layer) const {
    for (const auto &[e, d] : cfg_.uno.skip_pairs)
      if (d == layer) return e;
    return -1;
  }

  void add_linear(const std::string &name, int cin, int cout, bool bias, std::mt19937_64 &rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(cin));
    nn::init_uniform(params_.add(name + ".weight", {cout, cin}), bound, rng);
    if (bias) nn::init_uniform(params_.add(name + ".bias", {cout}), bound, rng);
  }

  void add_spectral(const std::string &name, int cin, int cout, const ModeSet &m, std::mt19937_64 &rng) {
    auto &p = params_.add(name + ".weight", {ops::mode_count(m), cout, cin, 2});
    // |w| <= 1/(cin*cout) for every complex entry.
    nn::init_uniform(p, 1.0 / (static_cast<double>(cin) * cout * std::sqrt(2.0)), rng);
    spectral_meta_[name + ".weight"] = {cout, m};
  }

  nn::TensorPtr linear(nn::Tape *tape, const std::string &name, const nn::TensorPtr &x) {
    auto &w = params_.get(name + ".weight");
    nn::Param *b = params_.contains(name + ".bias") ? &params_.get(name + ".bias") : nullptr;
    return nn::pointwise_linear(tape, x, w, b);
  }

  const ops::ModeMap &mode_map(int hin, int win, int hout, int wout, const ModeSet &m) {
    const auto key = std::make_tuple(hin, win, hout, wout, m.kmax_x, m.kmax_y);
    auto it = maps_.find(key);
    if (it == maps_.end()) it = maps_.emplace(key, ops::make_mode_map(hin, win, hout, wout, m)).first;
    return it->second;
  }

  const ops::ModeMap &resample_map(int hin, int win, int hout, int wout) {
    return mode_map(hin, win, hout, wout, {std::min(win, wout) / 2, std::min(hin, hout) / 2});
  }

  nn::TensorPtr coords(const nn::Shape4 &s) {
    auto c = nn::make_tensor({s.b, 2, s.h, s.w});
    for (int b = 0; b < s.b; ++b)
      for (int i = 0; i < s.h; ++i)
        for (int j = 0; j < s.w; ++j) {
          c->at(b, 0, i, j) = (j + 0.5) / s.w;
          c->at(b, 1, i, j) = (i + 0.5) / s.h;
        }
    return c;
  }

  /// sigma(K v + W v), with the resolution change applied inside K and by
  /// band-limited resampling on the W path. `activate` is false for the last
  /// block.
  nn::TensorPtr fourier_block(nn::Tape *tape, int l, const nn::TensorPtr &v, int hout, int wout,
                              const ModeSet &m, bool activate) {
    const std::string name = block(l);
    auto &w = params_.get(name + ".spectral.weight");
    const int cout = spectral_meta_.at(name + ".spectral.weight").first;
    const auto &mm = mode_map(v->shape.h, v->shape.w, hout, wout, m);
    auto k = ops::spectral_conv(tape, v, w, cout, mm);
    auto s = linear(tape, name + ".skip", v);
    s = ops::resample(tape, s, resample_map(v->shape.h, v->shape.w, hout, wout));
    auto y = nn::add(tape, k, s);
    return activate ? nn::gelu(tape, y) : y;
  }

  nn::TensorPtr fno_body(nn::Tape *tape, nn::TensorPtr v) {
    const auto &f = cfg_.fno;
    for (int l = 0; l < f.n_layers; ++l)
      v = fourier_block(tape, l, v, v->shape.h, v->shape.w, f.modes, l + 1 < f.n_layers);
    return v;
  }

  nn::TensorPtr uno_body(nn::Tape *tape, nn::TensorPtr v) {
    const auto &u = cfg_.uno;
    const auto res = layer_resolutions(v->shape.h, v->shape.w);
    const int L = static_cast<int>(u.out_channels.size());
    std::map<int, nn::TensorPtr> saved;
    for (int l = 0; l < L; ++l) {
      if (const int e = skip_source(l); e >= 0) {
        auto h = linear(tape, "hskip" + std::to_string(e), saved.at(e));
        h = ops::resample(tape, h, resample_map(h->shape.h, h->shape.w, v->shape.h, v->shape.w));
        v = u.concat_skips ? nn::concat_channels(tape, v, h) : nn::add(tape, v, h);
      }
      v = fourier_block(tape, l, v, res[l].first, res[l].second, u.modes[l], l + 1 < L);
      for (const auto &[e, d] : u.skip_pairs)
        if (e == l) saved[l] = v;
    }
    return v;
  }

  ModelConfig cfg_;
  nn::ParamStore params_;
  std::map<std::string, std::pair<int, ModeSet>> spectral_meta_;
  std::map<std::tuple<int, int, int, int, int, int>, ops::ModeMap> maps_;
};

inline OperatorModel build_model(ModelConfig cfg, int n_in, int n_out, std::uint64_t seed) {
  cfg.n_in = n_in;
  cfg.n_out = n_out;
  cfg.seed = seed;
  return OperatorModel(std::move(cfg));
}

// ---------------------------------------------------------------------------
// Field <-> tensor helpers and rollout

inline nn::TensorPtr stack_frames(const std::vector<const ScalarField2D *> &frames) {
  if (frames.empty()) throw ShapeError("cannot stack an empty frame list");
  const int h = frames.front()->ny(), w = frames.front()->nx();
  auto t = nn::make_tensor({1, static_cast<int>(frames.size()), h, w});
  for (std::size_t c = 0; c < frames.size(); ++c) {
    if (frames[c]->ny() != h || frames[c]->nx() != w) throw ShapeError("frames differ in resolution");
    std::copy(frames[c]->values().begin(), frames[c]->values().end(), t->plane(0, static_cast<int>(c)).begin());
  }
  return t;
}

inline ScalarField2D plane_to_field(const nn::Tensor4 &t, int b, int c, const Grid2D &g) {
  ScalarField2D f(g);
  const auto p = t.plane(b, c);
  std::copy(p.begin(), p.end(), f.data().begin());
  return f;
}

/// Autoregressive prediction: each window emits n_out frames and the input
/// slides to the newest n_in frames.
inline Trajectory rollout(OperatorModel &model, const Trajectory &history, int n_windows) {
  const int n_in = model.config().n_in, n_out = model.config().n_out;
  if (static_cast<int>(history.size()) != n_in)
    throw ShapeError("rollout history holds " + std::to_string(history.size()) + " frames, model expects " +
                     std::to_string(n_in));
  if (n_windows < 1) throw ConfigError("rollout needs at least one window");
  const Grid2D g = history.grid();
  std::vector<ScalarField2D> window(history.fields.begin(), history.fields.end());
  Trajectory out;
  out.dt = history.dt;
  out.t0 = history.t_end() + history.dt;
  for (int wdx = 0; wdx < n_windows; ++wdx) {
    std::vector<const ScalarField2D *> ptrs;
    for (const auto &f : window) ptrs.push_back(&f);
    auto y = model.forward(nullptr, stack_frames(ptrs));
    if (!y->all_finite()) throw RolloutError("model produced non-finite values", wdx);
    for (int c = 0; c < n_out; ++c) {
      out.fields.push_back(plane_to_field(*y, 0, c, g));
      window.push_back(out.fields.back());
    }
    window.erase(window.begin(), window.end() - n_in);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Config sidecar: one `key = value` per line.

namespace detail {

template <class T> std::string join(const std::vector<T> &v, const std::function<std::string(const T &)> &f) {
  std::string s;
  for (std::size_t k = 0; k < v.size(); ++k) s += (k ? ";" : "") + f(v[k]);
  return s;
}

inline std::vector<std::string> split(const std::string &s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(s);
  while (std::getline(is, cur, sep))
    if (!cur.empty()) out.push_back(cur);
  return out;
}


} // namespace detail

inline std::map<std::string, std::string> config_to_map(const ModelConfig &c) {
  std::map<std::string, std::string> m;
  m["kind"] = to_string(c.kind);
  m["n_in"] = std::to_string(c.n_in);
  m["n_out"] = std::to_string(c.n_out);
  m["seed"] = std::to_string(c.seed);
  m["coord_channels"] = c.coord_channels ? "1" : "0";
  if (c.kind == ModelKind::FNO) {
    m["width"] = std::to_string(c.fno.width);
    m["n_layers"] = std::to_string(c.fno.n_layers);
    m["modes"] = std::to_string(c.fno.modes.kmax_x) + "," + std::to_string(c.fno.modes.kmax_y);
    m["lift_channels"] = std::to_string(c.fno.lift_channels);
    m["proj_channels"] = std::to_string(c.fno.proj_channels);
  } else {
    const auto &u = c.uno;
    m["hidden"] = std::to_string(u.hidden);
    m["out_channels"] = detail::join<int>(u.out_channels, [](const int &v) { return std::to_string(v); });
    m["modes"] = detail::join<ModeSet>(u.modes, [](const ModeSet &v) {
      return std::to_string(v.kmax_x) + "," + std::to_string(v.kmax_y);
    });
    m["scalings"] = detail::join<Scaling>(u.scalings, [](const Scaling &v) {
      return format_double(v.sx) + "," + format_double(v.sy);
    });
    m["skip_pairs"] = detail::join<std::pair<int, int>>(u.skip_pairs, [](const std::pair<int, int> &v) {
      return std::to_string(v.first) + "," + std::to_string(v.second);
    });
    m["skip_mode"] = u.concat_skips ? "concat" : "add";
    m["lift_channels"] = std::to_string(u.lift_channels);
    m["proj_channels"] = std::to_string(u.proj_channels);
  }
  return m;
}

inline ModelConfig config_from_map(const std::map<std::string, std::string> &m) {
  auto get = [&](const std::string &k) -> const std::string & {
    auto it = m.find(k);
    if (it == m.end()) throw ConfigError("model config lacks key '" + k + "'");
    return it->second;
  };
  auto pair_of = [](const std::string &s) {
    const auto p = detail::split(s, ',');
    if (p.size() != 2) throw ConfigError("expected a pair, got '" + s + "'");
    return std::make_pair(p[0], p[1]);
  };
  ModelConfig c;
  try {
    c.kind = model_kind_from_string(get("kind"));
    c.n_in = std::stoi(get("n_in"));
    c.n_out = std::stoi(get("n_out"));
    c.seed = std::stoull(get("seed"));
    c.coord_channels = get("coord_channels") == "1";
    if (c.kind == ModelKind::FNO) {
      c.fno.width = std::stoi(get("width"));
      c.fno.n_layers = std::stoi(get("n_layers"));
      const auto [a, b] = pair_of(get("modes"));
      c.fno.modes = {std::stoi(a), std::stoi(b)};
      c.fno.lift_channels = std::stoi(get("lift_channels"));
      c.fno.proj_channels = std::stoi(get("proj_channels"));
    } else {
      auto &u = c.uno;
      u.hidden = std::stoi(get("hidden"));
      u.out_channels.clear();
      for (const auto &s : detail::split(get("out_channels"), ';')) u.out_channels.push_back(std::stoi(s));
      u.modes.clear();
      for (const auto &s : detail::split(get("modes"), ';')) {
        const auto [a, b] = pair_of(s);
        u.modes.push_back({std::stoi(a), std::stoi(b)});
      }
      u.scalings.clear();
      for (const auto &s : detail::split(get("scalings"), ';')) {
        const auto [a, b] = pair_of(s);
        u.scalings.push_back({std::stod(a), std::stod(b)});
      }
      u.skip_pairs.clear();
      for (const auto &s : detail::split(get("skip_pairs"), ';')) {
        const auto [a, b] = pair_of(s);
        u.skip_pairs.emplace_back(std::stoi(a), std::stoi(b));
      }
      u.concat_skips = get("skip_mode") != "add";
      u.lift_channels = std::stoi(get("lift_channels"));
      u.proj_channels = std::stoi(get("proj_channels"));
    }
  } catch (const std::invalid_argument &) {
    throw ConfigError("model config holds a malformed number");
  } catch (const std::out_of_range &) {
    throw ConfigError("model config holds an out-of-range number");
  }
  c.validate();
  return c;
}

inline void save_model(const std::string &checkpoint, const std::string &sidecar, const OperatorModel &m) {
  nn::save_checkpoint(checkpoint, m.params());
  write_kv(sidecar, config_to_map(m.config()));
}

inline OperatorModel load_model(const std::string &checkpoint, const std::string &sidecar) {
  OperatorModel m(config_from_map(read_kv(sidecar)));
  nn::load_checkpoint(checkpoint, m.params());
  return m;
}

} // namespace chno
