#pragma once

// Minimal reverse-mode core: 4-axis tensors, an explicit tape of backward
// closures, a fixed layer vocabulary with hand-written adjoints, a named
// parameter store and Adam with cosine annealing.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <numbers>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "chno/error.hpp"
#include "chno/fields.hpp"

namespace chno::nn {

struct Shape4 {
  int b = 0, c = 0, h = 0, w = 0;
  std::size_t size() const { return static_cast<std::size_t>(b) * c * h * w; }
  std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
  friend bool operator==(const Shape4 &, const Shape4 &) = default;
};

inline std::string to_string(const Shape4 &s) {
  return "(" + std::to_string(s.b) + "," + std::to_string(s.c) + "," + std::to_string(s.h) + "," +
         std::to_string(s.w) + ")";
}

/// (batch, channel, height, width) array. `grad` is allocated lazily.
struct Tensor4 {
  Shape4 shape;
  std::vector<double> values;
  std::vector<double> grad;
  bool requires_grad = false;

  Tensor4() = default;
  explicit Tensor4(Shape4 s, double fill = 0.0) : shape(s), values(s.size(), fill) {}

  std::size_t size() const { return values.size(); }
  std::size_t offset(int b, int c) const {
    return (static_cast<std::size_t>(b) * shape.c + c) * shape.plane();
  }
  double &at(int b, int c, int i, int j) {
    return values[offset(b, c) + static_cast<std::size_t>(i) * shape.w + j];
  }
  double at(int b, int c, int i, int j) const {
    return values[offset(b, c) + static_cast<std::size_t>(i) * shape.w + j];
  }
  std::span<double> plane(int b, int c) { return {values.data() + offset(b, c), shape.plane()}; }
  std::span<const double> plane(int b, int c) const {
    return {values.data() + offset(b, c), shape.plane()};
  }
  std::vector<double> &ensure_grad() {
    if (grad.size() != values.size()) grad.assign(values.size(), 0.0);
    return grad;
  }
  bool all_finite() const {
    for (double v : values)
      if (!std::isfinite(v)) return false;
    return true;
  }
};

using TensorPtr = std::shared_ptr<Tensor4>;

inline TensorPtr make_tensor(Shape4 s, double fill = 0.0) { return std::make_shared<Tensor4>(s, fill); }

/// Records backward closures in execution order; backward() replays them in
/// reverse. A null tape pointer means inference: nothing is recorded.
class Tape {
public:
  void record(std::function<void()> fn) { ops_.push_back(std::move(fn)); }

  /// Seeds d(loss)/d(out) with `seed` (or ones) and propagates.
  void backward(const TensorPtr &out, const std::vector<double> *seed = nullptr) {
    auto &g = out->ensure_grad();
    if (seed) {
      if (seed->size() != g.size()) throw ShapeError("backward seed size mismatch");
      for (std::size_t k = 0; k < g.size(); ++k) g[k] += (*seed)[k];
    } else {
      for (double &v : g) v += 1.0;
    }
    run();
  }

  /// Propagates from gradients already placed on the graph outputs.
  void run() {
    for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)();
    ops_.clear();
  }

  std::size_t size() const { return ops_.size(); }
  void clear() { ops_.clear(); }

private:
  std::vector<std::function<void()>> ops_;
};

inline TensorPtr output_like(Tape *tape, Shape4 s) {
  auto t = make_tensor(s);
  t->requires_grad = tape != nullptr;
  return t;
}

// ---------------------------------------------------------------------------
// Parameters

struct Param {
  std::vector<int> shape;
  std::vector<double> values, grad, m, v;

  std::size_t size() const { return values.size(); }
};

/// Ordered by name, so iteration (and hence every update and checkpoint) has a
/// deterministic order.
class ParamStore {
public:
  Param &add(const std::string &name, std::vector<int> shape) {
    if (entries_.count(name)) throw ConfigError("duplicate parameter name '" + name + "'");
    std::size_t n = 1;
    for (int d : shape) {
      if (d <= 0) throw ConfigError("parameter '" + name + "' has a non-positive dimension");
      n *= static_cast<std::size_t>(d);
    }
    Param &p = entries_[name];
    p.shape = std::move(shape);
    p.values.assign(n, 0.0);
    p.grad.assign(n, 0.0);
    p.m.assign(n, 0.0);
    p.v.assign(n, 0.0);
    return p;
  }

  Param &get(const std::string &name) {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw ConfigError("unknown parameter '" + name + "'");
    return it->second;
  }
  const Param &get(const std::string &name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw ConfigError("unknown parameter '" + name + "'");
    return it->second;
  }
  bool contains(const std::string &name) const { return entries_.count(name) != 0; }

  std::size_t total_count() const {
    std::size_t n = 0;
    for (const auto &[k, p] : entries_) n += p.size();
    return n;
  }

  void zero_grad() {
    for (auto &[k, p] : entries_) std::fill(p.grad.begin(), p.grad.end(), 0.0);
  }

  std::map<std::string, Param> &entries() { return entries_; }
  const std::map<std::string, Param> &entries() const { return entries_; }

  long step_count = 0;

private:
  std::map<std::string, Param> entries_;
};

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Bias-corrected Adam over all parameters in name order; zeroes gradients.
inline void adam_step(ParamStore &store, double lr, const AdamConfig &cfg = {}) {
  for (auto &[name, p] : store.entries())
    if (p.grad.size() != p.values.size())
      throw ConfigError("parameter '" + name + "' has no gradient");
  ++store.step_count;
  const double t = static_cast<double>(store.step_count);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  for (auto &[name, p] : store.entries()) {
    for (std::size_t k = 0; k < p.size(); ++k) {
      const double g = p.grad[k];
      p.m[k] = cfg.beta1 * p.m[k] + (1.0 - cfg.beta1) * g;
      p.v[k] = cfg.beta2 * p.v[k] + (1.0 - cfg.beta2) * g * g;
      const double mh = p.m[k] / c1;
      const double vh = p.v[k] / c2;
      p.values[k] -= lr * mh / (std::sqrt(vh) + cfg.eps);
      p.grad[k] = 0.0;
    }
  }
}

struct LRSchedule {
  double lr_init = 5e-4;
  double lr_final = 1e-5;
  int total_epochs = 200;

  void validate() const {
    if (!(lr_final > 0.0) || !(lr_init >= lr_final))
      throw ConfigError("learning-rate schedule needs lr_init >= lr_final > 0");
    if (total_epochs < 1) throw ConfigError("learning-rate schedule needs total_epochs >= 1");
  }
};

inline double cosine_lr(const LRSchedule &s, int epoch) {
  s.validate();
  if (epoch < 0 || epoch > s.total_epochs)
    throw ConfigError("epoch " + std::to_string(epoch) + " outside [0, " +
                      std::to_string(s.total_epochs) + "]");
  const double frac = static_cast<double>(epoch) / s.total_epochs;
  return s.lr_final + 0.5 * (s.lr_init - s.lr_final) * (1.0 + std::cos(std::numbers::pi * frac));
}

// ---------------------------------------------------------------------------
// Initialisation

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)), the usual default for 1x1 convs.
inline void init_uniform(Param &p, double bound, std::mt19937_64 &rng) {
  std::uniform_real_distribution<double> d(-bound, bound);
  for (double &v : p.values) v = d(rng);
}

// ---------------------------------------------------------------------------
// Layers

/// y[b,o,:] = sum_c W[o,c] x[b,c,:] + bias[o]. `bias` may be null.
inline TensorPtr pointwise_linear(Tape *tape, const TensorPtr &x, Param &weight, Param *bias) {
  if (weight.shape.size() != 2) throw ShapeError("pointwise weight must be a matrix");
  const int cout = weight.shape[0], cin = weight.shape[1];
  if (x->shape.c != cin)
    throw ShapeError("pointwise_linear expects " + std::to_string(cin) + " input channels, got " +
                     std::to_string(x->shape.c));
  if (bias && (bias->shape.size() != 1 || bias->shape[0] != cout))
    throw ShapeError("pointwise bias length must equal output channels");
  const Shape4 so{x->shape.b, cout, x->shape.h, x->shape.w};
  auto y = output_like(tape, so);
  const std::size_t P = so.plane();
  for (int b = 0; b < so.b; ++b)
    for (int o = 0; o < cout; ++o) {
      double *yo = y->values.data() + y->offset(b, o);
      const double bo = bias ? bias->values[o] : 0.0;
      for (std::size_t p = 0; p < P; ++p) yo[p] = bo;
      for (int c = 0; c < cin; ++c) {
        const double wv = weight.values[static_cast<std::size_t>(o) * cin + c];
        const double *xc = x->values.data() + x->offset(b, c);
        for (std::size_t p = 0; p < P; ++p) yo[p] += wv * xc[p];
      }
    }
  if (tape) {
    tape->record([x, y, &weight, bias, cin, cout, P]() {
      if (y->grad.empty()) return;
      const auto &gy = y->grad;
      const bool need_x = x->requires_grad;
      if (need_x) x->ensure_grad();
      for (int b = 0; b < y->shape.b; ++b)
        for (int o = 0; o < cout; ++o) {
          const double *go = gy.data() + y->offset(b, o);
          if (bias) {
            double s = 0.0;
            for (std::size_t p = 0; p < P; ++p) s += go[p];
            bias->grad[o] += s;
          }
          for (int c = 0; c < cin; ++c) {
            const double *xc = x->values.data() + x->offset(b, c);
            double s = 0.0;
            for (std::size_t p = 0; p < P; ++p) s += go[p] * xc[p];
            weight.grad[static_cast<std::size_t>(o) * cin + c] += s;
            if (need_x) {
              const double wv = weight.values[static_cast<std::size_t>(o) * cin + c];
              double *gx = x->grad.data() + x->offset(b, c);
              for (std::size_t p = 0; p < P; ++p) gx[p] += wv * go[p];
            }
          }
        }
    });
  }
  return y;
}

namespace detail {
inline constexpr double kGeluC = 0.7978845608028654; // sqrt(2/pi)
inline constexpr double kGeluA = 0.044715;
} // namespace detail

inline double gelu_scalar(double x) {
  return 0.5 * x * (1.0 + std::tanh(detail::kGeluC * (x + detail::kGeluA * x * x * x)));
}

inline double gelu_derivative(double x) {
  const double u = detail::kGeluC * (x + detail::kGeluA * x * x * x);
  const double t = std::tanh(u);
  return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * detail::kGeluC * (1.0 + 3.0 * detail::kGeluA * x * x);
}

/// GELU, tanh approximation.
inline TensorPtr gelu(Tape *tape, const TensorPtr &x) {
  auto y = output_like(tape, x->shape);
  for (std::size_t k = 0; k < x->size(); ++k) y->values[k] = gelu_scalar(x->values[k]);
  if (tape) {
    tape->record([x, y]() {
      if (y->grad.empty() || !x->requires_grad) return;
      auto &gx = x->ensure_grad();
      for (std::size_t k = 0; k < x->size(); ++k) gx[k] += gelu_derivative(x->values[k]) * y->grad[k];
    });
  }
  return y;
}

inline TensorPtr add(Tape *tape, const TensorPtr &a, const TensorPtr &b) {
  if (!(a->shape == b->shape))
    throw ShapeError("add: shapes differ " + to_string(a->shape) + " vs " + to_string(b->shape));
  auto y = output_like(tape, a->shape);
  for (std::size_t k = 0; k < a->size(); ++k) y->values[k] = a->values[k] + b->values[k];
  if (tape) {
    tape->record([a, b, y]() {
      if (y->grad.empty()) return;
      for (const auto &t : {a, b}) {
        if (!t->requires_grad) continue;
        auto &g = t->ensure_grad();
        for (std::size_t k = 0; k < g.size(); ++k) g[k] += y->grad[k];
      }
    });
  }
  return y;
}

inline TensorPtr concat_channels(Tape *tape, const TensorPtr &a, const TensorPtr &b) {
  if (a->shape.b != b->shape.b || a->shape.h != b->shape.h || a->shape.w != b->shape.w)
    throw ShapeError("concat_channels: shapes " + to_string(a->shape) + " and " +
                     to_string(b->shape) + " differ outside the channel axis");
  const Shape4 s{a->shape.b, a->shape.c + b->shape.c, a->shape.h, a->shape.w};
  auto y = output_like(tape, s);
  const std::size_t na = static_cast<std::size_t>(a->shape.c) * s.plane();
  const std::size_t nb = static_cast<std::size_t>(b->shape.c) * s.plane();
  for (int n = 0; n < s.b; ++n) {
    std::copy_n(a->values.data() + n * na, na, y->values.data() + n * (na + nb));
    std::copy_n(b->values.data() + n * nb, nb, y->values.data() + n * (na + nb) + na);
  }
  if (tape) {
    tape->record([a, b, y, na, nb]() {
      if (y->grad.empty()) return;
      for (int n = 0; n < y->shape.b; ++n) {
        const double *gy = y->grad.data() + n * (na + nb);
        if (a->requires_grad) {
          double *ga = a->ensure_grad().data() + n * na;
          for (std::size_t k = 0; k < na; ++k) ga[k] += gy[k];
        }
        if (b->requires_grad) {
          double *gb = b->ensure_grad().data() + n * nb;
          for (std::size_t k = 0; k < nb; ++k) gb[k] += gy[na + k];
        }
      }
    });
  }
  return y;
}

/// Channel-wise D4 action on square planes. Its adjoint is the inverse
/// permutation.
inline TensorPtr d4_transform(Tape *tape, const TensorPtr &x, const D4Element &g) {
  if (x->shape.h != x->shape.w)
    throw ShapeError("D4 action needs square planes, got " + to_string(x->shape));
  auto y = output_like(tape, x->shape);
  const int n = x->shape.h;
  const std::size_t P = x->shape.plane();
  const std::size_t planes = static_cast<std::size_t>(x->shape.b) * x->shape.c;
  for (std::size_t k = 0; k < planes; ++k)
    d4_apply_plane<double>(g, {x->values.data() + k * P, P}, {y->values.data() + k * P, P}, n);
  if (tape) {
    tape->record([x, y, g, n, P, planes]() {
      if (y->grad.empty() || !x->requires_grad) return;
      auto &gx = x->ensure_grad();
      std::vector<double> tmp(P);
      const D4Element inv = d4_inverse(g);
      for (std::size_t k = 0; k < planes; ++k) {
        d4_apply_plane<double>(inv, {y->grad.data() + k * P, P}, tmp, n);
        for (std::size_t p = 0; p < P; ++p) gx[k * P + p] += tmp[p];
      }
    });
  }
  return y;
}

// ---------------------------------------------------------------------------
// Checkpoints: "CHCK", u32 version, u64 entry count, u64 scalar count,
// i64 optimiser step, then per entry: u32 name length, name bytes, u32 rank,
// u32 dims, values, adam m, adam v (all f64, little-endian).

inline constexpr std::uint32_t kCheckpointVersion = 1;

inline void save_checkpoint(const std::string &path, const ParamStore &store) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path + " for writing");
  os.write("CHCK", 4);
  io::put_le<std::uint32_t>(os, kCheckpointVersion);
  io::put_le<std::uint64_t>(os, store.entries().size());
  io::put_le<std::uint64_t>(os, store.total_count());
  io::put_le<std::int64_t>(os, store.step_count);
  for (const auto &[name, p] : store.entries()) {
    io::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    io::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(p.shape.size()));
    for (int d : p.shape) io::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(d));
    for (const auto *arr : {&p.values, &p.m, &p.v})
      for (double v : *arr) io::put_le<double>(os, v);
  }
  if (!os) throw IoError("write failed for " + path);
}

/// Loads into a store whose parameter names and shapes must already match.
inline void load_checkpoint(const std::string &path, ParamStore &store) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw MissingFileError("cannot open checkpoint " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::string(magic, 4) != "CHCK") throw FormatError(path + ": bad checkpoint magic");
  const auto version = io::get_le<std::uint32_t>(is);
  if (version != kCheckpointVersion)
    throw VersionError(path + ": unsupported checkpoint version " + std::to_string(version));
  const auto n_entries = io::get_le<std::uint64_t>(is);
  const auto n_scalars = io::get_le<std::uint64_t>(is);
  if (n_entries != store.entries().size() || n_scalars != store.total_count())
    throw FormatError(path + ": checkpoint holds " + std::to_string(n_scalars) +
                      " parameters but the model has " + std::to_string(store.total_count()));
  store.step_count = io::get_le<std::int64_t>(is);
  for (std::uint64_t e = 0; e < n_entries; ++e) {
    const auto len = io::get_le<std::uint32_t>(is);
    std::string name(len, '\0');
    is.read(name.data(), len);
    Param &p = store.get(name);
    const auto rank = io::get_le<std::uint32_t>(is);
    std::vector<int> shape(rank);
    for (auto &d : shape) d = static_cast<int>(io::get_le<std::uint32_t>(is));
    if (shape != p.shape) throw FormatError(path + ": shape mismatch for parameter '" + name + "'");
    for (auto *arr : {&p.values, &p.m, &p.v})
      for (double &v : *arr) v = io::get_le<double>(is);
  }
}

} // namespace chno::nn
