#pragma once

// Central-difference check of tape gradients. `build` runs the forward pass
// on the given tape (or null) and returns the output; the scalar probed is
// sum(seed * output) for a fixed random seed tensor.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "chno/nncore.hpp"

namespace gradcheck {

using chno::nn::Tape;
using chno::nn::TensorPtr;

struct Result {
  double max_rel = 0.0;
  std::size_t checked = 0;
};

inline double probe(const std::function<TensorPtr(Tape *)> &build, const std::vector<double> &seed) {
  const auto y = build(nullptr);
  double s = 0.0;
  for (std::size_t k = 0; k < seed.size(); ++k) s += seed[k] * y->values[k];
  return s;
}

/// Relative error measured against the largest analytic entry so tiny
/// components do not dominate.
inline Result check(const std::function<TensorPtr(Tape *)> &build, std::vector<std::vector<double> *> values,
                    std::vector<const std::vector<double> *> grads, unsigned rng_seed = 7, double h = 1e-6,
                    std::size_t max_per_array = 40) {
  std::mt19937_64 rng(rng_seed);
  std::normal_distribution<double> nd;
  Tape tape;
  const auto y = build(&tape);
  std::vector<double> seed(y->size());
  for (double &v : seed) v = nd(rng);
  tape.backward(y, &seed);

  Result r;
  for (std::size_t a = 0; a < values.size(); ++a) {
    auto &vals = *values[a];
    const auto &g = *grads[a];
    double scale = 1e-12;
    for (double v : g) scale = std::max(scale, std::abs(v));
    std::vector<std::size_t> idx(vals.size());
    for (std::size_t k = 0; k < idx.size(); ++k) idx[k] = k;
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(std::min(idx.size(), max_per_array));
    for (std::size_t k : idx) {
      const double v0 = vals[k];
      vals[k] = v0 + h;
      const double fp = probe(build, seed);
      vals[k] = v0 - h;
      const double fm = probe(build, seed);
      vals[k] = v0;
      const double fd = (fp - fm) / (2 * h);
      r.max_rel = std::max(r.max_rel, std::abs(fd - g[k]) / scale);
      ++r.checked;
    }
  }
  return r;
}

} // namespace gradcheck
