#pragma once

// Losses, the equivariance penalty and the epoch loop.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <iomanip>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "chno/datasets.hpp"
#include "chno/nncore.hpp"
#include "chno/operators.hpp"
#include "chno/spectral.hpp"

namespace chno {

enum class DataLoss { L2, H1 };

inline const char *to_string(DataLoss d) { return d == DataLoss::L2 ? "l2" : "h1"; }

inline DataLoss data_loss_from_string(const std::string &s) {
  if (s == "l2") return DataLoss::L2;
  if (s == "h1") return DataLoss::H1;
  throw ConfigError("unknown data loss '" + s + "' (expected l2|h1)");
}

struct LossConfig {
  DataLoss data_loss = DataLoss::L2;
  double eq_weight = 1.0;
  std::vector<D4Element> eq_elements = [] {
    const auto all = d4_elements();
    return std::vector<D4Element>(all.begin(), all.end());
  }();
  int eq_sample = 0; // > 0: that many elements drawn per batch instead of all

  void validate() const {
    if (!(eq_weight >= 0.0)) throw ConfigError("eq_weight must be non-negative");
    if (eq_weight > 0.0 && eq_elements.empty()) throw ConfigError("eq_elements must be non-empty");
    if (eq_sample < 0 || eq_sample > static_cast<int>(eq_elements.size()))
      throw ConfigError("eq_sample must lie in [0, |eq_elements|]");
  }
};

struct TrainConfig {
  int epochs = 200;
  int batch_size = 16;
  int n_in = 5;
  int n_out = 3;
  nn::LRSchedule lr_schedule;
  std::uint64_t seed = 0;

  void validate() const {
    if (epochs < 1) throw ConfigError("epochs must be at least 1");
    if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
    if (n_in < 1 || n_out < 1) throw ConfigError("n_in and n_out must be positive");
    lr_schedule.validate();
  }
};

// ---------------------------------------------------------------------------
// Losses. Each returns a 1x1x1x1 tensor; `grid` supplies the cell area and
// the derivative basis. Values are averaged over batch and frames.

namespace detail {

inline nn::TensorPtr scalar(nn::Tape *tape, double v) {
  auto t = nn::output_like(tape, {1, 1, 1, 1});
  t->values[0] = v;
  return t;
}

inline void check_pair(const nn::TensorPtr &pred, const nn::TensorPtr &target, const Grid2D &grid) {
  if (!(pred->shape == target->shape))
    throw ShapeError("loss: prediction " + nn::to_string(pred->shape) + " vs target " +
                     nn::to_string(target->shape));
  if (pred->shape.h != grid.ny || pred->shape.w != grid.nx)
    throw ShapeError("loss: planes do not match the " + std::to_string(grid.ny) + "x" + std::to_string(grid.nx) +
                     " grid");
}

} // namespace detail

/// Cell-area-weighted squared L2 distance.
inline nn::TensorPtr loss_l2(nn::Tape *tape, const nn::TensorPtr &pred, const nn::TensorPtr &target,
                             const Grid2D &grid) {
  detail::check_pair(pred, target, grid);
  const double scale = grid.cell_area() / (static_cast<double>(pred->shape.b) * pred->shape.c);
  double s = 0.0;
  for (std::size_t k = 0; k < pred->size(); ++k) {
    const double d = pred->values[k] - target->values[k];
    s += d * d;
  }
  auto out = detail::scalar(tape, s * scale);
  if (tape) {
    tape->record([pred, target, out, scale]() {
      if (out->grad.empty() || !pred->requires_grad) return;
      auto &g = pred->ensure_grad();
      const double go = out->grad[0];
      for (std::size_t k = 0; k < g.size(); ++k) g[k] += 2.0 * scale * go * (pred->values[k] - target->values[k]);
    });
  }
  return out;
}

/// loss_l2 plus the squared L2 norm of the spectral gradient of the
/// difference. The gradient term equals -<e, lap e> (both bases), so its
/// adjoint is -2 lap e.
inline nn::TensorPtr loss_h1(nn::Tape *tape, const nn::TensorPtr &pred, const nn::TensorPtr &target,
                             const Grid2D &grid) {
  detail::check_pair(pred, target, grid);
  const double scale = grid.cell_area() / (static_cast<double>(pred->shape.b) * pred->shape.c);
  const std::size_t P = pred->shape.plane();
  const std::size_t planes = static_cast<std::size_t>(pred->shape.b) * pred->shape.c;
  double s = 0.0;
  std::vector<double> adj(pred->size()); // 2 (e - lap e), per unit scale
  for (std::size_t k = 0; k < planes; ++k) {
    ScalarField2D e(grid);
    for (std::size_t p = 0; p < P; ++p) e[p] = pred->values[k * P + p] - target->values[k * P + p];
    const auto [gx, gy] = gradient(e);
    const auto lap = laplacian(e);
    for (std::size_t p = 0; p < P; ++p) {
      s += e[p] * e[p] + gx[p] * gx[p] + gy[p] * gy[p];
      adj[k * P + p] = 2.0 * (e[p] - lap[p]);
    }
  }
  auto out = detail::scalar(tape, s * scale);
  if (tape) {
    tape->record([pred, out, scale, adj = std::move(adj)]() {
      if (out->grad.empty() || !pred->requires_grad) return;
      auto &g = pred->ensure_grad();
      const double go = out->grad[0];
      for (std::size_t k = 0; k < g.size(); ++k) g[k] += scale * go * adj[k];
    });
  }
  return out;
}

inline nn::TensorPtr data_loss(nn::Tape *tape, DataLoss kind, const nn::TensorPtr &pred,
                               const nn::TensorPtr &target, const Grid2D &grid) {
  return kind == DataLoss::L2 ? loss_l2(tape, pred, target, grid) : loss_h1(tape, pred, target, grid);
}

/// Weighted sum of scalar tensors.
inline nn::TensorPtr weighted_sum(nn::Tape *tape, const std::vector<nn::TensorPtr> &terms,
                                  const std::vector<double> &weights) {
  double s = 0.0;
  for (std::size_t k = 0; k < terms.size(); ++k) s += weights[k] * terms[k]->values[0];
  auto out = detail::scalar(tape, s);
  if (tape) {
    tape->record([terms, weights, out]() {
      if (out->grad.empty()) return;
      for (std::size_t k = 0; k < terms.size(); ++k)
        if (terms[k]->requires_grad) terms[k]->ensure_grad()[0] += weights[k] * out->grad[0];
    });
  }
  return out;
}

/// sum_g loss_l2(g^-1 model(g x), target). `reuse` optionally carries
/// model(x) so the identity element does not repeat the forward pass.
inline nn::TensorPtr loss_eq(nn::Tape *tape, OperatorModel &model, const nn::TensorPtr &input,
                             const nn::TensorPtr &target, const std::vector<D4Element> &elements,
                             const Grid2D &grid, const nn::TensorPtr &reuse = nullptr) {
  if (input->shape.h != input->shape.w) throw ShapeError("equivariance loss needs square inputs");
  std::vector<nn::TensorPtr> terms;
  for (const auto &g : elements) {
    nn::TensorPtr back;
    if (g == D4Element::identity()) {
      back = reuse ? reuse : model.forward(tape, input);
    } else {
      auto y = model.forward(tape, nn::d4_transform(tape, input, g));
      back = nn::d4_transform(tape, y, d4_inverse(g));
    }
    terms.push_back(loss_l2(tape, back, target, grid));
  }
  return weighted_sum(tape, terms, std::vector<double>(terms.size(), 1.0));
}

struct LossTerms {
  nn::TensorPtr total;
  double data = 0.0;
  double eq = 0.0;
};

/// data + eq_weight * eq. `elements` overrides cfg.eq_elements (used for
/// per-batch subsets).
inline LossTerms total_loss(nn::Tape *tape, OperatorModel &model, const nn::TensorPtr &input,
                            const nn::TensorPtr &target, const LossConfig &cfg, const Grid2D &grid,
                            const std::vector<D4Element> *elements = nullptr) {
  auto pred = model.forward(tape, input);
  auto d = data_loss(tape, cfg.data_loss, pred, target, grid);
  LossTerms out;
  out.data = d->values[0];
  if (cfg.eq_weight == 0.0) {
    out.total = d;
    return out;
  }
  auto e = loss_eq(tape, model, input, target, elements ? *elements : cfg.eq_elements, grid, pred);
  out.eq = e->values[0];
  out.total = weighted_sum(tape, {d, e}, {1.0, cfg.eq_weight});
  return out;
}

// ---------------------------------------------------------------------------
// Batching

inline nn::TensorPtr stack_batch(const std::vector<const Sample *> &batch, bool targets) {
  const auto &first = targets ? batch.front()->target : batch.front()->input;
  const int c = static_cast<int>(first.size());
  const int h = first.front().ny(), w = first.front().nx();
  auto t = nn::make_tensor({static_cast<int>(batch.size()), c, h, w});
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const auto &frames = targets ? batch[b]->target : batch[b]->input;
    if (static_cast<int>(frames.size()) != c) throw ShapeError("samples in a batch differ in frame count");
    for (int k = 0; k < c; ++k) {
      if (frames[k].ny() != h || frames[k].nx() != w) throw ShapeError("samples in a batch differ in resolution");
      std::copy(frames[k].values().begin(), frames[k].values().end(),
                t->plane(static_cast<int>(b), k).begin());
    }
  }
  return t;
}

// ---------------------------------------------------------------------------
// Epoch loop

struct EpochRecord {
  int epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double eq_loss = 0.0;
};

struct TrainingReport {
  std::vector<EpochRecord> epochs;
  int best_epoch = -1;
  double best_val = 0.0;
};

inline void write_report_csv(const std::string &path, const TrainingReport &r) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open " + path + " for writing");
  os << "epoch,lr,train_loss,val_loss,eq_loss\n" << std::setprecision(17);
  for (const auto &e : r.epochs)
    os << e.epoch << ',' << e.lr << ',' << e.train_loss << ',' << e.val_loss << ',' << e.eq_loss << '\n';
}

/// Mean data loss over `samples` in batches, no gradients.
inline double evaluate_loss(OperatorModel &model, const std::vector<Sample> &samples, DataLoss kind,
                            const Grid2D &grid, int batch_size) {
  if (samples.empty()) return 0.0;
  double s = 0.0;
  for (std::size_t a = 0; a < samples.size(); a += batch_size) {
    std::vector<const Sample *> batch;
    for (std::size_t k = a; k < std::min(samples.size(), a + batch_size); ++k) batch.push_back(&samples[k]);
    const auto pred = model.forward(nullptr, stack_batch(batch, false));
    s += data_loss(nullptr, kind, pred, stack_batch(batch, true), grid)->values[0] * batch.size();
  }
  return s / static_cast<double>(samples.size());
}

using EpochCallback = std::function<void(const EpochRecord &)>;

/// Adam over shuffled mini-batches with a cosine learning rate per epoch.
/// The parameters with the lowest validation loss are restored at the end
/// (training loss decides when there is no validation data).
inline TrainingReport fit(OperatorModel &model, const std::vector<Sample> &train, const std::vector<Sample> &val,
                          const TrainConfig &tc, const LossConfig &lc, const Grid2D &grid,
                          const EpochCallback &on_epoch = {}) {
  tc.validate();
  lc.validate();
  if (train.empty()) throw ConfigError("training set is empty");
  if (model.config().n_in != tc.n_in || model.config().n_out != tc.n_out)
    throw ConfigError("model frame counts differ from the training config");
  for (const auto &s : train)
    if (static_cast<int>(s.input.size()) != tc.n_in || static_cast<int>(s.target.size()) != tc.n_out)
      throw ShapeError("training sample frame counts differ from n_in/n_out");

  nn::LRSchedule sched = tc.lr_schedule;
  sched.total_epochs = tc.epochs;
  std::mt19937_64 rng(tc.seed);
  std::vector<std::size_t> order(train.size());
  for (std::size_t k = 0; k < order.size(); ++k) order[k] = k;

  TrainingReport report;
  std::optional<nn::ParamStore> best;
  for (int epoch = 0; epoch < tc.epochs; ++epoch) {
    const double lr = nn::cosine_lr(sched, epoch);
    for (std::size_t k = order.size(); k > 1; --k) std::swap(order[k - 1], order[rng() % k]);
    double sum_loss = 0.0, sum_eq = 0.0;
    int batch_index = 0;
    for (std::size_t a = 0; a < order.size(); a += tc.batch_size, ++batch_index) {
      std::vector<const Sample *> batch;
      for (std::size_t k = a; k < std::min(order.size(), a + tc.batch_size); ++k) batch.push_back(&train[order[k]]);
      std::vector<D4Element> subset;
      const std::vector<D4Element> *elements = nullptr;
      if (lc.eq_weight > 0.0 && lc.eq_sample > 0) {
        subset = lc.eq_elements;
        for (std::size_t k = subset.size(); k > 1; --k) std::swap(subset[k - 1], subset[rng() % k]);
        subset.resize(lc.eq_sample);
        elements = &subset;
      }
      nn::Tape tape;
      const auto terms = total_loss(&tape, model, stack_batch(batch, false), stack_batch(batch, true), lc, grid,
                                    elements);
      if (!std::isfinite(terms.total->values[0])) throw DivergenceError(epoch, batch_index);
      tape.backward(terms.total);
      nn::adam_step(model.params(), lr);
      sum_loss += terms.data * batch.size();
      sum_eq += terms.eq * batch.size();
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = lr;
    rec.train_loss = sum_loss / static_cast<double>(train.size());
    rec.eq_loss = sum_eq / static_cast<double>(train.size());
    rec.val_loss = val.empty() ? rec.train_loss : evaluate_loss(model, val, lc.data_loss, grid, tc.batch_size);
    if (!std::isfinite(rec.val_loss)) throw DivergenceError(epoch, -1);
    if (report.best_epoch < 0 || rec.val_loss < report.best_val) {
      report.best_epoch = epoch;
      report.best_val = rec.val_loss;
      best = model.params();
    }
    report.epochs.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  if (best) model.params() = *best;
  return report;
}

} // namespace chno
