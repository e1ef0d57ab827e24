#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "resprop/dataset.hpp"
#include "resprop/models.hpp"

namespace resprop {

struct Schedule {
  double base_lr = 0.1;
  int constant_epochs = 100;
  int decay_interval = 10;  // <= 0: never decay
  double decay_factor = 2.0;
};

/// Constant through constant_epochs - 1, then divided by decay_factor at
/// constant_epochs and every decay_interval epochs after. Non-increasing in
/// the epoch.
double schedule_lr(const Schedule& schedule, int epoch);

struct OptimizerConfig {
  double momentum = 0.9;
  double l2 = 5e-4;
  bool l2_all_params = false;  // false: weight tensors only
};

template <typename T>
struct SgdState {
  std::vector<Tensor<T>> velocity;
};

/// Heavy-ball update: v <- m*v + g, w <- w - lr*v. Returns false when any
/// gradient is non-finite (the step is still applied; callers flag the run).
template <typename T>
bool sgd_step(std::span<ParamSlot<T>* const> params, SgdState<T>& state, double lr,
              double momentum) {
  if (momentum < 0.0 || momentum >= 1.0)
    throw std::invalid_argument("sgd_step: momentum must be in [0, 1)");
  if (state.velocity.empty()) {
    state.velocity.reserve(params.size());
    for (ParamSlot<T>* p : params) state.velocity.emplace_back(p->value.shape());
  }
  if (state.velocity.size() != params.size())
    throw std::invalid_argument("sgd_step: optimizer state does not match parameter list");
  bool finite = true;
  const T m = static_cast<T>(momentum);
  const T eta = static_cast<T>(lr);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor<T>& v = state.velocity[i];
    Tensor<T>& g = params[i]->grad;
    Tensor<T>& w = params[i]->value;
    if (!v.same_shape(g)) throw std::invalid_argument("sgd_step: shape mismatch");
    for (std::size_t j = 0; j < v.size(); ++j) {
      if (!std::isfinite(static_cast<double>(g[j]))) finite = false;
      v[j] = m * v[j] + g[j];
      w[j] -= eta * v[j];
    }
  }
  return finite;
}

struct RunResult {
  std::uint64_t seed = 0;
  double lr = 0.0;
  std::vector<double> train_loss;     // per-epoch mean cross-entropy (no L2 term)
  std::vector<double> eval_accuracy;  // per-epoch
  bool diverged = false;

  double final_loss() const {
    if (diverged || train_loss.empty()) return std::numeric_limits<double>::infinity();
    return train_loss.back();
  }
  double final_accuracy() const {
    if (diverged || eval_accuracy.empty()) return -std::numeric_limits<double>::infinity();
    return eval_accuracy.back();
  }
};

struct TrainProtocol {
  int epochs = 10;
  std::size_t batch = 128;
  std::size_t ghost = 0;  // normalization sub-batch; 0 = full batch
  Schedule schedule;      // base_lr is overridden by the run's lr
  OptimizerConfig opt;
};

/// Sets spec.in_features from the dataset layout (conv: channels, fc: flat
/// feature count) and validates the pairing.
void configure_spec_for_dataset(NetworkSpec& spec, const Dataset& data);

namespace detail {

template <typename T>
Tensor<T> gather_batch(const Tensor<double>& x, const Shape& feature_shape, bool as_image,
                       std::span<const std::size_t> idx) {
  const std::size_t f = x.size() / x.extent(0);
  Shape shape{idx.size()};
  if (as_image)
    for (std::size_t e : feature_shape) shape.push_back(e);
  else
    shape.push_back(f);
  Tensor<T> out(std::move(shape));
  T* dst = out.data();
  for (std::size_t i = 0; i < idx.size(); ++i) {
    const double* src = &x(idx[i], 0);
    for (std::size_t j = 0; j < f; ++j) dst[i * f + j] = static_cast<T>(src[j]);
  }
  return out;
}

template <typename T>
double eval_accuracy_pass(Network<T>& net, const Dataset& data, std::size_t batch) {
  if (data.eval_y.empty()) return std::numeric_limits<double>::quiet_NaN();
  const bool as_image = net.spec().family == Family::ConvRelu;
  Rng unused(0);
  std::size_t correct = 0;
  const std::size_t n = data.eval_y.size();
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < n; start += batch) {
    const std::size_t stop = std::min(n, start + batch);
    idx.resize(stop - start);
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = start + i;
    Tensor<T> x = gather_batch<T>(data.eval_x, data.feature_shape, as_image, idx);
    Tensor<T> logits = net.forward(x, Mode::Eval, unused);
    const std::size_t k = logits.extent(1);
    for (std::size_t i = 0; i < idx.size(); ++i) {
      std::size_t best = 0;
      for (std::size_t j = 1; j < k; ++j)
        if (logits(i, j) > logits(i, best)) best = j;
      if (static_cast<int>(best) == data.eval_y[idx[i]]) ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(n);
}

}  // namespace detail

/// One seeded training run. Batches are drawn with a seeded shuffle each
/// epoch (trailing partial batch dropped); normalization statistics are
/// evaluated over ghost sub-batches of protocol.ghost examples. A non-finite
/// loss or gradient truncates the run and sets the diverged flag. The result
/// is a pure function of (spec, data, lr, seed, protocol).
template <typename T>
RunResult run_training(NetworkSpec spec, const Dataset& data, double lr, std::uint64_t seed,
                       const TrainProtocol& protocol) {
  configure_spec_for_dataset(spec, data);
  const std::size_t batch = protocol.batch;
  if (batch == 0) throw std::invalid_argument("run_training: batch must be positive");
  if (data.train_y.size() < batch)
    throw std::invalid_argument("run_training: train split smaller than one batch");
  std::size_t ghost = protocol.ghost == 0 ? batch : std::min(protocol.ghost, batch);
  if (batch % ghost != 0)
    throw std::invalid_argument("run_training: batch not divisible by ghost size");
  spec.ghost_size = ghost;

  Rng rng(seed);
  Network<T> net = build_network<T>(spec, rng);
  std::vector<ParamSlot<T>*> params = net.params();
  SgdState<T> sgd;

  RunResult result;
  result.seed = seed;
  result.lr = lr;

  const bool as_image = spec.family == Family::ConvRelu;
  const std::size_t n = data.train_y.size();
  const std::size_t steps = n / batch;
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::vector<int> labels(batch);

  for (int epoch = 0; epoch < protocol.epochs && !result.diverged; ++epoch) {
    Schedule sched = protocol.schedule;
    sched.base_lr = lr;
    const double epoch_lr = schedule_lr(sched, epoch);
    shuffle(order, rng);
    double loss_sum = 0.0;
    std::size_t seen = 0;
    for (std::size_t step = 0; step < steps; ++step) {
      const std::span<const std::size_t> idx(order.data() + step * batch, batch);
      Tensor<T> x = detail::gather_batch<T>(data.train_x, data.feature_shape, as_image, idx);
      for (std::size_t i = 0; i < batch; ++i) labels[i] = data.train_y[idx[i]];

      net.zero_grad();
      Tensor<T> logits = net.forward(x, Mode::Train, rng);
      XentResult<T> xent = softmax_xent(logits, std::span<const int>(labels));
      if (!std::isfinite(xent.loss)) {
        result.diverged = true;
        break;
      }
      loss_sum += xent.loss * static_cast<double>(batch);
      seen += batch;
      net.backward(xent.grad_logits);
      l2_penalty(std::span<ParamSlot<T>* const>(params), protocol.opt.l2,
                 protocol.opt.l2_all_params);
      if (!sgd_step(std::span<ParamSlot<T>* const>(params), sgd, epoch_lr,
                    protocol.opt.momentum)) {
        result.diverged = true;
        break;
      }
    }
    if (result.diverged || seen == 0) break;
    result.train_loss.push_back(loss_sum / static_cast<double>(seen));
    result.eval_accuracy.push_back(detail::eval_accuracy_pass(net, data, batch));
  }
  return result;
}

enum class Metric { TrainLoss, EvalAccuracy };

inline std::string metric_name(Metric m) {
  return m == Metric::TrainLoss ? "train_loss" : "eval_accuracy";
}

struct LrCell {
  double lr = 0.0;
  int exponent = 0;
  std::size_t finite_runs = 0;
  std::size_t kept = 0;
  bool failed = true;  // fewer than keep finite runs
  double mean_loss = std::numeric_limits<double>::quiet_NaN();
  double std_loss = std::numeric_limits<double>::quiet_NaN();
  double mean_accuracy = std::numeric_limits<double>::quiet_NaN();
  double std_accuracy = std::numeric_limits<double>::quiet_NaN();
};

struct GridResult {
  std::vector<LrCell> cells;
  std::vector<RunResult> runs;  // raw runs, ordered by (lr, run index)
  Metric metric = Metric::TrainLoss;
  int best = -1;          // index into cells; -1 when every cell failed
  bool boundary = false;  // best lr sits on a grid edge
  bool failed = true;     // training failed at every lr

  double best_loss() const {
    return best < 0 ? std::numeric_limits<double>::infinity() : cells[best].mean_loss;
  }
  double best_accuracy() const {
    return best < 0 ? -std::numeric_limits<double>::infinity() : cells[best].mean_accuracy;
  }
  double best_lr() const { return best < 0 ? 0.0 : cells[best].lr; }
};

struct GridProtocol {
  int lr_exp_lo = -10;
  int lr_exp_hi = 0;
  int runs = 7;
  int keep = 5;
  Metric metric = Metric::TrainLoss;
  std::uint64_t base_seed = 0;
  TrainProtocol train;
};

/// Log-grid learning-rate search: runs `runs` seeded runs per lr (seeds
/// base_seed + index), keeps the best `keep` finite runs by the metric and
/// aggregates their mean/std. A cell with fewer than `keep` finite runs is
/// failed; diverged runs never enter the aggregate.
template <typename T>
GridResult lr_grid_search(const NetworkSpec& spec, const Dataset& data,
                          const GridProtocol& protocol) {
  if (protocol.runs < protocol.keep || protocol.keep < 1)
    throw std::invalid_argument("lr_grid_search: need runs >= keep >= 1");
  if (protocol.lr_exp_lo > protocol.lr_exp_hi)
    throw std::invalid_argument("lr_grid_search: empty grid");
  GridResult grid;
  grid.metric = protocol.metric;
  for (int e = protocol.lr_exp_lo; e <= protocol.lr_exp_hi; ++e) {
    LrCell cell;
    cell.exponent = e;
    cell.lr = std::pow(2.0, e);
    std::vector<const RunResult*> finite;
    for (int r = 0; r < protocol.runs; ++r) {
      grid.runs.push_back(
          run_training<T>(spec, data, cell.lr, protocol.base_seed + static_cast<std::uint64_t>(r),
                          protocol.train));
      const RunResult& run = grid.runs.back();
      if (!run.diverged && std::isfinite(run.final_loss())) finite.push_back(&run);
    }
    cell.finite_runs = finite.size();
    if (finite.size() >= static_cast<std::size_t>(protocol.keep)) {
      std::sort(finite.begin(), finite.end(), [&](const RunResult* a, const RunResult* b) {
        return protocol.metric == Metric::TrainLoss ? a->final_loss() < b->final_loss()
                                                    : a->final_accuracy() > b->final_accuracy();
      });
      finite.resize(static_cast<std::size_t>(protocol.keep));
      cell.kept = finite.size();
      auto mean_std = [&](auto value) {
        double sum = 0.0;
        for (const RunResult* r : finite) sum += value(*r);
        const double mean = sum / static_cast<double>(finite.size());
        double sq = 0.0;
        for (const RunResult* r : finite) sq += (value(*r) - mean) * (value(*r) - mean);
        const double std_dev =
            finite.size() > 1 ? std::sqrt(sq / static_cast<double>(finite.size() - 1)) : 0.0;
        return std::pair<double, double>(mean, std_dev);
      };
      std::tie(cell.mean_loss, cell.std_loss) =
          mean_std([](const RunResult& r) { return r.final_loss(); });
      std::tie(cell.mean_accuracy, cell.std_accuracy) =
          mean_std([](const RunResult& r) { return r.final_accuracy(); });
      cell.failed = false;
    }
    grid.cells.push_back(cell);
  }
  for (std::size_t i = 0; i < grid.cells.size(); ++i) {
    const LrCell& cell = grid.cells[i];
    if (cell.failed) continue;
    const bool better =
        grid.best < 0 ||
        (protocol.metric == Metric::TrainLoss
             ? cell.mean_loss < grid.cells[grid.best].mean_loss
             : cell.mean_accuracy > grid.cells[grid.best].mean_accuracy);
    if (better) grid.best = static_cast<int>(i);
  }
  grid.failed = grid.best < 0;
  grid.boundary =
      grid.best == 0 || (grid.best >= 0 && grid.best + 1 == static_cast<int>(grid.cells.size()));
  return grid;
}

struct GhostPolicy {
  bool full_batch = false;
  std::size_t size = 64;  // fixed ghost size when full_batch is false
};

struct SweepCell {
  std::string variant;
  std::size_t depth = 0;
  std::size_t batch = 0;
  GridResult grid;
  std::string note;
};

/// Cartesian product of depths x variants through lr_grid_search.
template <typename T>
std::vector<SweepCell> depth_sweep(const NetworkSpec& base, const Dataset& data,
                                   const std::vector<std::size_t>& depths,
                                   const std::vector<BlockVariant>& variants,
                                   const GridProtocol& protocol) {
  std::vector<SweepCell> cells;
  for (const BlockVariant& variant : variants) {
    for (std::size_t depth : depths) {
      NetworkSpec spec = base;
      spec.variant = variant;
      spec.depth = depth;
      SweepCell cell;
      cell.variant = variant_name(variant);
      cell.depth = depth;
      cell.batch = protocol.train.batch;
      try {
        cell.grid = lr_grid_search<T>(spec, data, protocol);
      } catch (const std::exception& e) {
        cell.note = e.what();
        cell.grid.metric = protocol.metric;
      }
      cells.push_back(std::move(cell));
    }
  }
  return cells;
}

/// Grid search per (batch size, variant) under the given normalization ghost
/// policy. A single-example full-batch cell runs normalization per example
/// (instance statistics) and is annotated, not rejected.
template <typename T>
std::vector<SweepCell> batch_sweep(const NetworkSpec& base, const Dataset& data,
                                   const std::vector<std::size_t>& batch_sizes,
                                   const std::vector<BlockVariant>& variants,
                                   const GhostPolicy& ghost, const GridProtocol& protocol) {
  std::vector<SweepCell> cells;
  for (const BlockVariant& variant : variants) {
    for (std::size_t batch : batch_sizes) {
      NetworkSpec spec = base;
      spec.variant = variant;
      GridProtocol cell_protocol = protocol;
      cell_protocol.train.batch = batch;
      std::string note;
      if (ghost.full_batch) {
        cell_protocol.train.ghost = 0;
        if (batch == 1) note = "instance-norm";
      } else {
        cell_protocol.train.ghost = std::min(ghost.size, batch);
        if (ghost.size > batch) note = "ghost=batch";
      }
      SweepCell cell;
      cell.variant = variant_name(variant);
      cell.depth = spec.depth;
      cell.batch = batch;
      cell.note = note;
      try {
        cell.grid = lr_grid_search<T>(spec, data, cell_protocol);
      } catch (const std::exception& e) {
        cell.note = note.empty() ? e.what() : note + "; " + e.what();
        cell.grid.metric = protocol.metric;
      }
      cells.push_back(std::move(cell));
    }
  }
  return cells;
}

std::string run_result_csv(const RunResult& run);
std::string sweep_runs_csv(const std::vector<SweepCell>& cells);
std::string sweep_grid_csv(const std::vector<SweepCell>& cells);
std::string sweep_best_csv(const std::vector<SweepCell>& cells);

}  // namespace resprop
