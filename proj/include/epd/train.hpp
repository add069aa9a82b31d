#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "epd/csv.hpp"
#include "epd/data/prepare.hpp"
#include "epd/data/record.hpp"
#include "epd/error.hpp"
#include "epd/nn.hpp"
#include "epd/ops.hpp"

namespace epd::train {

/// Per-epoch exponential decay: lr0 * gamma^epoch.
inline double schedule(double lr0, double gamma, int epoch) {
  if (epoch < 0) throw std::invalid_argument("schedule: epoch must be >= 0");
  return lr0 * std::pow(gamma, epoch);
}

inline bool is_grid_lr(double lr) { return lr == 1e-3 || lr == 1e-4 || lr == 1e-5; }
inline bool is_grid_gamma(double g) { return g == 0.5 || g == 0.9; }

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct TrainConfig {
  double lr0 = 1e-3;
  double gamma = 0.9;
  int epochs = 50;
  int batch_size = 32;
  std::uint64_t seed = 0;
  AdamOptions adam{};
  /// Permits lr0 and gamma outside the grid values.
  bool allow_off_grid = false;
  /// Threads for batch assembly and batch-parallel kernels. Results do not
  /// depend on it, but acceptance runs keep the default.
  int threads = 1;
};

inline void validate(const TrainConfig& c) {
  if (!c.allow_off_grid && !is_grid_lr(c.lr0)) {
    throw std::invalid_argument("lr " + csv::format_double(c.lr0) + " is not one of 1e-3, 1e-4, 1e-5");
  }
  if (!c.allow_off_grid && !is_grid_gamma(c.gamma)) {
    throw std::invalid_argument("gamma " + csv::format_double(c.gamma) + " is not one of 0.5, 0.9");
  }
  if (!(c.lr0 > 0) || !(c.gamma > 0 && c.gamma <= 1)) throw std::invalid_argument("need lr0 > 0 and 0 < gamma <= 1");
  if (c.epochs < 1) throw std::invalid_argument("epochs must be >= 1");
  if (c.batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  if (c.threads < 1) throw std::invalid_argument("threads must be >= 1");
}

struct EpochMetrics {
  int epoch = 0;
  double lr = 0;
  double train_l1_km = 0;
  double val_l1_km = 0;
  double wall_s = 0;
};

struct Metrics {
  std::vector<EpochMetrics> epochs;
  int best_epoch = -1;
  double best_val_l1_km = std::numeric_limits<double>::infinity();
  double test_l1_km = 0;
  double runtime_min = 0;
};

/// Training hit a non-finite loss or activation.
class TrainingDiverged : public NumericFailure {
 public:
  TrainingDiverged(int epoch, const std::string& detail)
      : NumericFailure("training diverged (" + detail + ")", "epoch " + std::to_string(epoch)), epoch_(epoch) {}

  [[nodiscard]] int epoch() const noexcept { return epoch_; }

 private:
  int epoch_;
};

/// Adam over a model's parameter list; moment buffers follow list order.
template <class T>
class Adam {
 public:
  Adam(const std::vector<nn::NamedTensor<T>>& params, AdamOptions opts) : opts_(opts) {
    for (const auto& p : params) {
      tensors_.push_back(p.tensor);
      m_.emplace_back(p.tensor.numel(), 0.0);
      v_.emplace_back(p.tensor.numel(), 0.0);
    }
  }

  /// Applies one update from the accumulated gradients, then clears them.
  void step(double lr) {
    ++t_;
    const double c1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(t_));
    for (std::size_t k = 0; k < tensors_.size(); ++k) {
      auto& p = tensors_[k];
      if (!p.has_grad()) continue;
      auto w = p.data();
      const auto g = p.grad();
      auto& m = m_[k];
      auto& v = v_[k];
      for (std::size_t i = 0; i < w.size(); ++i) {
        const double gi = g[i];
        m[i] = opts_.beta1 * m[i] + (1 - opts_.beta1) * gi;
        v[i] = opts_.beta2 * v[i] + (1 - opts_.beta2) * gi * gi;
        const double update = lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + opts_.eps);
        w[i] = static_cast<T>(w[i] - update);
      }
      p.zero_grad();
    }
  }

  [[nodiscard]] std::int64_t steps() const noexcept { return t_; }

 private:
  AdamOptions opts_;
  std::vector<Tensor<T>> tensors_;
  std::vector<std::vector<double>> m_, v_;
  std::int64_t t_ = 0;
};

/// Mean absolute error in the units of the inputs.
inline double l1(std::span<const double> pred, std::span<const double> target) {
  if (pred.size() != target.size()) throw std::invalid_argument("l1: size mismatch");
  if (pred.empty()) throw std::invalid_argument("l1: empty input");
  double s = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) s += std::abs(pred[i] - target[i]);
  return s / static_cast<double>(pred.size());
}

inline data::InputOptions input_options(const nn::ModelConfig& cfg) {
  return data::InputOptions{cfg.in_channels == 4, true};
}

/// Eval-mode predictions (km), in split order.
inline std::vector<double> predict(nn::Model<float>& model, std::span<const data::TraceRecord> split,
                                   int batch_size = 32, int threads = 1) {
  if (split.empty()) throw std::invalid_argument("predict: empty split");
  const auto opts = input_options(model.config());
  std::vector<std::size_t> idx(split.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::vector<double> out;
  out.reserve(split.size());
  ScopedIntraOpThreads scope(threads);
  for (std::size_t b = 0; b < idx.size(); b += static_cast<std::size_t>(batch_size)) {
    const auto n = std::min<std::size_t>(static_cast<std::size_t>(batch_size), idx.size() - b);
    const auto x = data::assemble_batch(split, std::span(idx).subspan(b, n), opts, threads);
    const auto y = model.predict(x);
    for (float v : y.data()) out.push_back(v);
  }
  return out;
}

inline std::vector<double> targets(std::span<const data::TraceRecord> split) {
  std::vector<double> t;
  t.reserve(split.size());
  for (const auto& r : split) t.push_back(r.meta.epicentral_km);
  return t;
}

/// Mean |prediction - epicentral distance| over the split, in km.
inline double evaluate(nn::Model<float>& model, std::span<const data::TraceRecord> split, int batch_size = 32,
                       int threads = 1) {
  if (split.empty()) throw std::invalid_argument("evaluate: empty split");
  return l1(predict(model, split, batch_size, threads), targets(split));
}

struct TrainResult {
  nn::Model<float> model;  // best-validation parameters
  Metrics metrics;
};

using EpochCallback = std::function<void(const EpochMetrics&)>;

/// Trains from a fresh model. Each epoch walks a seeded permutation of the
/// training split in mini-batches; the model with the lowest validation loss
/// is kept and scored on the test split.
inline TrainResult train(const nn::ModelConfig& model_cfg, const TrainConfig& cfg,
                         const data::Splits<data::TraceRecord>& splits, const EpochCallback& on_epoch = {}) {
  validate(cfg);
  nn::validate(model_cfg);
  if (splits.train.empty() || splits.val.empty() || splits.test.empty()) {
    throw std::invalid_argument("train: every split must be nonempty");
  }
  const auto opts = input_options(model_cfg);
  const auto start = std::chrono::steady_clock::now();
  ScopedIntraOpThreads scope(cfg.threads);

  auto model = nn::build_model<float>(model_cfg);
  auto best = model.clone();
  Adam<float> adam(model.parameters(), cfg.adam);
  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(splits.train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  Metrics metrics;
  const std::span<const data::TraceRecord> train_set(splits.train);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const double lr = schedule(cfg.lr0, cfg.gamma, epoch);
    for (std::size_t i = order.size(); i > 1; --i) {
      std::uniform_int_distribution<std::size_t> pick(0, i - 1);
      std::swap(order[i - 1], order[pick(rng)]);
    }

    double abs_sum = 0;
    try {
      for (std::size_t b = 0; b < order.size(); b += static_cast<std::size_t>(cfg.batch_size)) {
        const auto n = std::min<std::size_t>(static_cast<std::size_t>(cfg.batch_size), order.size() - b);
        const auto batch_idx = std::span<const std::size_t>(order).subspan(b, n);
        const auto x = data::assemble_batch(train_set, batch_idx, opts, cfg.threads);
        std::vector<float> y(n);
        for (std::size_t i = 0; i < n; ++i) y[i] = static_cast<float>(train_set[batch_idx[i]].meta.epicentral_km);
        const Tensor<float> target({n}, y);

        Tape<float> tape;
        const auto pred = model.forward(tape, x, nn::Mode::Train);
        auto loss = l1_loss(tape, pred, target);
        if (!std::isfinite(loss.item())) throw NumericFailure("non-finite loss", "batch " + std::to_string(b));
        abs_sum += static_cast<double>(loss.item()) * static_cast<double>(n);
        tape.backward(loss);
        adam.step(lr);
      }
    } catch (const TrainingDiverged&) {
      throw;
    } catch (const NumericFailure& e) {
      throw TrainingDiverged(epoch, e.what());
    }

    EpochMetrics em;
    em.epoch = epoch;
    em.lr = lr;
    em.train_l1_km = abs_sum / static_cast<double>(order.size());
    try {
      em.val_l1_km = evaluate(model, splits.val, cfg.batch_size, cfg.threads);
    } catch (const NumericFailure& e) {
      throw TrainingDiverged(epoch, e.what());
    }
    if (!std::isfinite(em.val_l1_km)) throw TrainingDiverged(epoch, "non-finite validation loss");
    em.wall_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (em.val_l1_km < metrics.best_val_l1_km) {
      metrics.best_val_l1_km = em.val_l1_km;
      metrics.best_epoch = epoch;
      best.copy_from(model);
    }
    metrics.epochs.push_back(em);
    if (on_epoch) on_epoch(em);
  }

  metrics.test_l1_km = evaluate(best, splits.test, cfg.batch_size, cfg.threads);
  metrics.runtime_min = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count() / 60.0;
  return TrainResult{std::move(best), std::move(metrics)};
}

}  // namespace epd::train
