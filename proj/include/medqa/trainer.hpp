#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "medqa/dataset.hpp"
#include "medqa/metrics.hpp"
#include "medqa/model.hpp"

namespace medqa {

/// Defaults are sized for the small from-scratch presets: with 3e-4 and
/// batches of 16 they take far more than 10 epochs to leave chance level.
struct TrainConfig {
  std::size_t epochs = 10;
  std::size_t batch_size = 8;
  double learning_rate = 1e-3;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t seed = 0;
  bool shuffle = true;

  void validate() const;  // throws ConfigError

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

/// Per-tensor first and second moment estimates plus the shared step count.
struct AdamWState {
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  std::uint64_t step = 0;
};

/// One decoupled-weight-decay Adam update:
///   m <- b1 m + (1-b1) g,  v <- b2 v + (1-b2) g^2,
///   p <- p - lr (m_hat / (sqrt(v_hat) + eps) + wd p)
/// with bias-corrected m_hat, v_hat. Frozen parameters and null gradients are
/// skipped. Updated values are rounded to single precision.
void adamw_step(std::span<Parameter* const> params, std::span<const Tensor* const> grads, AdamWState& state,
                const TrainConfig& config);

/// Seeded shuffle, one optimizer step per batch with dropout active.
/// Returns the mean per-batch loss; a non-finite loss throws NumericError.
double train_epoch(TrainableModel& model, std::span<const LabeledExample> train, const TrainConfig& config,
                   AdamWState& state, Rng& rng);

/// Argmax class per example (ties resolve to the lower id), evaluation mode.
std::vector<std::size_t> predict(const TrainableModel& model, std::span<const Encoding> inputs);

/// Mean cross-entropy in evaluation mode.
double evaluation_loss(const TrainableModel& model, std::span<const LabeledExample> examples);

MetricSet evaluate_epoch(const TrainableModel& model, std::span<const LabeledExample> validation,
                         Averaging averaging = Averaging::Macro);

struct EpochMetrics {
  std::size_t fold = 0;
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  MetricSet validation;
  double wall_time_s = 0.0;  // cumulative since the start of fit
};

struct FitOptions {
  std::size_t fold = 0;
  Averaging averaging = Averaging::Macro;
  /// Called after every epoch, in order.
  std::function<void(const EpochMetrics&)> on_epoch;
};

/// Trains for config.epochs epochs, evaluating on `validation` after each.
/// Wall time comes from a monotonic clock.
std::vector<EpochMetrics> fit(TrainableModel& model, std::span<const LabeledExample> train,
                              std::span<const LabeledExample> validation, const TrainConfig& config,
                              const FitOptions& options = {});

}  // namespace medqa
