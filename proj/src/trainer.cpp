#include "medqa/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include "medqa/errors.hpp"

namespace medqa {

namespace {

constexpr std::size_t kEvalBatch = 64;

std::vector<Encoding> inputs_of(std::span<const LabeledExample> examples) {
  std::vector<Encoding> out;
  out.reserve(examples.size());
  for (const auto& e : examples) out.push_back(e.input);
  return out;
}

}  // namespace

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("train config: epochs must be at least 1");
  if (batch_size < 1) throw ConfigError("train config: batch_size must be at least 1");
  if (!(learning_rate > 0.0)) throw ConfigError("train config: learning_rate must be positive");
  if (!(weight_decay >= 0.0)) throw ConfigError("train config: weight_decay must be non-negative");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
    throw ConfigError("train config: beta1 and beta2 must lie in [0, 1)");
  if (!(eps > 0.0)) throw ConfigError("train config: eps must be positive");
}

void adamw_step(std::span<Parameter* const> params, std::span<const Tensor* const> grads, AdamWState& state,
                const TrainConfig& config) {
  if (params.size() != grads.size()) throw UsageError("adamw_step: parameter and gradient counts differ");
  if (state.m.empty()) {
    for (const Parameter* p : params) {
      state.m.emplace_back(p->value.shape());
      state.v.emplace_back(p->value.shape());
    }
  }
  if (state.m.size() != params.size()) throw UsageError("adamw_step: optimizer state does not match parameters");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (state.m[i].shape() != params[i]->value.shape() || (grads[i] && grads[i]->shape() != params[i]->value.shape()))
      throw UsageError("adamw_step: shape mismatch for " + params[i]->name);
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(config.beta1, t);
  const double correction2 = 1.0 - std::pow(config.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter& p = *params[i];
    if (!p.trainable || !grads[i]) continue;
    auto value = p.value.data();
    const auto grad = grads[i]->data();
    auto m = state.m[i].data();
    auto v = state.v[i].data();
    for (std::size_t j = 0; j < value.size(); ++j) {
      m[j] = config.beta1 * m[j] + (1.0 - config.beta1) * grad[j];
      v[j] = config.beta2 * v[j] + (1.0 - config.beta2) * grad[j] * grad[j];
      const double m_hat = m[j] / correction1;
      const double v_hat = v[j] / correction2;
      const double updated =
          value[j] - config.learning_rate * (m_hat / (std::sqrt(v_hat) + config.eps) + config.weight_decay * value[j]);
      value[j] = static_cast<double>(static_cast<float>(updated));
    }
  }
}

double train_epoch(TrainableModel& model, std::span<const LabeledExample> train, const TrainConfig& config,
                   AdamWState& state, Rng& rng) {
  if (train.empty()) throw UsageError("train_epoch: empty training set");
  if (config.batch_size < 1) throw ConfigError("train config: batch_size must be at least 1");
  std::vector<std::size_t> order(train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  if (config.shuffle) rng.shuffle(std::span<std::size_t>(order));

  const auto params = model.parameters();
  double loss_total = 0.0;
  std::size_t batches = 0;
  for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
    const std::size_t end = std::min(order.size(), start + config.batch_size);
    std::vector<Encoding> inputs;
    std::vector<std::size_t> targets;
    for (std::size_t i = start; i < end; ++i) {
      inputs.push_back(train[order[i]].input);
      targets.push_back(train[order[i]].label);
    }
    Tape tape;
    const auto vars = bind_parameters(tape, model, true);
    const Var logits = model.forward(tape, vars, inputs, Mode::Train, &rng);
    const Var loss = tape.cross_entropy(logits, targets);
    const double loss_value = tape.value(loss).item();
    if (!std::isfinite(loss_value)) throw NumericError("training loss is not finite at batch " + std::to_string(batches));
    const Gradients grads = tape.backward(loss);
    std::vector<const Tensor*> grad_ptrs;
    for (const Var v : vars) grad_ptrs.push_back(grads.find(v));
    adamw_step(params, grad_ptrs, state, config);
    loss_total += loss_value;
    ++batches;
  }
  return loss_total / static_cast<double>(batches);
}

std::vector<std::size_t> predict(const TrainableModel& model, std::span<const Encoding> inputs) {
  std::vector<std::size_t> out;
  out.reserve(inputs.size());
  for (std::size_t start = 0; start < inputs.size(); start += kEvalBatch) {
    const auto chunk = inputs.subspan(start, std::min(kEvalBatch, inputs.size() - start));
    const Tensor logits = forward_logits(model, chunk);
    for (std::size_t r = 0; r < logits.dim(0); ++r) {
      std::size_t best = 0;
      for (std::size_t c = 1; c < logits.dim(1); ++c)
        if (logits.at(r, c) > logits.at(r, best)) best = c;
      out.push_back(best);
    }
  }
  return out;
}

double evaluation_loss(const TrainableModel& model, std::span<const LabeledExample> examples) {
  if (examples.empty()) throw UsageError("evaluation_loss: empty set");
  const auto inputs = inputs_of(examples);
  std::vector<std::size_t> targets;
  for (const auto& e : examples) targets.push_back(e.label);
  return cross_entropy(forward_logits(model, inputs), targets);
}

MetricSet evaluate_epoch(const TrainableModel& model, std::span<const LabeledExample> validation,
                         Averaging averaging) {
  if (validation.empty()) throw UsageError("evaluate_epoch: empty validation set");
  const auto preds = predict(model, inputs_of(validation));
  std::vector<std::size_t> golds;
  for (const auto& e : validation) golds.push_back(e.label);
  return compute_metrics(confusion_matrix(golds, preds, model.num_labels()), averaging);
}

std::vector<EpochMetrics> fit(TrainableModel& model, std::span<const LabeledExample> train,
                              std::span<const LabeledExample> validation, const TrainConfig& config,
                              const FitOptions& options) {
  config.validate();
  if (train.empty() || validation.empty()) throw UsageError("fit: training and validation sets must be non-empty");
  using Clock = std::chrono::steady_clock;
  const auto started = Clock::now();
  Rng rng(config.seed);
  AdamWState state;
  std::vector<EpochMetrics> history;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    EpochMetrics record;
    record.fold = options.fold;
    record.epoch = epoch;
    record.train_loss = train_epoch(model, train, config, state, rng);
    record.validation = evaluate_epoch(model, validation, options.averaging);
    record.wall_time_s = std::chrono::duration<double>(Clock::now() - started).count();
    if (!history.empty()) record.wall_time_s = std::max(record.wall_time_s, history.back().wall_time_s);
    history.push_back(record);
    if (options.on_epoch) options.on_epoch(history.back());
  }
  return history;
}

}  // namespace medqa
