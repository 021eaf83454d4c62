#include "medqa/lora.hpp"

#include <algorithm>

#include "medqa/errors.hpp"

namespace medqa {

namespace {

constexpr double kAdapterInitStddev = 0.02;

constexpr DenseTarget kLayerTargets[] = {DenseTarget::Query,  DenseTarget::Key,   DenseTarget::Value,
                                         DenseTarget::Output, DenseTarget::FfnIn, DenseTarget::FfnOut};

bool targets_contain(const LoraConfig& config, DenseTarget t) {
  return std::find(config.targets.begin(), config.targets.end(), t) != config.targets.end();
}

// Weight indices of the adapted matrices, in slot order.
std::vector<std::size_t> targeted_weights(const ModelConfig& model, const LoraConfig& config) {
  std::vector<std::size_t> out;
  for (std::size_t l = 0; l < model.num_layers; ++l)
    for (const auto t : kLayerTargets)
      if (targets_contain(config, t)) out.push_back(EncoderModel::weight_index(model, l, t));
  if (targets_contain(config, DenseTarget::Classifier))
    out.push_back(EncoderModel::weight_index(model, 0, DenseTarget::Classifier));
  return out;
}

std::string adapter_prefix(const std::string& weight_name) {
  const std::string suffix = ".weight";
  return weight_name.substr(0, weight_name.size() - suffix.size());
}

}  // namespace

void LoraConfig::validate(const ModelConfig& model) const {
  if (rank < 1) throw ConfigError("lora: rank must be at least 1");
  if (!(alpha > 0.0)) throw ConfigError("lora: alpha must be positive");
  if (targets.empty()) throw ConfigError("lora: no target matrices");
  const auto layout = EncoderModel::layout(model);
  for (const auto index : targeted_weights(model, *this)) {
    const auto& [name, shape] = layout[index];
    const std::size_t limit = std::min(shape[0], shape[1]);
    if (rank > limit)
      throw ConfigError("lora: rank " + std::to_string(rank) + " exceeds min(d_in, d_out) = " +
                        std::to_string(limit) + " of " + name);
  }
}

std::vector<std::pair<std::string, Shape>> LoraModel::adapter_layout(const ModelConfig& model,
                                                                     const LoraConfig& config) {
  const auto layout = EncoderModel::layout(model);
  std::vector<std::pair<std::string, Shape>> out;
  for (const auto index : targeted_weights(model, config)) {
    const auto& [name, shape] = layout[index];
    const std::string prefix = adapter_prefix(name);
    out.emplace_back(prefix + ".lora_a", Shape{config.rank, shape[0]});
    out.emplace_back(prefix + ".lora_b", Shape{shape[1], config.rank});
  }
  return out;
}

LoraModel::LoraModel(EncoderModel base, LoraConfig config, std::vector<Parameter> adapters)
    : base_(std::move(base)), config_(std::move(config)), adapters_(std::move(adapters)) {
  config_.validate(base_.config());
  const auto expected = adapter_layout(base_.config(), config_);
  if (expected.size() != adapters_.size())
    throw ConfigError("lora: expected " + std::to_string(expected.size()) + " adapter tensors, got " +
                      std::to_string(adapters_.size()));
  for (std::size_t i = 0; i < expected.size(); ++i) {
    if (adapters_[i].name != expected[i].first || adapters_[i].value.shape() != expected[i].second)
      throw ConfigError("lora: adapter #" + std::to_string(i) + " should be " + expected[i].first + " " +
                        shape_to_string(expected[i].second));
    adapters_[i].trainable = true;
  }
  const std::size_t head = EncoderModel::weight_index(base_.config(), 0, DenseTarget::Classifier);
  for (std::size_t i = 0; i < base_.parameter_list().size(); ++i)
    base_.parameter_list()[i].trainable = config_.train_classifier_head && (i == head || i == head + 1);
  const auto weights = targeted_weights(base_.config(), config_);
  for (std::size_t s = 0; s < weights.size(); ++s) slots_.push_back(Slot{weights[s], 2 * s, 2 * s + 1});
}

std::vector<Parameter*> LoraModel::parameters() {
  auto out = base_.parameters();
  for (auto& p : adapters_) out.push_back(&p);
  return out;
}

std::vector<const Parameter*> LoraModel::parameters() const {
  auto out = base_.parameters();
  for (const auto& p : adapters_) out.push_back(&p);
  return out;
}

std::unique_ptr<TrainableModel> LoraModel::clone() const { return std::make_unique<LoraModel>(*this); }

Var LoraModel::forward(Tape& tape, std::span<const Var> params, std::span<const Encoding> batch, Mode mode,
                       Rng* rng) const {
  const std::size_t base_count = base_.parameter_list().size();
  if (params.size() != base_count + adapters_.size())
    throw UsageError("lora forward: parameter bindings do not cover the model");
  std::vector<LinearAdapter> bound;
  for (const auto& slot : slots_)
    bound.push_back(LinearAdapter{slot.weight_index, params[base_count + slot.a_index],
                                  params[base_count + slot.b_index], config_.scale()});
  return base_.forward_with_adapters(tape, params.first(base_count), bound, batch, mode, rng);
}

LoraModel wrap_with_lora(const EncoderModel& model, const LoraConfig& config, std::uint64_t seed) {
  config.validate(model.config());
  Rng rng(seed);
  std::vector<Parameter> adapters;
  for (auto& [name, shape] : LoraModel::adapter_layout(model.config(), config)) {
    Tensor value(shape);
    if (name.ends_with(".lora_a"))
      for (auto& v : value.data())
        v = static_cast<double>(static_cast<float>(rng.truncated_normal(kAdapterInitStddev)));
    adapters.push_back(Parameter{std::move(name), std::move(value), true});
  }
  return LoraModel(model, config, std::move(adapters));
}

Var lora_linear_forward(Tape& tape, Var x, Var w, Var a, Var b, double alpha, std::size_t rank) {
  if (rank == 0) throw ConfigError("lora: rank must be at least 1");
  const Tensor& wv = tape.value(w);
  const Tensor& av = tape.value(a);
  const Tensor& bv = tape.value(b);
  if (wv.rank() != 2 || av.rank() != 2 || bv.rank() != 2 || av.dim(0) != rank || bv.dim(1) != rank ||
      av.dim(1) != wv.dim(0) || bv.dim(0) != wv.dim(1))
    throw DimensionError("lora_linear_forward: W " + shape_to_string(wv.shape()) + ", A " +
                         shape_to_string(av.shape()) + ", B " + shape_to_string(bv.shape()) + " inconsistent");
  const Var low = tape.matmul_transposed(tape.matmul_transposed(x, a), b);
  return tape.add(tape.matmul(x, w), tape.scale(low, alpha / static_cast<double>(rank)));
}

EncoderModel merge_lora(const LoraModel& model) {
  std::vector<Parameter> params(model.base().parameter_list().begin(), model.base().parameter_list().end());
  const double scale = model.lora_config().scale();
  const std::size_t r = model.lora_config().rank;
  for (const auto& slot : model.slots()) {
    Tensor& w = params[slot.weight_index].value;
    const Tensor& a = model.adapters()[slot.a_index].value;
    const Tensor& b = model.adapters()[slot.b_index].value;
    const std::size_t d_in = w.dim(0), d_out = w.dim(1);
    for (std::size_t i = 0; i < d_in; ++i)
      for (std::size_t j = 0; j < d_out; ++j) {
        double delta = 0.0;
        for (std::size_t t = 0; t < r; ++t) delta += a.at(t, i) * b.at(j, t);
        w.at(i, j) = static_cast<double>(static_cast<float>(w.at(i, j) + scale * delta));
      }
  }
  for (auto& p : params) p.trainable = true;
  return EncoderModel(model.base().config(), std::move(params));
}

std::size_t lora_trainable_count(const LoraModel& model) {
  std::size_t total = 0;
  const auto layout = EncoderModel::layout(model.base().config());
  for (const auto& slot : model.slots()) {
    const auto& shape = layout[slot.weight_index].second;
    total += model.lora_config().rank * (shape[0] + shape[1]);
  }
  if (model.lora_config().train_classifier_head) {
    const std::size_t head = EncoderModel::weight_index(model.base().config(), 0, DenseTarget::Classifier);
    total += layout[head].second[0] * layout[head].second[1] + layout[head + 1].second[0];
  }
  return total;
}

}  // namespace medqa
