#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "medqa/model.hpp"

namespace medqa {

inline constexpr std::string_view kVariantRobertaBase = "mini-roberta-base";
inline constexpr std::string_view kVariantRobertaLarge = "mini-roberta-large";
inline constexpr std::string_view kVariantBertUncased = "mini-bert-uncased";
inline constexpr std::string_view kVariantBertLargeUncased = "mini-bert-large-uncased";

/// The four variant names, in the order they are usually reported.
std::span<const std::string_view> variant_names();
bool is_large_variant(std::string_view variant);

struct ModelConfig {
  std::size_t num_layers = 2;
  std::size_t num_heads = 4;
  std::size_t d_model = 64;
  std::size_t d_ff = 128;
  std::size_t vocab_size = 0;
  std::size_t max_len = 32;
  std::size_t num_labels = 2;
  double dropout = 0.1;
  std::string variant_name = std::string(kVariantRobertaBase);

  /// Throws ConfigError when an invariant is violated.
  void validate() const;

  /// Size preset for one of the four variants: base variants use 2 layers,
  /// 4 heads, width 64, FFN 128; large variants 4 layers, 8 heads, width 128, FFN 256.
  static ModelConfig preset(std::string_view variant, std::size_t vocab_size, std::size_t num_labels,
                            std::size_t max_len = 32);

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Dense matrices that LoRA can adapt.
enum class DenseTarget { Query, Key, Value, Output, FfnIn, FfnOut, Classifier };

std::string_view to_string(DenseTarget target);
std::optional<DenseTarget> parse_dense_target(std::string_view name);

/// Low-rank additive delta applied to one dense weight during forward:
/// y = x·W + b + scale · (x·Aᵀ)·Bᵀ.
struct LinearAdapter {
  std::size_t weight_index;
  Var a;
  Var b;
  double scale;
};

/// BERT-style encoder classifier: token plus learned absolute position
/// embeddings, post-norm residual blocks (attention, then GELU feed-forward),
/// and a linear head on the final hidden state at the [CLS] position.
class EncoderModel final : public TrainableModel {
 public:
  EncoderModel(ModelConfig config, std::vector<Parameter> params);

  const ModelConfig& config() const noexcept { return config_; }

  std::size_t num_labels() const override { return config_.num_labels; }
  std::size_t max_len() const override { return config_.max_len; }
  std::vector<Parameter*> parameters() override;
  std::vector<const Parameter*> parameters() const override;
  Var forward(Tape& tape, std::span<const Var> params, std::span<const Encoding> batch, Mode mode,
              Rng* rng) const override;
  std::unique_ptr<TrainableModel> clone() const override;

  std::span<Parameter> parameter_list() noexcept { return params_; }
  std::span<const Parameter> parameter_list() const noexcept { return params_; }
  Parameter* find(std::string_view name);
  const Parameter* find(std::string_view name) const;

  /// Forward pass with optional low-rank deltas on selected dense weights.
  Var forward_with_adapters(Tape& tape, std::span<const Var> params, std::span<const LinearAdapter> adapters,
                            std::span<const Encoding> batch, Mode mode, Rng* rng) const;

  /// Parameter names and shapes in storage order for a configuration.
  static std::vector<std::pair<std::string, Shape>> layout(const ModelConfig& config);
  /// Index into the parameter list of the weight matrix for (layer, target);
  /// layer is ignored for the classifier.
  static std::size_t weight_index(const ModelConfig& config, std::size_t layer, DenseTarget target);

 private:
  ModelConfig config_;
  std::vector<Parameter> params_;
};

/// Weights ~ Normal(0, 0.02) truncated at 2 sigma, biases and norm shifts 0,
/// norm scales 1. Values are rounded to single precision so checkpoints are lossless.
EncoderModel init_model(const ModelConfig& config, std::uint64_t seed);

}  // namespace medqa
