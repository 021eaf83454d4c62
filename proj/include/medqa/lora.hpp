#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "medqa/encoder.hpp"

namespace medqa {

struct LoraConfig {
  std::size_t rank = 4;
  double alpha = 8.0;
  std::vector<DenseTarget> targets = {DenseTarget::Query, DenseTarget::Value};
  bool train_classifier_head = true;

  double scale() const { return alpha / static_cast<double>(rank); }
  /// Checks rank and alpha, and that rank fits every targeted matrix of `model`.
  void validate(const ModelConfig& model) const;

  friend bool operator==(const LoraConfig&, const LoraConfig&) = default;
};

/// Frozen encoder plus trainable low-rank deltas. Each targeted weight
/// W[d_in×d_out] gets A[r×d_in] and B[d_out×r]; the effective weight is
/// W + (alpha/r)·(B·A)ᵀ in the row-vector convention used by the encoder.
class LoraModel final : public TrainableModel {
 public:
  struct Slot {
    std::size_t weight_index;  // into base().parameter_list()
    std::size_t a_index;       // into adapters()
    std::size_t b_index;
  };

  /// Adapters must match adapter_layout(); base parameters are re-flagged as frozen.
  LoraModel(EncoderModel base, LoraConfig config, std::vector<Parameter> adapters);

  const EncoderModel& base() const noexcept { return base_; }
  const LoraConfig& lora_config() const noexcept { return config_; }
  std::span<const Parameter> adapters() const noexcept { return adapters_; }
  std::span<Parameter> adapters() noexcept { return adapters_; }
  std::span<const Slot> slots() const noexcept { return slots_; }

  std::size_t num_labels() const override { return base_.num_labels(); }
  std::size_t max_len() const override { return base_.max_len(); }
  /// Base parameters first, then adapters in slot order (A before B).
  std::vector<Parameter*> parameters() override;
  std::vector<const Parameter*> parameters() const override;
  Var forward(Tape& tape, std::span<const Var> params, std::span<const Encoding> batch, Mode mode,
              Rng* rng) const override;
  std::unique_ptr<TrainableModel> clone() const override;

  /// Names and shapes of the adapter tensors for a base config and LoRA config.
  static std::vector<std::pair<std::string, Shape>> adapter_layout(const ModelConfig& model,
                                                                   const LoraConfig& config);

 private:
  EncoderModel base_;
  LoraConfig config_;
  std::vector<Parameter> adapters_;
  std::vector<Slot> slots_;
};

/// A ~ Normal(0, 0.02) truncated at 2 sigma, B = 0, so the wrapped model starts
/// out computing exactly what the base computes.
LoraModel wrap_with_lora(const EncoderModel& model, const LoraConfig& config, std::uint64_t seed);

/// y = x·W + (alpha/rank)·(x·Aᵀ)·Bᵀ recorded on the tape. W should be a leaf
/// without requires_grad so that only A and B receive gradients.
Var lora_linear_forward(Tape& tape, Var x, Var w, Var a, Var b, double alpha, std::size_t rank);

/// Plain encoder with every targeted weight replaced by W + (alpha/r)·(B·A)ᵀ.
EncoderModel merge_lora(const LoraModel& model);

/// Sum over targets of r·(d_in + d_out), plus the head when it is trainable.
std::size_t lora_trainable_count(const LoraModel& model);

}  // namespace medqa
