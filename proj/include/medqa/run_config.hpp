#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

#include "medqa/crossval.hpp"
#include "medqa/encoder.hpp"
#include "medqa/lora.hpp"
#include "medqa/trainer.hpp"

namespace medqa {

/// Everything a train or crossval run depends on. The JSON form is written to
/// config.json and can be fed back through --config to repeat the run.
struct RunConfig {
  std::string data;     // primary CSV
  std::string answers;  // secondary CSV, optional
  std::string variant = std::string(kVariantRobertaBase);
  std::optional<LoraConfig> lora;
  std::uint64_t seed = 0;

  std::size_t k = 5;
  bool stratified = true;
  FoldSelection selection = FoldSelection::FinalEpoch;
  Averaging averaging = Averaging::Macro;
  std::size_t jobs = 1;
  double split_ratio = 0.7;

  std::size_t max_len = 32;
  std::size_t min_freq = 1;
  std::size_t max_vocab = 30000;
  double dropout = 0.1;

  TrainConfig train;

  /// Throws ConfigError for unknown variants or invalid settings.
  void validate() const;
};

/// Learning rate used when a LoRA run does not set one: only the adapters and
/// the head move, so they need larger steps than full fine-tuning.
inline constexpr double kLoraLearningRate = 5e-3;

/// Two-space indented JSON with a trailing newline.
std::string dump_run_config(const RunConfig& config);

/// Overlays the keys present in `text` on `base`. Unknown keys, wrong types and
/// invalid values throw ConfigError.
RunConfig parse_run_config(std::string_view text, RunConfig base = {});

std::string_view to_string(FoldSelection selection);
std::string_view to_string(Averaging averaging);
std::optional<FoldSelection> parse_fold_selection(std::string_view name);
std::optional<Averaging> parse_averaging(std::string_view name);

/// Preset for the run's variant with its dropout and max_len.
ModelConfig model_config_for(const RunConfig& config, std::size_t vocab_size, std::size_t num_labels);

/// Fresh model for a seed: the preset encoder, wrapped with LoRA when configured.
std::unique_ptr<TrainableModel> make_model(const RunConfig& config, std::size_t vocab_size, std::size_t num_labels,
                                           std::uint64_t seed);

ModelFactory model_factory(const RunConfig& config, std::size_t vocab_size, std::size_t num_labels);

}  // namespace medqa
