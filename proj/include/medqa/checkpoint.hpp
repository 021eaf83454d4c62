#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <string_view>

#include "medqa/dataset.hpp"
#include "medqa/encoder.hpp"
#include "medqa/lora.hpp"
#include "medqa/tokenizer.hpp"

namespace medqa {

// Container layout (".mqf"):
//   8 bytes   magic "MQFCKPT1"
//   4 bytes   little-endian header length N
//   N bytes   UTF-8 JSON header: config, vocab, labels, tensor manifest
//             (name, shape, byte offset into the payload), optional "lora"
//   payload   little-endian IEEE-754 float32 tensors in manifest order

inline constexpr std::string_view kCheckpointMagic = "MQFCKPT1";
inline constexpr std::string_view kCheckpointExtension = ".mqf";

std::string serialize_checkpoint(const EncoderModel& model, const Vocab& vocab, const LabelIndex& labels = {});
std::string serialize_checkpoint(const LoraModel& model, const Vocab& vocab, const LabelIndex& labels = {});

void save_checkpoint(const EncoderModel& model, const Vocab& vocab, const std::filesystem::path& path,
                     const LabelIndex& labels = {});
void save_checkpoint(const LoraModel& model, const Vocab& vocab, const std::filesystem::path& path,
                     const LabelIndex& labels = {});

struct LoadedCheckpoint {
  ModelConfig config;
  Vocab vocab;
  LabelIndex labels;
  std::optional<LoraConfig> lora;
  /// EncoderModel, or LoraModel when the file carries a "lora" section.
  std::unique_ptr<TrainableModel> model;

  const EncoderModel* encoder() const { return dynamic_cast<const EncoderModel*>(model.get()); }
  const LoraModel* lora_model() const { return dynamic_cast<const LoraModel*>(model.get()); }
};

/// Throws CheckpointError (BadMagic, Truncated, ManifestMismatch, Malformed).
LoadedCheckpoint parse_checkpoint(std::string_view bytes);
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace medqa
