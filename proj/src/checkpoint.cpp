#include "medqa/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "medqa/errors.hpp"

namespace medqa {

namespace {

using nlohmann::json;
using Kind = CheckpointError::Kind;

json config_to_json(const ModelConfig& c) {
  return json{{"num_layers", c.num_layers}, {"num_heads", c.num_heads},   {"d_model", c.d_model},
              {"d_ff", c.d_ff},             {"vocab_size", c.vocab_size}, {"max_len", c.max_len},
              {"num_labels", c.num_labels}, {"dropout", c.dropout},       {"variant_name", c.variant_name}};
}

ModelConfig config_from_json(const json& j) {
  ModelConfig c;
  c.num_layers = j.at("num_layers").get<std::size_t>();
  c.num_heads = j.at("num_heads").get<std::size_t>();
  c.d_model = j.at("d_model").get<std::size_t>();
  c.d_ff = j.at("d_ff").get<std::size_t>();
  c.vocab_size = j.at("vocab_size").get<std::size_t>();
  c.max_len = j.at("max_len").get<std::size_t>();
  c.num_labels = j.at("num_labels").get<std::size_t>();
  c.dropout = j.at("dropout").get<double>();
  c.variant_name = j.at("variant_name").get<std::string>();
  return c;
}

json lora_to_json(const LoraConfig& c) {
  json targets = json::array();
  for (const auto t : c.targets) targets.push_back(std::string(to_string(t)));
  return json{{"rank", c.rank}, {"alpha", c.alpha}, {"targets", targets}, {"train_classifier_head", c.train_classifier_head}};
}

LoraConfig lora_from_json(const json& j) {
  LoraConfig c;
  c.rank = j.at("rank").get<std::size_t>();
  c.alpha = j.at("alpha").get<double>();
  c.train_classifier_head = j.at("train_classifier_head").get<bool>();
  c.targets.clear();
  for (const auto& t : j.at("targets")) {
    const auto parsed = parse_dense_target(t.get<std::string>());
    if (!parsed) throw CheckpointError(Kind::Malformed, "unknown LoRA target '" + t.get<std::string>() + "'");
    c.targets.push_back(*parsed);
  }
  return c;
}

void append_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

std::uint32_t read_u32(std::string_view bytes, std::size_t offset) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[offset + i])) << (8 * i);
  return v;
}

std::string serialize(const ModelConfig& config, std::span<const Parameter* const> tensors, const Vocab& vocab,
                      const LabelIndex& labels, const LoraConfig* lora) {
  json manifest = json::array();
  std::string payload;
  for (const Parameter* p : tensors) {
    manifest.push_back(json{{"name", p->name}, {"shape", p->value.shape()}, {"offset", payload.size()}});
    for (const double v : p->value.data()) {
      const float f = static_cast<float>(v);
      std::uint32_t bits;
      std::memcpy(&bits, &f, sizeof bits);
      append_u32(payload, bits);
    }
  }
  json header{{"config", config_to_json(config)},
              {"vocab", vocab.tokens()},
              {"labels", labels.labels()},
              {"tensors", manifest}};
  if (lora) header["lora"] = lora_to_json(*lora);
  const std::string header_text = header.dump();
  std::string out(kCheckpointMagic);
  append_u32(out, static_cast<std::uint32_t>(header_text.size()));
  out += header_text;
  out += payload;
  return out;
}

void write_bytes(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError(Kind::Io, "cannot write checkpoint " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError(Kind::Io, "failed writing checkpoint " + path.string());
}

std::vector<Parameter> read_tensors(const json& manifest, std::string_view payload,
                                    const std::vector<std::pair<std::string, Shape>>& expected,
                                    std::size_t& cursor, std::size_t& entry) {
  std::vector<Parameter> out;
  for (const auto& [name, shape] : expected) {
    if (entry >= manifest.size())
      throw CheckpointError(Kind::ManifestMismatch, "manifest ends before tensor " + name);
    const json& item = manifest[entry++];
    const auto got_name = item.at("name").get<std::string>();
    const auto got_shape = item.at("shape").get<Shape>();
    const auto offset = item.at("offset").get<std::size_t>();
    if (got_name != name || got_shape != shape)
      throw CheckpointError(Kind::ManifestMismatch, "manifest entry " + got_name + " " + shape_to_string(got_shape) +
                                                        " does not match expected " + name + " " + shape_to_string(shape));
    if (offset != cursor)
      throw CheckpointError(Kind::ManifestMismatch, "manifest offset of " + name + " is " + std::to_string(offset) +
                                                        ", expected " + std::to_string(cursor));
    const std::size_t count = shape_size(shape);
    if (cursor + 4 * count > payload.size())
      throw CheckpointError(Kind::Truncated, "payload truncated inside tensor " + name + ": need " +
                                                 std::to_string(cursor + 4 * count) + " bytes, have " +
                                                 std::to_string(payload.size()));
    Tensor value(shape);
    for (std::size_t i = 0; i < count; ++i) {
      const std::uint32_t bits = read_u32(payload, cursor + 4 * i);
      float f;
      std::memcpy(&f, &bits, sizeof f);
      value[i] = static_cast<double>(f);
    }
    cursor += 4 * count;
    out.push_back(Parameter{name, std::move(value), true});
  }
  return out;
}

}  // namespace

std::string serialize_checkpoint(const EncoderModel& model, const Vocab& vocab, const LabelIndex& labels) {
  const auto params = model.parameters();
  return serialize(model.config(), params, vocab, labels, nullptr);
}

std::string serialize_checkpoint(const LoraModel& model, const Vocab& vocab, const LabelIndex& labels) {
  const auto params = model.parameters();
  return serialize(model.base().config(), params, vocab, labels, &model.lora_config());
}

void save_checkpoint(const EncoderModel& model, const Vocab& vocab, const std::filesystem::path& path,
                     const LabelIndex& labels) {
  write_bytes(path, serialize_checkpoint(model, vocab, labels));
}

void save_checkpoint(const LoraModel& model, const Vocab& vocab, const std::filesystem::path& path,
                     const LabelIndex& labels) {
  write_bytes(path, serialize_checkpoint(model, vocab, labels));
}

LoadedCheckpoint parse_checkpoint(std::string_view bytes) {
  const std::size_t magic_len = kCheckpointMagic.size();
  if (bytes.substr(0, magic_len) != kCheckpointMagic.substr(0, std::min(magic_len, bytes.size())))
    throw CheckpointError(Kind::BadMagic, "bad magic: not an MQFCKPT1 checkpoint");
  if (bytes.size() < magic_len + 4) throw CheckpointError(Kind::Truncated, "checkpoint truncated inside the preamble");
  const std::size_t header_len = read_u32(bytes, magic_len);
  const std::size_t header_start = magic_len + 4;
  if (bytes.size() < header_start + header_len)
    throw CheckpointError(Kind::Truncated, "checkpoint truncated inside the JSON header");

  json header;
  try {
    header = json::parse(bytes.substr(header_start, header_len));
  } catch (const json::exception& e) {
    throw CheckpointError(Kind::Malformed, std::string("checkpoint header is not valid JSON: ") + e.what());
  }

  LoadedCheckpoint out;
  std::vector<Parameter> base, adapters;
  try {
    out.config = config_from_json(header.at("config"));
    out.config.validate();
    out.vocab = Vocab(header.at("vocab").get<std::vector<std::string>>());
    out.labels = LabelIndex(header.value("labels", std::vector<std::string>{}));
    if (header.contains("lora")) out.lora = lora_from_json(header.at("lora"));
    if (out.vocab.size() != out.config.vocab_size)
      throw CheckpointError(Kind::ManifestMismatch, "vocabulary has " + std::to_string(out.vocab.size()) +
                                                        " tokens but config says " + std::to_string(out.config.vocab_size));

    const std::string_view payload = bytes.substr(header_start + header_len);
    const json& manifest = header.at("tensors");
    if (!manifest.is_array()) throw CheckpointError(Kind::Malformed, "tensor manifest is not an array");
    std::size_t cursor = 0, entry = 0;
    base = read_tensors(manifest, payload, EncoderModel::layout(out.config), cursor, entry);
    if (out.lora) {
      out.lora->validate(out.config);
      adapters = read_tensors(manifest, payload, LoraModel::adapter_layout(out.config, *out.lora), cursor, entry);
    }
    if (entry != manifest.size())
      throw CheckpointError(Kind::ManifestMismatch, "manifest lists " + std::to_string(manifest.size() - entry) +
                                                        " unexpected extra tensors");
    if (cursor != payload.size())
      throw CheckpointError(Kind::Malformed, std::to_string(payload.size() - cursor) + " trailing payload bytes");
  } catch (const json::exception& e) {
    throw CheckpointError(Kind::Malformed, std::string("checkpoint header is incomplete: ") + e.what());
  } catch (const ConfigError& e) {
    throw CheckpointError(Kind::Malformed, std::string("checkpoint configuration is invalid: ") + e.what());
  }

  EncoderModel encoder(out.config, std::move(base));
  if (out.lora)
    out.model = std::make_unique<LoraModel>(std::move(encoder), *out.lora, std::move(adapters));
  else
    out.model = std::make_unique<EncoderModel>(std::move(encoder));
  return out;
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError(Kind::Io, "cannot open checkpoint " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return parse_checkpoint(buffer.str());
}

}  // namespace medqa
