#include <doctest.h>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>

#include <json.hpp>

#include "medqa/checkpoint.hpp"
#include "medqa/errors.hpp"

using namespace medqa;

namespace {

Vocab small_vocab(std::size_t size) {
  std::vector<std::string> tokens{"[PAD]", "[CLS]", "[SEP]", "[UNK]"};
  for (std::size_t i = tokens.size(); i < size; ++i) tokens.push_back("w" + std::to_string(i));
  return Vocab(tokens);
}

std::vector<Encoding> fixed_batch(std::size_t max_len) {
  std::vector<Encoding> batch;
  for (std::size_t n = 1; n <= 3; ++n) {
    Encoding e;
    e.ids.assign(max_len, Vocab::kPad);
    e.mask.assign(max_len, 0);
    e.ids[0] = Vocab::kCls;
    for (std::size_t t = 1; t <= n; ++t) e.ids[t] = 4 + t + n;
    e.ids[n + 1] = Vocab::kSep;
    for (std::size_t t = 0; t <= n + 1; ++t) e.mask[t] = 1;
    batch.push_back(e);
  }
  return batch;
}

CheckpointError::Kind kind_of(const std::string& bytes) {
  try {
    parse_checkpoint(bytes);
  } catch (const CheckpointError& e) {
    return e.kind();
  }
  FAIL("expected a CheckpointError");
  return CheckpointError::Kind::Io;
}

// Splits a serialized checkpoint into its JSON header and payload.
std::pair<nlohmann::json, std::string> split(const std::string& bytes) {
  std::uint32_t len = 0;
  for (int i = 0; i < 4; ++i) len |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[8 + i])) << (8 * i);
  return {nlohmann::json::parse(bytes.substr(12, len)), bytes.substr(12 + len)};
}

std::string join(const nlohmann::json& header, const std::string& payload) {
  const std::string text = header.dump();
  std::string out = "MQFCKPT1";
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((text.size() >> (8 * i)) & 0xFF));
  return out + text + payload;
}

}  // namespace

TEST_CASE("round trip of a base model is exact") {
  const auto config = ModelConfig::preset(kVariantRobertaBase, 30, 4, 10);
  const auto model = init_model(config, 1);
  const auto vocab = small_vocab(30);
  const LabelIndex labels({"a", "b", "c", "d"});
  const auto path = std::filesystem::temp_directory_path() / "medqa_roundtrip.mqf";
  save_checkpoint(model, vocab, path, labels);
  const auto loaded = load_checkpoint(path);
  std::filesystem::remove(path);

  CHECK(loaded.config == config);
  CHECK(loaded.vocab == vocab);
  CHECK(loaded.labels == labels);
  CHECK_FALSE(loaded.lora.has_value());
  REQUIRE(loaded.encoder() != nullptr);
  for (std::size_t i = 0; i < model.parameter_list().size(); ++i) {
    CHECK(loaded.encoder()->parameter_list()[i].name == model.parameter_list()[i].name);
    CHECK(loaded.encoder()->parameter_list()[i].value == model.parameter_list()[i].value);
  }
  const auto batch = fixed_batch(10);
  CHECK(forward_logits(*loaded.model, batch) == forward_logits(model, batch));
}

TEST_CASE("container layout") {
  const auto config = ModelConfig::preset(kVariantRobertaBase, 10, 2, 4);
  const auto model = init_model(config, 2);
  const auto bytes = serialize_checkpoint(model, small_vocab(10));
  CHECK(bytes.substr(0, 8) == "MQFCKPT1");
  const auto [header, payload] = split(bytes);
  CHECK(header.at("config").at("d_model") == 64);
  CHECK(header.at("vocab").size() == 10);
  std::size_t floats = 0;
  for (const auto& entry : header.at("tensors")) {
    CHECK(entry.at("offset").get<std::size_t>() == 4 * floats);
    std::size_t n = 1;
    for (const auto d : entry.at("shape")) n *= d.get<std::size_t>();
    floats += n;
  }
  CHECK(payload.size() == 4 * floats);
  CHECK(floats == count_parameters(model, false));

  // First float of the payload is the first token-embedding value, little endian.
  const float expected = static_cast<float>(model.parameter_list()[0].value[0]);
  std::uint32_t bits = 0;
  std::memcpy(&bits, &expected, 4);
  for (int i = 0; i < 4; ++i) CHECK(static_cast<unsigned char>(payload[i]) == ((bits >> (8 * i)) & 0xFF));
}

TEST_CASE("round trip of a LoRA model keeps adapters and config") {
  const auto config = ModelConfig::preset(kVariantRobertaLarge, 20, 3, 8);
  LoraConfig lora;
  lora.rank = 2;
  lora.alpha = 6;
  lora.targets = {DenseTarget::Key, DenseTarget::FfnIn};
  lora.train_classifier_head = false;
  auto wrapped = wrap_with_lora(init_model(config, 3), lora, 4);
  for (auto& p : wrapped.adapters())
    for (auto& v : p.value.data()) v = static_cast<double>(static_cast<float>(v + 0.01));
  const auto vocab = small_vocab(20);
  const auto loaded = parse_checkpoint(serialize_checkpoint(wrapped, vocab));
  REQUIRE(loaded.lora.has_value());
  CHECK(*loaded.lora == lora);
  REQUIRE(loaded.lora_model() != nullptr);
  for (std::size_t i = 0; i < wrapped.adapters().size(); ++i)
    CHECK(loaded.lora_model()->adapters()[i].value == wrapped.adapters()[i].value);
  CHECK(count_parameters(*loaded.model, true) == count_parameters(wrapped, true));
  const auto batch = fixed_batch(8);
  CHECK(forward_logits(*loaded.model, batch) == forward_logits(wrapped, batch));
}

TEST_CASE("corrupted containers raise distinct errors") {
  const auto config = ModelConfig::preset(kVariantRobertaBase, 10, 2, 4);
  const auto bytes = serialize_checkpoint(init_model(config, 5), small_vocab(10));

  SUBCASE("bad magic") {
    auto bad = bytes;
    bad[0] = 'X';
    CHECK(kind_of(bad) == CheckpointError::Kind::BadMagic);
    CHECK(kind_of("hello") == CheckpointError::Kind::BadMagic);
  }
  SUBCASE("truncated preamble, header, payload") {
    CHECK(kind_of(bytes.substr(0, 10)) == CheckpointError::Kind::Truncated);
    CHECK(kind_of(bytes.substr(0, 40)) == CheckpointError::Kind::Truncated);
    CHECK(kind_of(bytes.substr(0, bytes.size() - 1)) == CheckpointError::Kind::Truncated);
  }
  SUBCASE("manifest claims 10 floats but the payload has 9") {
    auto [header, payload] = split(bytes);
    CHECK(header["tensors"].back().at("name") == "classifier.bias");
    // Widen the head to 10 labels, then back the 10-float bias with only 9 floats.
    auto tiny_header = header;
    tiny_header["config"]["num_labels"] = 10;
    tiny_header["tensors"][tiny_header["tensors"].size() - 2]["shape"] = {64, 10};
    tiny_header["tensors"].back()["shape"] = {10};
    const auto w_offset = header["tensors"][header["tensors"].size() - 2].at("offset").get<std::size_t>();
    std::string rebuilt = payload.substr(0, w_offset) + std::string(4 * 64 * 10, '\0');
    tiny_header["tensors"].back()["offset"] = rebuilt.size();
    rebuilt += std::string(4 * 9, '\0');
    CHECK(kind_of(join(tiny_header, rebuilt)) == CheckpointError::Kind::Truncated);
    CHECK_NOTHROW(parse_checkpoint(join(tiny_header, rebuilt + std::string(4, '\0'))));
  }
  SUBCASE("manifest shape mismatch") {
    auto [header, payload] = split(bytes);
    header["tensors"][0]["shape"] = {11, 64};
    CHECK(kind_of(join(header, payload)) == CheckpointError::Kind::ManifestMismatch);
  }
  SUBCASE("manifest name mismatch and extra entries") {
    auto [header, payload] = split(bytes);
    auto renamed = header;
    renamed["tensors"][1]["name"] = "embeddings.positions";
    CHECK(kind_of(join(renamed, payload)) == CheckpointError::Kind::ManifestMismatch);
    auto extra = header;
    extra["tensors"].push_back({{"name", "extra"}, {"shape", {1}}, {"offset", payload.size()}});
    CHECK(kind_of(join(extra, payload + std::string(4, '\0'))) == CheckpointError::Kind::ManifestMismatch);
  }
  SUBCASE("trailing bytes and malformed header") {
    CHECK(kind_of(bytes + "x") == CheckpointError::Kind::Malformed);
    auto [header, payload] = split(bytes);
    header.erase("vocab");
    CHECK(kind_of(join(header, payload)) == CheckpointError::Kind::Malformed);
    std::string garbage = "MQFCKPT1";
    garbage += std::string("\x03\x00\x00\x00", 4) + "{{{";
    CHECK(kind_of(garbage) == CheckpointError::Kind::Malformed);
  }
  SUBCASE("missing file") {
    CHECK_THROWS_AS(load_checkpoint("/nonexistent/dir/model.mqf"), CheckpointError);
  }
}
