#include "medqa/encoder.hpp"

#include <array>
#include <cmath>

#include "medqa/errors.hpp"

namespace medqa {

namespace {

constexpr double kLayerNormEps = 1e-5;
constexpr double kInitStddev = 0.02;
constexpr std::size_t kEmbeddingParams = 4;
constexpr std::size_t kParamsPerLayer = 16;

constexpr std::array<std::string_view, 4> kVariants = {kVariantRobertaBase, kVariantRobertaLarge,
                                                       kVariantBertUncased, kVariantBertLargeUncased};

// Offsets of each tensor inside a layer block.
enum LayerSlot : std::size_t {
  kQueryW, kQueryB, kKeyW, kKeyB, kValueW, kValueB, kOutputW, kOutputB,
  kAttnNormG, kAttnNormB, kFfnInW, kFfnInB, kFfnOutW, kFfnOutB, kFfnNormG, kFfnNormB,
};

bool ends_with(std::string_view s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.substr(s.size() - suffix.size()) == suffix;
}

}  // namespace

std::span<const std::string_view> variant_names() { return kVariants; }

bool is_large_variant(std::string_view variant) {
  return variant == kVariantRobertaLarge || variant == kVariantBertLargeUncased;
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("model config: " + msg); };
  if (num_heads == 0 || d_model == 0 || d_model % num_heads != 0) fail("d_model must be a positive multiple of num_heads");
  if (d_ff == 0) fail("d_ff must be positive");
  if (vocab_size <= 4) fail("vocab_size must exceed the 4 reserved tokens");
  if (max_len < 3) fail("max_len must be at least 3");
  if (num_labels < 2) fail("num_labels must be at least 2");
  if (!(dropout >= 0.0 && dropout < 1.0)) fail("dropout must lie in [0, 1)");
  bool known = false;
  for (const auto v : kVariants) known = known || v == variant_name;
  if (!known) fail("unknown variant '" + variant_name + "'");
}

ModelConfig ModelConfig::preset(std::string_view variant, std::size_t vocab_size, std::size_t num_labels,
                                std::size_t max_len) {
  ModelConfig config;
  config.variant_name = std::string(variant);
  config.vocab_size = vocab_size;
  config.num_labels = num_labels;
  config.max_len = max_len;
  if (is_large_variant(variant)) {
    config.num_layers = 4;
    config.num_heads = 8;
    config.d_model = 128;
    config.d_ff = 256;
  }
  config.validate();
  return config;
}

std::string_view to_string(DenseTarget target) {
  switch (target) {
    case DenseTarget::Query: return "query";
    case DenseTarget::Key: return "key";
    case DenseTarget::Value: return "value";
    case DenseTarget::Output: return "output";
    case DenseTarget::FfnIn: return "ffn_in";
    case DenseTarget::FfnOut: return "ffn_out";
    case DenseTarget::Classifier: return "classifier";
  }
  return "?";
}

std::optional<DenseTarget> parse_dense_target(std::string_view name) {
  for (const auto t : {DenseTarget::Query, DenseTarget::Key, DenseTarget::Value, DenseTarget::Output,
                       DenseTarget::FfnIn, DenseTarget::FfnOut, DenseTarget::Classifier})
    if (to_string(t) == name) return t;
  return std::nullopt;
}

std::vector<std::pair<std::string, Shape>> EncoderModel::layout(const ModelConfig& c) {
  const std::size_t d = c.d_model;
  std::vector<std::pair<std::string, Shape>> out = {
      {"embeddings.token", {c.vocab_size, d}},
      {"embeddings.position", {c.max_len, d}},
      {"embeddings.norm.gamma", {d}},
      {"embeddings.norm.beta", {d}},
  };
  for (std::size_t l = 0; l < c.num_layers; ++l) {
    const std::string p = "layers." + std::to_string(l) + ".";
    for (const char* proj : {"query", "key", "value", "output"}) {
      out.emplace_back(p + "attention." + proj + ".weight", Shape{d, d});
      out.emplace_back(p + "attention." + proj + ".bias", Shape{d});
    }
    out.emplace_back(p + "attention_norm.gamma", Shape{d});
    out.emplace_back(p + "attention_norm.beta", Shape{d});
    out.emplace_back(p + "ffn.in.weight", Shape{d, c.d_ff});
    out.emplace_back(p + "ffn.in.bias", Shape{c.d_ff});
    out.emplace_back(p + "ffn.out.weight", Shape{c.d_ff, d});
    out.emplace_back(p + "ffn.out.bias", Shape{d});
    out.emplace_back(p + "ffn_norm.gamma", Shape{d});
    out.emplace_back(p + "ffn_norm.beta", Shape{d});
  }
  out.emplace_back("classifier.weight", Shape{d, c.num_labels});
  out.emplace_back("classifier.bias", Shape{c.num_labels});
  return out;
}

std::size_t EncoderModel::weight_index(const ModelConfig& config, std::size_t layer, DenseTarget target) {
  if (target == DenseTarget::Classifier) return kEmbeddingParams + config.num_layers * kParamsPerLayer;
  if (layer >= config.num_layers) throw UsageError("weight_index: layer out of range");
  std::size_t slot = 0;
  switch (target) {
    case DenseTarget::Query: slot = kQueryW; break;
    case DenseTarget::Key: slot = kKeyW; break;
    case DenseTarget::Value: slot = kValueW; break;
    case DenseTarget::Output: slot = kOutputW; break;
    case DenseTarget::FfnIn: slot = kFfnInW; break;
    case DenseTarget::FfnOut: slot = kFfnOutW; break;
    case DenseTarget::Classifier: break;
  }
  return kEmbeddingParams + layer * kParamsPerLayer + slot;
}

EncoderModel::EncoderModel(ModelConfig config, std::vector<Parameter> params)
    : config_(std::move(config)), params_(std::move(params)) {
  config_.validate();
  const auto expected = layout(config_);
  if (expected.size() != params_.size())
    throw ConfigError("encoder expects " + std::to_string(expected.size()) + " parameter tensors, got " +
                      std::to_string(params_.size()));
  for (std::size_t i = 0; i < expected.size(); ++i) {
    if (params_[i].name != expected[i].first || params_[i].value.shape() != expected[i].second)
      throw ConfigError("parameter #" + std::to_string(i) + " should be " + expected[i].first + " " +
                        shape_to_string(expected[i].second) + ", got " + params_[i].name + " " +
                        shape_to_string(params_[i].value.shape()));
    if (!params_[i].value.all_finite()) throw NumericError("parameter " + params_[i].name + " is not finite");
  }
}

std::vector<Parameter*> EncoderModel::parameters() {
  std::vector<Parameter*> out;
  for (auto& p : params_) out.push_back(&p);
  return out;
}

std::vector<const Parameter*> EncoderModel::parameters() const {
  std::vector<const Parameter*> out;
  for (const auto& p : params_) out.push_back(&p);
  return out;
}

std::unique_ptr<TrainableModel> EncoderModel::clone() const { return std::make_unique<EncoderModel>(*this); }

Parameter* EncoderModel::find(std::string_view name) {
  for (auto& p : params_)
    if (p.name == name) return &p;
  return nullptr;
}

const Parameter* EncoderModel::find(std::string_view name) const {
  for (const auto& p : params_)
    if (p.name == name) return &p;
  return nullptr;
}

Var EncoderModel::forward(Tape& tape, std::span<const Var> params, std::span<const Encoding> batch, Mode mode,
                          Rng* rng) const {
  return forward_with_adapters(tape, params, {}, batch, mode, rng);
}

Var EncoderModel::forward_with_adapters(Tape& tape, std::span<const Var> params,
                                        std::span<const LinearAdapter> adapters, std::span<const Encoding> batch,
                                        Mode mode, Rng* rng) const {
  const ModelConfig& c = config_;
  if (params.size() < params_.size()) throw UsageError("forward: parameter bindings do not cover the model");
  if (batch.empty()) throw UsageError("forward: empty batch");
  const std::size_t n = batch.size(), seq = c.max_len;

  std::vector<std::size_t> ids;
  std::vector<std::size_t> positions;
  std::vector<std::uint8_t> mask;
  ids.reserve(n * seq);
  for (const auto& enc : batch) {
    if (enc.ids.size() != seq || enc.mask.size() != seq)
      throw DimensionError("encoding length " + std::to_string(enc.ids.size()) + " does not match model max_len " +
                           std::to_string(seq));
    for (const auto id : enc.ids)
      if (id >= c.vocab_size)
        throw DimensionError("token id " + std::to_string(id) + " outside model vocabulary of " +
                             std::to_string(c.vocab_size));
    ids.insert(ids.end(), enc.ids.begin(), enc.ids.end());
    mask.insert(mask.end(), enc.mask.begin(), enc.mask.end());
    for (std::size_t p = 0; p < seq; ++p) positions.push_back(p);
  }

  const bool train = mode == Mode::Train && c.dropout > 0.0;
  if (train && !rng) throw UsageError("forward: training mode with dropout needs an Rng");
  auto drop = [&](Var x) { return train ? tape.dropout(x, c.dropout, *rng) : x; };

  auto dense = [&](Var x, std::size_t weight, std::size_t bias) {
    Var y = tape.add_bias(tape.matmul(x, params[weight]), params[bias]);
    for (const auto& adapter : adapters) {
      if (adapter.weight_index != weight) continue;
      const Var low = tape.matmul_transposed(tape.matmul_transposed(x, adapter.a), adapter.b);
      y = tape.add(y, tape.scale(low, adapter.scale));
    }
    return y;
  };

  Var x = tape.add(tape.embedding(params[0], ids), tape.embedding(params[1], positions));
  x = drop(tape.layer_norm(x, params[2], params[3], kLayerNormEps));

  const std::size_t heads = c.num_heads;
  const double score_scale = 1.0 / std::sqrt(static_cast<double>(c.d_model / heads));
  for (std::size_t l = 0; l < c.num_layers; ++l) {
    const std::size_t base = kEmbeddingParams + l * kParamsPerLayer;
    const Var q = tape.split_heads(dense(x, base + kQueryW, base + kQueryB), n, seq, heads);
    const Var k = tape.split_heads(dense(x, base + kKeyW, base + kKeyB), n, seq, heads);
    const Var v = tape.split_heads(dense(x, base + kValueW, base + kValueB), n, seq, heads);
    Var scores = tape.scale(tape.batched_matmul(q, k, /*transpose_b=*/true), score_scale);
    const Var probs = tape.softmax(tape.mask_keys(scores, mask, heads));
    const Var context = tape.merge_heads(tape.batched_matmul(probs, v, false), n, seq, heads);
    const Var attended = drop(dense(context, base + kOutputW, base + kOutputB));
    x = tape.layer_norm(tape.add(x, attended), params[base + kAttnNormG], params[base + kAttnNormB], kLayerNormEps);

    const Var hidden = tape.gelu(dense(x, base + kFfnInW, base + kFfnInB));
    const Var ffn = drop(dense(hidden, base + kFfnOutW, base + kFfnOutB));
    x = tape.layer_norm(tape.add(x, ffn), params[base + kFfnNormG], params[base + kFfnNormB], kLayerNormEps);
  }

  std::vector<std::size_t> cls_rows(n);
  for (std::size_t b = 0; b < n; ++b) cls_rows[b] = b * seq;
  const Var pooled = tape.gather_rows(x, cls_rows);
  const std::size_t head = weight_index(c, 0, DenseTarget::Classifier);
  return dense(pooled, head, head + 1);
}

EncoderModel init_model(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(seed);
  std::vector<Parameter> params;
  for (auto& [name, shape] : EncoderModel::layout(config)) {
    Tensor value(shape);
    if (shape.size() == 2) {
      for (auto& v : value.data()) v = static_cast<double>(static_cast<float>(rng.truncated_normal(kInitStddev)));
    } else if (ends_with(name, ".gamma")) {
      for (auto& v : value.data()) v = 1.0;
    }
    params.push_back(Parameter{std::move(name), std::move(value), true});
  }
  return EncoderModel(config, std::move(params));
}

// ---------------------------------------------------------------------------
// TrainableModel helpers

std::vector<Var> bind_parameters(Tape& tape, const TrainableModel& model, bool with_grad) {
  std::vector<Var> vars;
  for (const Parameter* p : model.parameters()) {
    Tensor value = p->value;
    value.set_requires_grad(with_grad && p->trainable);
    vars.push_back(tape.leaf(std::move(value)));
  }
  return vars;
}

Tensor forward_logits(const TrainableModel& model, std::span<const Encoding> batch) {
  Tape tape;
  const auto vars = bind_parameters(tape, model, false);
  return tape.value(model.forward(tape, vars, batch, Mode::Eval, nullptr));
}

std::size_t count_parameters(const TrainableModel& model, bool trainable_only) {
  std::size_t total = 0;
  for (const Parameter* p : model.parameters())
    if (!trainable_only || p->trainable) total += p->value.size();
  return total;
}

}  // namespace medqa
