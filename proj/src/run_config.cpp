#include "medqa/run_config.hpp"

#include <json.hpp>

#include "medqa/errors.hpp"

namespace medqa {

namespace {

using nlohmann::json;

// Adapters draw from their own stream so they do not echo the encoder init.
constexpr std::uint64_t kAdapterSeedMask = 0xA5A5A5A5A5A5A5A5ULL;

json lora_to_json(const LoraConfig& lora) {
  json targets = json::array();
  for (const auto t : lora.targets) targets.push_back(std::string(to_string(t)));
  return {{"rank", lora.rank},
          {"alpha", lora.alpha},
          {"targets", targets},
          {"train_classifier_head", lora.train_classifier_head}};
}

void check_keys(const json& object, std::initializer_list<std::string_view> allowed, const std::string& where) {
  if (!object.is_object()) throw ConfigError(where + " must be a JSON object");
  for (const auto& [key, value] : object.items()) {
    bool known = false;
    for (const auto a : allowed) known = known || key == a;
    if (!known) throw ConfigError("unknown key '" + key + "' in " + where);
  }
}

template <typename T>
void read(const json& object, const char* key, T& out, const std::string& where) {
  const auto it = object.find(key);
  if (it == object.end()) return;
  try {
    out = it->get<T>();
  } catch (const json::exception&) {
    throw ConfigError(where + "." + key + " has the wrong type");
  }
}

LoraConfig lora_from_json(const json& j, LoraConfig lora) {
  check_keys(j, {"rank", "alpha", "targets", "train_classifier_head"}, "lora");
  read(j, "rank", lora.rank, "lora");
  read(j, "alpha", lora.alpha, "lora");
  read(j, "train_classifier_head", lora.train_classifier_head, "lora");
  if (j.contains("targets")) {
    std::vector<std::string> names;
    read(j, "targets", names, "lora");
    lora.targets.clear();
    for (const auto& name : names) {
      const auto target = parse_dense_target(name);
      if (!target) throw ConfigError("unknown LoRA target '" + name + "'");
      lora.targets.push_back(*target);
    }
  }
  return lora;
}

}  // namespace

void RunConfig::validate() const {
  bool known = false;
  for (const auto v : variant_names()) known = known || v == variant;
  if (!known) throw ConfigError("unknown variant '" + variant + "'");
  if (k < 2) throw ConfigError("k must be at least 2");
  if (jobs < 1) throw ConfigError("jobs must be at least 1");
  if (!(split_ratio > 0.0 && split_ratio < 1.0)) throw ConfigError("split_ratio must lie strictly between 0 and 1");
  if (max_len < 3) throw ConfigError("max_len must be at least 3");
  if (min_freq < 1) throw ConfigError("min_freq must be at least 1");
  if (max_vocab <= Vocab::kReserved) throw ConfigError("max_vocab must exceed the reserved tokens");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must lie in [0, 1)");
  train.validate();
  if (lora) lora->validate(ModelConfig::preset(variant, Vocab::kReserved + 1, 2, max_len));
}

std::string dump_run_config(const RunConfig& c) {
  json j;
  j["data"] = c.data;
  j["answers"] = c.answers;
  j["variant"] = c.variant;
  j["lora"] = c.lora ? lora_to_json(*c.lora) : json(nullptr);
  j["seed"] = c.seed;
  j["k"] = c.k;
  j["stratified"] = c.stratified;
  j["selection"] = std::string(to_string(c.selection));
  j["averaging"] = std::string(to_string(c.averaging));
  j["jobs"] = c.jobs;
  j["split_ratio"] = c.split_ratio;
  j["max_len"] = c.max_len;
  j["min_freq"] = c.min_freq;
  j["max_vocab"] = c.max_vocab;
  j["dropout"] = c.dropout;
  j["train"] = {{"epochs", c.train.epochs},
                {"batch_size", c.train.batch_size},
                {"learning_rate", c.train.learning_rate},
                {"weight_decay", c.train.weight_decay},
                {"beta1", c.train.beta1},
                {"beta2", c.train.beta2},
                {"eps", c.train.eps},
                {"shuffle", c.train.shuffle}};
  return j.dump(2) + "\n";
}

RunConfig parse_run_config(std::string_view text, RunConfig c) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  check_keys(j,
             {"data", "answers", "variant", "lora", "seed", "k", "stratified", "selection", "averaging", "jobs",
              "split_ratio", "max_len", "min_freq", "max_vocab", "dropout", "train"},
             "config");
  read(j, "data", c.data, "config");
  read(j, "answers", c.answers, "config");
  read(j, "variant", c.variant, "config");
  read(j, "seed", c.seed, "config");
  read(j, "k", c.k, "config");
  read(j, "stratified", c.stratified, "config");
  read(j, "jobs", c.jobs, "config");
  read(j, "split_ratio", c.split_ratio, "config");
  read(j, "max_len", c.max_len, "config");
  read(j, "min_freq", c.min_freq, "config");
  read(j, "max_vocab", c.max_vocab, "config");
  read(j, "dropout", c.dropout, "config");
  if (j.contains("selection")) {
    std::string name;
    read(j, "selection", name, "config");
    const auto s = parse_fold_selection(name);
    if (!s) throw ConfigError("unknown selection '" + name + "'");
    c.selection = *s;
  }
  if (j.contains("averaging")) {
    std::string name;
    read(j, "averaging", name, "config");
    const auto a = parse_averaging(name);
    if (!a) throw ConfigError("unknown averaging '" + name + "'");
    c.averaging = *a;
  }
  if (j.contains("lora")) {
    if (j["lora"].is_null())
      c.lora.reset();
    else
      c.lora = lora_from_json(j["lora"], c.lora.value_or(LoraConfig{}));
  }
  if (j.contains("train")) {
    const auto& t = j["train"];
    check_keys(t, {"epochs", "batch_size", "learning_rate", "weight_decay", "beta1", "beta2", "eps", "shuffle"},
               "train");
    read(t, "epochs", c.train.epochs, "train");
    read(t, "batch_size", c.train.batch_size, "train");
    read(t, "learning_rate", c.train.learning_rate, "train");
    read(t, "weight_decay", c.train.weight_decay, "train");
    read(t, "beta1", c.train.beta1, "train");
    read(t, "beta2", c.train.beta2, "train");
    read(t, "eps", c.train.eps, "train");
    read(t, "shuffle", c.train.shuffle, "train");
  }
  return c;
}

std::string_view to_string(FoldSelection selection) {
  return selection == FoldSelection::FinalEpoch ? "final" : "best";
}

std::string_view to_string(Averaging averaging) { return averaging == Averaging::Macro ? "macro" : "weighted"; }

std::optional<FoldSelection> parse_fold_selection(std::string_view name) {
  if (name == "final") return FoldSelection::FinalEpoch;
  if (name == "best") return FoldSelection::BestEpoch;
  return std::nullopt;
}

std::optional<Averaging> parse_averaging(std::string_view name) {
  if (name == "macro") return Averaging::Macro;
  if (name == "weighted") return Averaging::Weighted;
  return std::nullopt;
}

ModelConfig model_config_for(const RunConfig& config, std::size_t vocab_size, std::size_t num_labels) {
  auto model = ModelConfig::preset(config.variant, vocab_size, num_labels, config.max_len);
  model.dropout = config.dropout;
  model.validate();
  return model;
}

std::unique_ptr<TrainableModel> make_model(const RunConfig& config, std::size_t vocab_size, std::size_t num_labels,
                                           std::uint64_t seed) {
  auto encoder = init_model(model_config_for(config, vocab_size, num_labels), seed);
  if (!config.lora) return std::make_unique<EncoderModel>(std::move(encoder));
  return std::make_unique<LoraModel>(wrap_with_lora(encoder, *config.lora, seed ^ kAdapterSeedMask));
}

ModelFactory model_factory(const RunConfig& config, std::size_t vocab_size, std::size_t num_labels) {
  return [config, vocab_size, num_labels](std::uint64_t seed) {
    return make_model(config, vocab_size, num_labels, seed);
  };
}

}  // namespace medqa
