// medqa: command-line front end for the question classifier and answer lookup.
//
//   medqa generate --out DIR
//   medqa train    --data primary.csv --variant NAME --out DIR
//   medqa crossval --data primary.csv --variant NAME --out DIR
//   medqa ask      --model DIR/model.mqf --answers secondary.csv
//   medqa report   --run DIR [--format svg|csv]
//
// Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.

#include <unistd.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "medqa/checkpoint.hpp"
#include "medqa/crossval.hpp"
#include "medqa/csv.hpp"
#include "medqa/dataset.hpp"
#include "medqa/errors.hpp"
#include "medqa/qa.hpp"
#include "medqa/report.hpp"
#include "medqa/run_config.hpp"
#include "medqa/trainer.hpp"

namespace {

namespace fs = std::filesystem;
using nlohmann::json;
using namespace medqa;

constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

/// Bad flags or an unusable output directory; reported with exit code 2.
class UsageFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::uint64_t default_seed() {
  const char* env = std::getenv("MEDQA_SEED");
  if (!env || !*env) return 0;
  char* end = nullptr;
  const unsigned long long v = std::strtoull(env, &end, 10);
  if (*end != '\0' || env[0] == '-') throw UsageFailure(std::string("MEDQA_SEED is not a seed: '") + env + "'");
  return v;
}

void prepare_output_dir(const fs::path& dir, bool force) {
  if (fs::exists(dir)) {
    if (!fs::is_directory(dir)) throw UsageFailure(dir.string() + " exists and is not a directory");
    if (!fs::is_empty(dir) && !force)
      throw UsageFailure(dir.string() + " is not empty; pass --force to overwrite its files");
  }
  fs::create_directories(dir);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << text;
  if (!out) throw Error("cannot write " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UsageFailure("cannot read " + path.string());
  return std::string(std::istreambuf_iterator<char>(in), {});
}

json metrics_json(const MetricSet& m) {
  return {{"accuracy", m.accuracy}, {"precision", m.precision}, {"recall", m.recall}, {"f1", m.f1}};
}

std::string run_label(const RunConfig& c) { return c.lora ? c.variant + "+lora" : c.variant; }

struct LoadedData {
  std::vector<QARecord> records;
  Vocab vocab;
  LabelIndex labels;
  std::vector<LabeledExample> examples;
};

LoadedData load_data(const RunConfig& c) {
  if (c.data.empty()) throw UsageFailure("--data is required (or a config with \"data\")");
  LoadedData d;
  d.records = load_primary(c.data);
  if (d.records.empty()) throw Error(c.data + " has no records");
  d.vocab = build_vocab(questions_of(d.records), c.min_freq, c.max_vocab);
  d.labels = LabelIndex::from_records(d.records);
  d.examples = encode_records(d.records, d.vocab, d.labels, c.max_len);
  return d;
}

void warn_on_mismatch(const LabelIndex& labels, const AnswerBank& bank) {
  const auto mismatch = check_label_alignment(labels, bank);
  for (const auto& l : mismatch.missing_from_bank)
    std::cerr << "warning: label '" << l << "' has no answer in the answer bank\n";
  for (const auto& l : mismatch.unused_in_bank)
    std::cerr << "warning: answer bank label '" << l << "' is never predicted\n";
}

void check_answers(const RunConfig& c, const LabelIndex& labels) {
  if (c.answers.empty()) return;
  warn_on_mismatch(labels, AnswerBank(load_secondary(c.answers)));
}

// Options shared by train and crossval. Values stay unset unless given so that
// a --config file can supply them.
struct RunFlags {
  std::string config_path;
  std::string out;
  bool force = false;
  std::optional<std::string> data, answers, variant;
  bool lora = false;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> epochs, batch_size, max_len;
  std::optional<double> learning_rate, dropout;

  void attach(CLI::App* cmd) {
    std::vector<std::string> names;
    for (const auto v : variant_names()) names.emplace_back(v);
    cmd->add_option("--data", data, "Primary CSV (Disease,Question,Label)");
    cmd->add_option("--answers", answers, "Secondary CSV (Disease,Label,Answer), checked against the labels");
    cmd->add_option("--variant", variant, "Model preset")->check(CLI::IsMember(names));
    cmd->add_flag("--lora", lora, "Freeze the encoder and train low-rank adapters");
    cmd->add_option("--config", config_path, "JSON run configuration; flags override it")->check(CLI::ExistingFile);
    cmd->add_option("--out", out, "Run directory")->required();
    cmd->add_option("--seed", seed, "Seed (default: MEDQA_SEED or 0)");
    cmd->add_option("--epochs", epochs, "Training epochs")->check(CLI::PositiveNumber);
    cmd->add_option("--batch-size", batch_size, "Examples per optimizer step")->check(CLI::PositiveNumber);
    cmd->add_option("--learning-rate", learning_rate, "AdamW learning rate")->check(CLI::PositiveNumber);
    cmd->add_option("--dropout", dropout, "Dropout rate")->check(CLI::Range(0.0, 0.99));
    cmd->add_option("--max-len", max_len, "Tokens per question including [CLS] and [SEP]")->check(CLI::Range(3, 512));
    cmd->add_flag("--force", force, "Overwrite files in a non-empty run directory");
  }

  RunConfig resolve() const {
    RunConfig c;
    c.seed = default_seed();
    bool lr_given = learning_rate.has_value();
    if (!config_path.empty()) {
      const auto text = read_text(config_path);
      c = parse_run_config(text, c);
      const auto j = json::parse(text);
      lr_given = lr_given || (j.contains("train") && j["train"].contains("learning_rate"));
    }
    if (data) c.data = *data;
    if (answers) c.answers = *answers;
    if (variant) c.variant = *variant;
    if (lora && !c.lora) c.lora = LoraConfig{};
    if (seed) c.seed = *seed;
    if (epochs) c.train.epochs = *epochs;
    if (batch_size) c.train.batch_size = *batch_size;
    if (learning_rate) c.train.learning_rate = *learning_rate;
    if (dropout) c.dropout = *dropout;
    if (max_len) c.max_len = *max_len;
    if (c.lora && !lr_given) c.train.learning_rate = kLoraLearningRate;
    c.train.seed = c.seed;
    c.validate();
    return c;
  }
};

void save_model(const TrainableModel& model, const Vocab& vocab, const LabelIndex& labels, const fs::path& path) {
  if (const auto* lora = dynamic_cast<const LoraModel*>(&model))
    save_checkpoint(*lora, vocab, path, labels);
  else
    save_checkpoint(dynamic_cast<const EncoderModel&>(model), vocab, path, labels);
}

void print_epoch(const std::string& label, const EpochMetrics& m, std::size_t epochs) {
  std::printf("%s fold %zu epoch %zu/%zu  loss %.4f  acc %.4f  f1 %.4f  %.1fs\n", label.c_str(), m.fold + 1,
              m.epoch, epochs, m.train_loss, m.validation.accuracy, m.validation.f1, m.wall_time_s);
  std::fflush(stdout);
}

int cmd_generate(const fs::path& out, std::optional<std::uint64_t> seed, bool force) {
  prepare_output_dir(out, force);
  const auto diseases = default_diseases();
  const auto templates = default_templates();
  const auto data = generate_synthetic(diseases, templates, seed.value_or(default_seed()));
  write_primary(out / "primary.csv", data.records);
  write_secondary(out / "answers.csv", data.answers);
  std::printf("wrote %zu questions and %zu answers to %s\n", data.records.size(), data.answers.size(),
              out.string().c_str());
  return 0;
}

int cmd_train(const RunFlags& flags) {
  const RunConfig c = flags.resolve();
  const fs::path out = flags.out;
  const auto d = load_data(c);
  check_answers(c, d.labels);
  prepare_output_dir(out, flags.force);
  write_text(out / "config.json", dump_run_config(c));

  const auto split = split_train_val(d.examples.size(), c.split_ratio, c.seed);
  std::vector<LabeledExample> train, validation;
  for (const auto i : split.train) train.push_back(d.examples[i]);
  for (const auto i : split.validation) validation.push_back(d.examples[i]);

  auto model = make_model(c, d.vocab.size(), d.labels.size(), c.seed);
  MetricsWriter writer(out / "metrics.csv");
  const std::string label = run_label(c);
  FitOptions options;
  options.averaging = c.averaging;
  options.on_epoch = [&](const EpochMetrics& m) {
    writer.append(to_metrics_row(label, m));
    print_epoch(label, m, c.train.epochs);
  };
  const auto history = fit(*model, train, validation, c.train, options);
  save_model(*model, d.vocab, d.labels, out / "model.mqf");

  json summary;
  summary["variant"] = label;
  summary["train_size"] = train.size();
  summary["validation_size"] = validation.size();
  summary["epochs"] = history.size();
  summary["final"] = metrics_json(history.back().validation);
  summary["wall_time_s"] = history.back().wall_time_s;
  summary["total_parameters"] = count_parameters(*model, false);
  summary["trainable_parameters"] = count_parameters(*model, true);
  write_text(out / "summary.json", summary.dump(2) + "\n");
  std::printf("%s\n", format_metrics_cells(summary_row(label, history.back().validation, 0.0)).c_str());
  return 0;
}

struct CrossValFlags : RunFlags {
  std::optional<std::size_t> k, jobs;
  std::optional<std::string> selection, average;

  void attach(CLI::App* cmd) {
    RunFlags::attach(cmd);
    cmd->add_option("--k", k, "Number of folds")->check(CLI::Range(2, 1000));
    cmd->add_option("--jobs", jobs, "Folds trained concurrently")->check(CLI::PositiveNumber);
    cmd->add_option("--selection", selection, "Epoch reported per fold")->check(CLI::IsMember({"final", "best"}));
    cmd->add_option("--average", average, "Precision/recall/F1 averaging")->check(CLI::IsMember({"macro", "weighted"}));
  }

  RunConfig resolve() const {
    RunConfig c = RunFlags::resolve();
    if (k) c.k = *k;
    if (jobs) c.jobs = *jobs;
    if (selection) c.selection = *parse_fold_selection(*selection);
    if (average) c.averaging = *parse_averaging(*average);
    c.validate();
    return c;
  }
};

int cmd_crossval(const CrossValFlags& flags) {
  const RunConfig c = flags.resolve();
  const fs::path out = flags.out;
  const auto d = load_data(c);
  check_answers(c, d.labels);
  prepare_output_dir(out, flags.force);
  write_text(out / "config.json", dump_run_config(c));

  MetricsWriter writer(out / "metrics.csv");
  const std::string label = run_label(c);
  CrossValOptions options;
  options.k = c.k;
  options.stratified = c.stratified;
  options.jobs = c.jobs;
  options.selection = c.selection;
  options.averaging = c.averaging;
  options.variant_name = label;
  options.on_epoch = [&](const EpochMetrics& m) {
    writer.append(to_metrics_row(label, m));
    print_epoch(label, m, c.train.epochs);
  };
  const auto summary =
      run_cross_validation(d.examples, model_factory(c, d.vocab.size(), d.labels.size()), c.train, options);

  json folds = json::array();
  for (std::size_t f = 0; f < summary.fold_metrics.size(); ++f) {
    auto entry = metrics_json(summary.fold_metrics[f]);
    entry["fold"] = f + 1;
    entry["validation_size"] = summary.plan.validation_indices(f).size();
    entry["wall_time_s"] = summary.fold_wall_times_s[f];
    folds.push_back(entry);
  }
  const auto row = summary_row(label, summary.mean, summary.total_wall_time_s);
  json j;
  j["variant"] = label;
  j["k"] = c.k;
  j["epochs"] = c.train.epochs;
  j["selection"] = std::string(to_string(c.selection));
  j["averaging"] = std::string(to_string(c.averaging));
  j["folds"] = folds;
  j["mean"] = metrics_json(summary.mean);
  j["total_wall_time_s"] = summary.total_wall_time_s;
  j["row"] = format_metrics_cells(row);
  write_text(out / "summary.json", j.dump(2) + "\n");
  const std::vector<SummaryRow> rows{row};
  std::printf("%s", render_summary_table(rows).c_str());
  return 0;
}

int cmd_ask(const std::string& model_path, const std::string& answers_path, double threshold) {
  const auto loaded = load_checkpoint(model_path);
  if (loaded.labels.size() != loaded.model->num_labels())
    throw Error(model_path + " does not carry the label names it was trained with");
  const AnswerBank bank(load_secondary(answers_path));
  warn_on_mismatch(loaded.labels, bank);
  const QAArtifacts artifacts{*loaded.model, loaded.vocab, loaded.labels};

  const bool interactive = isatty(STDIN_FILENO);
  std::string line;
  for (;;) {
    if (interactive) {
      std::printf("> ");
      std::fflush(stdout);
    }
    if (!std::getline(std::cin, line)) break;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    try {
      const auto response = answer_question(line, artifacts, bank, threshold);
      std::printf("label: %s\nconfidence: %.4f\nanswer: %s\n", response.label.c_str(), response.confidence,
                  response.answer ? response.answer->c_str() : std::string(kFallbackAnswer).c_str());
    } catch (const InputError& e) {
      std::fprintf(stderr, "error: %s\n", e.what());
    } catch (const UnmappedLabelError& e) {
      std::fprintf(stderr, "error: %s\n", e.what());
    }
    std::fflush(stdout);
  }
  return 0;
}

int cmd_report(const fs::path& run, const std::string& format, std::optional<std::string> out_dir) {
  const auto rows = read_metrics_csv(run / "metrics.csv");
  if (rows.empty()) throw Error((run / "metrics.csv").string() + " has no rows");
  const fs::path out = out_dir ? fs::path(*out_dir) : run;
  fs::create_directories(out);
  for (const auto kind : all_metric_kinds()) {
    const fs::path path = out / (std::string(metric_name(kind)) + "." + format);
    write_text(path, format == "svg" ? render_metric_svg(rows, kind) : pivot_metric_csv(rows, kind));
    std::printf("wrote %s\n", path.string().c_str());
  }
  const auto table = render_summary_table(summarize_metrics(rows));
  write_text(out / "summary.txt", table);
  std::printf("%s", table.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Medical question classifier with predefined answers"};
  app.require_subcommand(1);

  std::string gen_out;
  std::optional<std::uint64_t> gen_seed;
  bool gen_force = false;
  auto* generate = app.add_subcommand("generate", "Write the synthetic template dataset");
  generate->add_option("--out", gen_out, "Output directory for primary.csv and answers.csv")->required();
  generate->add_option("--seed", gen_seed, "Seed for record order (default: MEDQA_SEED or 0)");
  generate->add_flag("--force", gen_force, "Overwrite files in a non-empty directory");

  RunFlags train_flags;
  auto* train = app.add_subcommand("train", "Fit one model on a 70/30 split and save a checkpoint");
  train_flags.attach(train);

  CrossValFlags cv_flags;
  auto* crossval = app.add_subcommand("crossval", "k-fold cross-validation with per-epoch metrics");
  cv_flags.attach(crossval);

  std::string ask_model, ask_answers;
  double ask_threshold = 0.0;
  auto* ask = app.add_subcommand("ask", "Answer questions read from standard input, one per line");
  ask->add_option("--model", ask_model, "Checkpoint written by train")->required()->check(CLI::ExistingFile);
  ask->add_option("--answers", ask_answers, "Secondary CSV (Disease,Label,Answer)")->required()->check(CLI::ExistingFile);
  ask->add_option("--threshold", ask_threshold, "Minimum confidence for answering")->check(CLI::Range(0.0, 2.0));

  std::string report_run, report_format = "svg";
  std::optional<std::string> report_out;
  auto* report = app.add_subcommand("report", "Per-metric charts and a summary table from metrics.csv");
  report->add_option("--run", report_run, "Run directory containing metrics.csv")->required()->check(CLI::ExistingDirectory);
  report->add_option("--format", report_format, "svg or csv")->check(CLI::IsMember({"svg", "csv"}));
  report->add_option("--out", report_out, "Output directory (default: the run directory)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    if (*generate) return cmd_generate(gen_out, gen_seed, gen_force);
    if (*train) return cmd_train(train_flags);
    if (*crossval) return cmd_crossval(cv_flags);
    if (*ask) return cmd_ask(ask_model, ask_answers, ask_threshold);
    if (*report) return cmd_report(report_run, report_format, report_out);
  } catch (const UsageFailure& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitUsage;
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitUsage;
  } catch (const UsageError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitUsage;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitRuntime;
  }
  return kExitUsage;
}
