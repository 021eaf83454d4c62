#include <doctest.h>

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "medqa/checkpoint.hpp"
#include "medqa/dataset.hpp"
#include "medqa/report.hpp"
#include "support/process.hpp"

using namespace medqa;
using nlohmann::json;
using testing::run_process;
using testing::slurp;
using testing::TempDir;
namespace fs = std::filesystem;

namespace {

const std::string kCli = MEDQA_CLI_PATH;

testing::ProcessResult cli(const std::vector<std::string>& args, const std::string& input = "",
                           const std::string& env = "") {
  return run_process(kCli, args, input, env);
}

// primary.csv and answers.csv from `generate`, shared by the cases below.
const fs::path& dataset_dir() {
  static TempDir dir("cli_data");
  static const bool ready = [] {
    const auto r = cli({"generate", "--out", (dir / "data").string()});
    REQUIRE(r.exit_code == 0);
    return true;
  }();
  (void)ready;
  static const fs::path data = dir / "data";
  return data;
}

std::string primary() { return (dataset_dir() / "primary.csv").string(); }
std::string answers() { return (dataset_dir() / "answers.csv").string(); }

// One full default-epoch train run reused by the ask and report cases.
const fs::path& trained_run() {
  static TempDir dir("cli_trained");
  static const fs::path run = dir / "run";
  static const bool ready = [] {
    const auto r = cli({"train", "--data", primary(), "--answers", answers(), "--out", run.string()});
    INFO(r.err);
    REQUIRE(r.exit_code == 0);
    return true;
  }();
  (void)ready;
  return run;
}

}  // namespace

TEST_CASE("generate writes the template dataset") {
  const auto records = load_primary(primary());
  const auto bank = load_secondary(answers());
  CHECK(records.size() == default_diseases().size() * default_templates().size());
  CHECK(bank.size() == default_diseases().size());
  TempDir again("cli_generate");
  REQUIRE(cli({"generate", "--out", (again / "d").string()}).exit_code == 0);
  CHECK(slurp(again / "d/primary.csv") == slurp(dataset_dir() / "primary.csv"));
}

TEST_CASE("train writes config, metrics, checkpoint and summary") {
  const auto& run = trained_run();
  for (const auto* name : {"config.json", "metrics.csv", "model.mqf", "summary.json"})
    CHECK_MESSAGE(fs::exists(run / name), name);

  const auto rows = read_metrics_csv(run / "metrics.csv");
  REQUIRE(rows.size() == 10);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    CHECK(rows[i].epoch == i + 1);
    CHECK(rows[i].variant == "mini-roberta-base");
    if (i > 0) CHECK(rows[i].wall_time_s >= rows[i - 1].wall_time_s);
  }

  const auto summary = json::parse(slurp(run / "summary.json"));
  CHECK(summary["train_size"] == 112);
  CHECK(summary["validation_size"] == 48);
  CHECK(summary["final"]["accuracy"].get<double>() == rows.back().metrics.accuracy);
  CHECK(summary["final"]["accuracy"].get<double>() >= 0.9);

  const auto loaded = load_checkpoint(run / "model.mqf");
  CHECK(loaded.encoder() != nullptr);
  CHECK(loaded.labels.size() == default_diseases().size());
  CHECK(loaded.labels.find("diabetes definition").has_value());

  const auto config = json::parse(slurp(run / "config.json"));
  CHECK(config["variant"] == "mini-roberta-base");
  CHECK(config["train"]["epochs"] == 10);
  CHECK(config["lora"].is_null());
}

TEST_CASE("usage and configuration errors exit with code 2") {
  TempDir dir("cli_usage");
  const auto out = (dir / "run").string();
  auto unknown = cli({"train", "--data", primary(), "--variant", "gpt-huge", "--out", out});
  CHECK(unknown.exit_code == 2);
  CHECK(unknown.err.find("gpt-huge") != std::string::npos);
  CHECK_FALSE(fs::exists(out));

  CHECK(cli({}).exit_code == 2);
  CHECK(cli({"train", "--data", primary()}).exit_code == 2);  // --out missing
  CHECK(cli({"crossval", "--data", primary(), "--out", out, "--k", "1"}).exit_code == 2);
  CHECK(cli({"train", "--out", out}).exit_code == 2);  // no data anywhere

  { std::ofstream(dir / "bad.json") << R"({"variant": "mini-roberta-base", "learning_rat": 0.1})"; }
  const auto bad_key = cli({"train", "--data", primary(), "--config", (dir / "bad.json").string(), "--out", out});
  CHECK(bad_key.exit_code == 2);
  CHECK(bad_key.err.find("learning_rat") != std::string::npos);

  { std::ofstream(dir / "variant.json") << R"({"variant": "tiny"})"; }
  CHECK(cli({"train", "--data", primary(), "--config", (dir / "variant.json").string(), "--out", out}).exit_code == 2);

  CHECK(cli({"train", "--data", primary(), "--out", out, "--epochs", "1"}, "", "MEDQA_SEED=abc").exit_code == 2);
  CHECK(cli({"--help"}).exit_code == 0);
}

TEST_CASE("malformed data is a runtime error with its line number") {
  TempDir dir("cli_malformed");
  { std::ofstream(dir / "bad.csv") << "Disease,Question,Label\nflu,What is flu?,flu definition\nflu,\"open quote\n"; }
  const auto r = cli({"train", "--data", (dir / "bad.csv").string(), "--out", (dir / "run").string()});
  CHECK(r.exit_code == 1);
  CHECK(r.err.find("line 3") != std::string::npos);
  CHECK(cli({"train", "--data", (dir / "missing.csv").string(), "--out", (dir / "run").string()}).exit_code == 1);
}

TEST_CASE("same seed gives identical metrics and checkpoint; the seed matters") {
  TempDir dir("cli_seed");
  auto train = [&](const std::string& name, std::vector<std::string> extra, const std::string& env = "") {
    std::vector<std::string> args{"train", "--data", primary(), "--out", (dir / name).string(), "--epochs", "2"};
    args.insert(args.end(), extra.begin(), extra.end());
    const auto r = cli(args, "", env);
    REQUIRE(r.exit_code == 0);
    return testing::without_wall_time(slurp(dir / name / "metrics.csv"));
  };
  const auto a = train("a", {"--seed", "5"});
  const auto b = train("b", {"--seed", "5"});
  const auto env = train("env", {}, "MEDQA_SEED=5");
  const auto other = train("c", {"--seed", "6"});
  CHECK(a == b);
  CHECK(a == env);
  CHECK(a != other);
  CHECK(slurp(dir / "a/model.mqf") == slurp(dir / "b/model.mqf"));
  CHECK(slurp(dir / "a/model.mqf") != slurp(dir / "c/model.mqf"));
}

TEST_CASE("config snapshot reproduces a run and flags override it") {
  TempDir dir("cli_config");
  const auto first = cli({"train", "--data", primary(), "--out", (dir / "a").string(), "--epochs", "2", "--seed", "9",
                          "--batch-size", "4", "--dropout", "0.0"});
  REQUIRE(first.exit_code == 0);
  const auto snapshot = (dir / "a/config.json").string();
  REQUIRE(cli({"train", "--config", snapshot, "--out", (dir / "b").string()}).exit_code == 0);
  CHECK(slurp(dir / "a/config.json") == slurp(dir / "b/config.json"));
  CHECK(testing::without_wall_time(slurp(dir / "a/metrics.csv")) ==
        testing::without_wall_time(slurp(dir / "b/metrics.csv")));

  REQUIRE(cli({"train", "--config", snapshot, "--epochs", "1", "--out", (dir / "c").string()}).exit_code == 0);
  const auto overridden = json::parse(slurp(dir / "c/config.json"));
  CHECK(overridden["train"]["epochs"] == 1);
  CHECK(overridden["train"]["batch_size"] == 4);
  CHECK(overridden["seed"] == 9);
  CHECK(read_metrics_csv(dir / "c/metrics.csv").size() == 1);
}

TEST_CASE("a non-empty run directory needs --force") {
  TempDir dir("cli_force");
  const auto out = (dir / "run").string();
  const std::vector<std::string> args{"train", "--data", primary(), "--out", out, "--epochs", "2"};
  REQUIRE(cli(args).exit_code == 0);
  const auto before = slurp(dir / "run/metrics.csv");
  const auto refused = cli(args);
  CHECK(refused.exit_code == 2);
  CHECK(refused.err.find("--force") != std::string::npos);
  CHECK(slurp(dir / "run/metrics.csv") == before);

  auto forced = args;
  forced.push_back("--force");
  REQUIRE(cli(forced).exit_code == 0);
  CHECK(read_metrics_csv(dir / "run/metrics.csv").size() == 2);

  { std::ofstream(dir / "file") << "x"; }
  CHECK(cli({"generate", "--out", (dir / "file").string(), "--force"}).exit_code == 2);
}

TEST_CASE("lora runs record the adapter settings and train a fraction of the weights") {
  TempDir dir("cli_lora");
  const auto r = cli({"train", "--data", primary(), "--variant", "mini-roberta-large", "--lora", "--epochs", "1",
                      "--out", (dir / "run").string()});
  INFO(r.err);
  REQUIRE(r.exit_code == 0);
  const auto config = json::parse(slurp(dir / "run/config.json"));
  CHECK(config["lora"]["rank"] == 4);
  CHECK(config["lora"]["targets"] == json::array({"query", "value"}));
  CHECK(config["train"]["learning_rate"].get<double>() == 5e-3);
  const auto summary = json::parse(slurp(dir / "run/summary.json"));
  CHECK(summary["variant"] == "mini-roberta-large+lora");
  CHECK(summary["trainable_parameters"].get<double>() < 0.1 * summary["total_parameters"].get<double>());
  CHECK(load_checkpoint(dir / "run/model.mqf").lora_model() != nullptr);

  const auto explicit_lr = cli({"train", "--data", primary(), "--variant", "mini-roberta-large", "--lora", "--epochs",
                                "1", "--learning-rate", "0.002", "--out", (dir / "lr").string()});
  REQUIRE(explicit_lr.exit_code == 0);
  CHECK(json::parse(slurp(dir / "lr/config.json"))["train"]["learning_rate"].get<double>() == 0.002);
}

TEST_CASE("crossval streams k times epochs rows and summarizes the folds") {
  TempDir dir("cli_crossval");
  const auto r = cli({"crossval", "--data", primary(), "--k", "3", "--epochs", "2", "--out", (dir / "cv").string()});
  INFO(r.err);
  REQUIRE(r.exit_code == 0);
  const auto rows = read_metrics_csv(dir / "cv/metrics.csv");
  REQUIRE(rows.size() == 6);
  const auto summary = json::parse(slurp(dir / "cv/summary.json"));
  REQUIRE(summary["folds"].size() == 3);

  double mean_acc = 0.0, mean_f1 = 0.0, sizes = 0.0, total = 0.0;
  for (std::size_t f = 0; f < 3; ++f) {
    const auto& fold = summary["folds"][f];
    const auto& last = rows[f * 2 + 1];
    CHECK(last.fold == f + 1);
    CHECK(last.epoch == 2);
    CHECK(fold["accuracy"].get<double>() == last.metrics.accuracy);
    CHECK(fold["wall_time_s"].get<double>() == last.wall_time_s);
    mean_acc += last.metrics.accuracy / 3.0;
    mean_f1 += last.metrics.f1 / 3.0;
    sizes += fold["validation_size"].get<double>();
    total += last.wall_time_s;
  }
  CHECK(sizes == 160.0);
  CHECK(summary["mean"]["accuracy"].get<double>() == doctest::Approx(mean_acc).epsilon(1e-9));
  CHECK(summary["mean"]["f1"].get<double>() == doctest::Approx(mean_f1).epsilon(1e-9));
  CHECK(summary["total_wall_time_s"].get<double>() == doctest::Approx(total).epsilon(1e-9));
  CHECK(r.out.find("variant, accuracy, precision, recall, f1, time_s") != std::string::npos);
}

TEST_CASE("ask answers piped questions until end of input") {
  const auto& run = trained_run();
  const auto r = cli({"ask", "--model", (run / "model.mqf").string(), "--answers", answers()},
                     "What is diabetes?\n\nCould you explain what asthma is?\r\n");
  CHECK(r.exit_code == 0);
  CHECK(r.err.find("empty question") != std::string::npos);
  std::size_t labels = 0;
  for (auto pos = r.out.find("label: "); pos != std::string::npos; pos = r.out.find("label: ", pos + 1)) ++labels;
  CHECK(labels == 2);
  CHECK(r.out.find("label: diabetes definition\n") != std::string::npos);
  CHECK(r.out.find("label: asthma definition\n") != std::string::npos);
  const auto bank = load_secondary(answers());
  for (const auto& a : bank)
    if (a.label == "diabetes definition") CHECK(r.out.find("answer: " + a.answer + "\n") != std::string::npos);

  const auto fallback = cli({"ask", "--model", (run / "model.mqf").string(), "--answers", answers(), "--threshold",
                             "1.5"},
                            "What is diabetes?\n");
  CHECK(fallback.exit_code == 0);
  CHECK(fallback.out.find("answer: no confident answer\n") != std::string::npos);

  CHECK(cli({"ask", "--model", (run / "model.mqf").string(), "--answers", answers()}, "").exit_code == 0);

  const auto table2 = cli({"ask", "--model", (run / "model.mqf").string(), "--answers",
                           std::string(MEDQA_FIXTURE_DIR) + "/secondary_table2.csv"},
                          "What is diabetes?\n");
  CHECK(table2.exit_code == 0);
  CHECK(table2.out.find("answer: Diabetes mellitus is a metabolic disease that causes high blood sugar.\n") !=
        std::string::npos);
  CHECK(table2.err.find("warning: label") != std::string::npos);
}

TEST_CASE("ask fails before reading input when the checkpoint is unusable") {
  TempDir dir("cli_ask_bad");
  { std::ofstream(dir / "junk.mqf") << "not a checkpoint"; }
  const auto r = cli({"ask", "--model", (dir / "junk.mqf").string(), "--answers", answers()}, "What is diabetes?\n");
  CHECK(r.exit_code == 1);
  CHECK(r.out.find("label:") == std::string::npos);
  CHECK_FALSE(r.err.empty());
}

TEST_CASE("report renders four charts and a summary, byte-stable across runs") {
  const auto& run = trained_run();
  TempDir dir("cli_report");
  for (const auto* format : {"svg", "csv"}) {
    const auto a = (dir / (std::string(format) + "_a")).string();
    const auto b = (dir / (std::string(format) + "_b")).string();
    REQUIRE(cli({"report", "--run", run.string(), "--format", format, "--out", a}).exit_code == 0);
    REQUIRE(cli({"report", "--run", run.string(), "--format", format, "--out", b}).exit_code == 0);
    for (const auto* metric : {"accuracy", "precision", "recall", "f1"}) {
      const auto name = std::string(metric) + "." + format;
      REQUIRE(fs::exists(fs::path(a) / name));
      CHECK(slurp(fs::path(a) / name) == slurp(fs::path(b) / name));
    }
    CHECK(slurp(fs::path(a) / "summary.txt") == slurp(fs::path(b) / "summary.txt"));
  }
  const auto svg = slurp(dir / "svg_a/accuracy.svg");
  CHECK(svg.rfind("<svg", 0) == 0);
  const auto summary = slurp(dir / "svg_a/summary.txt");
  CHECK(summary.find("mini-roberta-base, ") != std::string::npos);

  CHECK(cli({"report", "--run", (dir / "nowhere").string()}).exit_code == 2);
  CHECK(cli({"report", "--run", run.string(), "--format", "png"}).exit_code == 2);
}
