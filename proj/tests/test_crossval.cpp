#include <doctest.h>

#include <algorithm>
#include <memory>
#include <string>
#include <vector>

#include "medqa/crossval.hpp"
#include "medqa/encoder.hpp"
#include "medqa/errors.hpp"

using namespace medqa;

namespace {

// Always predicts class 0: a frozen bias broadcast over the batch.
class ConstantModel final : public TrainableModel {
 public:
  explicit ConstantModel(std::size_t labels) {
    Tensor bias({labels}, 0.0);
    bias[0] = 1.0;
    params_.push_back(Parameter{"bias", bias, false});
  }
  std::size_t num_labels() const override { return params_[0].value.size(); }
  std::size_t max_len() const override { return 4; }
  std::vector<Parameter*> parameters() override { return {&params_[0]}; }
  std::vector<const Parameter*> parameters() const override { return {&params_[0]}; }
  Var forward(Tape& tape, std::span<const Var> params, std::span<const Encoding> batch, Mode, Rng*) const override {
    const Var zeros = tape.constant(Tensor({batch.size(), num_labels()}, 0.0));
    return tape.add_bias(zeros, params[0]);
  }
  std::unique_ptr<TrainableModel> clone() const override { return std::make_unique<ConstantModel>(*this); }

 private:
  std::vector<Parameter> params_;
};

std::vector<LabeledExample> balanced(std::size_t labels, std::size_t per_label) {
  std::vector<LabeledExample> data;
  for (std::size_t j = 0; j < per_label; ++j)
    for (std::size_t l = 0; l < labels; ++l) {
      Encoding e;
      e.ids = {1, 4 + l, 2, 0};
      e.mask = {1, 1, 1, 0};
      data.push_back({e, l});
    }
  return data;
}

ModelConfig tiny(std::size_t labels) {
  ModelConfig c;
  c.num_layers = 1;
  c.num_heads = 2;
  c.d_model = 16;
  c.d_ff = 32;
  c.vocab_size = 12;
  c.max_len = 4;
  c.num_labels = labels;
  return c;
}

ModelFactory tiny_factory(std::size_t labels) {
  return [labels](std::uint64_t seed) { return std::make_unique<EncoderModel>(init_model(tiny(labels), seed)); };
}

TrainConfig short_config() {
  TrainConfig c;
  c.epochs = 3;
  c.batch_size = 4;
  c.learning_rate = 1e-2;
  c.seed = 42;
  return c;
}

}  // namespace

TEST_CASE("constant predictor scores exactly one in four on a balanced 4-label set") {
  const auto data = balanced(4, 10);
  const ModelFactory factory = [](std::uint64_t) { return std::make_unique<ConstantModel>(4); };
  TrainConfig config = short_config();
  const auto summary = run_cross_validation(data, factory, config);
  REQUIRE(summary.fold_metrics.size() == 5);
  for (const auto& m : summary.fold_metrics) {
    // Each fold holds 2 records of every label and every prediction is label 0.
    CHECK(m.accuracy == 0.25);
    CHECK(m.precision == 0.25 / 4.0);
    CHECK(m.recall == 1.0 / 4.0);
    CHECK(m.f1 == doctest::Approx((2.0 * 0.25 * 1.0 / 1.25) / 4.0));
  }
  CHECK(summary.mean.accuracy == 0.25);
}

TEST_CASE("summary structure and partition") {
  const auto data = balanced(3, 5);
  const auto config = short_config();
  CrossValOptions options;
  options.variant_name = "tiny";
  std::vector<std::pair<std::size_t, std::size_t>> streamed;
  options.on_epoch = [&](const EpochMetrics& m) { streamed.emplace_back(m.fold, m.epoch); };
  std::vector<std::size_t> handed_over;
  options.on_fold_model = [&](std::size_t fold, std::unique_ptr<TrainableModel> model) {
    CHECK(model != nullptr);
    handed_over.push_back(fold);
  };
  const auto summary = run_cross_validation(data, tiny_factory(3), config, options);

  CHECK(summary.variant_name == "tiny");
  std::vector<int> seen(data.size(), 0);
  for (std::size_t f = 0; f < 5; ++f)
    for (const auto i : summary.plan.validation_indices(f)) ++seen[i];
  CHECK(std::all_of(seen.begin(), seen.end(), [](int c) { return c == 1; }));

  REQUIRE(summary.histories.size() == 5);
  double total = 0.0;
  for (std::size_t f = 0; f < 5; ++f) {
    REQUIRE(summary.histories[f].size() == 3);
    for (std::size_t e = 0; e < 3; ++e) {
      CHECK(summary.histories[f][e].fold == f);
      CHECK(summary.histories[f][e].epoch == e + 1);
      CHECK(summary.histories[f][e].wall_time_s > 0.0);
      if (e > 0) CHECK(summary.histories[f][e].wall_time_s >= summary.histories[f][e - 1].wall_time_s);
    }
    CHECK(summary.fold_metrics[f] == summary.histories[f].back().validation);
    CHECK(summary.fold_wall_times_s[f] == summary.histories[f].back().wall_time_s);
    total += summary.fold_wall_times_s[f];
  }
  CHECK(summary.total_wall_time_s == doctest::Approx(total).epsilon(1e-12));
  CHECK(streamed.size() == 15);
  CHECK(std::is_sorted(streamed.begin(), streamed.end()));
  CHECK(handed_over == std::vector<std::size_t>{0, 1, 2, 3, 4});
}

TEST_CASE("mean equals recomputation from stored fold values") {
  const auto summary = run_cross_validation(balanced(3, 5), tiny_factory(3), short_config());
  double acc = 0, p = 0, r = 0, f = 0;
  for (const auto& m : summary.fold_metrics) {
    acc += m.accuracy;
    p += m.precision;
    r += m.recall;
    f += m.f1;
  }
  CHECK(std::abs(summary.mean.accuracy - acc / 5) <= 1e-12);
  CHECK(std::abs(summary.mean.precision - p / 5) <= 1e-12);
  CHECK(std::abs(summary.mean.recall - r / 5) <= 1e-12);
  CHECK(std::abs(summary.mean.f1 - f / 5) <= 1e-12);

  std::vector<MetricSet> reversed(summary.fold_metrics.rbegin(), summary.fold_metrics.rend());
  const auto m = mean_metrics(reversed);
  CHECK(std::abs(m.accuracy - summary.mean.accuracy) <= 1e-12);
  CHECK(std::abs(m.f1 - summary.mean.f1) <= 1e-12);
  CHECK_THROWS_AS(mean_metrics(std::span<const MetricSet>{}), UsageError);
}

TEST_CASE("parallel folds give the same results as sequential folds") {
  const auto data = balanced(3, 5);
  const auto config = short_config();
  const auto sequential = run_cross_validation(data, tiny_factory(3), config);
  CrossValOptions options;
  options.jobs = 3;
  std::vector<std::size_t> folds;
  options.on_epoch = [&](const EpochMetrics& m) { folds.push_back(m.fold); };
  const auto parallel = run_cross_validation(data, tiny_factory(3), config, options);
  CHECK(parallel.fold_metrics == sequential.fold_metrics);
  CHECK(parallel.mean == sequential.mean);
  for (std::size_t f = 0; f < 5; ++f)
    for (std::size_t e = 0; e < 3; ++e)
      CHECK(parallel.histories[f][e].train_loss == sequential.histories[f][e].train_loss);
  CHECK(std::is_sorted(folds.begin(), folds.end()));
  CHECK(folds.size() == 15);
}

TEST_CASE("best-epoch selection picks the most accurate epoch") {
  CrossValOptions options;
  options.selection = FoldSelection::BestEpoch;
  const auto summary = run_cross_validation(balanced(3, 5), tiny_factory(3), short_config(), options);
  for (std::size_t f = 0; f < 5; ++f) {
    double best = 0.0;
    for (const auto& e : summary.histories[f]) best = std::max(best, e.validation.accuracy);
    CHECK(summary.fold_metrics[f].accuracy == best);
  }
}

TEST_CASE("fold failures name the fold") {
  const auto config = short_config();
  const ModelFactory factory = [](std::uint64_t seed) -> std::unique_ptr<TrainableModel> {
    if (seed == 42 + 2) return nullptr;
    return std::make_unique<ConstantModel>(3);
  };
  try {
    run_cross_validation(balanced(3, 5), factory, config);
    FAIL("expected failure");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("fold 3 of 5") != std::string::npos);
  }
  CHECK_THROWS_AS(run_cross_validation(balanced(3, 1), factory, config), UsageError);
}

TEST_CASE("percent formatting") {
  CHECK(format_percent(0.005) == "0.50");
  CHECK(format_percent(1.0) == "100.00");
  CHECK(format_percent(0.0) == "0.00");
  CHECK(format_percent(0.99874) == "99.87");
  CHECK(format_percent(0.99875) == "99.88");
  // The reported LoRA row, fed in as means.
  const auto lora = summary_row("LoRA Roberta-large", MetricSet{0.7847, 0.7291, 0.7695, 0.7356}, 1.0);
  CHECK(format_metrics_cells(lora) == "78.47, 72.91, 76.95, 73.56");
  const auto perfect = summary_row("Bert Large Uncased", MetricSet{1.0, 1.0, 1.0, 1.0}, 1.0);
  CHECK(format_metrics_cells(perfect) == "100.00, 100.00, 100.00, 100.00");
}

TEST_CASE("aggregate keeps the given order") {
  CVSummary a, b;
  a.variant_name = "b-variant";
  a.mean = MetricSet{0.5, 0.5, 0.5, 0.5};
  a.total_wall_time_s = 3.0;
  b.variant_name = "a-variant";
  b.mean = MetricSet{1.0, 1.0, 1.0, 1.0};
  b.total_wall_time_s = 4.0;
  const std::vector<CVSummary> both{a, b};
  const auto rows = aggregate_summary(both);
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].variant == "b-variant");
  CHECK(rows[0].accuracy == "50.00");
  CHECK(rows[1].f1 == "100.00");
  CHECK(rows[1].time_s == 4.0);
  CHECK_THROWS_AS(aggregate_summary(std::span<const CVSummary>{}), UsageError);
}
