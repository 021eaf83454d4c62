#include "medqa/crossval.hpp"

#include <cmath>
#include <cstdio>
#include <exception>
#include <thread>

#include "medqa/errors.hpp"

namespace medqa {

namespace {

struct FoldOutcome {
  std::vector<EpochMetrics> history;
  std::exception_ptr error;
};

std::size_t best_epoch(const std::vector<EpochMetrics>& history) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < history.size(); ++i)
    if (history[i].validation.accuracy > history[best].validation.accuracy) best = i;
  return best;
}

}  // namespace

MetricSet mean_metrics(std::span<const MetricSet> metrics) {
  if (metrics.empty()) throw UsageError("mean_metrics: nothing to average");
  MetricSet mean;
  for (const auto& m : metrics) {
    mean.accuracy += m.accuracy;
    mean.precision += m.precision;
    mean.recall += m.recall;
    mean.f1 += m.f1;
  }
  const double n = static_cast<double>(metrics.size());
  mean.accuracy /= n;
  mean.precision /= n;
  mean.recall /= n;
  mean.f1 /= n;
  return mean;
}

CVSummary run_cross_validation(std::span<const LabeledExample> data, const ModelFactory& factory,
                               const TrainConfig& train_config, const CrossValOptions& options) {
  train_config.validate();
  std::vector<std::size_t> labels;
  for (const auto& e : data) labels.push_back(e.label);
  CVSummary summary;
  summary.variant_name = options.variant_name;
  summary.plan = kfold_split(labels, options.k, train_config.seed, options.stratified);

  const std::size_t k = options.k;
  std::vector<FoldOutcome> outcomes(k);
  auto run_fold = [&](std::size_t fold, bool stream) {
    try {
      std::vector<LabeledExample> train, validation;
      for (const auto i : summary.plan.training_indices(fold)) train.push_back(data[i]);
      for (const auto i : summary.plan.validation_indices(fold)) validation.push_back(data[i]);
      const std::uint64_t fold_seed = train_config.seed + fold;
      auto model = factory(fold_seed);
      if (!model) throw UsageError("model factory returned no model");
      TrainConfig fold_config = train_config;
      fold_config.seed = fold_seed;
      FitOptions fit_options;
      fit_options.fold = fold;
      fit_options.averaging = options.averaging;
      if (stream) fit_options.on_epoch = options.on_epoch;
      outcomes[fold].history = fit(*model, train, validation, fold_config, fit_options);
      if (options.on_fold_model) options.on_fold_model(fold, std::move(model));
    } catch (...) {
      outcomes[fold].error = std::current_exception();
    }
  };

  const std::size_t jobs = std::max<std::size_t>(1, std::min(options.jobs, k));
  if (jobs == 1) {
    for (std::size_t f = 0; f < k; ++f) {
      run_fold(f, true);
      if (outcomes[f].error) break;
    }
  } else {
    for (std::size_t first = 0; first < k; first += jobs) {
      std::vector<std::jthread> workers;
      for (std::size_t f = first; f < std::min(k, first + jobs); ++f) workers.emplace_back(run_fold, f, false);
    }
  }

  for (std::size_t f = 0; f < k; ++f) {
    if (!outcomes[f].error) continue;
    try {
      std::rethrow_exception(outcomes[f].error);
    } catch (const std::exception& e) {
      throw Error("fold " + std::to_string(f + 1) + " of " + std::to_string(k) + " failed: " + e.what());
    }
  }

  for (std::size_t f = 0; f < k; ++f) {
    auto& history = outcomes[f].history;
    if (jobs > 1 && options.on_epoch)
      for (const auto& record : history) options.on_epoch(record);
    const std::size_t chosen =
        options.selection == FoldSelection::FinalEpoch ? history.size() - 1 : best_epoch(history);
    summary.fold_metrics.push_back(history[chosen].validation);
    summary.fold_wall_times_s.push_back(history.back().wall_time_s);
    summary.total_wall_time_s += history.back().wall_time_s;
    summary.histories.push_back(std::move(history));
  }
  summary.mean = mean_metrics(summary.fold_metrics);
  return summary;
}

std::string format_percent(double fraction) {
  // Work in hundredths of a percent; the small offset keeps values such as
  // 0.7847 (stored as 0.78469999...) on the intended side of the rounding.
  const double hundredths = std::floor(fraction * 10000.0 + 0.5 + 1e-7);
  char buffer[32];
  std::snprintf(buffer, sizeof buffer, "%.2f", hundredths / 100.0);
  return buffer;
}

SummaryRow summary_row(const std::string& variant, const MetricSet& mean, double time_s) {
  return SummaryRow{variant,
                    format_percent(mean.accuracy),
                    format_percent(mean.precision),
                    format_percent(mean.recall),
                    format_percent(mean.f1),
                    time_s};
}

std::vector<SummaryRow> aggregate_summary(std::span<const CVSummary> summaries) {
  if (summaries.empty()) throw UsageError("aggregate_summary: no summaries");
  std::vector<SummaryRow> rows;
  for (const auto& s : summaries) rows.push_back(summary_row(s.variant_name, s.mean, s.total_wall_time_s));
  return rows;
}

std::string format_metrics_cells(const SummaryRow& row) {
  return row.accuracy + ", " + row.precision + ", " + row.recall + ", " + row.f1;
}

}  // namespace medqa
