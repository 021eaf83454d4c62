#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "medqa/dataset.hpp"
#include "medqa/trainer.hpp"

namespace medqa {

/// Builds a fresh model; must be deterministic in its seed.
using ModelFactory = std::function<std::unique_ptr<TrainableModel>(std::uint64_t seed)>;

/// Which epoch of each fold feeds the reported means.
enum class FoldSelection { FinalEpoch, BestEpoch };

struct CrossValOptions {
  std::size_t k = 5;
  bool stratified = true;
  /// Folds trained concurrently; results are merged by fold id.
  std::size_t jobs = 1;
  FoldSelection selection = FoldSelection::FinalEpoch;
  Averaging averaging = Averaging::Macro;
  std::string variant_name;
  /// Invoked for every epoch record. With jobs > 1 it is invoked after all
  /// folds finish, in fold order.
  std::function<void(const EpochMetrics&)> on_epoch;
  /// Receives each fold's model after its final epoch. With jobs > 1 it runs
  /// on the worker thread that trained the fold.
  std::function<void(std::size_t fold, std::unique_ptr<TrainableModel> model)> on_fold_model;
};

struct CVSummary {
  std::string variant_name;
  FoldPlan plan;
  std::vector<MetricSet> fold_metrics;          // selected epoch of each fold
  MetricSet mean;                               // arithmetic mean of fold_metrics
  std::vector<double> fold_wall_times_s;        // training time of each fold
  double total_wall_time_s = 0.0;               // sum of fold_wall_times_s
  std::vector<std::vector<EpochMetrics>> histories;  // k × epochs
};

MetricSet mean_metrics(std::span<const MetricSet> metrics);

/// k-fold cross-validation: the model for fold f comes from factory(seed + f)
/// and is trained with seed + f on the other folds, evaluated per epoch on fold f.
/// `seed` is train_config.seed. Fold failures are rethrown naming the fold.
CVSummary run_cross_validation(std::span<const LabeledExample> data, const ModelFactory& factory,
                               const TrainConfig& train_config, const CrossValOptions& options = {});

struct SummaryRow {
  std::string variant;
  std::string accuracy;  // percentages, two decimals, half-up
  std::string precision;
  std::string recall;
  std::string f1;
  double time_s = 0.0;
};

/// Fraction in [0, 1] rendered as a percentage with two decimals, rounding half up.
std::string format_percent(double fraction);

std::vector<SummaryRow> aggregate_summary(std::span<const CVSummary> summaries);
SummaryRow summary_row(const std::string& variant, const MetricSet& mean, double time_s);

/// "78.47, 72.91, 76.95, 73.56"
std::string format_metrics_cells(const SummaryRow& row);

}  // namespace medqa
