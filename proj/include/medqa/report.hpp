#pragma once

#include <cstddef>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "medqa/crossval.hpp"
#include "medqa/metrics.hpp"
#include "medqa/trainer.hpp"

namespace medqa {

inline constexpr std::string_view kMetricsHeader =
    "variant,fold,epoch,train_loss,accuracy,precision,recall,f1,wall_time_s";

/// One line of metrics.csv. Folds are numbered from 1 in the file.
struct MetricsRow {
  std::string variant;
  std::size_t fold = 1;
  std::size_t epoch = 1;
  double train_loss = 0.0;
  MetricSet metrics;
  double wall_time_s = 0.0;
};

MetricsRow to_metrics_row(const std::string& variant, const EpochMetrics& record);
/// Reals are written with 17 significant digits so they read back exactly.
std::string format_metrics_row(const MetricsRow& row);
/// Throws ParseError on a missing header, wrong column count or bad number.
std::vector<MetricsRow> parse_metrics_csv(std::string_view text);
std::vector<MetricsRow> read_metrics_csv(const std::filesystem::path& path);

/// Starts a fresh metrics.csv with its header; rows are appended and flushed
/// as they are written.
class MetricsWriter {
 public:
  explicit MetricsWriter(const std::filesystem::path& path);
  void append(const MetricsRow& row);

 private:
  std::ofstream out_;
};

enum class MetricKind { Accuracy, Precision, Recall, F1 };

std::span<const MetricKind> all_metric_kinds();
std::string_view metric_name(MetricKind kind);  // "accuracy", "precision", "recall", "f1"
double metric_value(const MetricSet& m, MetricKind kind);

/// Line chart of one metric: x = epoch, y in [0, 1] with gridlines every 0.25,
/// one polyline per (variant, fold). Output depends only on the rows.
std::string render_metric_svg(std::span<const MetricsRow> rows, MetricKind kind);

/// One row per epoch, one column per (variant, fold) series.
std::string pivot_metric_csv(std::span<const MetricsRow> rows, MetricKind kind);

/// Per variant, in order of first appearance: mean over folds of each fold's
/// final-epoch metrics, and the summed final wall time of the folds.
std::vector<SummaryRow> summarize_metrics(std::span<const MetricsRow> rows);

/// "variant, accuracy, precision, recall, f1, time_s" followed by one line per row.
std::string render_summary_table(std::span<const SummaryRow> rows);

}  // namespace medqa
