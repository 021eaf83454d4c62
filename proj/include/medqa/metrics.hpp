#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace medqa {

/// counts[gold][predicted] over C classes.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t num_labels);

  std::size_t num_labels() const noexcept { return num_labels_; }
  std::uint64_t at(std::size_t gold, std::size_t predicted) const { return counts_[gold * num_labels_ + predicted]; }
  void add(std::size_t gold, std::size_t predicted);
  std::uint64_t total() const noexcept { return total_; }
  std::uint64_t trace() const;
  std::uint64_t row_sum(std::size_t gold) const;
  std::uint64_t column_sum(std::size_t predicted) const;

  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;

 private:
  std::size_t num_labels_;
  std::vector<std::uint64_t> counts_;
  std::uint64_t total_ = 0;
};

ConfusionMatrix confusion_matrix(std::span<const std::size_t> golds, std::span<const std::size_t> preds,
                                 std::size_t num_labels);

struct MetricSet {
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;

  friend bool operator==(const MetricSet&, const MetricSet&) = default;
};

/// Macro: unweighted mean over all classes. Weighted: mean weighted by each
/// class's gold count.
enum class Averaging { Macro, Weighted };

struct PerClassMetrics {
  std::vector<double> precision;
  std::vector<double> recall;
  std::vector<double> f1;
};

/// Undefined per-class ratios (empty row or column) count as 0 and the class
/// stays in the average.
PerClassMetrics per_class_metrics(const ConfusionMatrix& cm);

MetricSet compute_metrics(const ConfusionMatrix& cm, Averaging averaging = Averaging::Macro);

}  // namespace medqa
