#include "medqa/metrics.hpp"

#include <string>

#include "medqa/errors.hpp"

namespace medqa {

ConfusionMatrix::ConfusionMatrix(std::size_t num_labels)
    : num_labels_(num_labels), counts_(num_labels * num_labels, 0) {
  if (num_labels == 0) throw UsageError("confusion matrix needs at least one class");
}

void ConfusionMatrix::add(std::size_t gold, std::size_t predicted) {
  if (gold >= num_labels_ || predicted >= num_labels_)
    throw UsageError("label id outside [0, " + std::to_string(num_labels_) + ")");
  ++counts_[gold * num_labels_ + predicted];
  ++total_;
}

std::uint64_t ConfusionMatrix::trace() const {
  std::uint64_t sum = 0;
  for (std::size_t c = 0; c < num_labels_; ++c) sum += at(c, c);
  return sum;
}

std::uint64_t ConfusionMatrix::row_sum(std::size_t gold) const {
  std::uint64_t sum = 0;
  for (std::size_t p = 0; p < num_labels_; ++p) sum += at(gold, p);
  return sum;
}

std::uint64_t ConfusionMatrix::column_sum(std::size_t predicted) const {
  std::uint64_t sum = 0;
  for (std::size_t g = 0; g < num_labels_; ++g) sum += at(g, predicted);
  return sum;
}

ConfusionMatrix confusion_matrix(std::span<const std::size_t> golds, std::span<const std::size_t> preds,
                                 std::size_t num_labels) {
  if (golds.size() != preds.size())
    throw UsageError("confusion_matrix: " + std::to_string(golds.size()) + " golds vs " +
                     std::to_string(preds.size()) + " predictions");
  ConfusionMatrix cm(num_labels);
  for (std::size_t i = 0; i < golds.size(); ++i) cm.add(golds[i], preds[i]);
  return cm;
}

PerClassMetrics per_class_metrics(const ConfusionMatrix& cm) {
  const std::size_t c = cm.num_labels();
  PerClassMetrics out{std::vector<double>(c), std::vector<double>(c), std::vector<double>(c)};
  for (std::size_t k = 0; k < c; ++k) {
    const auto hit = static_cast<double>(cm.at(k, k));
    const auto predicted = cm.column_sum(k);
    const auto actual = cm.row_sum(k);
    const double p = predicted ? hit / static_cast<double>(predicted) : 0.0;
    const double r = actual ? hit / static_cast<double>(actual) : 0.0;
    out.precision[k] = p;
    out.recall[k] = r;
    out.f1[k] = p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0;
  }
  return out;
}

MetricSet compute_metrics(const ConfusionMatrix& cm, Averaging averaging) {
  if (cm.total() == 0) throw UsageError("compute_metrics: empty confusion matrix");
  const auto per_class = per_class_metrics(cm);
  const std::size_t c = cm.num_labels();
  MetricSet m;
  m.accuracy = static_cast<double>(cm.trace()) / static_cast<double>(cm.total());
  double weight_total = 0.0;
  for (std::size_t k = 0; k < c; ++k) {
    const double w = averaging == Averaging::Macro ? 1.0 : static_cast<double>(cm.row_sum(k));
    m.precision += w * per_class.precision[k];
    m.recall += w * per_class.recall[k];
    m.f1 += w * per_class.f1[k];
    weight_total += w;
  }
  m.precision /= weight_total;
  m.recall /= weight_total;
  m.f1 /= weight_total;
  return m;
}

}  // namespace medqa
