#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "medqa/tokenizer.hpp"

namespace medqa {

/// Row of the primary table: a question and the label it should be classified as.
struct QARecord {
  std::string disease;
  std::string question;
  std::string label;

  friend bool operator==(const QARecord&, const QARecord&) = default;
};

/// Row of the secondary table: the predefined answer for a label.
struct AnswerRecord {
  std::string disease;
  std::string label;
  std::string answer;

  friend bool operator==(const AnswerRecord&, const AnswerRecord&) = default;
};

inline constexpr std::string_view kPrimaryHeader = "Disease,Question,Label";
inline constexpr std::string_view kSecondaryHeader = "Disease,Label,Answer";

std::vector<QARecord> parse_primary(std::string_view text);
std::vector<AnswerRecord> parse_secondary(std::string_view text);
std::vector<QARecord> load_primary(const std::filesystem::path& path);
/// Rows in file order. Duplicate labels are rejected with the offending line.
std::vector<AnswerRecord> load_secondary(const std::filesystem::path& path);

void write_primary(const std::filesystem::path& path, std::span<const QARecord> records);
void write_secondary(const std::filesystem::path& path, std::span<const AnswerRecord> records);

/// Bijection between label strings and dense ids, assigned in sorted order.
class LabelIndex {
 public:
  LabelIndex() = default;
  /// Deduplicates and sorts.
  explicit LabelIndex(std::vector<std::string> labels);
  static LabelIndex from_records(std::span<const QARecord> records);

  std::size_t size() const noexcept { return labels_.size(); }
  std::size_t id(std::string_view label) const;  // throws IndexError
  std::optional<std::size_t> find(std::string_view label) const;
  const std::string& label(std::size_t id) const { return labels_.at(id); }
  const std::vector<std::string>& labels() const noexcept { return labels_; }

  friend bool operator==(const LabelIndex& a, const LabelIndex& b) { return a.labels_ == b.labels_; }

 private:
  std::vector<std::string> labels_;
  std::map<std::string, std::size_t, std::less<>> ids_;
};

/// Record indices of the two sides of a split.
struct SplitIndices {
  std::vector<std::size_t> train;
  std::vector<std::size_t> validation;
};

/// Seeded shuffle; train receives floor(n * ratio) records.
SplitIndices split_train_val(std::size_t n, double ratio, std::uint64_t seed);

template <typename T>
std::pair<std::vector<T>, std::vector<T>> split_train_val(std::span<const T> records, double ratio,
                                                          std::uint64_t seed) {
  const auto split = split_train_val(records.size(), ratio, seed);
  std::pair<std::vector<T>, std::vector<T>> out;
  for (const auto i : split.train) out.first.push_back(records[i]);
  for (const auto i : split.validation) out.second.push_back(records[i]);
  return out;
}

struct FoldPlan {
  std::size_t k = 0;
  std::vector<std::size_t> fold_of;  // record index -> fold id in [0, k)

  std::vector<std::size_t> validation_indices(std::size_t fold) const;
  std::vector<std::size_t> training_indices(std::size_t fold) const;
  std::vector<std::size_t> fold_sizes() const;
};

/// Assigns every record to one of k folds. Stratified mode shuffles within
/// each label, then deals labels in sorted order round-robin across folds, so
/// each label's per-fold counts and the overall fold sizes differ by at most one.
FoldPlan kfold_split(std::span<const std::size_t> labels, std::size_t k, std::uint64_t seed, bool stratified = true);
FoldPlan kfold_split(std::span<const QARecord> records, std::size_t k, std::uint64_t seed, bool stratified = true);

struct QuestionTemplate {
  std::string pattern;  // contains "{disease}"
  std::string label_suffix;
};

struct SyntheticDataset {
  std::vector<QARecord> records;
  std::vector<AnswerRecord> answers;
};

/// One record per (disease, template), labelled "<disease> <suffix>", in a
/// seeded order, and one generated answer per distinct label.
SyntheticDataset generate_synthetic(std::span<const std::string> diseases,
                                    std::span<const QuestionTemplate> templates, std::uint64_t seed);

/// The 20 diseases and 8 paraphrase templates used for the built-in dataset.
/// Every template maps to the "definition" label, so each label has 8 records.
std::vector<std::string> default_diseases();
std::vector<QuestionTemplate> default_templates();

/// Tokenized question plus its label id.
struct LabeledExample {
  Encoding input;
  std::size_t label = 0;
};

std::vector<LabeledExample> encode_records(std::span<const QARecord> records, const Vocab& vocab,
                                           const LabelIndex& labels, std::size_t max_len);

std::vector<std::string> questions_of(std::span<const QARecord> records);

}  // namespace medqa
