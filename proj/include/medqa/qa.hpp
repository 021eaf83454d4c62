#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "medqa/dataset.hpp"
#include "medqa/model.hpp"
#include "medqa/tokenizer.hpp"

namespace medqa {

/// Label -> predefined answer lookup built from the secondary table.
class AnswerBank {
 public:
  struct Entry {
    std::string disease;
    std::string answer;
  };

  AnswerBank() = default;
  /// Throws ConfigError on duplicate labels or empty answers.
  explicit AnswerBank(std::span<const AnswerRecord> records);

  const Entry* find(std::string_view label) const;
  bool contains(std::string_view label) const { return find(label) != nullptr; }
  std::size_t size() const noexcept { return entries_.size(); }
  std::vector<std::string> labels() const;

 private:
  std::map<std::string, Entry, std::less<>> entries_;
};

/// Labels known to the classifier that the bank cannot answer, and bank labels
/// the classifier never predicts.
struct LabelMismatch {
  std::vector<std::string> missing_from_bank;
  std::vector<std::string> unused_in_bank;

  bool empty() const noexcept { return missing_from_bank.empty() && unused_in_bank.empty(); }
};

LabelMismatch check_label_alignment(const LabelIndex& labels, const AnswerBank& bank);

/// Everything the classifier stage needs; all references must outlive the view.
struct QAArtifacts {
  const TrainableModel& model;
  const Vocab& vocab;
  const LabelIndex& labels;
};

struct LabelPrediction {
  std::string label;
  std::size_t label_id = 0;
  double confidence = 0.0;  // softmax maximum
};

/// Throws InputError when the question normalizes to an empty string.
LabelPrediction predict_label(const QAArtifacts& artifacts, std::string_view question);

struct QAResponse {
  std::string label;
  double confidence = 0.0;
  /// Present unless confidence fell below the threshold.
  std::optional<std::string> answer;

  bool is_fallback() const noexcept { return !answer.has_value(); }
};

inline constexpr std::string_view kFallbackAnswer = "no confident answer";

/// Classify, then look up the label's answer. Throws UnmappedLabelError when a
/// confident label is missing from the bank.
QAResponse answer_question(std::string_view question, const QAArtifacts& artifacts, const AnswerBank& bank,
                           double threshold = 0.0);

}  // namespace medqa
