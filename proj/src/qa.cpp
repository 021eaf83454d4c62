#include "medqa/qa.hpp"

#include <algorithm>

#include "medqa/errors.hpp"

namespace medqa {

AnswerBank::AnswerBank(std::span<const AnswerRecord> records) {
  for (const auto& r : records) {
    if (r.label.empty() || r.answer.empty()) throw ConfigError("answer bank rows need a label and an answer");
    if (!entries_.emplace(r.label, Entry{r.disease, r.answer}).second)
      throw ConfigError("duplicate answer label '" + r.label + "'");
  }
}

const AnswerBank::Entry* AnswerBank::find(std::string_view label) const {
  const auto it = entries_.find(label);
  return it == entries_.end() ? nullptr : &it->second;
}

std::vector<std::string> AnswerBank::labels() const {
  std::vector<std::string> out;
  for (const auto& [label, entry] : entries_) out.push_back(label);
  return out;
}

LabelMismatch check_label_alignment(const LabelIndex& labels, const AnswerBank& bank) {
  LabelMismatch out;
  for (const auto& label : labels.labels())
    if (!bank.contains(label)) out.missing_from_bank.push_back(label);
  for (const auto& label : bank.labels())
    if (!labels.find(label)) out.unused_in_bank.push_back(label);
  return out;
}

LabelPrediction predict_label(const QAArtifacts& artifacts, std::string_view question) {
  if (normalize(question).empty()) throw InputError("empty question");
  if (artifacts.labels.size() != artifacts.model.num_labels())
    throw ConfigError("label index has " + std::to_string(artifacts.labels.size()) + " labels but the model predicts " +
                      std::to_string(artifacts.model.num_labels()));
  const Encoding enc = encode(question, artifacts.vocab, artifacts.model.max_len());
  const Tensor logits = forward_logits(artifacts.model, std::span<const Encoding>(&enc, 1));
  std::size_t best = 0;
  for (std::size_t c = 1; c < logits.dim(1); ++c)
    if (logits.at(0, c) > logits.at(0, best)) best = c;
  const Tensor probs = softmax(logits);
  return LabelPrediction{artifacts.labels.label(best), best, probs.at(0, best)};
}

QAResponse answer_question(std::string_view question, const QAArtifacts& artifacts, const AnswerBank& bank,
                           double threshold) {
  const LabelPrediction prediction = predict_label(artifacts, question);
  QAResponse response{prediction.label, prediction.confidence, std::nullopt};
  if (prediction.confidence < threshold) return response;
  const auto* entry = bank.find(prediction.label);
  if (!entry) throw UnmappedLabelError(prediction.label);
  response.answer = entry->answer;
  return response;
}

}  // namespace medqa
