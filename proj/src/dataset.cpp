#include "medqa/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include "medqa/csv.hpp"
#include "medqa/errors.hpp"
#include "medqa/random.hpp"

namespace medqa {

namespace {

std::vector<csv::Row> parse_table(std::string_view text, std::string_view header) {
  auto rows = csv::parse(text);
  const std::string expected(header);
  if (rows.empty() || csv::format_row(rows.front().fields) != expected)
    throw ParseError(ParseError::Kind::MissingHeader, rows.empty() ? 1 : rows.front().line,
                     "expected header \"" + expected + "\"");
  rows.erase(rows.begin());
  for (const auto& row : rows)
    if (row.fields.size() != 3)
      throw ParseError(ParseError::Kind::ColumnCount, row.line,
                       "expected 3 columns, found " + std::to_string(row.fields.size()));
  return rows;
}

void require_field(const csv::Row& row, std::size_t column, std::string_view name) {
  if (row.fields[column].empty())
    throw ParseError(ParseError::Kind::EmptyField, row.line, std::string(name) + " must not be empty");
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ParseError(ParseError::Kind::Io, 0, "cannot write " + path.string());
  out << text;
}

std::string capitalize(std::string s) {
  if (!s.empty() && s[0] >= 'a' && s[0] <= 'z') s[0] = static_cast<char>(s[0] - 'a' + 'A');
  return s;
}

}  // namespace

std::vector<QARecord> parse_primary(std::string_view text) {
  std::vector<QARecord> records;
  for (auto& row : parse_table(text, kPrimaryHeader)) {
    require_field(row, 1, "Question");
    require_field(row, 2, "Label");
    records.push_back(QARecord{std::move(row.fields[0]), std::move(row.fields[1]), std::move(row.fields[2])});
  }
  return records;
}

std::vector<AnswerRecord> parse_secondary(std::string_view text) {
  std::vector<AnswerRecord> records;
  std::set<std::string, std::less<>> seen;
  for (auto& row : parse_table(text, kSecondaryHeader)) {
    require_field(row, 1, "Label");
    require_field(row, 2, "Answer");
    if (!seen.insert(row.fields[1]).second)
      throw ParseError(ParseError::Kind::DuplicateLabel, row.line, "duplicate answer label '" + row.fields[1] + "'");
    records.push_back(AnswerRecord{std::move(row.fields[0]), std::move(row.fields[1]), std::move(row.fields[2])});
  }
  return records;
}

std::vector<QARecord> load_primary(const std::filesystem::path& path) {
  try {
    return parse_primary(csv::read_file(path));
  } catch (const ParseError& e) {
    throw ParseError(e.kind(), e.line(), path.string() + ": " + e.detail());
  }
}

std::vector<AnswerRecord> load_secondary(const std::filesystem::path& path) {
  try {
    return parse_secondary(csv::read_file(path));
  } catch (const ParseError& e) {
    throw ParseError(e.kind(), e.line(), path.string() + ": " + e.detail());
  }
}

void write_primary(const std::filesystem::path& path, std::span<const QARecord> records) {
  std::string text = std::string(kPrimaryHeader) + "\n";
  for (const auto& r : records) text += csv::format_row({r.disease, r.question, r.label}) + "\n";
  write_text(path, text);
}

void write_secondary(const std::filesystem::path& path, std::span<const AnswerRecord> records) {
  std::string text = std::string(kSecondaryHeader) + "\n";
  for (const auto& r : records) text += csv::format_row({r.disease, r.label, r.answer}) + "\n";
  write_text(path, text);
}

// ---------------------------------------------------------------------------

LabelIndex::LabelIndex(std::vector<std::string> labels) : labels_(std::move(labels)) {
  std::sort(labels_.begin(), labels_.end());
  labels_.erase(std::unique(labels_.begin(), labels_.end()), labels_.end());
  for (std::size_t i = 0; i < labels_.size(); ++i) ids_.emplace(labels_[i], i);
}

LabelIndex LabelIndex::from_records(std::span<const QARecord> records) {
  std::vector<std::string> labels;
  for (const auto& r : records) labels.push_back(r.label);
  return LabelIndex(std::move(labels));
}

std::optional<std::size_t> LabelIndex::find(std::string_view label) const {
  const auto it = ids_.find(label);
  if (it == ids_.end()) return std::nullopt;
  return it->second;
}

std::size_t LabelIndex::id(std::string_view label) const {
  const auto found = find(label);
  if (!found) throw IndexError("unknown label '" + std::string(label) + "'");
  return *found;
}

// ---------------------------------------------------------------------------

SplitIndices split_train_val(std::size_t n, double ratio, std::uint64_t seed) {
  if (!(ratio > 0.0 && ratio < 1.0)) throw UsageError("split ratio must lie strictly between 0 and 1");
  if (n < 2) throw UsageError("split needs at least 2 records");
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(seed);
  rng.shuffle(std::span<std::size_t>(order));
  // The tiny offset absorbs representation error such as 0.7 * 10 = 6.999...
  const auto train_size = static_cast<std::size_t>(std::floor(static_cast<double>(n) * ratio + 1e-9));
  if (train_size == 0 || train_size == n)
    throw UsageError("split ratio leaves one side empty for " + std::to_string(n) + " records");
  SplitIndices out;
  out.train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(train_size));
  out.validation.assign(order.begin() + static_cast<std::ptrdiff_t>(train_size), order.end());
  return out;
}

std::vector<std::size_t> FoldPlan::validation_indices(std::size_t fold) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < fold_of.size(); ++i)
    if (fold_of[i] == fold) out.push_back(i);
  return out;
}

std::vector<std::size_t> FoldPlan::training_indices(std::size_t fold) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < fold_of.size(); ++i)
    if (fold_of[i] != fold) out.push_back(i);
  return out;
}

std::vector<std::size_t> FoldPlan::fold_sizes() const {
  std::vector<std::size_t> sizes(k, 0);
  for (const auto f : fold_of) ++sizes[f];
  return sizes;
}

FoldPlan kfold_split(std::span<const std::size_t> labels, std::size_t k, std::uint64_t seed, bool stratified) {
  const std::size_t n = labels.size();
  if (k < 2) throw UsageError("kfold_split: k must be at least 2");
  if (n < k) throw UsageError("kfold_split: " + std::to_string(n) + " records cannot fill " + std::to_string(k) + " folds");
  Rng rng(seed);
  std::vector<std::size_t> order;
  order.reserve(n);
  if (stratified) {
    std::map<std::size_t, std::vector<std::size_t>> by_label;
    for (std::size_t i = 0; i < n; ++i) by_label[labels[i]].push_back(i);
    for (auto& [label, members] : by_label) {
      rng.shuffle(std::span<std::size_t>(members));
      order.insert(order.end(), members.begin(), members.end());
    }
  } else {
    for (std::size_t i = 0; i < n; ++i) order.push_back(i);
    rng.shuffle(std::span<std::size_t>(order));
  }
  FoldPlan plan;
  plan.k = k;
  plan.fold_of.assign(n, 0);
  for (std::size_t pos = 0; pos < n; ++pos) plan.fold_of[order[pos]] = pos % k;
  return plan;
}

FoldPlan kfold_split(std::span<const QARecord> records, std::size_t k, std::uint64_t seed, bool stratified) {
  const auto index = LabelIndex::from_records(records);
  std::vector<std::size_t> labels;
  for (const auto& r : records) labels.push_back(index.id(r.label));
  return kfold_split(labels, k, seed, stratified);
}

// ---------------------------------------------------------------------------

SyntheticDataset generate_synthetic(std::span<const std::string> diseases,
                                    std::span<const QuestionTemplate> templates, std::uint64_t seed) {
  static constexpr std::string_view kPlaceholder = "{disease}";
  if (diseases.empty() || templates.empty()) throw UsageError("generate_synthetic: diseases and templates must be non-empty");
  for (const auto& t : templates) {
    if (t.pattern.find(kPlaceholder) == std::string::npos)
      throw UsageError("template \"" + t.pattern + "\" has no {disease} placeholder");
    if (t.label_suffix.empty()) throw UsageError("template \"" + t.pattern + "\" has an empty label suffix");
  }
  SyntheticDataset out;
  std::set<std::string> labels_seen;
  for (const auto& disease : diseases) {
    if (disease.empty()) throw UsageError("generate_synthetic: empty disease name");
    for (const auto& t : templates) {
      std::string question = t.pattern;
      for (auto pos = question.find(kPlaceholder); pos != std::string::npos;
           pos = question.find(kPlaceholder, pos + disease.size()))
        question.replace(pos, kPlaceholder.size(), disease);
      std::string label = disease + " " + t.label_suffix;
      if (labels_seen.insert(label).second)
        out.answers.push_back(AnswerRecord{disease, label,
                                           "Reference answer on " + t.label_suffix + " for " + disease + ". " +
                                               capitalize(label) + " information is predefined for this label."});
      out.records.push_back(QARecord{disease, std::move(question), std::move(label)});
    }
  }
  Rng rng(seed);
  rng.shuffle(std::span<QARecord>(out.records));
  return out;
}

std::vector<std::string> default_diseases() {
  return {"diabetes",  "asthma",    "arthritis", "migraine",   "hypertension", "influenza", "pneumonia",
          "bronchitis", "anemia",   "psoriasis", "eczema",     "gout",         "lupus",     "tuberculosis",
          "malaria",   "measles",   "hepatitis", "osteoporosis", "glaucoma",   "insomnia"};
}

std::vector<QuestionTemplate> default_templates() {
  return {
      {"What is {disease}?", "definition"},
      {"Tell me about {disease}?", "definition"},
      {"What kind of disease is {disease}?", "definition"},
      {"Can you elaborate on {disease}?", "definition"},
      {"What can you tell me about {disease}?", "definition"},
      {"How would you define {disease}?", "definition"},
      {"Could you explain what {disease} is?", "definition"},
      {"Give me an overview of {disease}.", "definition"},
  };
}

std::vector<LabeledExample> encode_records(std::span<const QARecord> records, const Vocab& vocab,
                                           const LabelIndex& labels, std::size_t max_len) {
  std::vector<LabeledExample> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(LabeledExample{encode(r.question, vocab, max_len), labels.id(r.label)});
  return out;
}

std::vector<std::string> questions_of(std::span<const QARecord> records) {
  std::vector<std::string> out;
  for (const auto& r : records) out.push_back(r.question);
  return out;
}

}  // namespace medqa
