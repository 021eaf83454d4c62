#include <doctest.h>

#include <cmath>
#include <string>
#include <vector>

#include "medqa/dataset.hpp"
#include "medqa/encoder.hpp"
#include "medqa/errors.hpp"
#include "medqa/qa.hpp"
#include "medqa/trainer.hpp"

using namespace medqa;

namespace {

const std::filesystem::path kFixtures = MEDQA_FIXTURE_DIR;

ModelConfig tiny(std::size_t vocab, std::size_t labels) {
  ModelConfig c;
  c.num_layers = 1;
  c.num_heads = 2;
  c.d_model = 16;
  c.d_ff = 32;
  c.vocab_size = vocab;
  c.max_len = 12;
  c.num_labels = labels;
  c.dropout = 0.0;
  return c;
}

// Diabetes and asthma definition questions, trained until every record is fit.
struct TrainedToy {
  std::vector<QARecord> records;
  Vocab vocab;
  LabelIndex labels;
  EncoderModel model;
  AnswerBank bank;
};

TrainedToy trained_toy() {
  const std::vector<std::string> diseases{"diabetes", "asthma"};
  auto data = generate_synthetic(diseases, default_templates(), 1);
  auto vocab = build_vocab(questions_of(data.records), 1, 100);
  auto labels = LabelIndex::from_records(data.records);
  auto model = init_model(tiny(vocab.size(), labels.size()), 2);
  TrainConfig config;
  config.learning_rate = 1e-2;
  config.batch_size = 1;
  const auto examples = encode_records(data.records, vocab, labels, 12);
  fit(model, examples, examples, config);

  // The fixture answer bank supplies the diabetes answers; asthma keeps its generated answer.
  auto answers = load_secondary(kFixtures / "secondary_table2.csv");
  for (const auto& a : data.answers)
    if (a.disease == "asthma") answers.push_back(a);
  return TrainedToy{data.records, vocab, labels, std::move(model), AnswerBank(answers)};
}

double max_softmax(const Tensor& logits) {
  double m = logits[0];
  for (std::size_t i = 1; i < logits.size(); ++i) m = std::max(m, logits[i]);
  double z = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) z += std::exp(logits[i] - m);
  return 1.0 / z;
}

}  // namespace

TEST_CASE("answer bank") {
  const auto bank = AnswerBank(load_secondary(kFixtures / "secondary_table2.csv"));
  CHECK(bank.size() == 5);
  REQUIRE(bank.find("diabetes definition") != nullptr);
  CHECK(bank.find("diabetes definition")->answer ==
        "Diabetes mellitus is a metabolic disease that causes high blood sugar.");
  CHECK(bank.find("diabetes definition")->disease == "diabetes");
  CHECK(bank.find("gout definition") == nullptr);

  const std::vector<AnswerRecord> dup{{"d", "x", "a"}, {"d", "x", "b"}};
  CHECK_THROWS_AS(AnswerBank{dup}, ConfigError);
  const std::vector<AnswerRecord> empty_answer{{"d", "x", ""}};
  CHECK_THROWS_AS(AnswerBank{empty_answer}, ConfigError);
}

TEST_CASE("label alignment lists both kinds of mismatch") {
  const LabelIndex labels({"a", "b", "c"});
  const std::vector<AnswerRecord> records{{"", "b", "B"}, {"", "c", "C"}, {"", "d", "D"}};
  const auto mismatch = check_label_alignment(labels, AnswerBank(records));
  CHECK(mismatch.missing_from_bank == std::vector<std::string>{"a"});
  CHECK(mismatch.unused_in_bank == std::vector<std::string>{"d"});
  CHECK_FALSE(mismatch.empty());
  const std::vector<AnswerRecord> exact{{"", "a", "A"}, {"", "b", "B"}, {"", "c", "C"}};
  CHECK(check_label_alignment(labels, AnswerBank(exact)).empty());
}

TEST_CASE("trained toy answers the diabetes question with the fixture answer") {
  const auto toy = trained_toy();
  const QAArtifacts artifacts{toy.model, toy.vocab, toy.labels};
  const auto prediction = predict_label(artifacts, "What is diabetes?");
  CHECK(prediction.label == "diabetes definition");
  CHECK(prediction.confidence > 0.5);

  const auto response = answer_question("What is diabetes?", artifacts, toy.bank);
  REQUIRE(response.answer.has_value());
  CHECK(*response.answer == "Diabetes mellitus is a metabolic disease that causes high blood sugar.");
  CHECK(response.confidence == prediction.confidence);

  SUBCASE("every training record round-trips to its gold answer") {
    for (const auto& r : toy.records) {
      const auto got = answer_question(r.question, artifacts, toy.bank);
      REQUIRE(got.answer.has_value());
      CHECK(got.label == r.label);
      CHECK(*got.answer == toy.bank.find(r.label)->answer);
    }
  }
  SUBCASE("confidence is the softmax maximum of the logits") {
    const auto enc = encode("Tell me about asthma?", toy.vocab, 12);
    const auto logits = forward_logits(toy.model, std::span<const Encoding>(&enc, 1));
    const auto p = predict_label(artifacts, "Tell me about asthma?");
    CHECK(p.confidence == doctest::Approx(max_softmax(logits)).epsilon(1e-12));
  }
  SUBCASE("unreachable threshold always falls back") {
    for (const auto& q : {"What is diabetes?", "asthma", "zzz qqq"}) {
      const auto r = answer_question(q, artifacts, toy.bank, 1.1);
      CHECK(r.is_fallback());
      CHECK_FALSE(r.label.empty());
    }
  }
  SUBCASE("unknown words still produce a label with at least chance confidence") {
    const auto p = predict_label(artifacts, "zzz qqq xyzzy");
    CHECK(p.confidence >= 1.0 / static_cast<double>(toy.labels.size()));
    CHECK(p.label_id < toy.labels.size());
  }
  SUBCASE("bank missing the predicted label raises an unmapped-label error") {
    const std::vector<AnswerRecord> only_asthma{{"asthma", "asthma definition", "Asthma answer."}};
    try {
      answer_question("What is diabetes?", artifacts, AnswerBank(only_asthma));
      FAIL("expected UnmappedLabelError");
    } catch (const UnmappedLabelError& e) {
      CHECK(e.label() == "diabetes definition");
    }
    // Below the threshold the fallback wins before the bank is consulted.
    CHECK(answer_question("What is diabetes?", artifacts, AnswerBank(only_asthma), 1.1).is_fallback());
  }
  SUBCASE("empty questions are input errors") {
    CHECK_THROWS_AS(predict_label(artifacts, ""), InputError);
    CHECK_THROWS_AS(answer_question("  \t ", artifacts, toy.bank), InputError);
  }
  SUBCASE("determinism") {
    const auto a = answer_question("Can you elaborate on asthma?", artifacts, toy.bank);
    const auto b = answer_question("Can you elaborate on asthma?", artifacts, toy.bank);
    CHECK(a.label == b.label);
    CHECK(a.confidence == b.confidence);
    CHECK(a.answer == b.answer);
  }
}

TEST_CASE("exact logit ties resolve to the lower label id") {
  const Vocab vocab(std::vector<std::string>{"[PAD]", "[CLS]", "[SEP]", "[UNK]", "hello"});
  auto model = init_model(tiny(5, 2), 3);
  auto* w = model.find("classifier.weight");
  auto* b = model.find("classifier.bias");
  REQUIRE(w != nullptr);
  REQUIRE(b != nullptr);
  // Weight is [d_model x labels]; copy column 0 into column 1.
  for (std::size_t r = 0; r < w->value.dim(0); ++r) w->value.at(r, 1) = w->value.at(r, 0);
  b->value[1] = b->value[0];
  const LabelIndex labels({"first", "second"});
  const auto p = predict_label(QAArtifacts{model, vocab, labels}, "hello");
  CHECK(p.label_id == 0);
  CHECK(p.label == "first");
  CHECK(p.confidence == doctest::Approx(0.5));
}

TEST_CASE("scaling the logits changes confidence but not the label") {
  const auto toy = trained_toy();
  for (const double factor : {0.05, 0.5, 3.0}) {
    auto scaled = toy.model;
    for (auto* name : {"classifier.weight", "classifier.bias"})
      for (auto& v : scaled.find(name)->value.data()) v *= factor;
    for (const auto& r : toy.records) {
      const auto base = predict_label(QAArtifacts{toy.model, toy.vocab, toy.labels}, r.question);
      const auto other = predict_label(QAArtifacts{scaled, toy.vocab, toy.labels}, r.question);
      CHECK(base.label == other.label);
      if (factor < 1.0) CHECK(other.confidence <= base.confidence);
    }
  }
}

TEST_CASE("label index and model must agree") {
  const Vocab vocab;
  const auto model = init_model(tiny(6, 3), 1);
  const LabelIndex two({"a", "b"});
  CHECK_THROWS_AS(predict_label(QAArtifacts{model, vocab, two}, "hello"), ConfigError);
}
