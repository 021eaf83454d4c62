#include <doctest.h>

#include <string>
#include <vector>

#include "medqa/errors.hpp"
#include "medqa/random.hpp"
#include "medqa/tokenizer.hpp"

using namespace medqa;

TEST_CASE("normalize examples") {
  CHECK(normalize("What is Diabetes?") == "what is diabetes?");
  CHECK(normalize("\xC3\x89lan  Vital") == "elan vital");  // "Élan  Vital"
  CHECK(normalize("") == "");
  CHECK(normalize("  \t a \n\n b  ") == "a b");
  CHECK(normalize("E\xCC\x81") == "e");                    // decomposed E + combining acute
  CHECK(normalize("\xC3\x9C" "BER na\xC3\xAF" "ve") == "uber naive");
  CHECK(normalize("a\xE2\x80\x83" "b") == "a b");          // em space
  CHECK(normalize("\xFF" "x") == "\xEF\xBF\xBD" "x");      // invalid byte -> U+FFFD
}

TEST_CASE("normalize is idempotent") {
  const std::vector<std::string> samples{"What is Diabetes?",      "\xC3\x89lan  Vital", "  MIXED case \t text ",
                                         "Caf\xC3\xA9 cr\xC3\xA8me", "\xC3\x85ngstr\xC3\xB6m", "\xFF\xFE broken",
                                         "\xE1\x84\x80\xE1\x85\xA1", "\xEA\xB0\x80"};
  for (const auto& s : samples) CHECK(normalize(normalize(s)) == normalize(s));

  Rng rng(1);
  for (int trial = 0; trial < 500; ++trial) {
    std::string s;
    const auto len = rng.uniform_index(12);
    for (std::size_t i = 0; i < len; ++i) {
      static const char* pieces[] = {"A", "b", " ", "\t", "\xC3\x89", "\xCC\x81", "?", "\xE2\x80\x83", "Z", "\xC3\x9F"};
      s += pieces[rng.uniform_index(10)];
    }
    CHECK(normalize(normalize(s)) == normalize(s));
  }
}

TEST_CASE("tokenize splits punctuation into standalone tokens") {
  CHECK(tokenize("What is diabetes?") == std::vector<std::string>{"what", "is", "diabetes", "?"});
  CHECK(tokenize("a,b...c") == std::vector<std::string>{"a", ",", "b", ".", ".", ".", "c"});
  CHECK(tokenize("[CLS]") == std::vector<std::string>{"[", "cls", "]"});
  CHECK(tokenize("").empty());
}

TEST_CASE("build_vocab orders by frequency then lexicographically") {
  const std::vector<std::string> corpus{"a b", "a"};
  const auto vocab = build_vocab(corpus, 1, 10);
  CHECK(vocab.tokens() == std::vector<std::string>{"[PAD]", "[CLS]", "[SEP]", "[UNK]", "a", "b"});
  CHECK(vocab.id("a") < vocab.id("b"));

  const auto empty = build_vocab(corpus, 3, 10);
  CHECK(empty.size() == Vocab::kReserved);

  const std::vector<std::string> tied{"zeta alpha mid"};
  const auto t = build_vocab(tied, 1, 10);
  CHECK(t.tokens() == std::vector<std::string>{"[PAD]", "[CLS]", "[SEP]", "[UNK]", "alpha", "mid", "zeta"});

  const auto capped = build_vocab(std::vector<std::string>{"c c c b b a"}, 1, 6);
  CHECK(capped.tokens() == std::vector<std::string>{"[PAD]", "[CLS]", "[SEP]", "[UNK]", "c", "b"});

  CHECK(build_vocab(std::vector<std::string>{}, 1, 10).size() == 4);
  CHECK_THROWS_AS(build_vocab(corpus, 1, 4), UsageError);
}

TEST_CASE("build_vocab is deterministic") {
  const std::vector<std::string> corpus{"What is diabetes?", "What is asthma?", "Tell me about gout."};
  CHECK(build_vocab(corpus, 1, 100) == build_vocab(corpus, 1, 100));
}

TEST_CASE("vocab invariants") {
  CHECK_THROWS_AS(Vocab(std::vector<std::string>{"[PAD]", "[CLS]"}), ConfigError);
  CHECK_THROWS_AS(Vocab(std::vector<std::string>{"[PAD]", "[CLS]", "[SEP]", "[UNK]", "a", "a"}), ConfigError);
  CHECK_THROWS_AS(Vocab(std::vector<std::string>{"[CLS]", "[PAD]", "[SEP]", "[UNK]"}), ConfigError);
  const Vocab v;
  CHECK(v.id("[CLS]") == Vocab::kUnk);  // reserved spellings are never looked up as content
  CHECK(v.id("anything") == Vocab::kUnk);
}

TEST_CASE("encode examples") {
  const auto vocab = build_vocab(std::vector<std::string>{"a b", "a"}, 1, 10);
  const auto enc = encode("a", vocab, 4);
  CHECK(enc.ids == std::vector<std::size_t>{1, vocab.id("a"), 2, 0});
  CHECK(enc.mask == std::vector<std::uint8_t>{1, 1, 1, 0});

  const auto unk = encode("zzz", vocab, 4);
  CHECK(unk.ids[1] == Vocab::kUnk);

  std::string long_text;
  for (int i = 0; i < 100; ++i) long_text += "a ";
  const auto truncated = encode(long_text, vocab, 8);
  CHECK(truncated.ids == std::vector<std::size_t>{1, 4, 4, 4, 4, 4, 4, 2});

  CHECK(encode("", vocab, 3).ids == std::vector<std::size_t>{1, 2, 0});
  CHECK_THROWS_AS(encode("a", vocab, 2), UsageError);
}

TEST_CASE("mask counts real tokens and matches non-pad ids") {
  const auto vocab = build_vocab(std::vector<std::string>{"one two three four five"}, 1, 100);
  Rng rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    std::string text;
    const auto words = rng.uniform_index(15);
    for (std::size_t i = 0; i < words; ++i) text += (rng.uniform_index(2) ? "one " : "unseen ");
    const std::size_t max_len = 3 + rng.uniform_index(12);
    const auto enc = encode(text, vocab, max_len);
    std::size_t ones = 0;
    for (std::size_t i = 0; i < max_len; ++i) {
      CHECK((enc.mask[i] == 1) == (enc.ids[i] != Vocab::kPad));
      ones += enc.mask[i];
    }
    CHECK(ones == 2 + std::min(tokenize(text).size(), max_len - 2));
    CHECK(enc.ids[0] == Vocab::kCls);
    CHECK(enc.ids[ones - 1] == Vocab::kSep);
  }
}
