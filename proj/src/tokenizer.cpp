#include "medqa/tokenizer.hpp"

#include <algorithm>
#include <map>

#include "medqa/errors.hpp"
#include "unicode_tables.hpp"

namespace medqa {

namespace {

constexpr char32_t kReplacement = 0xFFFD;

std::vector<char32_t> decode_utf8(std::string_view text) {
  std::vector<char32_t> out;
  out.reserve(text.size());
  std::size_t i = 0;
  while (i < text.size()) {
    const auto lead = static_cast<unsigned char>(text[i]);
    std::size_t extra = 0;
    char32_t cp = 0;
    char32_t min_value = 0;
    if (lead < 0x80) {
      out.push_back(lead);
      ++i;
      continue;
    } else if ((lead & 0xE0) == 0xC0) {
      extra = 1, cp = lead & 0x1F, min_value = 0x80;
    } else if ((lead & 0xF0) == 0xE0) {
      extra = 2, cp = lead & 0x0F, min_value = 0x800;
    } else if ((lead & 0xF8) == 0xF0) {
      extra = 3, cp = lead & 0x07, min_value = 0x10000;
    } else {
      out.push_back(kReplacement);
      ++i;
      continue;
    }
    bool valid = true;
    std::size_t consumed = 1;
    for (std::size_t k = 1; valid && k <= extra; ++k) {
      if (i + k >= text.size()) {
        valid = false;
        break;
      }
      const auto cont = static_cast<unsigned char>(text[i + k]);
      if ((cont & 0xC0) != 0x80) {
        valid = false;
        break;
      }
      cp = (cp << 6) | (cont & 0x3F);
      ++consumed;
    }
    if (!valid || cp < min_value || cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF)) {
      out.push_back(kReplacement);
      i += consumed;
      continue;
    }
    out.push_back(cp);
    i += consumed;
  }
  return out;
}

void append_utf8(std::string& out, char32_t cp) {
  if (cp < 0x80) {
    out.push_back(static_cast<char>(cp));
  } else if (cp < 0x800) {
    out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else if (cp < 0x10000) {
    out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else {
    out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  }
}

bool in_ranges(char32_t cp, const unicode::Range* ranges, std::size_t count) {
  const auto* end = ranges + count;
  const auto* it = std::upper_bound(ranges, end, cp, [](char32_t c, const unicode::Range& r) { return c < r.first; });
  return it != ranges && cp <= (it - 1)->last;
}

bool is_space(char32_t cp) { return in_ranges(cp, unicode::kSpaceRanges, unicode::kSpaceRangesSize); }
bool is_punct(char32_t cp) { return in_ranges(cp, unicode::kPunctRanges, unicode::kPunctRangesSize); }

const unicode::FoldEntry* find_fold(char32_t cp) {
  const auto* begin = unicode::kFoldTable;
  const auto* end = begin + unicode::kFoldTableSize;
  const auto* it =
      std::lower_bound(begin, end, cp, [](const unicode::FoldEntry& e, char32_t c) { return e.code < c; });
  return it != end && it->code == cp ? it : nullptr;
}

}  // namespace

std::string normalize(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  bool pending_space = false;
  auto emit = [&](char32_t cp) {
    if (is_space(cp)) {
      pending_space = !out.empty();
      return;
    }
    if (pending_space) out.push_back(' ');
    pending_space = false;
    append_utf8(out, cp);
  };
  for (const char32_t cp : decode_utf8(text)) {
    if (const auto* entry = find_fold(cp)) {
      for (std::size_t k = 0; k < entry->length; ++k) emit(entry->replacement[k]);
    } else {
      emit(cp);
    }
  }
  return out;
}

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::string current;
  auto flush = [&] {
    if (!current.empty()) tokens.push_back(std::move(current));
    current.clear();
  };
  for (const char32_t cp : decode_utf8(normalize(text))) {
    if (cp == U' ') {
      flush();
    } else if (is_punct(cp)) {
      flush();
      append_utf8(current, cp);
      flush();
    } else {
      append_utf8(current, cp);
    }
  }
  flush();
  return tokens;
}

Vocab::Vocab() : Vocab(std::vector<std::string>{"[PAD]", "[CLS]", "[SEP]", "[UNK]"}) {}

Vocab::Vocab(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
  static const char* const kReservedNames[] = {"[PAD]", "[CLS]", "[SEP]", "[UNK]"};
  if (tokens_.size() < kReserved) throw ConfigError("vocabulary is missing reserved tokens");
  for (std::size_t i = 0; i < kReserved; ++i)
    if (tokens_[i] != kReservedNames[i]) throw ConfigError("vocabulary id " + std::to_string(i) + " must be " + kReservedNames[i]);
  ids_.reserve(tokens_.size());
  for (std::size_t i = 0; i < tokens_.size(); ++i)
    if (!ids_.emplace(tokens_[i], i).second) throw ConfigError("duplicate vocabulary token '" + tokens_[i] + "'");
}

std::optional<std::size_t> Vocab::find(std::string_view token) const {
  const auto it = ids_.find(std::string(token));
  if (it == ids_.end()) return std::nullopt;
  return it->second;
}

std::size_t Vocab::id(std::string_view token) const {
  const auto found = find(token);
  return found && *found >= kReserved ? *found : kUnk;
}

Vocab build_vocab(std::span<const std::string> corpus, std::size_t min_freq, std::size_t max_size) {
  if (max_size <= Vocab::kReserved) throw UsageError("build_vocab: max_size must exceed the 4 reserved tokens");
  std::map<std::string, std::size_t> counts;
  for (const auto& line : corpus)
    for (auto& tok : tokenize(line)) ++counts[std::move(tok)];

  std::vector<std::pair<std::string, std::size_t>> ranked;
  for (auto& [tok, n] : counts)
    if (n >= min_freq) ranked.emplace_back(tok, n);
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  if (ranked.size() > max_size - Vocab::kReserved) ranked.resize(max_size - Vocab::kReserved);

  std::vector<std::string> tokens{"[PAD]", "[CLS]", "[SEP]", "[UNK]"};
  // Reserved spellings never come out of tokenize(): brackets split off.
  for (auto& [tok, n] : ranked) tokens.push_back(std::move(tok));
  return Vocab(std::move(tokens));
}

Encoding encode(std::string_view text, const Vocab& vocab, std::size_t max_len) {
  if (max_len < 3) throw UsageError("encode: max_len must be at least 3");
  Encoding enc;
  enc.ids.assign(max_len, Vocab::kPad);
  enc.mask.assign(max_len, 0);
  enc.ids[0] = Vocab::kCls;
  enc.mask[0] = 1;
  std::size_t pos = 1;
  for (const auto& tok : tokenize(text)) {
    if (pos == max_len - 1) break;
    enc.ids[pos] = vocab.id(tok);
    enc.mask[pos] = 1;
    ++pos;
  }
  enc.ids[pos] = Vocab::kSep;
  enc.mask[pos] = 1;
  return enc;
}

}  // namespace medqa
