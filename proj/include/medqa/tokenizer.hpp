#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace medqa {

/// Lowercases, strips combining marks after canonical decomposition, and
/// collapses whitespace runs to single spaces. Invalid UTF-8 bytes map to U+FFFD.
std::string normalize(std::string_view text);

/// Whitespace-separated units of normalized text; every punctuation or symbol
/// character becomes a token of its own.
std::vector<std::string> tokenize(std::string_view text);

class Vocab {
 public:
  static constexpr std::size_t kPad = 0;
  static constexpr std::size_t kCls = 1;
  static constexpr std::size_t kSep = 2;
  static constexpr std::size_t kUnk = 3;
  static constexpr std::size_t kReserved = 4;

  /// Only the reserved tokens.
  Vocab();
  /// Tokens in id order, reserved tokens first. Throws ConfigError on duplicates
  /// or when the reserved prefix is wrong.
  explicit Vocab(std::vector<std::string> tokens);

  std::size_t size() const noexcept { return tokens_.size(); }
  /// Id of token, or kUnk.
  std::size_t id(std::string_view token) const;
  std::optional<std::size_t> find(std::string_view token) const;
  const std::string& token(std::size_t id) const { return tokens_.at(id); }
  const std::vector<std::string>& tokens() const noexcept { return tokens_; }

  friend bool operator==(const Vocab& a, const Vocab& b) { return a.tokens_ == b.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::size_t> ids_;
};

/// Keeps tokens with frequency >= min_freq, the (max_size - 4) most frequent
/// first, ties broken by lexicographic order.
Vocab build_vocab(std::span<const std::string> corpus, std::size_t min_freq, std::size_t max_size);

struct Encoding {
  std::vector<std::size_t> ids;
  std::vector<std::uint8_t> mask;

  friend bool operator==(const Encoding&, const Encoding&) = default;
};

/// [CLS] t1..tk [SEP] [PAD]..., right-truncated to max_len - 2 content tokens.
Encoding encode(std::string_view text, const Vocab& vocab, std::size_t max_len);

}  // namespace medqa
