#pragma once

#include <cstddef>
#include <cstdint>

namespace medqa::unicode {

struct FoldEntry {
  char32_t code;
  std::uint8_t length;  // 0 when the code point is dropped (combining mark)
  char32_t replacement[3];
};

struct Range {
  char32_t first;
  char32_t last;
};

// Sorted by code point.
extern const FoldEntry kFoldTable[];
extern const std::size_t kFoldTableSize;
extern const Range kSpaceRanges[];
extern const std::size_t kSpaceRangesSize;
extern const Range kPunctRanges[];
extern const std::size_t kPunctRangesSize;

}  // namespace medqa::unicode
