#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace medqa::csv {

struct Row {
  std::size_t line;  // 1-based line where the row starts
  std::vector<std::string> fields;
};

/// RFC 4180 parsing: comma separated, double-quoted fields may hold commas,
/// line breaks and doubled quotes. Accepts LF or CRLF line endings and a
/// leading UTF-8 byte-order mark. Blank lines are skipped. Throws ParseError.
std::vector<Row> parse(std::string_view text);

std::string read_file(const std::filesystem::path& path);

/// Quotes the field only when it contains a comma, quote or line break.
std::string escape(std::string_view field);

std::string format_row(const std::vector<std::string>& fields);

}  // namespace medqa::csv
