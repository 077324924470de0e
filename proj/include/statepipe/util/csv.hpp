#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace statepipe::util {

struct CsvRow {
    std::vector<std::string> fields;
    bool well_formed = true; // false on an unterminated quote or text after a closing quote
    std::size_t line = 0;    // 1-based line where the row starts
};

// Lenient CSV reader for model output: double-quoted fields may hold commas,
// newlines and "" escapes; whitespace around fields is trimmed; blank lines and
// markdown code fences are skipped.
std::vector<CsvRow> parse_csv(std::string_view text);

// Quotes a field only when it holds a comma, quote or line break.
std::string csv_field(std::string_view field);
// Always quotes.
std::string csv_quoted(std::string_view field);

} // namespace statepipe::util
