#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace statepipe::util {

std::string to_lower(std::string_view s);
std::string trim(std::string_view s);
bool istarts_with(std::string_view s, std::string_view prefix);

// Lowercase, replace punctuation with spaces, collapse whitespace.
std::string normalize_text(std::string_view s);

// Whitespace-delimited tokens of the normalized text.
std::vector<std::string> word_tokens(std::string_view s);

// Whitespace token count of the raw text (no normalization).
std::size_t whitespace_token_count(std::string_view s);

// |A ∩ B| / |A ∪ B| over normalized token sets; 0 when both are empty.
double token_jaccard(std::string_view a, std::string_view b);

// True when `needle` occurs in `haystack` on token boundaries (both normalized).
bool contains_phrase(std::string_view haystack, std::string_view needle);

std::vector<std::string> split_lines(std::string_view s);

} // namespace statepipe::util
