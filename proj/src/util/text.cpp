#include "statepipe/util/text.hpp"

#include <algorithm>
#include <cctype>
#include <set>
#include <sstream>

namespace statepipe::util {

std::string to_lower(std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return out;
}

std::string trim(std::string_view s) {
    const auto is_space = [](unsigned char c) { return std::isspace(c) != 0; };
    auto b = std::find_if_not(s.begin(), s.end(), is_space);
    auto e = std::find_if_not(s.rbegin(), s.rend(), is_space).base();
    return b < e ? std::string(b, e) : std::string{};
}

bool istarts_with(std::string_view s, std::string_view prefix) {
    if (s.size() < prefix.size()) return false;
    for (std::size_t i = 0; i < prefix.size(); ++i)
        if (std::tolower(static_cast<unsigned char>(s[i])) !=
            std::tolower(static_cast<unsigned char>(prefix[i])))
            return false;
    return true;
}

std::string normalize_text(std::string_view s) {
    std::string out;
    out.reserve(s.size());
    bool pending_space = false;
    for (unsigned char c : s) {
        // apostrophes are dropped so "let's" and "lets" agree
        if (c == '\'') continue;
        if (std::isalnum(c) || c >= 0x80) {
            if (pending_space && !out.empty()) out.push_back(' ');
            pending_space = false;
            out.push_back(static_cast<char>(std::tolower(c)));
        } else {
            pending_space = true;
        }
    }
    return out;
}

std::vector<std::string> word_tokens(std::string_view s) {
    std::vector<std::string> out;
    std::istringstream in(normalize_text(s));
    for (std::string tok; in >> tok;) out.push_back(std::move(tok));
    return out;
}

std::size_t whitespace_token_count(std::string_view s) {
    std::size_t n = 0;
    bool in_token = false;
    for (unsigned char c : s) {
        const bool space = std::isspace(c) != 0;
        if (!space && !in_token) ++n;
        in_token = !space;
    }
    return n;
}

double token_jaccard(std::string_view a, std::string_view b) {
    const auto ta = word_tokens(a);
    const auto tb = word_tokens(b);
    const std::set<std::string> sa(ta.begin(), ta.end());
    const std::set<std::string> sb(tb.begin(), tb.end());
    if (sa.empty() && sb.empty()) return 0.0;
    std::size_t inter = 0;
    for (const auto& t : sa) inter += sb.count(t);
    const std::size_t uni = sa.size() + sb.size() - inter;
    return static_cast<double>(inter) / static_cast<double>(uni);
}

bool contains_phrase(std::string_view haystack, std::string_view needle) {
    const auto n = normalize_text(needle);
    if (n.empty()) return false;
    const auto h = " " + normalize_text(haystack) + " ";
    return h.find(" " + n + " ") != std::string::npos;
}

std::vector<std::string> split_lines(std::string_view s) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (start <= s.size()) {
        auto nl = s.find('\n', start);
        if (nl == std::string_view::npos) nl = s.size();
        auto line = s.substr(start, nl - start);
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        out.emplace_back(line);
        start = nl + 1;
    }
    if (!out.empty() && out.back().empty()) out.pop_back();
    return out;
}

} // namespace statepipe::util
