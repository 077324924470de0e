#include "statepipe/util/csv.hpp"

#include "statepipe/util/text.hpp"

namespace statepipe::util {

std::vector<CsvRow> parse_csv(std::string_view text) {
    std::vector<CsvRow> rows;
    std::size_t i = 0;
    std::size_t line = 1;
    const std::size_t n = text.size();

    while (i < n) {
        // skip blank lines and code fences
        const auto eol = text.find('\n', i);
        const auto raw_line = text.substr(i, (eol == std::string_view::npos ? n : eol) - i);
        const auto stripped = trim(raw_line);
        if (stripped.empty() || stripped.rfind("```", 0) == 0) {
            i = (eol == std::string_view::npos) ? n : eol + 1;
            ++line;
            continue;
        }

        CsvRow row;
        row.line = line;
        std::string field;
        bool done = false;
        while (!done) {
            while (i < n && (text[i] == ' ' || text[i] == '\t')) ++i;
            field.clear();
            if (i < n && text[i] == '"') {
                ++i;
                bool closed = false;
                while (i < n) {
                    if (text[i] == '"') {
                        if (i + 1 < n && text[i + 1] == '"') {
                            field.push_back('"');
                            i += 2;
                            continue;
                        }
                        ++i;
                        closed = true;
                        break;
                    }
                    if (text[i] == '\n') ++line;
                    field.push_back(text[i++]);
                }
                if (!closed) row.well_formed = false;
                while (i < n && (text[i] == ' ' || text[i] == '\t' || text[i] == '\r')) ++i;
                if (i < n && text[i] != ',' && text[i] != '\n') {
                    row.well_formed = false;
                    while (i < n && text[i] != ',' && text[i] != '\n') field.push_back(text[i++]);
                }
                row.fields.push_back(field);
            } else {
                while (i < n && text[i] != ',' && text[i] != '\n') field.push_back(text[i++]);
                row.fields.push_back(trim(field));
            }
            if (i < n && text[i] == ',') {
                ++i;
            } else {
                if (i < n && text[i] == '\n') {
                    ++i;
                    ++line;
                }
                done = true;
            }
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

std::string csv_quoted(std::string_view field) {
    std::string out = "\"";
    for (char c : field) {
        if (c == '"') out += "\"\"";
        else out.push_back(c);
    }
    out.push_back('"');
    return out;
}

std::string csv_field(std::string_view field) {
    if (field.find_first_of(",\"\n\r") == std::string_view::npos) return std::string(field);
    return csv_quoted(field);
}

} // namespace statepipe::util
