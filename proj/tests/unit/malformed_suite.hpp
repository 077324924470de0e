#pragma once

// Runs the malformed model-output fixtures against the response parsers. Shared
// by the unit tests and the acceptance binary.

#include <string>
#include <vector>

#include <json.hpp>

#include "statepipe/llm/labeler.hpp"
#include "statepipe/util/binary.hpp"

namespace testutil {

struct SuiteOutcome {
    std::string name;
    bool ok = false;
    std::string detail;
};

inline std::vector<SuiteOutcome> run_malformed_suite(const std::string& path) {
    using nlohmann::json;
    using namespace statepipe;
    std::vector<SuiteOutcome> out;
    const auto doc = json::parse(util::read_file_text(path));
    for (const auto& c : doc.at("cases")) {
        SuiteOutcome r{c.at("name").get<std::string>(), false, ""};
        const auto parser = c.at("parser").get<std::string>();
        const auto input = c.at("input").get<std::string>();
        const auto& expect = c.at("expect");
        try {
            if (parser == "actions" || parser == "descriptions") {
                llm::ParseStats stats;
                json got;
                if (parser == "actions") {
                    got = json::array();
                    for (const auto& row : llm::parse_action_rows(input, stats))
                        got.push_back({row.summary, row.support});
                    r.ok = got == expect.at("rows");
                } else {
                    got = llm::parse_description_rows(input, c.at("object").get<std::string>(),
                                                      c.at("count").get<std::size_t>(),
                                                      c.at("previous").get<std::string>(), stats);
                    r.ok = got == expect.at("values");
                }
                const json st{{"rows", stats.rows}, {"malformed", stats.malformed}};
                r.ok = r.ok && st == expect.at("stats");
                r.detail = got.dump() + " " + st.dump();
            } else if (parser == "answer") {
                const auto a = llm::parse_state_answer(input);
                r.ok = to_string(a.verdict) == expect.at("verdict").get<std::string>() &&
                       a.malformed == expect.at("malformed").get<bool>();
                r.detail = std::string(to_string(a.verdict)) + (a.malformed ? " malformed" : "");
            } else if (parser == "changeit") {
                const auto p = llm::parse_changeit_answer(input);
                r.ok = to_string(p.phase) == expect.at("phase").get<std::string>() &&
                       p.malformed == expect.at("malformed").get<bool>();
                r.detail = std::string(to_string(p.phase)) + (p.malformed ? " malformed" : "");
            } else {
                r.detail = "unknown parser " + parser;
            }
        } catch (const std::exception& e) {
            r.detail = std::string("threw: ") + e.what();
        }
        out.push_back(std::move(r));
    }
    return out;
}

} // namespace testutil
