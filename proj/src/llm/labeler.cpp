#include "statepipe/llm/labeler.hpp"

#include <algorithm>
#include <array>

#include <json.hpp>

#include "statepipe/core/error.hpp"
#include "statepipe/llm/prompts.hpp"
#include "statepipe/util/csv.hpp"
#include "statepipe/util/parallel.hpp"
#include "statepipe/util/text.hpp"

namespace statepipe::llm {

using ordered_json = nlohmann::ordered_json;

const char* to_string(ChangePhase phase) noexcept {
    switch (phase) {
    case ChangePhase::Initial: return "initial";
    case ChangePhase::Action: return "action";
    case ChangePhase::End: return "end";
    case ChangePhase::Ambiguous: break;
    }
    return "ambiguous";
}

// ---- parsers ----------------------------------------------------------------

std::vector<ActionRow> parse_action_rows(const std::string& response, ParseStats& stats) {
    std::vector<ActionRow> out;
    for (const auto& row : util::parse_csv(response)) {
        if (!row.fields.empty() && util::to_lower(row.fields[0]) == "action") continue;
        ++stats.rows;
        if (!row.well_formed || row.fields.size() != 2 || row.fields[0].empty() ||
            row.fields[1].empty()) {
            ++stats.malformed;
            continue;
        }
        out.push_back({row.fields[0], row.fields[1]});
    }
    return out;
}

std::vector<std::string> parse_description_rows(const std::string& response,
                                                const std::string& object, std::size_t count,
                                                const std::string& previous, ParseStats& stats) {
    stats.rows += count;
    std::vector<std::string> states;
    for (const auto& row : util::parse_csv(response)) {
        if (!row.fields.empty() && util::to_lower(row.fields[0]) == "action") continue;
        if (!row.well_formed || row.fields.size() != 2) {
            ++stats.malformed;
            continue;
        }
        states.push_back(row.fields[1]);
    }

    const std::string required = "The " + object;
    std::vector<std::string> out;
    out.reserve(count);
    std::string last = previous;
    for (std::size_t i = 0; i < count; ++i) {
        if (i < states.size() && util::istarts_with(states[i], required) &&
            states[i].size() > required.size()) {
            last = states[i];
        } else {
            ++stats.malformed; // wrong prefix or missing row: carry forward
        }
        out.push_back(last);
    }
    if (states.size() > count) stats.malformed += states.size() - count;
    return out;
}

namespace {

// Text after the colon of the last "Answer:" line, markdown emphasis removed.
std::optional<std::string> last_answer_text(const std::string& response) {
    std::optional<std::string> found;
    for (const auto& raw : util::split_lines(response)) {
        std::string line;
        for (char c : raw)
            if (c != '*' && c != '#') line.push_back(c);
        line = util::trim(line);
        while (!line.empty() && (line.front() == '-' || line.front() == '>'))
            line = util::trim(line.substr(1));
        if (!util::istarts_with(line, "answer")) continue;
        const auto rest = util::trim(line.substr(6));
        if (rest.empty() || rest.front() != ':') continue;
        found = util::trim(rest.substr(1));
    }
    return found;
}

std::string first_clause(const std::string& text) {
    std::string out;
    for (std::size_t i = 0; i < text.size(); ++i) {
        const char c = text[i];
        if (c == ',' || c == '.' || c == ';' || c == ':' || c == '!' || c == '?' || c == '(' ||
            c == ')')
            break;
        // U+2013 / U+2014 dashes
        if (static_cast<unsigned char>(c) == 0xE2 && i + 2 < text.size() &&
            static_cast<unsigned char>(text[i + 1]) == 0x80 &&
            (static_cast<unsigned char>(text[i + 2]) == 0x93 ||
             static_cast<unsigned char>(text[i + 2]) == 0x94))
            break;
        out.push_back(c);
    }
    return out;
}

} // namespace

AnswerParse parse_state_answer(const std::string& response) {
    AnswerParse out;
    const auto answer = last_answer_text(response);
    if (!answer) {
        out.malformed = true;
        return out;
    }
    out.answer_line = *answer;
    bool yes = false, no = false, ambiguous = false;
    for (const auto& tok : util::word_tokens(first_clause(*answer))) {
        if (tok == "yes") yes = true;
        else if (tok == "no") no = true;
        else if (tok == "ambiguous") ambiguous = true;
        else if (tok == "because") break;
    }
    if (int(yes) + int(no) + int(ambiguous) != 1) {
        out.malformed = true;
        return out;
    }
    out.verdict = yes ? TernaryLabel::Positive : no ? TernaryLabel::Negative
                                                     : TernaryLabel::Unassigned;
    return out;
}

PhaseParse parse_changeit_answer(const std::string& response) {
    PhaseParse out;
    const auto answer = last_answer_text(response);
    const auto tokens = answer ? util::word_tokens(*answer) : std::vector<std::string>{};
    if (tokens.empty()) {
        out.malformed = true;
        return out;
    }
    const auto& head = tokens.front();
    if (head == "initial") out.phase = ChangePhase::Initial;
    else if (head == "action") out.phase = ChangePhase::Action;
    else if (head == "end") out.phase = ChangePhase::End;
    else if (head == "ambiguous") out.phase = ChangePhase::Ambiguous;
    else out.malformed = true;
    return out;
}

SupportMatch locate_support(const std::string& support, std::span<const NarrationSentence> block) {
    SupportMatch out;
    if (block.empty()) return out;
    out.start_s = block.front().start_s;
    out.end_s = block.back().end_s;
    for (const auto& s : block) out.end_s = std::max(out.end_s, s.end_s);

    bool any = false;
    double lo = 0.0, hi = 0.0;
    for (const auto& s : block) {
        if (util::contains_phrase(s.text, support) || util::contains_phrase(support, s.text)) {
            lo = any ? std::min(lo, s.start_s) : s.start_s;
            hi = any ? std::max(hi, s.end_s) : s.end_s;
            any = true;
        }
    }
    if (any) return {lo, hi, true};

    double best = -1.0;
    const NarrationSentence* best_sentence = nullptr;
    for (const auto& s : block) {
        const double j = util::token_jaccard(s.text, support);
        if (j > best) {
            best = j;
            best_sentence = &s;
        }
    }
    if (best_sentence && best >= kSupportOverlapFloor)
        return {best_sentence->start_s, best_sentence->end_s, true};
    return out;
}

// ---- stages -----------------------------------------------------------------

std::vector<ManipulationAction> extract_actions(const NarrationTranscript& transcript,
                                                LabelerClient& client, ParseStats& stats,
                                                const ChainOptions& options) {
    std::vector<ManipulationAction> actions;
    const auto& sentences = transcript.sentences;
    const auto block_size = std::max<std::size_t>(1, options.sentences_per_block);
    for (std::size_t b = 0; b < sentences.size(); b += block_size) {
        const std::span<const NarrationSentence> block(
            sentences.data() + b, std::min(block_size, sentences.size() - b));
        const auto response = client.complete(action_extraction_prompt(block));
        for (auto& row : parse_action_rows(response, stats)) {
            const auto where = locate_support(row.support, block);
            ManipulationAction a;
            a.index = actions.size();
            a.summary = std::move(row.summary);
            a.support_text = std::move(row.support);
            a.start_s = where.start_s;
            a.end_s = where.end_s;
            a.support_matched = where.matched;
            actions.push_back(std::move(a));
        }
    }
    return actions;
}

std::vector<StateDescription> describe_states(std::span<const ManipulationAction> actions,
                                              const std::string& object, LabelerClient& client,
                                              ParseStats& stats, const ChainOptions& options) {
    std::vector<StateDescription> out;
    out.reserve(actions.size());
    std::string previous = unknown_state_sentence(object);
    const auto block_size = std::max<std::size_t>(1, options.actions_per_block);
    for (std::size_t b = 0; b < actions.size(); b += block_size) {
        const auto n = std::min(block_size, actions.size() - b);
        std::vector<std::string> summaries;
        for (std::size_t i = 0; i < n; ++i) summaries.push_back(actions[b + i].summary);
        const auto response = client.complete(state_description_prompt(object, previous, summaries));
        const auto texts = parse_description_rows(response, object, n, previous, stats);
        for (std::size_t i = 0; i < n; ++i)
            out.push_back(StateDescription{actions[b + i].index, texts[i], object});
        previous = texts.back();
    }
    return out;
}

std::vector<std::string> description_context(std::span<const StateDescription> descriptions,
                                             std::size_t i, std::size_t max_context) {
    std::size_t first = 0;
    if (max_context > 0 && i + 1 > max_context) first = i + 1 - max_context;
    std::vector<std::string> out;
    for (std::size_t j = first; j <= i; ++j) out.push_back(descriptions[j].text);
    return out;
}

VerdictMatrix infer_labels(std::span<const StateDescription> descriptions,
                           const StateVocabulary& vocab, LabelerClient& client, ParseStats& stats,
                           const ChainOptions& options) {
    const auto n = descriptions.size();
    const auto k_states = vocab.size();
    VerdictMatrix verdicts(n, std::vector<StateVerdict>(k_states));
    std::vector<std::uint8_t> malformed(n * k_states, 0);

    util::parallel_for(n * k_states, options.concurrency, [&](std::size_t job) {
        const auto i = job / k_states;
        const auto k = job % k_states;
        const auto context = description_context(descriptions, i, options.max_context);
        const auto response =
            client.complete(state_inference_prompt(vocab.object_name(), context, vocab[k]));
        const auto parsed = parse_state_answer(response);
        verdicts[i][k] = StateVerdict{descriptions[i].action_index, k, parsed.verdict,
                                      parsed.answer_line};
        malformed[job] = parsed.malformed ? 1 : 0;
    });

    stats.rows += n * k_states;
    stats.malformed += static_cast<std::size_t>(std::count(malformed.begin(), malformed.end(), 1));
    return verdicts;
}

std::vector<ChangePhase> infer_changeit_labels(std::span<const StateDescription> descriptions,
                                               const ChangeCategory& category,
                                               LabelerClient& client, ParseStats& stats,
                                               const ChainOptions& options) {
    if (category.end_states.empty())
        throw ValidationError("change category '" + category.action + "' has no end states");
    std::vector<ChangePhase> phases(descriptions.size(), ChangePhase::Ambiguous);
    std::vector<std::uint8_t> malformed(descriptions.size(), 0);
    util::parallel_for(descriptions.size(), options.concurrency, [&](std::size_t i) {
        const auto context = description_context(descriptions, i, options.max_context);
        const auto parsed = parse_changeit_answer(client.complete(
            changeit_prompt(category.object, context, category.end_states, category.action)));
        phases[i] = parsed.phase;
        malformed[i] = parsed.malformed ? 1 : 0;
    });
    stats.rows += descriptions.size();
    stats.malformed += static_cast<std::size_t>(std::count(malformed.begin(), malformed.end(), 1));
    return phases;
}

ActionStateChain run_chain(const NarrationTranscript& transcript, const StateVocabulary& vocab,
                           LabelerClient& client, const ChainOptions& options) {
    ActionStateChain chain;
    chain.video_id = transcript.video_id;
    chain.object = vocab.object_name();
    chain.state_names = vocab.state_names();
    const auto stage = [&](const char* tag, auto&& fn) {
        try {
            fn();
        } catch (const StageError&) {
            throw;
        } catch (const std::exception& e) {
            throw StageError(tag, transcript.video_id, e.what());
        }
    };
    stage("extract", [&] {
        chain.actions = extract_actions(transcript, client, chain.extraction, options);
    });
    if (chain.actions.empty()) return chain;
    stage("describe", [&] {
        chain.descriptions =
            describe_states(chain.actions, vocab.object_name(), client, chain.description, options);
    });
    stage("infer", [&] {
        chain.verdicts = infer_labels(chain.descriptions, vocab, client, chain.inference, options);
    });
    return chain;
}

// ---- serialization ----------------------------------------------------------

namespace {

ordered_json stats_json(const ParseStats& s) {
    return ordered_json{{"rows", s.rows}, {"malformed", s.malformed}};
}

ParseStats stats_from(const ordered_json& j) {
    return ParseStats{j.at("rows").get<std::size_t>(), j.at("malformed").get<std::size_t>()};
}

const char* verdict_text(TernaryLabel l) {
    switch (l) {
    case TernaryLabel::Positive: return "yes";
    case TernaryLabel::Negative: return "no";
    case TernaryLabel::Unassigned: break;
    }
    return "ambiguous";
}

TernaryLabel verdict_from(const std::string& s) {
    if (s == "yes") return TernaryLabel::Positive;
    if (s == "no") return TernaryLabel::Negative;
    if (s == "ambiguous") return TernaryLabel::Unassigned;
    throw ValidationError("chain file: unknown verdict '" + s + "'");
}

} // namespace

std::string encode_chain(const ActionStateChain& chain) {
    ordered_json j;
    j["video_id"] = chain.video_id;
    j["object"] = chain.object;
    j["states"] = chain.state_names;
    ordered_json actions = ordered_json::array();
    for (std::size_t i = 0; i < chain.actions.size(); ++i) {
        const auto& a = chain.actions[i];
        ordered_json entry{{"index", a.index},
                           {"summary", a.summary},
                           {"support", a.support_text},
                           {"start_s", a.start_s},
                           {"end_s", a.end_s},
                           {"support_matched", a.support_matched}};
        if (i < chain.descriptions.size()) {
            entry["description"] = chain.descriptions[i].text;
            entry["object_alias"] = chain.descriptions[i].object_alias;
        }
        if (i < chain.verdicts.size()) {
            ordered_json verdicts = ordered_json::array();
            for (const auto& v : chain.verdicts[i])
                verdicts.push_back(ordered_json{{"state", v.state_index},
                                                {"verdict", verdict_text(v.verdict)},
                                                {"rationale", v.rationale}});
            entry["verdicts"] = std::move(verdicts);
        }
        actions.push_back(std::move(entry));
    }
    j["actions"] = std::move(actions);
    j["stats"] = ordered_json{{"extraction", stats_json(chain.extraction)},
                              {"description", stats_json(chain.description)},
                              {"inference", stats_json(chain.inference)},
                              {"malformed_total", chain.malformed_count()},
                              {"rows_total", chain.total_rows()}};
    return j.dump(2) + "\n";
}

ActionStateChain decode_chain(const std::string& text) {
    try {
        const auto j = ordered_json::parse(text);
        ActionStateChain chain;
        chain.video_id = j.at("video_id").get<std::string>();
        chain.object = j.at("object").get<std::string>();
        chain.state_names = j.at("states").get<std::vector<std::string>>();
        for (const auto& e : j.at("actions")) {
            ManipulationAction a;
            a.index = e.at("index").get<std::size_t>();
            a.summary = e.at("summary").get<std::string>();
            a.support_text = e.at("support").get<std::string>();
            a.start_s = e.at("start_s").get<double>();
            a.end_s = e.at("end_s").get<double>();
            a.support_matched = e.at("support_matched").get<bool>();
            chain.actions.push_back(a);
            if (e.contains("description"))
                chain.descriptions.push_back(StateDescription{
                    a.index, e.at("description").get<std::string>(),
                    e.at("object_alias").get<std::string>()});
            if (e.contains("verdicts")) {
                std::vector<StateVerdict> row;
                for (const auto& v : e.at("verdicts"))
                    row.push_back(StateVerdict{a.index, v.at("state").get<std::size_t>(),
                                               verdict_from(v.at("verdict").get<std::string>()),
                                               v.at("rationale").get<std::string>()});
                chain.verdicts.push_back(std::move(row));
            }
        }
        const auto& st = j.at("stats");
        chain.extraction = stats_from(st.at("extraction"));
        chain.description = stats_from(st.at("description"));
        chain.inference = stats_from(st.at("inference"));
        return chain;
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("chain file: ") + e.what());
    }
}

} // namespace statepipe::llm
