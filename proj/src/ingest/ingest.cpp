#include "statepipe/ingest/ingest.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <set>

#include <json.hpp>

#include "statepipe/core/error.hpp"
#include "statepipe/llm/prompts.hpp"
#include "statepipe/util/binary.hpp"
#include "statepipe/util/csv.hpp"
#include "statepipe/util/text.hpp"

namespace statepipe::ingest {

namespace fs = std::filesystem;
using nlohmann::json;

std::string sidecar_path(const std::string& transcript_path) {
    fs::path p(transcript_path);
    return (p.parent_path() / (p.stem().string() + ".meta.json")).string();
}

LoadedTranscript parse_transcript(const std::string& jsonl, std::string video_id,
                                  std::optional<double> duration_s, std::string title) {
    LoadedTranscript out;
    out.title = std::move(title);
    out.transcript.video_id = std::move(video_id);
    auto& sentences = out.transcript.sentences;
    const auto lines = util::split_lines(jsonl);
    for (std::size_t n = 0; n < lines.size(); ++n) {
        if (util::trim(lines[n]).empty()) continue;
        NarrationSentence s;
        try {
            const auto j = json::parse(lines[n]);
            s.text = j.at("text").get<std::string>();
            s.start_s = j.at("start_s").get<double>();
            s.end_s = j.at("end_s").get<double>();
        } catch (const json::exception& e) {
            throw FormatError(std::string("malformed transcript line: ") + e.what(), n + 1);
        }
        if (!std::isfinite(s.start_s) || !std::isfinite(s.end_s) || s.start_s < 0.0)
            throw FormatError("transcript line has invalid timestamps", n + 1);
        if (!(s.end_s > s.start_s))
            throw FormatError("transcript line has end_s <= start_s", n + 1);
        sentences.push_back(std::move(s));
    }
    out.resorted = !std::is_sorted(sentences.begin(), sentences.end(),
                                   [](const auto& a, const auto& b) { return a.start_s < b.start_s; });
    if (out.resorted)
        std::stable_sort(sentences.begin(), sentences.end(),
                         [](const auto& a, const auto& b) { return a.start_s < b.start_s; });

    double last_end = 0.0;
    for (const auto& s : sentences) last_end = std::max(last_end, s.end_s);
    out.transcript.duration_s = duration_s.value_or(last_end);
    if (last_end > out.transcript.duration_s + kDurationSlackSeconds)
        throw ValidationError("transcript '" + out.transcript.video_id + "' ends at " +
                              std::to_string(last_end) + " s, past its duration " +
                              std::to_string(out.transcript.duration_s) + " s");
    return out;
}

LoadedTranscript load_transcript(const std::string& path) {
    std::string video_id = fs::path(path).stem().string();
    std::optional<double> duration;
    std::string title;
    const auto meta = sidecar_path(path);
    if (fs::is_regular_file(meta)) {
        try {
            const auto j = json::parse(util::read_file_text(meta));
            video_id = j.value("video_id", video_id);
            if (j.contains("duration_s")) duration = j.at("duration_s").get<double>();
            title = j.value("title", std::string{});
        } catch (const json::exception& e) {
            throw ValidationError("transcript sidecar '" + meta + "': " + e.what());
        }
    }
    return parse_transcript(util::read_file_text(path), std::move(video_id), duration,
                            std::move(title));
}

VideoRecord make_video_record(LoadedTranscript loaded, std::string source_path) {
    VideoRecord r;
    r.video_id = loaded.transcript.video_id;
    r.title = std::move(loaded.title);
    for (const auto& s : loaded.transcript.sentences) r.word_count += util::whitespace_token_count(s.text);
    r.transcript = std::move(loaded.transcript);
    r.source_path = std::move(source_path);
    return r;
}

std::vector<VideoRecord> load_transcript_dir(const std::string& dir) {
    std::vector<std::string> paths;
    for (const auto& entry : fs::directory_iterator(dir))
        if (entry.is_regular_file() && entry.path().extension() == ".jsonl")
            paths.push_back(entry.path().string());
    std::sort(paths.begin(), paths.end());
    std::vector<VideoRecord> out;
    for (const auto& p : paths) out.push_back(make_video_record(load_transcript(p), p));
    return out;
}

// ---- verb lexicon -----------------------------------------------------------

std::vector<std::string> VerbLexicon::all_verbs() const {
    std::vector<std::string> out;
    std::set<std::string> seen;
    for (const auto& state : verbs)
        for (const auto& v : state)
            if (seen.insert(v).second) out.push_back(v);
    return out;
}

namespace {

std::optional<std::size_t> match_state(const std::string& field, const StateVocabulary& vocab) {
    const auto norm = util::normalize_text(field);
    for (std::size_t k = 0; k < vocab.size(); ++k)
        if (norm == util::normalize_text(vocab[k].state_text)) return k;
    for (std::size_t k = 0; k < vocab.size(); ++k)
        if (norm == util::normalize_text(vocab[k].name)) return k;
    return std::nullopt;
}

} // namespace

VerbLexicon parse_verb_lexicon(const std::string& response, const StateVocabulary& vocab) {
    VerbLexicon lex;
    lex.object = vocab.object_name();
    lex.verbs.resize(vocab.size());
    for (const auto& row : util::parse_csv(response)) {
        if (!row.well_formed || row.fields.size() != 2 || row.fields[1].empty()) {
            ++lex.skipped_rows;
            continue;
        }
        const auto k = match_state(row.fields[0], vocab);
        if (!k) {
            ++lex.skipped_rows;
            continue;
        }
        const auto inner = util::parse_csv(row.fields[1]);
        if (inner.empty()) {
            ++lex.skipped_rows;
            continue;
        }
        auto& verbs = lex.verbs[*k];
        for (const auto& piece : inner.front().fields) {
            const auto tokens = util::word_tokens(piece);
            if (tokens.size() != 1) continue;
            if (std::find(verbs.begin(), verbs.end(), tokens[0]) == verbs.end())
                verbs.push_back(tokens[0]);
        }
    }
    return lex;
}

VerbLexicon build_verb_lexicon(const StateVocabulary& vocab, llm::LabelerClient& client) {
    return parse_verb_lexicon(client.complete(llm::verb_list_prompt(vocab)), vocab);
}

std::string encode_lexicon(const VerbLexicon& lexicon, const StateVocabulary& vocab) {
    nlohmann::ordered_json j;
    j["object"] = lexicon.object;
    nlohmann::ordered_json states = nlohmann::ordered_json::object();
    for (std::size_t k = 0; k < vocab.size(); ++k)
        states[vocab[k].name] = k < lexicon.verbs.size() ? lexicon.verbs[k] : std::vector<std::string>{};
    j["verbs"] = std::move(states);
    j["skipped_rows"] = lexicon.skipped_rows;
    return j.dump(2) + "\n";
}

VerbLexicon read_lexicon_file(const std::string& path, const StateVocabulary& vocab) {
    try {
        const auto j = json::parse(util::read_file_text(path));
        VerbLexicon lex;
        lex.object = j.value("object", vocab.object_name());
        lex.verbs.resize(vocab.size());
        for (std::size_t k = 0; k < vocab.size(); ++k)
            if (j.at("verbs").contains(vocab[k].name))
                for (const auto& v : j.at("verbs").at(vocab[k].name))
                    lex.verbs[k].push_back(util::to_lower(v.get<std::string>()));
        lex.skipped_rows = j.value("skipped_rows", std::size_t{0});
        return lex;
    } catch (const json::exception& e) {
        throw ConfigError("lexicon '" + path + "': " + e.what());
    }
}

// ---- curation ---------------------------------------------------------------

std::string verb_stem(const std::string& verb) {
    const auto v = util::to_lower(verb);
    return v.size() >= 5 ? v.substr(0, v.size() - 1) : v;
}

bool mentions_verb(const std::string& text, const std::string& verb) {
    const auto stem = verb_stem(verb);
    if (stem.empty()) return false;
    for (const auto& tok : util::word_tokens(text))
        if (tok.rfind(stem, 0) == 0) return true;
    return false;
}

bool mentions_object(const std::string& text, const std::string& name) {
    const auto name_tokens = util::word_tokens(name);
    if (name_tokens.empty()) return false;
    const auto tokens = util::word_tokens(text);
    if (tokens.size() < name_tokens.size()) return false;
    for (std::size_t i = 0; i + name_tokens.size() <= tokens.size(); ++i) {
        bool ok = true;
        for (std::size_t j = 0; j + 1 < name_tokens.size() && ok; ++j)
            ok = tokens[i + j] == name_tokens[j];
        // the last word may carry an inflection ("apples")
        if (ok && tokens[i + name_tokens.size() - 1].rfind(name_tokens.back(), 0) == 0) return true;
    }
    return false;
}

const char* to_string(ObjectMatch m) noexcept {
    switch (m) {
    case ObjectMatch::Title: return "title";
    case ObjectMatch::Narration: return "narration";
    case ObjectMatch::Both: return "both";
    case ObjectMatch::None: break;
    }
    return "none";
}

std::vector<CuratedVideo> curate(const std::vector<VideoRecord>& videos,
                                 const StateVocabulary& vocab, const VerbLexicon& lexicon,
                                 const CurateOptions& options) {
    if (options.max_words == 0) throw ConfigError("max_words must be positive");
    const auto verbs = lexicon.all_verbs();
    std::vector<CuratedVideo> out;
    for (const auto& v : videos) {
        if (v.word_count > options.max_words) continue;

        std::string narration;
        for (const auto& s : v.transcript.sentences) {
            narration += s.text;
            narration += '\n';
        }
        const bool in_title = mentions_object(v.title, vocab.object_name());
        const bool in_narration = mentions_object(narration, vocab.object_name());
        const auto match = in_title && in_narration ? ObjectMatch::Both
                           : in_title               ? ObjectMatch::Title
                           : in_narration           ? ObjectMatch::Narration
                                                    : ObjectMatch::None;
        if (match == ObjectMatch::None) continue;
        if (options.require_title_and_narration && match != ObjectMatch::Both) continue;

        const bool has_verb = std::any_of(verbs.begin(), verbs.end(), [&](const auto& verb) {
            return mentions_verb(narration, verb);
        });
        if (!has_verb) continue;
        out.push_back(CuratedVideo{v, match});
    }
    return out;
}

} // namespace statepipe::ingest
