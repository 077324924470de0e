#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "statepipe/core/types.hpp"
#include "statepipe/llm/client.hpp"

namespace statepipe::ingest {

inline constexpr std::size_t kDefaultMaxWords = 12'000;
inline constexpr double kDurationSlackSeconds = 1.0;

struct LoadedTranscript {
    NarrationTranscript transcript;
    std::string title;
    bool resorted = false; // input lines were not in start_s order
};

// JSON-lines transcript ({text, start_s, end_s} per line). Video metadata is
// read from the sidecar `<stem>.meta.json` ({video_id, duration_s, title})
// when present; otherwise the file stem and last end time are used.
LoadedTranscript load_transcript(const std::string& path);
LoadedTranscript parse_transcript(const std::string& jsonl, std::string video_id,
                                  std::optional<double> duration_s, std::string title);

std::string sidecar_path(const std::string& transcript_path);

struct VideoRecord {
    std::string video_id;
    std::string title;
    NarrationTranscript transcript;
    std::size_t word_count = 0;
    std::string source_path;
};

VideoRecord make_video_record(LoadedTranscript loaded, std::string source_path = {});

// Loads every *.jsonl transcript in a directory, sorted by file name.
std::vector<VideoRecord> load_transcript_dir(const std::string& dir);

struct VerbLexicon {
    std::string object;
    std::vector<std::vector<std::string>> verbs; // per state, in vocabulary order
    std::size_t skipped_rows = 0;

    std::vector<std::string> all_verbs() const;
};

// Parses `"<state text>","<verb>,<verb>,..."` rows. Rows whose first column
// names no vocabulary state, or that lack the verb column, are skipped and
// counted. Verbs are lowercased single tokens, deduplicated per state.
VerbLexicon parse_verb_lexicon(const std::string& response, const StateVocabulary& vocab);
VerbLexicon build_verb_lexicon(const StateVocabulary& vocab, llm::LabelerClient& client);

std::string encode_lexicon(const VerbLexicon& lexicon, const StateVocabulary& vocab);
VerbLexicon read_lexicon_file(const std::string& path, const StateVocabulary& vocab);

// Left-anchored stem used to match inflections: the verb minus its last letter
// when that leaves at least four letters, else the whole verb.
std::string verb_stem(const std::string& verb);
bool mentions_verb(const std::string& text, const std::string& verb);
bool mentions_object(const std::string& text, const std::string& name);

enum class ObjectMatch { None, Title, Narration, Both };
const char* to_string(ObjectMatch m) noexcept;

struct CurateOptions {
    std::size_t max_words = kDefaultMaxWords;
    bool require_title_and_narration = false;
};

struct CuratedVideo {
    VideoRecord record;
    ObjectMatch object_match = ObjectMatch::None;
};

std::vector<CuratedVideo> curate(const std::vector<VideoRecord>& videos,
                                 const StateVocabulary& vocab, const VerbLexicon& lexicon,
                                 const CurateOptions& options);

} // namespace statepipe::ingest
