#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "statepipe/core/types.hpp"
#include "statepipe/llm/client.hpp"

namespace statepipe::llm {

inline constexpr std::size_t kSentencesPerBlock = 10;
inline constexpr std::size_t kActionsPerBlock = 10;
inline constexpr double kSupportOverlapFloor = 0.5;

struct ManipulationAction {
    std::size_t index = 0; // ordinal within the video
    std::string summary;
    std::string support_text;
    double start_s = 0.0;
    double end_s = 0.0;
    bool support_matched = true; // false when the block interval was used as fallback

    friend bool operator==(const ManipulationAction&, const ManipulationAction&) = default;
};

struct StateDescription {
    std::size_t action_index = 0;
    std::string text;
    std::string object_alias;

    friend bool operator==(const StateDescription&, const StateDescription&) = default;
};

struct StateVerdict {
    std::size_t action_index = 0;
    std::size_t state_index = 0;
    TernaryLabel verdict = TernaryLabel::Unassigned;
    std::string rationale;

    friend bool operator==(const StateVerdict&, const StateVerdict&) = default;
};

// rows = actions, columns = states
using VerdictMatrix = std::vector<std::vector<StateVerdict>>;

// Row accounting for one stage: `rows` is how many answer units were expected
// or seen, `malformed` how many were discarded or repaired.
struct ParseStats {
    std::size_t rows = 0;
    std::size_t malformed = 0;

    ParseStats& operator+=(const ParseStats& o) {
        rows += o.rows;
        malformed += o.malformed;
        return *this;
    }
    friend bool operator==(const ParseStats&, const ParseStats&) = default;
};

struct ActionStateChain {
    std::string video_id;
    std::string object;
    std::vector<std::string> state_names;
    std::vector<ManipulationAction> actions;
    std::vector<StateDescription> descriptions; // parallel to actions
    VerdictMatrix verdicts;                     // actions x K
    ParseStats extraction;
    ParseStats description;
    ParseStats inference;

    std::size_t malformed_count() const noexcept {
        return extraction.malformed + description.malformed + inference.malformed;
    }
    std::size_t total_rows() const noexcept {
        return extraction.rows + description.rows + inference.rows;
    }
    friend bool operator==(const ActionStateChain&, const ActionStateChain&) = default;
};

// ---- response parsers (pure) ----------------------------------------------

struct ActionRow {
    std::string summary;
    std::string support;
};

// Two-column (action, support) CSV. Header rows whose first field is "action"
// are dropped without being counted.
std::vector<ActionRow> parse_action_rows(const std::string& response, ParseStats& stats);

// Exactly `count` descriptions. Rows that are not two columns are dropped;
// rows whose state column does not start with "The <object>" are replaced by
// the previous description; missing rows are padded by carry-forward and
// surplus rows truncated. Every repair counts as malformed.
std::vector<std::string> parse_description_rows(const std::string& response,
                                                const std::string& object, std::size_t count,
                                                const std::string& previous, ParseStats& stats);

struct AnswerParse {
    TernaryLabel verdict = TernaryLabel::Unassigned;
    bool malformed = false;
    std::string answer_line;
};

// Reads the last "Answer:" line. The first clause must hold exactly one of
// yes/no/ambiguous; anything else is malformed and Unassigned.
AnswerParse parse_state_answer(const std::string& response);

enum class ChangePhase { Initial, Action, End, Ambiguous };
const char* to_string(ChangePhase phase) noexcept;

struct PhaseParse {
    ChangePhase phase = ChangePhase::Ambiguous;
    bool malformed = false;
};

// Leading token of the last "Answer:" line.
PhaseParse parse_changeit_answer(const std::string& response);

struct SupportMatch {
    double start_s = 0.0;
    double end_s = 0.0;
    bool matched = false;
};

// Locates the narration sentence(s) a support excerpt came from: normalized
// token-boundary containment in either direction first, then the best token
// Jaccard overlap at or above kSupportOverlapFloor, else the whole block.
SupportMatch locate_support(const std::string& support, std::span<const NarrationSentence> block);

// ---- chain stages ----------------------------------------------------------

struct ChainOptions {
    std::size_t sentences_per_block = kSentencesPerBlock;
    std::size_t actions_per_block = kActionsPerBlock;
    std::size_t max_context = 0; // 0 = pass the full description prefix
    std::size_t concurrency = 1; // parallel (description, state) requests
};

std::vector<ManipulationAction> extract_actions(const NarrationTranscript& transcript,
                                                LabelerClient& client, ParseStats& stats,
                                                const ChainOptions& options = {});

std::vector<StateDescription> describe_states(std::span<const ManipulationAction> actions,
                                              const std::string& object, LabelerClient& client,
                                              ParseStats& stats, const ChainOptions& options = {});

VerdictMatrix infer_labels(std::span<const StateDescription> descriptions,
                           const StateVocabulary& vocab, LabelerClient& client, ParseStats& stats,
                           const ChainOptions& options = {});

struct ChangeCategory {
    std::string object;
    std::string action;
    std::vector<std::string> end_states;
};

std::vector<ChangePhase> infer_changeit_labels(std::span<const StateDescription> descriptions,
                                               const ChangeCategory& category,
                                               LabelerClient& client, ParseStats& stats,
                                               const ChainOptions& options = {});

// (a) -> (b) -> (c). Stage failures are rethrown as StageError tagged
// "extract", "describe" or "infer".
ActionStateChain run_chain(const NarrationTranscript& transcript, const StateVocabulary& vocab,
                           LabelerClient& client, const ChainOptions& options = {});

// Description prefix [0, i] capped to the last `max_context` entries.
std::vector<std::string> description_context(std::span<const StateDescription> descriptions,
                                             std::size_t i, std::size_t max_context);

std::string encode_chain(const ActionStateChain& chain);
ActionStateChain decode_chain(const std::string& text);

} // namespace statepipe::llm
