#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "statepipe/align/scorer.hpp"
#include "statepipe/core/types.hpp"
#include "statepipe/llm/labeler.hpp"

namespace statepipe::align {

struct AlignmentConfig {
    double delta_t = 10.0;             // seconds either side of the frame
    double background_threshold = 0.2; // raw cosine similarity
    std::vector<std::string> background_prompts; // empty: "a photo of <name>" per object name
    // A selected action labels the frame only if the frame lies inside the
    // action's own interval.
    bool restrict_to_action_interval = true;
    bool state_filter = true; // false skips the per-frame description check

    void validate() const;
};

// Indices of actions whose interval intersects [t - delta_t, t + 1 + delta_t],
// in input order. The "others" option is implicit and always available.
std::vector<std::size_t> candidate_actions(std::size_t frame,
                                           std::span<const llm::ManipulationAction> actions,
                                           double delta_t);

std::string action_choice_prompt(std::span<const llm::ManipulationAction> actions,
                                 std::span<const std::size_t> candidates);
std::string state_filter_prompt(const std::string& action_summary, const std::string& description);
std::vector<std::string> background_prompts(const StateVocabulary& vocab,
                                            const AlignmentConfig& cfg);

inline constexpr const char* kOthersOption = "others";

struct ActionChoice {
    std::optional<std::size_t> action; // nullopt = others
    bool unmatched = false;            // answer matched no option
    bool error = false;                // scorer failed
};

// Maps a free-text choice back onto the candidate list: normalized equality
// first, then the best token overlap at or above the support overlap floor.
ActionChoice match_choice(const std::string& answer,
                          std::span<const llm::ManipulationAction> actions,
                          std::span<const std::size_t> candidates);

ActionChoice select_action(const FrameQuery& frame, std::span<const std::size_t> candidates,
                           std::span<const llm::ManipulationAction> actions, FrameScorer& scorer);

struct FilterResult {
    bool pass = false;
    bool parse_failure = false;
    bool error = false;
};

// "The answer is True/False" judgement; the last occurrence wins.
FilterResult parse_judgement(const std::string& answer);

FilterResult filter_by_state(const FrameQuery& frame, const llm::ManipulationAction& action,
                             const std::string& description, FrameScorer& scorer);

enum class Presence { Present, Absent, Unknown };

struct BackgroundStats {
    std::size_t absent = 0;
    std::size_t errors = 0;
};

std::vector<Presence> assign_background(const std::string& video_id, std::size_t num_frames,
                                        const StateVocabulary& vocab, FrameScorer& scorer,
                                        const AlignmentConfig& cfg, BackgroundStats& stats);

struct Scorers {
    FrameScorer* choice = nullptr;
    FrameScorer* boolean = nullptr;
    FrameScorer* embedding = nullptr; // null disables background assignment
};

struct AlignStats {
    std::size_t frames = 0;
    std::size_t absent = 0;
    std::size_t others = 0;
    std::size_t unmatched = 0;
    std::size_t outside_interval = 0;
    std::size_t filter_rejected = 0;
    std::size_t filter_parse_failures = 0;
    std::size_t missing_verdicts = 0;
    std::size_t scorer_errors = 0;
    std::size_t background_errors = 0;
    std::size_t assigned_frames = 0;
};

struct AlignResult {
    PseudoLabelTimeline timeline;
    AlignStats stats;
};

AlignResult align(const llm::ActionStateChain& chain, std::size_t num_frames,
                  const StateVocabulary& vocab, const Scorers& scorers,
                  const AlignmentConfig& cfg);

} // namespace statepipe::align
