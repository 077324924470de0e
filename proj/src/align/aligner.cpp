#include "statepipe/align/aligner.hpp"

#include <algorithm>
#include <cctype>

#include "statepipe/core/error.hpp"
#include "statepipe/util/text.hpp"

namespace statepipe::align {

void AlignmentConfig::validate() const {
    if (!(delta_t > 0.0)) throw ConfigError("delta_t must be positive");
    if (!(background_threshold >= 0.0 && background_threshold <= 1.0))
        throw ConfigError("background_threshold must lie in [0, 1]");
}

std::vector<std::size_t> candidate_actions(std::size_t frame,
                                           std::span<const llm::ManipulationAction> actions,
                                           double delta_t) {
    const double lo = static_cast<double>(frame) - delta_t;
    const double hi = static_cast<double>(frame) + 1.0 + delta_t;
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < actions.size(); ++i)
        if (actions[i].start_s <= hi && actions[i].end_s >= lo) out.push_back(i);
    return out;
}

std::string action_choice_prompt(std::span<const llm::ManipulationAction> actions,
                                 std::span<const std::size_t> candidates) {
    std::string prompt = "Which action most describes the image? Choose from the options below. "
                         "The answer should be taken verbatim from the text of the option.\n\n";
    for (auto i : candidates) prompt += "- " + actions[i].summary + "\n";
    prompt += std::string("- ") + kOthersOption;
    return prompt;
}

std::string state_filter_prompt(const std::string& action_summary, const std::string& description) {
    std::string action = action_summary;
    if (!action.empty()) action[0] = static_cast<char>(std::tolower(static_cast<unsigned char>(action[0])));
    if (action.empty() || action.back() != '.') action += '.';
    return "The image possibly shows people " + action +
           " Describe the progress of the action in detail. And then answer whether \"" +
           description +
           "\" is true or not. Finally, specify the judgement with \"The answer is True/False\".";
}

std::vector<std::string> background_prompts(const StateVocabulary& vocab,
                                            const AlignmentConfig& cfg) {
    if (!cfg.background_prompts.empty()) return cfg.background_prompts;
    std::vector<std::string> out;
    for (const auto& name : vocab.all_object_names()) out.push_back("a photo of " + name);
    return out;
}

ActionChoice match_choice(const std::string& answer,
                          std::span<const llm::ManipulationAction> actions,
                          std::span<const std::size_t> candidates) {
    auto text = util::trim(answer);
    while (!text.empty() && (text.front() == '-' || text.front() == '*'))
        text = util::trim(text.substr(1));
    const auto norm = util::normalize_text(text);
    if (norm == kOthersOption || norm == "other") return {};
    for (auto i : candidates)
        if (util::normalize_text(actions[i].summary) == norm) return {i, false, false};

    double best = -1.0;
    std::optional<std::size_t> best_index;
    for (auto i : candidates) {
        const double j = util::token_jaccard(actions[i].summary, text);
        if (j > best) {
            best = j;
            best_index = i;
        }
    }
    if (best_index && best >= llm::kSupportOverlapFloor) return {best_index, false, false};
    return {std::nullopt, true, false};
}

ActionChoice select_action(const FrameQuery& frame, std::span<const std::size_t> candidates,
                           std::span<const llm::ManipulationAction> actions, FrameScorer& scorer) {
    std::string answer;
    try {
        answer = scorer.choose_action(frame, action_choice_prompt(actions, candidates));
    } catch (const Error&) {
        return {std::nullopt, false, true};
    }
    return match_choice(answer, actions, candidates);
}

FilterResult parse_judgement(const std::string& answer) {
    const auto lower = util::to_lower(answer);
    const std::string marker = "the answer is";
    const auto pos = lower.rfind(marker);
    if (pos == std::string::npos) return {false, true, false};
    const auto tokens = util::word_tokens(lower.substr(pos + marker.size()));
    if (!tokens.empty() && tokens.front() == "true") return {true, false, false};
    if (!tokens.empty() && tokens.front() == "false") return {false, false, false};
    return {false, true, false};
}

FilterResult filter_by_state(const FrameQuery& frame, const llm::ManipulationAction& action,
                             const std::string& description, FrameScorer& scorer) {
    try {
        return parse_judgement(
            scorer.judge_state(frame, state_filter_prompt(action.summary, description)));
    } catch (const Error&) {
        return {false, false, true};
    }
}

std::vector<Presence> assign_background(const std::string& video_id, std::size_t num_frames,
                                        const StateVocabulary& vocab, FrameScorer& scorer,
                                        const AlignmentConfig& cfg, BackgroundStats& stats) {
    const auto prompts = background_prompts(vocab, cfg);
    std::vector<Presence> out(num_frames, Presence::Unknown);
    for (std::size_t t = 0; t < num_frames; ++t) {
        try {
            double best = -1.0;
            for (const auto& p : prompts) best = std::max(best, scorer.similarity({video_id, t}, p));
            out[t] = best >= cfg.background_threshold ? Presence::Present : Presence::Absent;
            if (out[t] == Presence::Absent) ++stats.absent;
        } catch (const Error&) {
            ++stats.errors;
        }
    }
    return out;
}

AlignResult align(const llm::ActionStateChain& chain, std::size_t num_frames,
                  const StateVocabulary& vocab, const Scorers& scorers,
                  const AlignmentConfig& cfg) {
    cfg.validate();
    if (!scorers.choice || (cfg.state_filter && !scorers.boolean))
        throw ConfigError("align: action-choice and state-filter scorers are required");
    const auto k_states = vocab.size();
    if (chain.state_names.size() != k_states)
        throw ShapeError("align: chain has " + std::to_string(chain.state_names.size()) +
                         " states, vocabulary has " + std::to_string(k_states));

    AlignResult result{PseudoLabelTimeline(chain.video_id, num_frames, k_states), {}};
    auto& stats = result.stats;
    stats.frames = num_frames;

    std::vector<Presence> presence(num_frames, Presence::Present);
    if (scorers.embedding) {
        BackgroundStats bg;
        presence = assign_background(chain.video_id, num_frames, vocab, *scorers.embedding, cfg, bg);
        stats.absent = bg.absent;
        stats.background_errors = bg.errors;
    }

    for (std::size_t t = 0; t < num_frames; ++t) {
        try {
            if (presence[t] == Presence::Unknown) continue;
            // each frame receives at most one row, so writing it directly is
            // the same as merging a single-frame timeline
            auto& frame_labels = result.timeline;
            if (presence[t] == Presence::Absent) {
                for (std::size_t k = 0; k < k_states; ++k)
                    frame_labels.set(t, k, TernaryLabel::Negative, Provenance{-1, "background"});
            } else {
                const FrameQuery query{chain.video_id, t};
                const auto candidates = candidate_actions(t, chain.actions, cfg.delta_t);
                const auto choice = select_action(query, candidates, chain.actions, *scorers.choice);
                if (choice.error) ++stats.scorer_errors;
                if (choice.unmatched) ++stats.unmatched;
                if (!choice.action) {
                    if (!choice.error && !choice.unmatched) ++stats.others;
                    continue;
                }
                const auto a = *choice.action;
                const auto& action = chain.actions[a];
                if (cfg.restrict_to_action_interval &&
                    !frames_for_interval(action.start_s, action.end_s, num_frames).contains(t)) {
                    ++stats.outside_interval;
                    continue;
                }
                if (a >= chain.verdicts.size() || a >= chain.descriptions.size()) {
                    ++stats.missing_verdicts;
                    continue;
                }
                if (cfg.state_filter) {
                    const auto f =
                        filter_by_state(query, action, chain.descriptions[a].text, *scorers.boolean);
                    if (f.error) ++stats.scorer_errors;
                    if (f.parse_failure) ++stats.filter_parse_failures;
                    if (!f.pass) {
                        if (!f.error && !f.parse_failure) ++stats.filter_rejected;
                        continue;
                    }
                }
                for (std::size_t k = 0; k < k_states; ++k) {
                    const auto v = chain.verdicts[a][k].verdict;
                    if (v != TernaryLabel::Unassigned)
                        frame_labels.set(t, k, v,
                                         Provenance{static_cast<std::int32_t>(action.index), "verdict"});
                }
            }
        } catch (const StageError&) {
            throw;
        } catch (const std::exception& e) {
            throw StageError("align", chain.video_id, "frame " + std::to_string(t) + ": " + e.what());
        }
    }

    for (std::size_t t = 0; t < num_frames; ++t)
        for (std::size_t k = 0; k < k_states; ++k)
            if (result.timeline.at(t, k) != TernaryLabel::Unassigned) {
                ++stats.assigned_frames;
                break;
            }
    return result;
}

} // namespace statepipe::align
