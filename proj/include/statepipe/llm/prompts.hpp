#pragma once

#include <span>
#include <string>
#include <vector>

#include "statepipe/core/types.hpp"

namespace statepipe::llm {

// Seed context for the first block of state descriptions.
std::string unknown_state_sentence(const std::string& object);

// Stage (a): one block of at most 10 narration sentences, one CSV row each.
std::string action_extraction_prompt(std::span<const NarrationSentence> block);

// Stage (b): actions of one block, threaded with the previous block's last description.
std::string state_description_prompt(const std::string& object,
                                     const std::string& previous_description,
                                     std::span<const std::string> action_summaries);

// Stage (c): one (description prefix, state) pair.
std::string state_inference_prompt(const std::string& object,
                                   std::span<const std::string> descriptions,
                                   const StateDef& state);

// Three-phase variant for state-changing action categories.
std::string changeit_prompt(const std::string& object, std::span<const std::string> descriptions,
                            const std::vector<std::string>& end_states, const std::string& action);

// Verb lexicon used for training-video curation.
std::string verb_list_prompt(const StateVocabulary& vocab);

} // namespace statepipe::llm
