#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "statepipe/core/types.hpp"

namespace statepipe {

// Feature file layout (little-endian):
//   "FSQ1" | u32 version (=1) | u32 T | u32 D | f32 fps | T*D f32 row-major
inline constexpr std::size_t kFeatureHeaderBytes = 20;
inline constexpr std::uint32_t kFeatureFormatVersion = 1;

std::vector<std::uint8_t> encode_features(const FeatureSequence& seq);
FeatureSequence decode_features(std::span<const std::uint8_t> bytes, std::string video_id);

FeatureSequence read_feature_file(const std::string& path);
void write_feature_file(const FeatureSequence& seq, const std::string& path);

// Label files are JSON with per-state run lists; frames outside every run are
// Unassigned. `object` and `states` are written for the reader's benefit.
std::string encode_labels(const PseudoLabelTimeline& timeline, const std::string& object,
                          const std::vector<std::string>& states);
PseudoLabelTimeline decode_labels(const std::string& text);

PseudoLabelTimeline read_label_file(const std::string& path);
void write_label_file(const PseudoLabelTimeline& timeline, const std::string& object,
                      const std::vector<std::string>& states, const std::string& path);

// Ground truth uses the label file format but must be strictly binary.
PseudoLabelTimeline read_ground_truth_file(const std::string& path);

StateVocabulary read_vocabulary_file(const std::string& path);
std::string encode_vocabulary(const StateVocabulary& vocab);

} // namespace statepipe
