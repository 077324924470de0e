#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace statepipe {

struct StateDef {
    std::string name;        // short phrase, e.g. "sliced"
    std::string description; // textual definition
    std::string state_text;  // sentence form, e.g. "The apple is sliced"
};

// The K-dimensional label space for one object category. State order defines
// label indices.
class StateVocabulary {
public:
    StateVocabulary(std::string primary_name, std::vector<std::string> secondary_names,
                    std::vector<StateDef> states);

    const std::string& object_name() const noexcept { return primary_; }
    const std::vector<std::string>& secondary_names() const noexcept { return secondary_; }
    const std::vector<StateDef>& states() const noexcept { return states_; }
    std::size_t size() const noexcept { return states_.size(); }
    const StateDef& operator[](std::size_t k) const { return states_.at(k); }
    std::optional<std::size_t> index_of(const std::string& state_name) const;
    std::vector<std::string> state_names() const;

    // primary followed by secondary names
    std::vector<std::string> all_object_names() const;

private:
    std::string primary_;
    std::vector<std::string> secondary_;
    std::vector<StateDef> states_;
};

struct NarrationSentence {
    std::string text;
    double start_s = 0.0;
    double end_s = 0.0;
};

struct NarrationTranscript {
    std::string video_id;
    double duration_s = 0.0;
    std::vector<NarrationSentence> sentences;
};

enum class TernaryLabel : std::uint8_t { Unassigned = 0, Positive = 1, Negative = 2 };

const char* to_string(TernaryLabel label) noexcept;

// Where an assigned label came from. `action_index` is -1 for labels that are
// not tied to a manipulation action (background, ground truth, synthetic).
struct Provenance {
    std::int32_t action_index = -1;
    std::string stage;

    friend bool operator==(const Provenance&, const Provenance&) = default;
};

// Half-open frame range [begin, end).
struct FrameRange {
    std::size_t begin = 0;
    std::size_t end = 0;
    bool contains(std::size_t t) const noexcept { return t >= begin && t < end; }
    bool empty() const noexcept { return end <= begin; }
};

// Maps a second-denominated interval onto 1 fps frames: floor(start) ..
// ceil(end) - 1, clamped to [0, num_frames).
FrameRange frames_for_interval(double start_s, double end_s, std::size_t num_frames) noexcept;

// T x K ternary label matrix with per-cell provenance.
class PseudoLabelTimeline {
public:
    PseudoLabelTimeline() = default;
    PseudoLabelTimeline(std::string video_id, std::size_t num_frames, std::size_t num_states);

    const std::string& video_id() const noexcept { return video_id_; }
    std::size_t num_frames() const noexcept { return frames_; }
    std::size_t num_states() const noexcept { return states_; }

    TernaryLabel at(std::size_t t, std::size_t k) const { return labels_.at(index(t, k)); }
    const std::optional<Provenance>& provenance(std::size_t t, std::size_t k) const {
        return provenance_.at(index(t, k));
    }

    // Assigning Positive/Negative requires provenance; Unassigned clears it.
    void set(std::size_t t, std::size_t k, TernaryLabel label, std::optional<Provenance> source);
    void clear(std::size_t t, std::size_t k) { set(t, k, TernaryLabel::Unassigned, std::nullopt); }

    // A conflicted cell reads as Unassigned but absorbs any later merge, which
    // keeps merge_timelines associative. Conflicts are not persisted to files.
    void mark_conflict(std::size_t t, std::size_t k);
    bool is_conflict(std::size_t t, std::size_t k) const { return conflict_.at(index(t, k)) != 0; }

    std::size_t assigned_count() const noexcept;
    double assignment_rate() const noexcept;

    friend bool operator==(const PseudoLabelTimeline&, const PseudoLabelTimeline&) = default;

private:
    std::size_t index(std::size_t t, std::size_t k) const;

    std::string video_id_;
    std::size_t frames_ = 0;
    std::size_t states_ = 0;
    std::vector<TernaryLabel> labels_;
    std::vector<std::optional<Provenance>> provenance_;
    std::vector<std::uint8_t> conflict_;
};

// Cell-wise merge: Unassigned is the identity, equal labels are kept, and a
// Positive/Negative conflict is discarded to Unassigned (and stays discarded
// under further merges). When both sides agree the lexicographically smaller
// provenance is kept.
PseudoLabelTimeline merge_timelines(const PseudoLabelTimeline& a, const PseudoLabelTimeline& b);

// T x D float features sampled at 1 fps, row-major.
struct FeatureSequence {
    std::string video_id;
    std::size_t num_frames = 0;
    std::size_t dim = 0;
    float fps = 1.0f;
    std::vector<float> data;

    float at(std::size_t t, std::size_t d) const { return data.at(t * dim + d); }
    friend bool operator==(const FeatureSequence&, const FeatureSequence&) = default;
};

} // namespace statepipe
