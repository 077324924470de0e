#include "statepipe/core/types.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <tuple>

#include "statepipe/core/error.hpp"

namespace statepipe {

StateVocabulary::StateVocabulary(std::string primary_name, std::vector<std::string> secondary_names,
                                 std::vector<StateDef> states)
    : primary_(std::move(primary_name)), secondary_(std::move(secondary_names)),
      states_(std::move(states)) {
    if (primary_.empty()) throw ValidationError("vocabulary: empty object name");
    if (states_.empty()) throw ValidationError("vocabulary: at least one state is required");
    std::set<std::string> seen;
    for (auto& s : states_) {
        if (s.name.empty()) throw ValidationError("vocabulary: empty state name");
        if (s.description.empty())
            throw ValidationError("vocabulary: state '" + s.name + "' has no description");
        if (s.state_text.empty()) s.state_text = "The " + primary_ + " is " + s.name;
        if (s.state_text.find(primary_) == std::string::npos)
            throw ValidationError("vocabulary: state text '" + s.state_text +
                                  "' does not mention '" + primary_ + "'");
        if (!seen.insert(s.name).second)
            throw ValidationError("vocabulary: duplicate state name '" + s.name + "'");
    }
}

std::optional<std::size_t> StateVocabulary::index_of(const std::string& state_name) const {
    for (std::size_t k = 0; k < states_.size(); ++k)
        if (states_[k].name == state_name) return k;
    return std::nullopt;
}

std::vector<std::string> StateVocabulary::state_names() const {
    std::vector<std::string> out;
    out.reserve(states_.size());
    for (const auto& s : states_) out.push_back(s.name);
    return out;
}

std::vector<std::string> StateVocabulary::all_object_names() const {
    std::vector<std::string> out{primary_};
    out.insert(out.end(), secondary_.begin(), secondary_.end());
    return out;
}

const char* to_string(TernaryLabel label) noexcept {
    switch (label) {
    case TernaryLabel::Positive: return "pos";
    case TernaryLabel::Negative: return "neg";
    case TernaryLabel::Unassigned: break;
    }
    return "unassigned";
}

FrameRange frames_for_interval(double start_s, double end_s, std::size_t num_frames) noexcept {
    if (!(end_s > start_s) || num_frames == 0) return {0, 0};
    const double lo = std::max(0.0, std::floor(start_s));
    const double hi = std::min(static_cast<double>(num_frames), std::ceil(end_s));
    if (hi <= lo) return {0, 0};
    return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
}

PseudoLabelTimeline::PseudoLabelTimeline(std::string video_id, std::size_t num_frames,
                                         std::size_t num_states)
    : video_id_(std::move(video_id)), frames_(num_frames), states_(num_states),
      labels_(num_frames * num_states, TernaryLabel::Unassigned),
      provenance_(num_frames * num_states), conflict_(num_frames * num_states, 0) {}

std::size_t PseudoLabelTimeline::index(std::size_t t, std::size_t k) const {
    if (t >= frames_ || k >= states_)
        throw ShapeError("timeline index (" + std::to_string(t) + "," + std::to_string(k) +
                         ") outside " + std::to_string(frames_) + "x" + std::to_string(states_));
    return t * states_ + k;
}

void PseudoLabelTimeline::set(std::size_t t, std::size_t k, TernaryLabel label,
                              std::optional<Provenance> source) {
    const auto i = index(t, k);
    conflict_[i] = 0;
    if (label == TernaryLabel::Unassigned) {
        labels_[i] = label;
        provenance_[i].reset();
        return;
    }
    if (!source) throw ValidationError("assigned label without provenance");
    labels_[i] = label;
    provenance_[i] = std::move(source);
}

void PseudoLabelTimeline::mark_conflict(std::size_t t, std::size_t k) {
    const auto i = index(t, k);
    labels_[i] = TernaryLabel::Unassigned;
    provenance_[i].reset();
    conflict_[i] = 1;
}

std::size_t PseudoLabelTimeline::assigned_count() const noexcept {
    return static_cast<std::size_t>(std::count_if(labels_.begin(), labels_.end(), [](auto l) {
        return l != TernaryLabel::Unassigned;
    }));
}

double PseudoLabelTimeline::assignment_rate() const noexcept {
    if (labels_.empty()) return 0.0;
    return static_cast<double>(assigned_count()) / static_cast<double>(labels_.size());
}

PseudoLabelTimeline merge_timelines(const PseudoLabelTimeline& a, const PseudoLabelTimeline& b) {
    if (a.video_id() != b.video_id() || a.num_frames() != b.num_frames() ||
        a.num_states() != b.num_states())
        throw ShapeError("merge_timelines: timelines differ in video id or shape");
    PseudoLabelTimeline out(a.video_id(), a.num_frames(), a.num_states());
    for (std::size_t t = 0; t < a.num_frames(); ++t) {
        for (std::size_t k = 0; k < a.num_states(); ++k) {
            const auto la = a.at(t, k);
            const auto lb = b.at(t, k);
            if (a.is_conflict(t, k) || b.is_conflict(t, k)) {
                out.mark_conflict(t, k);
            } else if (la == TernaryLabel::Unassigned) {
                out.set(t, k, lb, b.provenance(t, k));
            } else if (lb == TernaryLabel::Unassigned) {
                out.set(t, k, la, a.provenance(t, k));
            } else if (la == lb) {
                // keep the smaller provenance so the merge stays commutative
                const auto& pa = *a.provenance(t, k);
                const auto& pb = *b.provenance(t, k);
                const bool a_first = std::tie(pa.action_index, pa.stage) <=
                                     std::tie(pb.action_index, pb.stage);
                out.set(t, k, la, a_first ? pa : pb);
            } else {
                out.mark_conflict(t, k);
            }
        }
    }
    return out;
}

} // namespace statepipe
