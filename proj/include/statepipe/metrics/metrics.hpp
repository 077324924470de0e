#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "statepipe/core/types.hpp"

namespace statepipe::metrics {

struct F1Result {
    double f1 = 0.0;
    double threshold = std::numeric_limits<double>::infinity();
    bool defined = false; // false when there are no positives
};

// Best F1 of (score >= tau) over tau in {distinct scores} U {+inf}; ties go to
// the larger tau.
F1Result f1_max(std::span<const double> scores, std::span<const std::uint8_t> labels);

// F1 of (score >= tau); 0 when precision and recall are both undefined.
double f1_at(std::span<const double> scores, std::span<const std::uint8_t> labels, double tau);

struct ApResult {
    double ap = 0.0;
    bool defined = false;
};

// Average precision with tied scores averaged over every ordering of each tie
// group, so the result does not depend on input order.
ApResult average_precision(std::span<const double> scores, std::span<const std::uint8_t> labels);

struct MapResult {
    double map = 0.0;
    std::size_t excluded = 0;
};

// Unweighted mean over defined entries; throws if none are defined.
MapResult map_over_states(std::span<const std::optional<double>> aps);

struct StateScore {
    std::string name;
    double f1 = 0.0;
    double threshold = std::numeric_limits<double>::infinity();
    double ap = 0.0;
    bool defined = false;
    std::size_t positives = 0;
};

struct EvalReport {
    std::string object;
    std::size_t videos = 0;
    std::size_t frames = 0;
    std::vector<StateScore> states;
    double mean_f1 = 0.0; // over defined states
    double map = 0.0;
    std::size_t excluded = 0;
};

struct EvalOptions {
    // Thresholds picked per video and F1 averaged over videos instead of pooled.
    bool per_video_f1 = false;
};

// Predictions are T x K probability sequences matched to ground truth by video
// id. Unassigned ground-truth cells are skipped. When `frame_masks` is given it
// is indexed like `ground_truth` and only frames with a non-zero entry count.
EvalReport evaluate(std::span<const FeatureSequence> predictions,
                    std::span<const PseudoLabelTimeline> ground_truth,
                    std::span<const std::string> state_names, const std::string& object,
                    const std::vector<std::vector<std::uint8_t>>* frame_masks = nullptr,
                    EvalOptions opt = {});

std::string encode_report(const EvalReport& report);

// Phase-ordered precision@1.

struct PhaseScores {
    std::vector<double> initial, action, end;
};

struct CausalSelection {
    std::size_t i = 0, j = 0, k = 0;
    double score = 0.0; // (initial[i] + action[j]) + end[k]
};

// argmax over i < j < k of the summed scores in O(T); the lexicographically
// smallest (i, j, k) wins ties.
CausalSelection causal_select(const PhaseScores& phases);

struct ChangeItTruth {
    std::string video_id;
    std::vector<std::size_t> initial, action, end;
};

struct PhaseHits {
    bool initial = false;
    bool action = false;
    bool end = false;
};

PhaseHits causal_precision_at_1(const PhaseScores& phases, const ChangeItTruth& truth);

ChangeItTruth decode_changeit_truth(const std::string& text);
ChangeItTruth read_changeit_truth(const std::string& path);
std::string encode_changeit_truth(const ChangeItTruth& truth);

struct ChangeItVideo {
    std::string video_id;
    CausalSelection selection;
    PhaseHits hits;
};

struct ChangeItReport {
    std::vector<ChangeItVideo> videos;
    double initial = 0.0;
    double action = 0.0;
    double end = 0.0;
    double state = 0.0; // mean of initial and end
};

// Predictions have three columns: initial, action, end.
ChangeItReport evaluate_changeit(std::span<const FeatureSequence> predictions,
                                 std::span<const ChangeItTruth> truths);
std::string encode_changeit_report(const ChangeItReport& report);

} // namespace statepipe::metrics
