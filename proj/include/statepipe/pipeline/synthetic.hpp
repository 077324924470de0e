#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "statepipe/core/types.hpp"
#include "statepipe/llm/labeler.hpp"

namespace statepipe::pipeline {

struct SyntheticSpec {
    std::uint64_t seed = 0;
    std::size_t videos = 8;
    std::size_t frames = 64; // T per video
    std::size_t dim = 16;    // D
    std::size_t states = 4;  // K
    double action_rate = 0.1; // mean actions per frame
    // Per action type, the states it toggles. Empty: one type per state plus
    // one type toggling the first and last state together.
    std::vector<std::vector<std::size_t>> transitions;
    double mask_rate = 0.0; // fraction of frames whose labels are hidden
    double noise = 0.1;     // feature noise standard deviation
    std::string object = "widget";

    void validate() const;
    std::vector<std::vector<std::size_t>> transition_table() const;
};

struct SyntheticSegment {
    std::size_t start = 0; // frames [start, end)
    std::size_t end = 0;
    std::size_t action_type = 0;
    std::vector<std::uint8_t> state_after; // K entries
    std::string summary;
    std::string sentence;
    std::string description;
};

struct SyntheticVideo {
    std::string video_id;
    std::string title;
    NarrationTranscript transcript;
    std::vector<SyntheticSegment> segments;
    FeatureSequence features;
    PseudoLabelTimeline truth;        // fully labeled
    std::vector<std::uint8_t> masked; // per frame, 1 = label hidden
};

struct SyntheticWorld {
    SyntheticSpec spec;
    StateVocabulary vocab{"widget", {}, {StateDef{"x", "x", ""}}};
    std::vector<std::string> action_verbs; // per action type
    std::vector<SyntheticVideo> videos;
};

SyntheticWorld generate_world(const SyntheticSpec& spec);

// Ground truth with masked frames cleared to Unassigned.
PseudoLabelTimeline masked_labels(const SyntheticVideo& video);

struct SyntheticWriteOptions {
    llm::ChainOptions chain;
    std::string model = "gpt-3.5-turbo-1106";
    // Hyperparameters written to train.cfg; small defaults keep offline runs fast.
    std::string train_config =
        "batch_size=16\nepochs_stage1=10\nepochs_stage2=10\nlr=1e-4\nweight_decay=0.01\n"
        "alpha=0.5\nema_momentum=0.999\nmlp_hidden=64\ntcn_channels=32\ntcn_layers=4\n"
        "tcn_stages=2\ndropout=0.5\n";
};

// Writes a complete offline fixture set under `dir`:
//   vocab.json, transcripts/, features/, gt/, heldout.json, scorer.json,
//   llm_cache/, train.cfg, pipeline.json
void write_synthetic(const SyntheticWorld& world, const std::string& dir,
                     const SyntheticWriteOptions& options = {});

// heldout.json: video id -> masked frame indices.
std::map<std::string, std::vector<std::size_t>> read_heldout_file(const std::string& path);

std::string encode_spec(const SyntheticSpec& spec);
SyntheticSpec decode_spec(const std::string& text);

} // namespace statepipe::pipeline
