#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "statepipe/align/aligner.hpp"
#include "statepipe/ingest/ingest.hpp"
#include "statepipe/llm/client.hpp"
#include "statepipe/llm/labeler.hpp"

namespace statepipe::pipeline {

// Run configuration, normally read from a pipeline.json. Relative paths are
// resolved against the directory holding the file.
struct PipelineConfig {
    std::string base_dir;
    std::string vocab;
    std::string transcripts;
    std::string features;
    std::string ground_truth; // optional
    std::string lexicon;      // optional; built through the LLM when empty
    std::string train_config;
    std::string work_dir;

    llm::ClientConfig llm;
    std::string scorer_backend = "stub"; // stub | vlm
    std::string scorer_fixture;          // stub
    std::string frames_dir;              // vlm
    std::string vlm_cache_dir;           // vlm
    bool background = true;

    llm::ChainOptions chain;
    align::AlignmentConfig align;
    ingest::CurateOptions curate;
    std::uint64_t seed = 0;
    std::optional<std::uint64_t> seed_override;

    std::string resolve(const std::string& path) const;
    // Checks that every referenced input exists; throws ConfigError otherwise.
    void validate() const;
};

PipelineConfig parse_pipeline_config(const std::string& text, const std::string& base_dir);
PipelineConfig read_pipeline_config(const std::string& path);

// Per-stage record: content hashes of inputs and outputs, keyed by path
// relative to the work directory's parent.
struct StageRecord {
    std::map<std::string, std::string> inputs;
    std::map<std::string, std::string> outputs;
};

struct VideoStatus {
    std::string stage; // last completed stage: curated, labeled, aligned
    std::size_t malformed_rows = 0;
    std::size_t total_rows = 0;
    std::size_t unmatched = 0;
    double assignment_rate = 0.0;
};

struct PipelineManifest {
    std::map<std::string, StageRecord> stages;
    std::map<std::string, VideoStatus> videos;
    std::map<std::string, double> counters;

    std::string encode() const;
    static PipelineManifest decode(const std::string& text);
};

struct RunOptions {
    std::optional<llm::ClientMode> mode;       // overrides the config
    std::optional<std::string> cache_dir;      // overrides the config
    std::size_t threads = 1;
    bool deterministic = true;
    std::shared_ptr<llm::ChatTransport> transport; // injected transport (tests)
};

struct RunResult {
    PipelineManifest manifest;
    std::vector<std::string> executed;
    std::vector<std::string> skipped;
    std::size_t network_calls = 0;
};

// curate -> label -> align -> train -> selftrain -> predict -> eval. A stage
// whose recorded input and output hashes still match the files on disk is
// skipped; once a stage runs, every stage that depends on it runs too.
RunResult run_pipeline(const PipelineConfig& config, const RunOptions& options = {});

} // namespace statepipe::pipeline
