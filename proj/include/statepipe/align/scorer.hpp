#pragma once

#include <cstddef>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "statepipe/llm/client.hpp"

namespace statepipe::align {

enum class QueryKind { Choice, Boolean, Similarity };
const char* to_string(QueryKind kind) noexcept;

struct FrameQuery {
    std::string video_id;
    std::size_t frame = 0;
};

// Per-frame scoring backend. Each method receives the fully rendered prompt
// (or, for similarity, the text prompt to embed) and may throw on failure.
class FrameScorer {
public:
    virtual ~FrameScorer() = default;
    virtual std::string choose_action(const FrameQuery& frame, const std::string& prompt) = 0;
    virtual std::string judge_state(const FrameQuery& frame, const std::string& prompt) = 0;
    virtual double similarity(const FrameQuery& frame, const std::string& text) = 0;
};

// Table-driven stub; a pure function of (video_id, frame, kind, query text).
//
// Fixture JSON:
//   {"defaults": {"choice": "...", "boolean": "...", "similarity": 1.0},
//    "entries": [{"video_id": "v", "frame": 3, "frame_end": 7, "kind": "choice",
//                 "query": "optional exact query text", "answer": "..."}]}
//
// `frame_end` (exclusive) turns an entry into a range. Entries that name a
// query win over entries that do not; later entries win over earlier ones at
// the same specificity; defaults apply last. With no match the call throws.
class StubScorer final : public FrameScorer {
public:
    struct Entry {
        std::string video_id;
        std::size_t frame = 0;
        std::size_t frame_end = 0;
        QueryKind kind = QueryKind::Choice;
        std::optional<std::string> query;
        std::string answer;
    };

    StubScorer() = default;
    static StubScorer from_json(const std::string& text);
    static StubScorer from_file(const std::string& path);
    std::string to_json() const;

    void set_default(QueryKind kind, std::string answer);
    void add(Entry entry);

    std::string choose_action(const FrameQuery& frame, const std::string& prompt) override;
    std::string judge_state(const FrameQuery& frame, const std::string& prompt) override;
    double similarity(const FrameQuery& frame, const std::string& text) override;

    std::size_t calls() const noexcept { return calls_; }

private:
    std::string lookup(const FrameQuery& frame, QueryKind kind, const std::string& query) const;

    std::map<QueryKind, std::string> defaults_;
    std::vector<Entry> entries_;
    std::size_t calls_ = 0; // advisory; not synchronized
};

// Vision-language scorer over the chat-completion protocol. Frames are read
// from `<frames_dir>/<video_id>/<frame:06d>.jpg` and attached as base64 data
// URLs. Similarity queries are not supported by chat endpoints and throw.
class ChatVlmScorer final : public FrameScorer {
public:
    ChatVlmScorer(std::shared_ptr<llm::LabelerClient> client, std::string frames_dir);

    std::string choose_action(const FrameQuery& frame, const std::string& prompt) override;
    std::string judge_state(const FrameQuery& frame, const std::string& prompt) override;
    double similarity(const FrameQuery& frame, const std::string& text) override;

    nlohmann::ordered_json make_request(const FrameQuery& frame, const std::string& prompt) const;

private:
    std::shared_ptr<llm::LabelerClient> client_;
    std::string frames_dir_;
};

} // namespace statepipe::align
