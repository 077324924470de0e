#include "statepipe/align/scorer.hpp"

#include <cstdio>
#include <filesystem>

#include <json.hpp>

#include "statepipe/core/error.hpp"
#include "statepipe/util/binary.hpp"
#include "statepipe/util/hash.hpp"

namespace statepipe::align {

using ordered_json = nlohmann::ordered_json;

const char* to_string(QueryKind kind) noexcept {
    switch (kind) {
    case QueryKind::Boolean: return "boolean";
    case QueryKind::Similarity: return "similarity";
    case QueryKind::Choice: break;
    }
    return "choice";
}

namespace {

QueryKind kind_from(const std::string& s) {
    if (s == "choice") return QueryKind::Choice;
    if (s == "boolean") return QueryKind::Boolean;
    if (s == "similarity") return QueryKind::Similarity;
    throw ConfigError("scorer fixture: unknown query kind '" + s + "'");
}

std::string answer_text(const ordered_json& j) {
    if (j.is_string()) return j.get<std::string>();
    if (j.is_number()) return j.dump();
    throw ConfigError("scorer fixture: answers must be strings or numbers");
}

} // namespace

StubScorer StubScorer::from_json(const std::string& text) {
    StubScorer s;
    try {
        const auto j = ordered_json::parse(text);
        if (j.contains("defaults"))
            for (const auto& [kind, answer] : j.at("defaults").items())
                s.set_default(kind_from(kind), answer_text(answer));
        if (j.contains("entries"))
            for (const auto& e : j.at("entries")) {
                Entry entry;
                entry.video_id = e.at("video_id").get<std::string>();
                entry.frame = e.at("frame").get<std::size_t>();
                entry.frame_end = e.value("frame_end", entry.frame + 1);
                entry.kind = kind_from(e.at("kind").get<std::string>());
                if (e.contains("query")) entry.query = e.at("query").get<std::string>();
                entry.answer = answer_text(e.at("answer"));
                s.add(std::move(entry));
            }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("scorer fixture: ") + e.what());
    }
    return s;
}

StubScorer StubScorer::from_file(const std::string& path) {
    return from_json(util::read_file_text(path));
}

std::string StubScorer::to_json() const {
    ordered_json j;
    ordered_json defaults = ordered_json::object();
    for (const auto& [kind, answer] : defaults_) {
        if (kind == QueryKind::Similarity) defaults[to_string(kind)] = std::stod(answer);
        else defaults[to_string(kind)] = answer;
    }
    j["defaults"] = std::move(defaults);
    ordered_json entries = ordered_json::array();
    for (const auto& e : entries_) {
        ordered_json o{{"video_id", e.video_id}, {"frame", e.frame}};
        if (e.frame_end != e.frame + 1) o["frame_end"] = e.frame_end;
        o["kind"] = to_string(e.kind);
        if (e.query) o["query"] = *e.query;
        if (e.kind == QueryKind::Similarity) o["answer"] = std::stod(e.answer);
        else o["answer"] = e.answer;
        entries.push_back(std::move(o));
    }
    j["entries"] = std::move(entries);
    return j.dump(2) + "\n";
}

void StubScorer::set_default(QueryKind kind, std::string answer) {
    defaults_[kind] = std::move(answer);
}

void StubScorer::add(Entry entry) {
    if (entry.frame_end <= entry.frame) entry.frame_end = entry.frame + 1;
    entries_.push_back(std::move(entry));
}

std::string StubScorer::lookup(const FrameQuery& frame, QueryKind kind,
                               const std::string& query) const {
    const Entry* generic = nullptr;
    const Entry* specific = nullptr;
    for (const auto& e : entries_) {
        if (e.kind != kind || e.video_id != frame.video_id || frame.frame < e.frame ||
            frame.frame >= e.frame_end)
            continue;
        if (!e.query) generic = &e;
        else if (*e.query == query) specific = &e;
    }
    if (specific) return specific->answer;
    if (generic) return generic->answer;
    if (auto it = defaults_.find(kind); it != defaults_.end()) return it->second;
    throw EndpointError(std::string("stub scorer has no ") + to_string(kind) + " answer for " +
                        frame.video_id + " frame " + std::to_string(frame.frame));
}

std::string StubScorer::choose_action(const FrameQuery& frame, const std::string& prompt) {
    ++calls_;
    return lookup(frame, QueryKind::Choice, prompt);
}

std::string StubScorer::judge_state(const FrameQuery& frame, const std::string& prompt) {
    ++calls_;
    return lookup(frame, QueryKind::Boolean, prompt);
}

double StubScorer::similarity(const FrameQuery& frame, const std::string& text) {
    ++calls_;
    const auto answer = lookup(frame, QueryKind::Similarity, text);
    try {
        return std::stod(answer);
    } catch (const std::exception&) {
        throw EndpointError("stub similarity answer is not a number: '" + answer + "'");
    }
}

ChatVlmScorer::ChatVlmScorer(std::shared_ptr<llm::LabelerClient> client, std::string frames_dir)
    : client_(std::move(client)), frames_dir_(std::move(frames_dir)) {}

ordered_json ChatVlmScorer::make_request(const FrameQuery& frame, const std::string& prompt) const {
    char name[32];
    std::snprintf(name, sizeof name, "%06zu.jpg", frame.frame);
    const auto path = (std::filesystem::path(frames_dir_) / frame.video_id / name).string();
    const auto bytes = util::read_file_bytes(path);
    ordered_json body;
    body["model"] = client_->config().model;
    ordered_json content = ordered_json::array();
    content.push_back(ordered_json{{"type", "text"}, {"text", prompt}});
    content.push_back(ordered_json{
        {"type", "image_url"},
        {"image_url", ordered_json{{"url", "data:image/jpeg;base64," +
                                               util::base64_encode(std::span<const std::uint8_t>(bytes))}}}});
    body["messages"] =
        ordered_json::array({ordered_json{{"role", "user"}, {"content", std::move(content)}}});
    body["temperature"] = client_->config().temperature;
    return body;
}

std::string ChatVlmScorer::choose_action(const FrameQuery& frame, const std::string& prompt) {
    return client_->complete_request(make_request(frame, prompt));
}

std::string ChatVlmScorer::judge_state(const FrameQuery& frame, const std::string& prompt) {
    return client_->complete_request(make_request(frame, prompt));
}

double ChatVlmScorer::similarity(const FrameQuery&, const std::string&) {
    throw EndpointError("chat VLM backend does not provide image-text similarity");
}

} // namespace statepipe::align
