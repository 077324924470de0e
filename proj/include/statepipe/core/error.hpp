#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace statepipe {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Malformed on-disk data. `offset` is the byte offset where decoding failed,
// or the 1-based line number for line-oriented text formats.
class FormatError : public Error {
public:
    FormatError(const std::string& what, std::uint64_t offset)
        : Error(what + " (at offset " + std::to_string(offset) + ")"), offset_(offset) {}
    std::uint64_t offset() const noexcept { return offset_; }

private:
    std::uint64_t offset_;
};

class ValidationError : public Error {
public:
    using Error::Error;
};

class ShapeError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

// Chat/VLM endpoint failed after exhausting retries, or a replay-cache miss.
class EndpointError : public Error {
public:
    using Error::Error;
};

// Wraps a failure with the pipeline stage (and optionally the video) it came from.
class StageError : public Error {
public:
    StageError(std::string stage, std::string video_id, const std::string& what)
        : Error("[" + stage + (video_id.empty() ? "" : ":" + video_id) + "] " + what),
          stage_(std::move(stage)), video_id_(std::move(video_id)) {}
    const std::string& stage() const noexcept { return stage_; }
    const std::string& video_id() const noexcept { return video_id_; }

private:
    std::string stage_;
    std::string video_id_;
};

} // namespace statepipe
