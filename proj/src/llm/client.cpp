#include <httplib.h>

#include "statepipe/llm/client.hpp"

#include <cstdlib>
#include <filesystem>
#include <mutex>
#include <thread>

#include "statepipe/core/error.hpp"
#include "statepipe/util/binary.hpp"
#include "statepipe/util/hash.hpp"

namespace statepipe::llm {

namespace fs = std::filesystem;

ClientMode parse_client_mode(const std::string& text) {
    if (text == "live") return ClientMode::Live;
    if (text == "replay") return ClientMode::Replay;
    if (text == "record") return ClientMode::Record;
    throw ConfigError("unknown client mode '" + text + "' (expected live, replay or record)");
}

const char* to_string(ClientMode mode) noexcept {
    switch (mode) {
    case ClientMode::Live: return "live";
    case ClientMode::Record: return "record";
    case ClientMode::Replay: break;
    }
    return "replay";
}

HttpChatTransport::HttpChatTransport(std::string url, std::string api_key,
                                     std::chrono::milliseconds timeout)
    : api_key_(std::move(api_key)), timeout_(timeout) {
    const auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos) throw ConfigError("endpoint URL without scheme: " + url);
    const auto path_start = url.find('/', scheme_end + 3);
    origin_ = url.substr(0, path_start);
    path_ = path_start == std::string::npos ? "/" : url.substr(path_start);
}

std::string HttpChatTransport::post(const std::string& request_body) {
    httplib::Client cli(origin_);
    const auto secs = std::chrono::duration_cast<std::chrono::seconds>(timeout_);
    const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(timeout_ - secs);
    cli.set_connection_timeout(secs.count(), usecs.count());
    cli.set_read_timeout(secs.count(), usecs.count());
    cli.set_write_timeout(secs.count(), usecs.count());
    httplib::Headers headers;
    if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);
    auto res = cli.Post(path_, headers, request_body, "application/json");
    if (!res) throw EndpointError("request to " + origin_ + path_ + " failed: " +
                                  httplib::to_string(res.error()));
    if (res->status < 200 || res->status >= 300)
        throw EndpointError("endpoint returned HTTP " + std::to_string(res->status) + ": " +
                            res->body.substr(0, 200));
    return res->body;
}

ClientConfig ClientConfig::from_environment(ClientConfig base, const char* url_var,
                                            const char* key_var) {
    if (const char* url = std::getenv(url_var)) base.endpoint_url = url;
    if (const char* key = std::getenv(key_var)) base.api_key = key;
    return base;
}

std::string extract_message_content(const std::string& response_body) {
    try {
        const auto j = nlohmann::json::parse(response_body);
        return j.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
        throw EndpointError(std::string("unexpected chat-completion response: ") + e.what());
    }
}

LabelerClient::LabelerClient(ClientConfig config, std::shared_ptr<ChatTransport> transport)
    : config_(std::move(config)), transport_(std::move(transport)) {
    if (config_.max_attempts < 1) throw ConfigError("max_attempts must be at least 1");
    if (config_.mode != ClientMode::Live && config_.cache_dir.empty())
        throw ConfigError(std::string(to_string(config_.mode)) + " mode requires a cache directory");
}

nlohmann::ordered_json LabelerClient::make_request(const std::string& prompt) const {
    nlohmann::ordered_json body;
    body["model"] = config_.model;
    body["messages"] = nlohmann::ordered_json::array(
        {nlohmann::ordered_json{{"role", "user"}, {"content", prompt}}});
    body["temperature"] = config_.temperature;
    return body;
}

std::string LabelerClient::cache_key(const nlohmann::ordered_json& body) const {
    return util::sha256_hex(body.dump());
}

void LabelerClient::store(const nlohmann::ordered_json& body, const std::string& response) const {
    if (config_.cache_dir.empty()) throw ConfigError("no cache directory configured");
    util::write_file_text((fs::path(config_.cache_dir) / cache_key(body)).string(), response);
}

std::string LabelerClient::complete(const std::string& prompt) {
    return complete_request(make_request(prompt));
}

std::string LabelerClient::complete_request(const nlohmann::ordered_json& body) {
    const auto serialized = body.dump();
    if (config_.mode == ClientMode::Live) return call_endpoint(serialized);

    const auto path = (fs::path(config_.cache_dir) / util::sha256_hex(serialized)).string();
    if (fs::is_regular_file(path)) {
        ++cache_hits_;
        return util::read_file_text(path);
    }
    if (config_.mode == ClientMode::Replay)
        throw EndpointError("replay cache miss for key " + util::sha256_hex(serialized));

    auto text = call_endpoint(serialized);
    // identical keys map to identical values, so racing writers are harmless
    util::write_file_text(path, text);
    return text;
}

ChatTransport& LabelerClient::transport() {
    std::lock_guard lock(transport_mu_);
    if (!transport_) {
        if (config_.endpoint_url.empty())
            throw ConfigError("no endpoint URL configured (set STATEPIPE_LLM_URL)");
        transport_ = std::make_shared<HttpChatTransport>(config_.endpoint_url, config_.api_key,
                                                         config_.timeout);
    }
    return *transport_;
}

std::string LabelerClient::call_endpoint(const std::string& body) {
    auto& t = transport();
    auto delay = config_.backoff;
    std::string last_error;
    for (int attempt = 1; attempt <= config_.max_attempts; ++attempt) {
        try {
            ++network_calls_;
            return extract_message_content(t.post(body));
        } catch (const Error& e) {
            last_error = e.what();
        }
        if (attempt < config_.max_attempts) {
            std::this_thread::sleep_for(delay);
            delay *= 2;
        }
    }
    throw EndpointError("endpoint failed after " + std::to_string(config_.max_attempts) +
                        " attempts: " + last_error);
}

} // namespace statepipe::llm
