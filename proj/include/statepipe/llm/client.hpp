#pragma once

#include <atomic>
#include <chrono>
#include <memory>
#include <mutex>
#include <string>

#include <json.hpp>

namespace statepipe::llm {

enum class ClientMode { Live, Replay, Record };

ClientMode parse_client_mode(const std::string& text);
const char* to_string(ClientMode mode) noexcept;

// Posts one chat-completion request body and returns the raw response body.
// Implementations must be safe to call from several threads.
class ChatTransport {
public:
    virtual ~ChatTransport() = default;
    virtual std::string post(const std::string& request_body) = 0;
};

// HTTP(S) transport for OpenAI-style chat-completion endpoints.
class HttpChatTransport final : public ChatTransport {
public:
    HttpChatTransport(std::string url, std::string api_key, std::chrono::milliseconds timeout);
    std::string post(const std::string& request_body) override;

private:
    std::string origin_; // scheme://host[:port]
    std::string path_;
    std::string api_key_;
    std::chrono::milliseconds timeout_;
};

struct ClientConfig {
    std::string endpoint_url;
    std::string api_key;
    std::string model = "gpt-3.5-turbo-1106";
    std::chrono::milliseconds timeout{60'000};
    int max_attempts = 3;
    std::chrono::milliseconds backoff{500}; // doubled after each failed attempt
    std::string cache_dir;
    ClientMode mode = ClientMode::Replay;
    double temperature = 0.0;

    // Reads STATEPIPE_LLM_URL / STATEPIPE_LLM_KEY into a copy of `base`.
    static ClientConfig from_environment(ClientConfig base, const char* url_var = "STATEPIPE_LLM_URL",
                                         const char* key_var = "STATEPIPE_LLM_KEY");
};

// Chat-completion client with a content-addressed response cache.
//
//   live    every request goes to the endpoint; the cache is not consulted
//   record  cache hits are served locally, misses go to the endpoint and are stored
//   replay  cache only; a miss is an EndpointError and no network I/O happens
//
// The cache key is the SHA-256 of the serialized request body, which holds the
// model id, the full prompt and the sampling parameters. One file per key,
// named by the hex digest, holding the raw response text.
class LabelerClient {
public:
    explicit LabelerClient(ClientConfig config, std::shared_ptr<ChatTransport> transport = nullptr);

    // Single user-turn completion; returns the first choice's message content.
    std::string complete(const std::string& prompt);
    // Completion for a prebuilt request body ({model, messages, temperature, ...}).
    std::string complete_request(const nlohmann::ordered_json& body);

    nlohmann::ordered_json make_request(const std::string& prompt) const;
    std::string cache_key(const nlohmann::ordered_json& body) const;

    const ClientConfig& config() const noexcept { return config_; }
    std::size_t network_calls() const noexcept { return network_calls_.load(); }
    std::size_t cache_hits() const noexcept { return cache_hits_.load(); }

    // Writes a response into the cache as if it had been recorded.
    void store(const nlohmann::ordered_json& body, const std::string& response) const;

private:
    std::string call_endpoint(const std::string& body);
    ChatTransport& transport();

    ClientConfig config_;
    std::shared_ptr<ChatTransport> transport_;
    std::mutex transport_mu_;
    std::atomic<std::size_t> network_calls_{0};
    std::atomic<std::size_t> cache_hits_{0};
};

// Extracts choices[0].message.content from a chat-completion response body.
std::string extract_message_content(const std::string& response_body);

} // namespace statepipe::llm
