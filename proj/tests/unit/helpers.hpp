#pragma once

#include <unistd.h>

#include <atomic>
#include <cmath>
#include <filesystem>
#include <functional>
#include <limits>
#include <mutex>
#include <string>
#include <vector>

#include <json.hpp>

#include "statepipe/llm/client.hpp"
#include "statepipe/nn/matrix.hpp"
#include "statepipe/nn/rng.hpp"

namespace testutil {

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag = "t") {
        static std::atomic<int> counter{0};
        path_ = std::filesystem::temp_directory_path() /
                ("statepipe_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
    std::string str() const { return path_.string(); }
    std::string operator/(const std::string& name) const { return (path_ / name).string(); }

private:
    std::filesystem::path path_;
};

inline std::string chat_response(const std::string& content) {
    return nlohmann::json{{"choices", {{{"message", {{"role", "assistant"}, {"content", content}}}}}}}.dump();
}

// Answers every request through `fn(prompt)` and counts calls.
class FakeTransport final : public statepipe::llm::ChatTransport {
public:
    using Fn = std::function<std::string(const std::string& prompt)>;
    explicit FakeTransport(Fn fn) : fn_(std::move(fn)) {}
    std::string post(const std::string& body) override {
        ++calls;
        const auto j = nlohmann::json::parse(body);
        const auto& content = j.at("messages").back().at("content");
        std::string prompt;
        if (content.is_string()) prompt = content.get<std::string>();
        else
            for (const auto& part : content)
                if (part.value("type", "") == "text") prompt += part.at("text").get<std::string>();
        std::lock_guard lock(mu_);
        prompts.push_back(prompt);
        return chat_response(fn_(prompt));
    }
    std::atomic<std::size_t> calls{0};
    std::vector<std::string> prompts;

private:
    Fn fn_;
    std::mutex mu_;
};

// Fails the test if anything reaches the network.
class NoNetworkTransport final : public statepipe::llm::ChatTransport {
public:
    std::string post(const std::string&) override {
        ++calls;
        throw std::runtime_error("network access in an offline test");
    }
    std::atomic<std::size_t> calls{0};
};

template <typename T>
statepipe::nn::Matrix<T> random_matrix(std::size_t r, std::size_t c, statepipe::nn::Rng& rng, double scale = 1.0) {
    statepipe::nn::Matrix<T> m(r, c);
    for (std::size_t i = 0; i < m.size(); ++i) m[i] = static_cast<T>(rng.normal() * scale);
    return m;
}

inline double rel_error(double a, double b, double floor = 1e-8) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

// Central finite differences of f with respect to every entry of x, compared
// with the analytic gradient g as ||num - g|| / max(||num||, ||g||). The
// norm-wise ratio stays meaningful when individual entries are near zero.
// Smallest |v| over a ReLU input; finite differences need it well clear of 0.
inline double kink_margin(const statepipe::nn::Matrix<double>& pre) {
    double m = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < pre.size(); ++i) m = std::min(m, std::abs(pre[i]));
    return m;
}

inline double grad_check(statepipe::nn::Matrix<double>& x, const statepipe::nn::Matrix<double>& g,
                         const std::function<double()>& f, double h = 1e-5) {
    double diff = 0.0, nn_ = 0.0, ng = 0.0;
    const auto at = [&](std::size_t i, double v) {
        x[i] = v;
        return f();
    };
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double keep = x[i];
        // fourth-order central difference
        const double num = (8 * (at(i, keep + h) - at(i, keep - h)) - (at(i, keep + 2 * h) - at(i, keep - 2 * h))) /
                           (12 * h);
        x[i] = keep;
        diff += (num - g[i]) * (num - g[i]);
        nn_ += num * num;
        ng += g[i] * g[i];
    }
    const double denom = std::max({std::sqrt(nn_), std::sqrt(ng), 1e-12});
    return std::sqrt(diff) / denom;
}

} // namespace testutil
