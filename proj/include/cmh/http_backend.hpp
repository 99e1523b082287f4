// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <chrono>
#include <cstdlib>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "cmh/error.hpp"
#include "cmh/generation.hpp"

namespace cmh {

inline constexpr const char* kApiKeyEnv = "OPENAI_API_KEY";

struct HttpBackendOptions {
    std::string endpoint;  // e.g. http://localhost:8000 or http://host/v1/chat/completions
    std::string model;
    std::string api_key;   // sent as a bearer token when non-empty
    int timeout_s = 120;
    int max_attempts = 4;
    std::chrono::milliseconds backoff{1000};  // doubled after each failed attempt
};

// OpenAI-compatible chat/completions client. Requests all n sequences in one
// call; servers that return fewer are padded by the Generator.
class HttpBackend final : public Backend {
public:
    explicit HttpBackend(HttpBackendOptions opts) : opts_(std::move(opts)) {
        if (opts_.endpoint.empty()) throw ConfigError("--endpoint is required for the http backend");
        if (opts_.model.empty()) throw ConfigError("--model is required for the http backend");
        split_endpoint();
    }

    std::vector<std::string> complete(const GenerationRequest& r) override {
        nlohmann::json body = {
            {"model", opts_.model},
            {"messages", nlohmann::json::array({{{"role", "user"}, {"content", r.prompt}}})},
            {"n", r.n},
            {"temperature", r.config.temperature},
            {"top_p", r.config.top_p},
            {"max_tokens", r.config.max_new_tokens},
            {"seed", r.config.seed},
        };
        const std::string payload = body.dump();
        auto delay = opts_.backoff;
        for (int attempt = 1;; ++attempt) {
            try {
                return post_once(payload);
            } catch (const TransportError& e) {
                if (!e.retryable() || attempt >= opts_.max_attempts) {
                    throw TransportError(std::string(e.what()) + " (after " + std::to_string(attempt) + " attempt(s))",
                                         false);
                }
            }
            std::this_thread::sleep_for(delay);
            delay *= 2;
        }
    }

private:
    void split_endpoint() {
        std::string url = opts_.endpoint;
        auto scheme = url.find("://");
        std::size_t host_begin = scheme == std::string::npos ? 0 : scheme + 3;
        auto slash = url.find('/', host_begin);
        base_ = slash == std::string::npos ? url : url.substr(0, slash);
        path_ = slash == std::string::npos ? std::string() : url.substr(slash);
        while (!path_.empty() && path_.back() == '/') path_.pop_back();
        if (path_.find("/chat/completions") == std::string::npos) {
            path_ += path_.ends_with("/v1") ? "/chat/completions" : "/v1/chat/completions";
        }
    }

    std::vector<std::string> post_once(const std::string& payload) {
        httplib::Client client(base_);
        client.set_connection_timeout(opts_.timeout_s, 0);
        client.set_read_timeout(opts_.timeout_s, 0);
        client.set_write_timeout(opts_.timeout_s, 0);
        httplib::Headers headers;
        if (!opts_.api_key.empty()) headers.emplace("Authorization", "Bearer " + opts_.api_key);
        auto res = client.Post(path_, headers, payload, "application/json");
        if (!res) {
            throw TransportError("backend request failed: " + httplib::to_string(res.error()), true);
        }
        if (res->status == 429 || res->status >= 500) {
            throw TransportError("backend returned HTTP " + std::to_string(res->status), true);
        }
        if (res->status != 200) {
            throw TransportError("backend returned HTTP " + std::to_string(res->status) + ": " + res->body, false);
        }
        std::vector<std::string> out;
        try {
            auto j = nlohmann::json::parse(res->body);
            for (const auto& choice : j.at("choices")) {
                const auto& content = choice.at("message").at("content");
                out.push_back(content.is_string() ? content.get<std::string>() : std::string());
            }
        } catch (const nlohmann::json::exception& e) {
            throw TransportError(std::string("malformed backend reply: ") + e.what(), true);
        }
        return out;
    }

    HttpBackendOptions opts_;
    std::string base_;
    std::string path_;
};

} // namespace cmh
