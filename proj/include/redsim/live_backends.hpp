#pragma once

// HTTP-backed chat and embedding backends (OpenAI-compatible API). Kept out
// of gateway.hpp so offline builds and tests do not pull in the HTTP client.

#include <cstdlib>
#include <optional>
#include <string>
#include <utility>

#ifndef CPPHTTPLIB_OPENSSL_SUPPORT
#define CPPHTTPLIB_OPENSSL_SUPPORT
#endif
#include <httplib.h>

#include "redsim/gateway.hpp"

namespace redsim::gateway {

struct LiveConfig {
    std::string base_url = "https://api.openai.com";
    std::string chat_path = "/v1/chat/completions";
    std::string embed_path = "/v1/embeddings";
    std::string api_key;  // never logged, never written to disk
    int timeout_s = 120;
};

// The key is read from the environment and held in memory only.
inline std::optional<std::string> api_key_from_env(const char* var = "OPENAI_API_KEY") {
    const char* v = std::getenv(var);
    if (v == nullptr || *v == '\0') return std::nullopt;
    return std::string(v);
}

namespace detail {

// Maps an HTTP outcome to the retry taxonomy. Returns the body for 200s.
inline std::string check_http(const httplib::Result& res, const char* what) {
    if (!res) {
        throw TransientBackendError(std::string(what) + ": transport error: " + httplib::to_string(res.error()));
    }
    const int status = res->status;
    if (status == 401 || status == 403) {
        throw AuthError(std::string(what) + ": authentication rejected (HTTP " + std::to_string(status) + ")");
    }
    if (status == 408 || status == 429 || status >= 500) {
        throw TransientBackendError(std::string(what) + ": HTTP " + std::to_string(status));
    }
    if (status != 200) {
        throw Error(std::string(what) + ": HTTP " + std::to_string(status) + ": " + res->body);
    }
    return res->body;
}

}  // namespace detail

class HttpChatBackend : public ChatBackend {
public:
    HttpChatBackend(LiveConfig cfg, std::string model) : cfg_(std::move(cfg)), model_(std::move(model)) {}

    std::string id() const override { return model_; }

    std::string complete(const std::string& prompt_text, const scenario::GenerationParams& params,
                         std::uint64_t) override {
        ++calls_;
        httplib::Client cli(cfg_.base_url);
        cli.set_connection_timeout(cfg_.timeout_s);
        cli.set_read_timeout(cfg_.timeout_s);
        const httplib::Headers headers = {{"Authorization", "Bearer " + cfg_.api_key}};
        json body;
        body["model"] = params.model_name.empty() ? model_ : params.model_name;
        body["messages"] = json::array({json{{"role", "user"}, {"content", prompt_text}}});
        body["temperature"] = params.temperature;
        body["top_p"] = params.top_p;
        auto res = cli.Post(cfg_.chat_path, headers, body.dump(), "application/json");
        const std::string payload = detail::check_http(res, "chat completion");
        json j = json::parse(payload);
        return j.at("choices").at(0).at("message").at("content").get<std::string>();
    }

private:
    LiveConfig cfg_;
    std::string model_;
};

class HttpEmbedBackend : public EmbedBackend {
public:
    HttpEmbedBackend(LiveConfig cfg, std::string model, int dim = 1536)
        : cfg_(std::move(cfg)), model_(std::move(model)), dim_(dim) {}

    std::string id() const override { return model_; }
    int dim() const override { return dim_; }

    std::vector<double> embed(const std::string& text) override {
        ++calls_;
        httplib::Client cli(cfg_.base_url);
        cli.set_connection_timeout(cfg_.timeout_s);
        cli.set_read_timeout(cfg_.timeout_s);
        const httplib::Headers headers = {{"Authorization", "Bearer " + cfg_.api_key}};
        json body;
        body["model"] = model_;
        body["input"] = text;
        auto res = cli.Post(cfg_.embed_path, headers, body.dump(), "application/json");
        const std::string payload = detail::check_http(res, "embedding");
        json j = json::parse(payload);
        return j.at("data").at(0).at("embedding").get<std::vector<double>>();
    }

private:
    LiveConfig cfg_;
    std::string model_;
    int dim_;
};

}  // namespace redsim::gateway
