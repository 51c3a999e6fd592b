/// @file llm_client.hpp
/// @brief Chat-completion boundary: request/response types, the backend
/// interface, a deterministic scriptable mock, and retry/in-flight wrappers.

#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <semaphore>
#include <set>
#include <string>
#include <vector>

#include "stylecqa/digest.hpp"

namespace stylecqa {

struct ChatMessage {
    std::string role;  // "user" | "assistant"
    std::string content;

    friend bool operator==(const ChatMessage&, const ChatMessage&) = default;
};

struct ChatRequest {
    std::string system;
    std::vector<ChatMessage> messages;
    std::optional<std::string> adapter_id;
    int max_tokens = 512;
    double temperature = 0.0;
    std::string tag;  // trace label, not part of the fingerprint

    /// Convenience for the single-turn prompts every pipeline stage uses.
    static ChatRequest single(std::string system, std::string user, std::string tag);
};

struct TokenUsage {
    std::int64_t prompt_tokens = 0;
    std::int64_t completion_tokens = 0;

    friend bool operator==(const TokenUsage&, const TokenUsage&) = default;
};

struct ChatResponse {
    std::string text;
    TokenUsage usage;
    std::string backend_id;
    double latency_ms = 0.0;
};

/// Stable over (system, messages, adapter_id).
std::string fingerprint(const ChatRequest& req);

/// Estimated prompt tokens: system text plus every message's content.
std::int64_t prompt_token_estimate(const ChatRequest& req);

json to_json(const ChatRequest& req);

class ChatBackend {
public:
    virtual ~ChatBackend() = default;
    /// Idempotent by contract; throws Error on failure.
    virtual ChatResponse complete(const ChatRequest& req) = 0;
    virtual std::string id() const = 0;
};

using BackendPtr = std::shared_ptr<ChatBackend>;

/// Deterministic backend: exact fingerprint script first, then the optional
/// responder, then the default text. Every call lands in the transcript.
class MockBackend : public ChatBackend {
public:
    using Responder = std::function<std::optional<std::string>(const ChatRequest&)>;

    explicit MockBackend(std::map<std::string, std::string> script = {},
                         std::string default_text = "");

    void script(const ChatRequest& req, std::string text);
    void set_responder(Responder responder);

    /// When set, requests naming any other adapter fail with UnknownAdapter.
    void set_known_adapters(std::set<std::string> adapters);

    /// Synthetic latency = base + per_prompt_token * prompt_tokens.
    void set_latency_model(double base_ms, double per_prompt_token_ms);

    ChatResponse complete(const ChatRequest& req) override;
    std::string id() const override { return "mock"; }

    std::vector<ChatRequest> transcript() const;
    std::size_t calls() const;

private:
    mutable std::mutex mu_;
    std::map<std::string, std::string> script_;
    std::string default_text_;
    Responder responder_;
    std::optional<std::set<std::string>> known_adapters_;
    double base_latency_ms_ = 0.0;
    double per_token_latency_ms_ = 0.0;
    std::vector<ChatRequest> transcript_;
};

std::shared_ptr<MockBackend> mock_backend(std::map<std::string, std::string> script,
                                          std::string default_text);

struct RetryPolicy {
    int max_attempts = 4;
    std::chrono::milliseconds initial_backoff{200};
    double multiplier = 2.0;
    std::chrono::milliseconds max_backoff{5000};
};

/// Retries RateLimited and Timeout failures with exponential backoff.
class RetryingBackend : public ChatBackend {
public:
    using Sleeper = std::function<void(std::chrono::milliseconds)>;

    RetryingBackend(BackendPtr inner, RetryPolicy policy, Sleeper sleeper = {});
    ChatResponse complete(const ChatRequest& req) override;
    std::string id() const override { return inner_->id(); }

private:
    BackendPtr inner_;
    RetryPolicy policy_;
    Sleeper sleep_;
};

/// Caps concurrent in-flight calls to the wrapped backend.
class LimitedBackend : public ChatBackend {
public:
    LimitedBackend(BackendPtr inner, int max_in_flight);
    ChatResponse complete(const ChatRequest& req) override;
    std::string id() const override { return inner_->id(); }

private:
    BackendPtr inner_;
    std::counting_semaphore<1024> slots_;
};

struct HttpBackendConfig {
    std::string endpoint;  // e.g. "http://127.0.0.1:8000"
    std::string path = "/v1/chat/completions";
    std::string model = "base";
    std::string auth_token;
    std::chrono::milliseconds deadline{30000};
};

/// JSON chat-completion client; see docs/wire_formats.md.
class HttpBackend : public ChatBackend {
public:
    explicit HttpBackend(HttpBackendConfig config);
    ChatResponse complete(const ChatRequest& req) override;
    std::string id() const override { return "http:" + config_.endpoint; }

    json encode(const ChatRequest& req) const;
    /// Maps an HTTP status + body to a response or throws the matching Error.
    static ChatResponse decode(int status, const std::string& body, const ChatRequest& req);

private:
    HttpBackendConfig config_;
};

}  // namespace stylecqa
