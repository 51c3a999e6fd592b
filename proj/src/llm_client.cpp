#include "stylecqa/llm_client.hpp"

#include <algorithm>
#include <thread>

#include <fmt/format.h>

#include "stylecqa/error.hpp"
#include "stylecqa/tokenize.hpp"

namespace stylecqa {

ChatRequest ChatRequest::single(std::string system, std::string user, std::string tag) {
    ChatRequest req;
    req.system = std::move(system);
    req.messages.push_back({"user", std::move(user)});
    req.tag = std::move(tag);
    return req;
}

json to_json(const ChatRequest& req) {
    json messages = json::array();
    for (const auto& m : req.messages) {
        messages.push_back({{"role", m.role}, {"content", m.content}});
    }
    json j = {{"system", req.system},
              {"messages", messages},
              {"max_tokens", req.max_tokens},
              {"temperature", req.temperature},
              {"tag", req.tag}};
    j["adapter_id"] = req.adapter_id ? json(*req.adapter_id) : json(nullptr);
    return j;
}

std::string fingerprint(const ChatRequest& req) {
    json messages = json::array();
    for (const auto& m : req.messages) {
        messages.push_back(json::array({m.role, m.content}));
    }
    json key = {{"system", req.system}, {"messages", messages}};
    key["adapter_id"] = req.adapter_id ? json(*req.adapter_id) : json(nullptr);
    return sha256_hex(key.dump());
}

std::int64_t prompt_token_estimate(const ChatRequest& req) {
    auto total = static_cast<std::int64_t>(estimate_tokens(req.system));
    for (const auto& m : req.messages) {
        total += static_cast<std::int64_t>(estimate_tokens(m.content));
    }
    return total;
}

MockBackend::MockBackend(std::map<std::string, std::string> script, std::string default_text)
    : script_(std::move(script)), default_text_(std::move(default_text)) {}

void MockBackend::script(const ChatRequest& req, std::string text) {
    std::lock_guard lock(mu_);
    script_[fingerprint(req)] = std::move(text);
}

void MockBackend::set_responder(Responder responder) {
    std::lock_guard lock(mu_);
    responder_ = std::move(responder);
}

void MockBackend::set_known_adapters(std::set<std::string> adapters) {
    std::lock_guard lock(mu_);
    known_adapters_ = std::move(adapters);
}

void MockBackend::set_latency_model(double base_ms, double per_prompt_token_ms) {
    std::lock_guard lock(mu_);
    base_latency_ms_ = base_ms;
    per_token_latency_ms_ = per_prompt_token_ms;
}

ChatResponse MockBackend::complete(const ChatRequest& req) {
    if (req.messages.empty()) {
        throw Error(Errc::MalformedResponse, "request has no messages");
    }
    Responder responder;
    std::optional<std::string> scripted;
    {
        std::lock_guard lock(mu_);
        transcript_.push_back(req);
        if (req.adapter_id && known_adapters_ && !known_adapters_->contains(*req.adapter_id)) {
            throw Error(Errc::UnknownAdapter, fmt::format("unknown adapter '{}'", *req.adapter_id));
        }
        if (auto it = script_.find(fingerprint(req)); it != script_.end()) {
            scripted = it->second;
        } else {
            responder = responder_;
        }
    }
    if (!scripted && responder) scripted = responder(req);

    ChatResponse resp;
    resp.text = scripted ? std::move(*scripted) : default_text_;
    resp.usage.prompt_tokens = prompt_token_estimate(req);
    resp.usage.completion_tokens = static_cast<std::int64_t>(estimate_tokens(resp.text));
    resp.backend_id = id();
    {
        std::lock_guard lock(mu_);
        resp.latency_ms = base_latency_ms_ +
                          per_token_latency_ms_ * static_cast<double>(resp.usage.prompt_tokens);
    }
    return resp;
}

std::vector<ChatRequest> MockBackend::transcript() const {
    std::lock_guard lock(mu_);
    return transcript_;
}

std::size_t MockBackend::calls() const {
    std::lock_guard lock(mu_);
    return transcript_.size();
}

std::shared_ptr<MockBackend> mock_backend(std::map<std::string, std::string> script,
                                          std::string default_text) {
    return std::make_shared<MockBackend>(std::move(script), std::move(default_text));
}

RetryingBackend::RetryingBackend(BackendPtr inner, RetryPolicy policy, Sleeper sleeper)
    : inner_(std::move(inner)), policy_(policy), sleep_(std::move(sleeper)) {
    if (!sleep_) {
        sleep_ = [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); };
    }
    policy_.max_attempts = std::max(policy_.max_attempts, 1);
}

ChatResponse RetryingBackend::complete(const ChatRequest& req) {
    auto backoff = policy_.initial_backoff;
    for (int attempt = 1;; ++attempt) {
        try {
            return inner_->complete(req);
        } catch (const Error& e) {
            const bool retryable = e.code() == Errc::RateLimited || e.code() == Errc::Timeout;
            if (!retryable || attempt >= policy_.max_attempts) throw;
            auto wait = backoff;
            if (e.retry_after_ms()) {
                wait = std::max(wait, std::chrono::milliseconds(*e.retry_after_ms()));
            }
            sleep_(std::min(wait, policy_.max_backoff));
            backoff = std::chrono::milliseconds(
                static_cast<std::int64_t>(static_cast<double>(backoff.count()) * policy_.multiplier));
        }
    }
}

LimitedBackend::LimitedBackend(BackendPtr inner, int max_in_flight)
    : inner_(std::move(inner)), slots_(std::clamp(max_in_flight, 1, 1024)) {}

ChatResponse LimitedBackend::complete(const ChatRequest& req) {
    slots_.acquire();
    struct Release {
        std::counting_semaphore<1024>& s;
        ~Release() { s.release(); }
    } release{slots_};
    return inner_->complete(req);
}

}  // namespace stylecqa
