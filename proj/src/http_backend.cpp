#include <chrono>

#include <fmt/format.h>
#include <httplib.h>

#include "stylecqa/error.hpp"
#include "stylecqa/llm_client.hpp"
#include "stylecqa/tokenize.hpp"

namespace stylecqa {

HttpBackend::HttpBackend(HttpBackendConfig config) : config_(std::move(config)) {
    if (config_.endpoint.empty()) {
        throw Error(Errc::ConfigError, "http backend requires an endpoint");
    }
}

json HttpBackend::encode(const ChatRequest& req) const {
    json messages = json::array();
    if (!req.system.empty()) {
        messages.push_back({{"role", "system"}, {"content", req.system}});
    }
    for (const auto& m : req.messages) {
        messages.push_back({{"role", m.role}, {"content", m.content}});
    }
    json body = {{"model", config_.model},
                 {"messages", messages},
                 {"max_tokens", req.max_tokens},
                 {"temperature", req.temperature},
                 {"stream", false}};
    if (req.adapter_id) body["adapter_id"] = *req.adapter_id;
    return body;
}

ChatResponse HttpBackend::decode(int status, const std::string& body, const ChatRequest& req) {
    auto error_code = [&]() -> std::string {
        auto j = json::parse(body, nullptr, false);
        if (j.is_object() && j.contains("error") && j["error"].is_object()) {
            return j["error"].value("code", "");
        }
        return "";
    };
    if (status == 429) {
        throw Error(Errc::RateLimited, "backend rate limited");
    }
    if (status == 408 || status == 504) {
        throw Error(Errc::Timeout, fmt::format("backend timed out (HTTP {})", status));
    }
    if (status == 404 && error_code() == "unknown_adapter") {
        throw Error(Errc::UnknownAdapter,
                    fmt::format("backend does not know adapter '{}'", req.adapter_id.value_or("")));
    }
    if (status < 200 || status >= 300) {
        throw Error(Errc::BackendError, fmt::format("backend returned HTTP {}", status));
    }

    auto j = json::parse(body, nullptr, false);
    if (j.is_discarded() || !j.is_object()) {
        throw Error(Errc::MalformedResponse, "response body is not a JSON object");
    }
    ChatResponse resp;
    try {
        resp.text = j.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const json::exception&) {
        throw Error(Errc::MalformedResponse, "response lacks choices[0].message.content");
    }
    if (j.contains("usage") && j["usage"].is_object()) {
        resp.usage.prompt_tokens = j["usage"].value("prompt_tokens", std::int64_t{-1});
        resp.usage.completion_tokens = j["usage"].value("completion_tokens", std::int64_t{-1});
    } else {
        resp.usage.prompt_tokens = -1;
        resp.usage.completion_tokens = -1;
    }
    if (resp.usage.prompt_tokens < 0) resp.usage.prompt_tokens = prompt_token_estimate(req);
    if (resp.usage.completion_tokens < 0) {
        resp.usage.completion_tokens = static_cast<std::int64_t>(estimate_tokens(resp.text));
    }
    return resp;
}

ChatResponse HttpBackend::complete(const ChatRequest& req) {
    httplib::Client client(config_.endpoint);
    client.set_connection_timeout(config_.deadline);
    client.set_read_timeout(config_.deadline);
    client.set_write_timeout(config_.deadline);
    httplib::Headers headers;
    if (!config_.auth_token.empty()) {
        headers.emplace("Authorization", "Bearer " + config_.auth_token);
    }

    const auto start = std::chrono::steady_clock::now();
    auto result = client.Post(config_.path, headers, encode(req).dump(), "application/json");
    const auto elapsed = std::chrono::duration<double, std::milli>(
        std::chrono::steady_clock::now() - start).count();

    if (!result) {
        const auto err = result.error();
        if (err == httplib::Error::Read || err == httplib::Error::Write ||
            err == httplib::Error::ConnectionTimeout) {
            throw Error(Errc::Timeout, fmt::format("backend call failed: {}", httplib::to_string(err)));
        }
        throw Error(Errc::BackendError, fmt::format("backend call failed: {}", httplib::to_string(err)));
    }
    if (result->status == 429) {
        std::optional<int> retry_after;
        if (result->has_header("Retry-After")) {
            try {
                retry_after = std::stoi(result->get_header_value("Retry-After")) * 1000;
            } catch (const std::exception&) {
            }
        }
        throw Error(Errc::RateLimited, "backend rate limited", retry_after);
    }
    auto resp = decode(result->status, result->body, req);
    resp.backend_id = id();
    resp.latency_ms = elapsed;
    return resp;
}

}  // namespace stylecqa
