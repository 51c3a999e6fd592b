/// @file serving_gateway.hpp
/// @brief Online answering: account -> cluster -> adapter resolution,
/// context retrieval, short-prompt assembly and backend dispatch.
///
/// Context goes into the prompt; style goes into the adapter. The gateway
/// prompt never carries exemplar replies. The prompt-injection baseline
/// assembler lives here too so both prompts are built from the same parts.

#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "stylecqa/corpus_pipeline.hpp"
#include "stylecqa/llm_client.hpp"
#include "stylecqa/retrieval.hpp"
#include "stylecqa/sedpo_builder.hpp"
#include "stylecqa/style_model.hpp"
#include "stylecqa/style_tree.hpp"

namespace stylecqa {

struct AnswerRequest {
    std::string account_id;
    std::string question;
    std::optional<std::size_t> top_n;
    bool trace = false;

    json to_json() const;
    static AnswerRequest from_json(const json& j);  // throws EmptyInput / CorruptDocument
};

struct AnswerResponse {
    std::string answer;
    ClusterId cluster;
    std::optional<std::string> adapter_used;
    std::vector<std::string> context_refs;
    TokenUsage usage;
    double latency_ms = 0.0;
    bool degraded = false;  // true iff adapter_used is absent
    std::vector<std::string> trace;

    json to_json() const;
    static AnswerResponse from_json(const json& j);
};

struct Resolution {
    ClusterId cluster;
    std::optional<AdapterRecord> adapter;
    friend bool operator==(const Resolution&, const Resolution&) = default;
};

struct GatewayConfig {
    std::string system_prompt =
        "You answer readers' questions on behalf of an official account. Use the provided context "
        "when it is relevant and do not invent facts.";
    std::size_t top_n = 3;
    int max_tokens = 512;
    /// Cluster for accounts with no reply corpus; empty means the largest leaf.
    std::string default_cluster_key;
    /// Serve unadapted clusters with an exemplar-injected prompt instead of
    /// the bare base model. Off by default.
    bool exemplar_fallback = false;
    std::size_t fallback_m = 3;
    std::uint64_t seed = 0;
};

/// Formats the user message: optional context block, optional exemplar
/// block, then the question.
std::string assemble_user_message(const std::vector<ArticleChunk>& context, const std::vector<ReplyPair>& exemplars,
                                  std::string_view question);

/// Gateway prompt: system + retrieved chunks + question.
ChatRequest gateway_prompt(const GatewayConfig& config, const std::vector<ArticleChunk>& context,
                           std::string_view question);

/// Prompt-injection baseline: the gateway prompt with exemplars inserted
/// before the question. With no exemplars it equals gateway_prompt.
ChatRequest baseline_prompt(const GatewayConfig& config, const std::vector<ArticleChunk>& context,
                            const std::vector<ReplyPair>& exemplars, std::string_view question);

/// Structured per-request log sink (one JSON object per served request).
using RequestLogSink = std::function<void(const json&)>;

class Gateway {
public:
    Gateway(StandardRegistry registry, std::shared_ptr<const StyleTree> tree,
            std::shared_ptr<AdapterRegistry> adapters, std::map<std::string, StyleLabelVector> profiles,
            std::shared_ptr<const Retriever> retriever, BackendPtr backend, GatewayConfig config = {},
            ExemplarPool exemplars = {});

    /// Cached per account; the cache is dropped when the tree or the
    /// adapter registry epoch changes.
    Resolution resolve(const std::string& account_id) const;

    AnswerResponse answer(const AnswerRequest& request) const;

    /// The baseline prompt for the same request: m exemplars sampled from
    /// the resolved cluster's authors. Throws EmptyExemplarPool.
    ChatRequest baseline_request(const AnswerRequest& request, std::size_t m) const;
    /// Retrieved chunks answer() would put in the prompt.
    std::vector<ArticleChunk> context_for(const AnswerRequest& request) const {
        return retrieve_context(request, nullptr);
    }
    /// The gateway prompt that answer() would send.
    ChatRequest gateway_request(const AnswerRequest& request) const;

    void publish_tree(std::shared_ptr<const StyleTree> tree);
    std::shared_ptr<const StyleTree> tree() const;
    const AdapterRegistry& adapters() const { return *adapters_; }
    void set_request_log(RequestLogSink sink);

    std::uint64_t cache_misses() const;

private:
    std::vector<ArticleChunk> retrieve_context(const AnswerRequest& request, std::vector<std::string>* trace) const;
    std::vector<ReplyPair> sample_baseline_exemplars(const ClusterId& cluster, const std::string& salt,
                                                     std::size_t m) const;

    StandardRegistry registry_;
    std::shared_ptr<AdapterRegistry> adapters_;
    std::map<std::string, StyleLabelVector> profiles_;
    std::shared_ptr<const Retriever> retriever_;
    BackendPtr backend_;
    GatewayConfig config_;
    ExemplarPool exemplars_;

    mutable std::mutex mu_;
    std::shared_ptr<const StyleTree> tree_;
    std::uint64_t tree_epoch_ = 0;
    struct CacheEntry {
        std::uint64_t tree_epoch;
        std::uint64_t registry_epoch;
        Resolution resolution;
    };
    mutable std::map<std::string, CacheEntry> cache_;
    mutable std::uint64_t cache_misses_ = 0;
    RequestLogSink log_sink_;
};

}  // namespace stylecqa
