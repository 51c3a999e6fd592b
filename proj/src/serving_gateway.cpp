#include "stylecqa/serving_gateway.hpp"

#include <chrono>

#include <fmt/format.h>

#include "stylecqa/error.hpp"

namespace stylecqa {

json AnswerRequest::to_json() const {
    json j = {{"account_id", account_id}, {"question", question}, {"trace", trace}};
    j["top_n"] = top_n ? json(*top_n) : json(nullptr);
    return j;
}

AnswerRequest AnswerRequest::from_json(const json& j) {
    AnswerRequest r;
    try {
        r.account_id = j.at("account_id").get<std::string>();
        r.question = j.at("question").get<std::string>();
        if (j.contains("top_n") && !j["top_n"].is_null()) r.top_n = j["top_n"].get<std::size_t>();
        r.trace = j.value("trace", false);
    } catch (const json::exception& e) {
        throw Error(Errc::CorruptDocument, fmt::format("bad answer request: {}", e.what()));
    }
    if (r.question.find_first_not_of(" \t\r\n") == std::string::npos) {
        throw Error(Errc::EmptyInput, "question must be non-empty");
    }
    return r;
}

json AnswerResponse::to_json() const {
    json j = {{"answer", answer},
              {"cluster", cluster.to_json()},
              {"context_refs", context_refs},
              {"usage", {{"prompt_tokens", usage.prompt_tokens}, {"completion_tokens", usage.completion_tokens}}},
              {"latency_ms", latency_ms},
              {"degraded", degraded}};
    j["adapter_used"] = adapter_used ? json(*adapter_used) : json(nullptr);
    if (!trace.empty()) j["trace"] = trace;
    return j;
}

AnswerResponse AnswerResponse::from_json(const json& j) {
    try {
        AnswerResponse r;
        r.answer = j.at("answer").get<std::string>();
        r.cluster = ClusterId::from_json(j.at("cluster"));
        if (!j.at("adapter_used").is_null()) r.adapter_used = j["adapter_used"].get<std::string>();
        r.context_refs = j.at("context_refs").get<std::vector<std::string>>();
        r.usage.prompt_tokens = j.at("usage").at("prompt_tokens").get<std::int64_t>();
        r.usage.completion_tokens = j.at("usage").at("completion_tokens").get<std::int64_t>();
        r.latency_ms = j.at("latency_ms").get<double>();
        r.degraded = j.at("degraded").get<bool>();
        r.trace = j.value("trace", std::vector<std::string>{});
        return r;
    } catch (const json::exception& e) {
        throw Error(Errc::CorruptDocument, fmt::format("bad answer response: {}", e.what()));
    }
}

std::string assemble_user_message(const std::vector<ArticleChunk>& context, const std::vector<ReplyPair>& exemplars,
                                  std::string_view question) {
    std::string out;
    if (!context.empty()) {
        out += "Context:\n";
        for (std::size_t i = 0; i < context.size(); ++i) {
            out += fmt::format("[{}] {}\n\n", i + 1, context[i].text);
        }
    }
    if (!exemplars.empty()) {
        out += "Style examples:\n";
        for (const auto& e : exemplars) {
            out += fmt::format("Comment: {}\nReply: {}\n\n", e.comment, e.reply);
        }
    }
    out += fmt::format("Question: {}", question);
    return out;
}

ChatRequest gateway_prompt(const GatewayConfig& config, const std::vector<ArticleChunk>& context,
                           std::string_view question) {
    return baseline_prompt(config, context, {}, question);
}

ChatRequest baseline_prompt(const GatewayConfig& config, const std::vector<ArticleChunk>& context,
                            const std::vector<ReplyPair>& exemplars, std::string_view question) {
    auto req = ChatRequest::single(config.system_prompt, assemble_user_message(context, exemplars, question),
                                   exemplars.empty() ? "serve" : "serve-baseline");
    req.max_tokens = config.max_tokens;
    req.temperature = 0.0;
    return req;
}

Gateway::Gateway(StandardRegistry registry, std::shared_ptr<const StyleTree> tree,
                 std::shared_ptr<AdapterRegistry> adapters, std::map<std::string, StyleLabelVector> profiles,
                 std::shared_ptr<const Retriever> retriever, BackendPtr backend, GatewayConfig config,
                 ExemplarPool exemplars)
    : registry_(std::move(registry)),
      adapters_(std::move(adapters)),
      profiles_(std::move(profiles)),
      retriever_(std::move(retriever)),
      backend_(std::move(backend)),
      config_(std::move(config)),
      exemplars_(std::move(exemplars)),
      tree_(std::move(tree)) {
    if (!tree_) throw Error(Errc::NoTree, "gateway requires a style tree");
    if (!adapters_) adapters_ = std::make_shared<AdapterRegistry>();
    if (!backend_) throw Error(Errc::ConfigError, "gateway requires a backend");
}

void Gateway::publish_tree(std::shared_ptr<const StyleTree> tree) {
    if (!tree) throw Error(Errc::NoTree, "cannot publish an empty tree");
    std::lock_guard lock(mu_);
    tree_ = std::move(tree);
    ++tree_epoch_;
}

std::shared_ptr<const StyleTree> Gateway::tree() const {
    std::lock_guard lock(mu_);
    return tree_;
}

void Gateway::set_request_log(RequestLogSink sink) {
    std::lock_guard lock(mu_);
    log_sink_ = std::move(sink);
}

std::uint64_t Gateway::cache_misses() const {
    std::lock_guard lock(mu_);
    return cache_misses_;
}

Resolution Gateway::resolve(const std::string& account_id) const {
    std::shared_ptr<const StyleTree> tree;
    std::uint64_t tree_epoch = 0;
    const auto registry_epoch = adapters_->epoch();
    {
        std::lock_guard lock(mu_);
        tree = tree_;
        tree_epoch = tree_epoch_;
        if (auto it = cache_.find(account_id);
            it != cache_.end() && it->second.tree_epoch == tree_epoch && it->second.registry_epoch == registry_epoch) {
            return it->second.resolution;
        }
    }

    Resolution res;
    if (auto member = tree->cluster_of(account_id)) {
        res.cluster = std::move(*member);
    } else if (auto p = profiles_.find(account_id); p != profiles_.end()) {
        res.cluster = assign_cluster(p->second, *tree, registry_);
    } else if (retriever_ && retriever_->has_account(account_id)) {
        res.cluster = config_.default_cluster_key.empty()
                          ? largest_cluster(*tree)
                          : tree->cluster_by_key(config_.default_cluster_key);
    } else {
        throw Error(Errc::UnknownAccount, fmt::format("account '{}' has no profile and no articles", account_id));
    }
    res.adapter = adapters_->lookup(res.cluster);

    std::lock_guard lock(mu_);
    ++cache_misses_;
    if (tree_epoch == tree_epoch_) cache_[account_id] = {tree_epoch, registry_epoch, res};
    return res;
}

std::vector<ArticleChunk> Gateway::retrieve_context(const AnswerRequest& request,
                                                    std::vector<std::string>* trace) const {
    std::vector<ArticleChunk> chunks;
    if (retriever_ && retriever_->has_account(request.account_id)) {
        for (auto& hit : retriever_->retrieve(request.account_id, request.question,
                                              request.top_n.value_or(config_.top_n)).chunks) {
            chunks.push_back(std::move(hit.chunk));
        }
    }
    if (chunks.empty() && trace) trace->push_back("EmptyRetrieval: answering from the question alone");
    return chunks;
}

std::vector<ReplyPair> Gateway::sample_baseline_exemplars(const ClusterId& cluster, const std::string& salt,
                                                          std::size_t m) const {
    if (m == 0) return {};
    const auto tree = this->tree();
    CqaTriplet key;
    key.id = salt;
    const auto target = target_for(*tree, cluster, m, config_.seed);
    std::vector<ReplyPair> out;
    for (const auto& ref : sample_exemplars(key, target, exemplars_)) {
        out.push_back(exemplars_.at(ref.author_id).at(ref.pair_index));
    }
    return out;
}

ChatRequest Gateway::gateway_request(const AnswerRequest& request) const {
    return gateway_prompt(config_, retrieve_context(request, nullptr), request.question);
}

ChatRequest Gateway::baseline_request(const AnswerRequest& request, std::size_t m) const {
    const auto res = resolve(request.account_id);
    auto exemplars = sample_baseline_exemplars(res.cluster, request.account_id + "\n" + request.question, m);
    return baseline_prompt(config_, retrieve_context(request, nullptr), exemplars, request.question);
}

AnswerResponse Gateway::answer(const AnswerRequest& request) const {
    if (request.question.find_first_not_of(" \t\r\n") == std::string::npos) {
        throw Error(Errc::EmptyInput, "question must be non-empty");
    }
    const auto started = std::chrono::steady_clock::now();
    AnswerResponse out;
    const auto res = resolve(request.account_id);
    out.cluster = res.cluster;

    const auto context = retrieve_context(request, &out.trace);
    for (const auto& c : context) out.context_refs.push_back(c.chunk_id);

    ChatRequest chat;
    if (res.adapter) {
        chat = gateway_prompt(config_, context, request.question);
        chat.adapter_id = res.adapter->artifact_uri;
        out.adapter_used = res.adapter->artifact_uri;
    } else if (config_.exemplar_fallback) {
        auto exemplars = sample_baseline_exemplars(res.cluster, request.account_id + "\n" + request.question,
                                                   config_.fallback_m);
        chat = baseline_prompt(config_, context, exemplars, request.question);
        out.trace.push_back("degraded: no ready adapter, exemplar fallback prompt");
    } else {
        chat = gateway_prompt(config_, context, request.question);
        out.trace.push_back("degraded: no ready adapter, base model");
    }
    out.degraded = !out.adapter_used.has_value();

    const auto resp = backend_->complete(chat);
    out.answer = resp.text;
    out.usage = resp.usage;
    out.latency_ms = resp.latency_ms;
    if (!request.trace) out.trace.clear();

    RequestLogSink sink;
    {
        std::lock_guard lock(mu_);
        sink = log_sink_;
    }
    if (sink) {
        const auto wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - started).count();
        json entry = {{"event", "answer"},
                      {"account_id", request.account_id},
                      {"cluster", out.cluster.key()},
                      {"degraded", out.degraded},
                      {"prompt_tokens", out.usage.prompt_tokens},
                      {"completion_tokens", out.usage.completion_tokens},
                      {"backend_latency_ms", out.latency_ms},
                      {"wall_ms", wall_ms}};
        entry["adapter_id"] = out.adapter_used ? json(*out.adapter_used) : json(nullptr);
        sink(entry);
    }
    return out;
}

}  // namespace stylecqa
