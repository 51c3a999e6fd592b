#include "stylecqa/config.hpp"

#include <fmt/format.h>

#include "stylecqa/error.hpp"
#include "stylecqa/synthetic_backend.hpp"

namespace stylecqa {

BackendConfig backend_config_from_json(const json& j) {
    BackendConfig c;
    c.kind = j.value("kind", c.kind);
    c.http.endpoint = j.value("endpoint", "");
    c.http.path = j.value("path", c.http.path);
    c.http.model = j.value("model", c.http.model);
    c.http.auth_token = j.value("auth_token", "");
    c.http.deadline = std::chrono::milliseconds(j.value("deadline_ms", 30000));
    c.max_in_flight = j.value("max_in_flight", c.max_in_flight);
    if (j.contains("retry")) {
        const auto& r = j["retry"];
        c.retry.max_attempts = r.value("max_attempts", c.retry.max_attempts);
        c.retry.initial_backoff = std::chrono::milliseconds(r.value("initial_backoff_ms", 200));
        c.retry.multiplier = r.value("multiplier", c.retry.multiplier);
        c.retry.max_backoff = std::chrono::milliseconds(r.value("max_backoff_ms", 5000));
    }
    c.base_latency_ms = j.value("base_latency_ms", c.base_latency_ms);
    c.per_prompt_token_ms = j.value("per_prompt_token_ms", c.per_prompt_token_ms);
    c.script_file = j.value("script_file", "");
    c.default_text = j.value("default_text", c.default_text);
    if (j.contains("fixed_judgment") && !j["fixed_judgment"].is_null()) {
        c.fixed_judgment = j["fixed_judgment"].get<std::string>();
    }
    if (c.kind != "synthetic" && c.kind != "mock" && c.kind != "http") {
        throw Error(Errc::ConfigError, fmt::format("unknown backend kind '{}'", c.kind));
    }
    return c;
}

PipelineConfig PipelineConfig::from_json(const json& j, std::filesystem::path base_dir) {
    PipelineConfig c;
    c.base_dir = std::move(base_dir);
    try {
        if (j.contains("paths")) {
            for (const auto& [k, v] : j["paths"].items()) c.paths[k] = v.get<std::string>();
        }
        if (j.contains("backend")) c.backend = backend_config_from_json(j["backend"]);
        if (j.contains("judge_backend")) c.judge_backend = backend_config_from_json(j["judge_backend"]);
        if (j.contains("tree")) {
            const auto& t = j["tree"];
            c.tree.k = t.value("k", c.tree.k);
            c.tree.order = t.value("order", std::vector<std::string>{});
            const auto unit = t.value("size_unit", std::string("pairs"));
            if (unit != "pairs" && unit != "authors") {
                throw Error(Errc::ConfigError, fmt::format("tree.size_unit must be pairs or authors, got '{}'", unit));
            }
            c.tree.size_unit = unit == "pairs" ? SizeUnit::PairCount : SizeUnit::AuthorCount;
        }
        if (j.contains("cqa")) {
            const auto& q = j["cqa"];
            c.bottom_up.roles = q.value("roles", c.bottom_up.roles);
            c.bottom_up.questions_per_role = q.value("questions_per_role", c.bottom_up.questions_per_role);
            c.bottom_up.top_n = q.value("top_n", c.bottom_up.top_n);
            c.cqa_strategies = q.value("strategies", c.cqa_strategies);
        }
        if (j.contains("cqsa")) {
            c.m = j["cqsa"].value("m", c.m);
            c.cqsa_scope = j["cqsa"].value("scope", c.cqsa_scope);
            if (c.cqsa_scope != "all" && c.cqsa_scope != "members") {
                throw Error(Errc::ConfigError, "cqsa.scope must be 'all' or 'members'");
            }
        }
        if (j.contains("select")) c.top_n_select = j["select"].value("n", c.top_n_select);
        if (j.contains("retrieval")) {
            const auto& r = j["retrieval"];
            c.retrieval.max_chunk_tokens = r.value("max_chunk_tokens", c.retrieval.max_chunk_tokens);
            c.retrieval.top_n = r.value("top_n", c.retrieval.top_n);
            c.retrieval.k1 = r.value("k1", c.retrieval.k1);
            c.retrieval.b = r.value("b", c.retrieval.b);
        }
        if (j.contains("job")) {
            const auto& jb = j["job"];
            c.job.base_model_id = jb.value("base_model_id", c.job.base_model_id);
            c.job.adapter_rank = jb.value("rank", c.job.adapter_rank);
            c.job.epochs = jb.value("epochs", c.job.epochs);
            c.job.beta = jb.value("beta", c.job.beta);
        }
        if (j.contains("serve")) {
            const auto& s = j["serve"];
            c.serve_host = s.value("host", c.serve_host);
            c.serve_port = s.value("port", c.serve_port);
            c.gateway.default_cluster_key = s.value("default_cluster", "");
            c.gateway.exemplar_fallback = s.value("exemplar_fallback", false);
            c.gateway.fallback_m = s.value("fallback_m", c.gateway.fallback_m);
            c.gateway.top_n = s.value("top_n", c.retrieval.top_n);
            c.gateway.max_tokens = s.value("max_tokens", c.gateway.max_tokens);
            if (s.contains("system_prompt")) c.gateway.system_prompt = s["system_prompt"].get<std::string>();
        } else {
            c.gateway.top_n = c.retrieval.top_n;
        }
        if (j.contains("eval")) c.eval_baseline_m = j["eval"].value("baseline_m", c.eval_baseline_m);
        if (j.contains("seed") && !j["seed"].is_null()) c.seed = j["seed"].get<std::uint64_t>();
        c.max_in_flight = j.value("max_in_flight", c.max_in_flight);
    } catch (const json::exception& e) {
        throw Error(Errc::ConfigError, fmt::format("bad config: {}", e.what()));
    }
    for (auto* b : {&c.backend, c.judge_backend ? &*c.judge_backend : nullptr}) {
        if (b && !b->script_file.empty()) b->script_file = c.resolve(b->script_file).string();
    }
    if (c.seed) {
        c.gateway.seed = *c.seed;
        c.job.seed = *c.seed;
    }
    return c;
}

PipelineConfig PipelineConfig::load(const std::filesystem::path& path) {
    std::string bytes;
    try {
        bytes = read_file(path);
    } catch (const Error&) {
        throw Error(Errc::ConfigError, fmt::format("cannot read config {}", path.string()));
    }
    auto j = json::parse(bytes, nullptr, false);
    if (j.is_discarded() || !j.is_object()) {
        throw Error(Errc::ConfigError, fmt::format("{} is not a JSON object", path.string()));
    }
    auto c = from_json(j, std::filesystem::absolute(path).parent_path());
    c.digest = sha256_hex(bytes);
    return c;
}

std::filesystem::path PipelineConfig::resolve(const std::string& raw) const {
    std::filesystem::path p(raw);
    return p.is_absolute() ? p : base_dir / p;
}

std::optional<std::filesystem::path> PipelineConfig::maybe_path(const std::string& name) const {
    auto it = paths.find(name);
    if (it == paths.end() || it->second.empty()) return std::nullopt;
    return resolve(it->second);
}

std::filesystem::path PipelineConfig::path(const std::string& name) const {
    if (auto p = maybe_path(name)) return *p;
    throw Error(Errc::ConfigError, fmt::format("config has no paths.{}", name));
}

std::string PipelineConfig::relative(const std::filesystem::path& p) const {
    auto rel = std::filesystem::absolute(p).lexically_normal().lexically_relative(
        std::filesystem::absolute(base_dir).lexically_normal());
    return rel.empty() ? p.generic_string() : rel.generic_string();
}

std::uint64_t PipelineConfig::require_seed() const {
    if (!seed) throw Error(Errc::ConfigError, "this stage samples and needs a seed (--seed or config 'seed')");
    return *seed;
}

BackendPtr make_backend(const BackendConfig& config, const StandardRegistry& registry, std::uint64_t seed) {
    BackendPtr inner;
    if (config.kind == "synthetic") {
        SyntheticOptions opts;
        opts.seed = seed;
        opts.base_latency_ms = config.base_latency_ms;
        opts.per_prompt_token_ms = config.per_prompt_token_ms;
        opts.fixed_judgment = config.fixed_judgment;
        inner = synthetic_backend(registry, opts);
    } else if (config.kind == "mock") {
        std::map<std::string, std::string> script;
        if (!config.script_file.empty()) {
            auto j = json::parse(read_file(config.script_file), nullptr, false);
            if (j.is_discarded() || !j.is_object()) {
                throw Error(Errc::ConfigError, "mock script file must be a JSON object");
            }
            for (const auto& [k, v] : j.items()) script[k] = v.get<std::string>();
        }
        auto mock = mock_backend(std::move(script), config.default_text);
        mock->set_latency_model(config.base_latency_ms, config.per_prompt_token_ms);
        inner = mock;
    } else {
        inner = std::make_shared<HttpBackend>(config.http);
    }
    auto retrying = std::make_shared<RetryingBackend>(std::move(inner), config.retry);
    return std::make_shared<LimitedBackend>(std::move(retrying), config.max_in_flight);
}

}  // namespace stylecqa
