/// @file config.hpp
/// @brief Pipeline configuration file (JSON) shared by every CLI stage.
/// The format is documented in docs/config.md.

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "stylecqa/corpus_pipeline.hpp"
#include "stylecqa/digest.hpp"
#include "stylecqa/llm_client.hpp"
#include "stylecqa/retrieval.hpp"
#include "stylecqa/sedpo_builder.hpp"
#include "stylecqa/serving_gateway.hpp"
#include "stylecqa/style_tree.hpp"

namespace stylecqa {

struct BackendConfig {
    std::string kind = "synthetic";  // synthetic | mock | http
    HttpBackendConfig http;
    int max_in_flight = 4;
    RetryPolicy retry;
    double base_latency_ms = 1500.0;
    double per_prompt_token_ms = 2.0;
    std::string script_file;  // mock: {fingerprint: text}
    std::string default_text = "ok";
    std::optional<std::string> fixed_judgment;  // synthetic judge override
};

struct PipelineConfig {
    std::filesystem::path base_dir;  // relative paths resolve against this
    std::map<std::string, std::string> paths;
    BackendConfig backend;
    std::optional<BackendConfig> judge_backend;
    TreeOptions tree;
    BottomUpOptions bottom_up;
    std::vector<std::string> cqa_strategies{"forward", "bottom_up"};
    std::size_t m = 3;
    std::string cqsa_scope = "all";  // all | members
    std::size_t top_n_select = 10000;
    RetrievalParams retrieval;
    JobConfig job;
    GatewayConfig gateway;
    std::string serve_host = "127.0.0.1";
    int serve_port = 8080;
    std::size_t eval_baseline_m = 3;
    std::optional<std::uint64_t> seed;
    std::size_t max_in_flight = 4;
    std::string digest;  // sha256 of the config file bytes ("" for defaults)

    static PipelineConfig from_json(const json& j, std::filesystem::path base_dir);
    static PipelineConfig load(const std::filesystem::path& path);

    /// Resolved path for a named entry; throws ConfigError if unset.
    std::filesystem::path path(const std::string& name) const;
    std::optional<std::filesystem::path> maybe_path(const std::string& name) const;
    std::filesystem::path resolve(const std::string& raw) const;
    /// Path relative to base_dir, for manifests.
    std::string relative(const std::filesystem::path& p) const;
    /// Throws ConfigError when no seed was configured.
    std::uint64_t require_seed() const;
};

BackendConfig backend_config_from_json(const json& j);

/// Builds the configured backend, wrapped with retry and in-flight limits.
BackendPtr make_backend(const BackendConfig& config, const StandardRegistry& registry, std::uint64_t seed);

}  // namespace stylecqa
