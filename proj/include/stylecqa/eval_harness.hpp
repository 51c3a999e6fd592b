/// @file eval_harness.hpp
/// @brief Judged evaluation of answering systems, per-cluster metric
/// reports and the gateway-vs-baseline cost comparison.

#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "stylecqa/corpus_pipeline.hpp"
#include "stylecqa/serving_gateway.hpp"

namespace stylecqa {

enum class SystemKind { Gateway, PromptBaseline };

std::string_view system_name(SystemKind s) noexcept;  // "gateway" | "baseline"
SystemKind parse_system(std::string_view name);

struct EvalQuery {
    std::string id;
    std::string account_id;
    std::string question;

    static EvalQuery from_json(const json& j);
    json to_json() const;
};

/// What a system under test returns for one query.
struct SystemOutput {
    std::string answer;
    ClusterId cluster;
    StyleLabelVector cluster_labels;
    std::string context;  // the context the judge sees
    TokenUsage usage;
    double latency_ms = 0.0;
};

using SystemFn = std::function<SystemOutput(const EvalQuery&)>;

struct EvalRecord {
    std::string query_id;
    std::string cluster;  // cluster key
    SystemKind system = SystemKind::Gateway;
    std::string answer;
    std::optional<QualityScores> scores;
    TokenUsage usage;
    double latency_ms = 0.0;
    bool answered = false;         // the system produced an answer
    std::optional<std::string> error;  // "<Errc>: message" for any failure

    json to_json() const;
    static EvalRecord from_json(const json& j);
};

/// Runs every (query, system) once and judges the answer. Failures of
/// either step land in the record's error field.
std::vector<EvalRecord> run_eval(const std::vector<EvalQuery>& queries, const std::map<SystemKind, SystemFn>& systems,
                                 ChatBackend& judge_llm, const StandardRegistry& registry,
                                 std::size_t max_in_flight = 1);

SystemFn gateway_system(const Gateway& gateway);
/// Baseline: m exemplars injected into the prompt, no adapter.
SystemFn baseline_system(const Gateway& gateway, BackendPtr backend, std::size_t m);

struct MetricMeans {
    double q_a = 0.0;
    double c_a = 0.0;
    double s_a = 0.0;
    double fluency = 0.0;
    std::size_t n = 0;
};

struct CostSummary {
    double mean_prompt_tokens = 0.0;
    double mean_completion_tokens = 0.0;
    double mean_latency_ms = 0.0;
    std::size_t n = 0;
    std::size_t failures = 0;
};

struct EvalReport {
    std::map<std::string, std::map<std::string, MetricMeans>> per_cluster;  // cluster -> system -> means
    std::map<std::string, MetricMeans> overall;                             // system -> means over all records
    std::map<std::string, CostSummary> cost;                                // system -> cost

    json to_json() const;
    static EvalReport from_json(const json& j);
    /// CSV: one row per (cluster, metric), one column per system.
    std::string to_csv() const;
};

/// Means over records sorted by (query, system). Throws EmptyRecords.
EvalReport report(const std::vector<EvalRecord>& records);

/// Throws CorruptDocument unless every stored mean matches a recomputation
/// from the records within 1e-9.
void verify_report(const EvalReport& stored, const std::vector<EvalRecord>& records);

struct TimeCost {
    double gateway_latency_ms = 0.0;
    double baseline_latency_ms = 0.0;
    double speedup = 0.0;  // baseline / gateway
    double gateway_prompt_tokens = 0.0;
    double baseline_prompt_tokens = 0.0;
    double prompt_token_delta = 0.0;  // baseline minus gateway

    json to_json() const;
};

/// Speedup and token deltas from per-system means. Throws MissingSystem.
TimeCost time_cost(const std::vector<EvalRecord>& records);
/// The same arithmetic on two mean latencies.
double speedup_ratio(double gateway_latency, double baseline_latency);

}  // namespace stylecqa
