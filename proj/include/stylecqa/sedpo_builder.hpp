/// @file sedpo_builder.hpp
/// @brief Style-enhanced preference pairs, training job specs and the
/// cluster -> adapter registry.

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

#include "stylecqa/corpus_pipeline.hpp"
#include "stylecqa/style_tree.hpp"

namespace stylecqa {

struct PreferencePair {
    ClusterId cluster;
    std::string cqa_id;
    std::string prompt;  // context + question, never style exemplars
    std::string chosen;
    std::string rejected;
    ClusterId rejected_cluster;
    std::string differing_standard;  // split standard of the clusters' LCA
    bool sibling_sourced = true;
    std::optional<double> margin_meta;  // chosen minus rejected aggregate

    json to_json() const;
    static PreferencePair from_json(const json& j);
    friend bool operator==(const PreferencePair&, const PreferencePair&) = default;
};

/// CQSA instances indexed by (cluster key, cqa_id).
class CqsaStore {
public:
    CqsaStore() = default;
    explicit CqsaStore(const std::vector<CqsaInstance>& instances);

    /// Later instances with the same (cluster, cqa_id) replace earlier ones.
    void add(const CqsaInstance& instance);
    const CqsaInstance* find(std::string_view cluster_key, std::string_view cqa_id) const;
    std::size_t size() const noexcept;

private:
    std::map<std::string, std::map<std::string, CqsaInstance, std::less<>>, std::less<>> by_cluster_;
};

/// The pair prompt: retrieved context and the question.
std::string pair_prompt(const CqaTriplet& cqa);

struct PairBuildResult {
    std::vector<PreferencePair> pairs;
    std::size_t unmatched = 0;   // no other cluster answered the same question
    std::size_t degenerate = 0;  // only identical-text candidates existed
};

/// For each chosen instance: nearest (by leaf profile distance, ties by
/// node id) sibling leaf holding the same cqa_id with a different answer;
/// failing that, the nearest non-sibling leaf. Throws NoTree for a null
/// tree and EmptyChosenSet for an empty chosen set.
PairBuildResult build_pairs(const ClusterId& cluster, const std::vector<CqsaInstance>& chosen_set,
                            const StyleTree* tree, const CqsaStore& store,
                            const std::map<std::string, CqaTriplet>& cqa_by_id);

struct JobConfig {
    std::string base_model_id = "base";
    int adapter_rank = 16;
    int epochs = 1;
    double beta = 0.1;
    std::uint64_t seed = 0;
};

struct TrainingJobSpec {
    ClusterId cluster;
    std::string base_model_id;
    int adapter_rank = 16;
    int epochs = 1;
    double beta = 0.1;
    std::string pairs_file;
    std::string pairs_digest;
    std::string output_dir;
    std::uint64_t seed = 0;

    json to_json() const;
    static TrainingJobSpec from_json(const json& j);
    friend bool operator==(const TrainingJobSpec&, const TrainingJobSpec&) = default;
};

/// File-system-safe directory name for a cluster.
std::string cluster_slug(const ClusterId& cluster);

/// Writes <job_root>/<slug>/pairs.jsonl and job.json. The spec's
/// pairs_file and output_dir are relative to that directory. Throws EmptyPairs.
TrainingJobSpec emit_job(const ClusterId& cluster, const std::vector<PreferencePair>& pairs,
                         const JobConfig& config, const std::filesystem::path& job_root);

/// Recomputes the pairs-file digest (pairs_file resolved against job_dir);
/// throws DigestMismatch.
void verify_job(const TrainingJobSpec& spec, const std::filesystem::path& job_dir);

enum class AdapterStatus { Pending, Ready, Failed };

struct AdapterManifest {
    std::string base_model_id;
    int rank = 16;
    std::string data_digest;
    std::string created_at;
    std::string trainer_version;
    friend bool operator==(const AdapterManifest&, const AdapterManifest&) = default;
};

struct AdapterRecord {
    ClusterId cluster;
    std::string artifact_uri;  // doubles as the backend adapter id
    AdapterManifest manifest;
    AdapterStatus status = AdapterStatus::Pending;

    json to_json() const;
    static AdapterRecord from_json(const json& j);
    friend bool operator==(const AdapterRecord&, const AdapterRecord&) = default;
};

inline constexpr int kRegistrySchemaVersion = 1;

/// At most one Ready record per cluster; a newer Ready record supersedes
/// the old one, which moves to the archive.
class AdapterRegistry {
public:
    /// Throws DigestMismatch unless record.manifest.data_digest equals
    /// expected_digest, UnknownCluster if tree is given and the cluster is
    /// not one of its leaves.
    void register_adapter(const AdapterRecord& record, std::string_view expected_digest,
                          const StyleTree* tree = nullptr);
    void register_adapter(const AdapterRecord& record, const TrainingJobSpec& job,
                          const StyleTree* tree = nullptr);

    std::optional<AdapterRecord> lookup(std::string_view cluster_key) const;
    std::optional<AdapterRecord> lookup(const ClusterId& cluster) const { return lookup(cluster.key()); }

    std::vector<AdapterRecord> archived() const;
    /// Increments on every registration.
    std::uint64_t epoch() const;

    json to_json() const;
    static AdapterRegistry from_json(const json& doc);
    void save(const std::filesystem::path& path) const;
    static AdapterRegistry load(const std::filesystem::path& path);

    AdapterRegistry() = default;
    AdapterRegistry(const AdapterRegistry& other);
    AdapterRegistry& operator=(const AdapterRegistry& other);

private:
    mutable std::shared_mutex mu_;
    std::map<std::string, AdapterRecord, std::less<>> ready_;
    std::vector<AdapterRecord> archive_;
    std::uint64_t epoch_ = 0;
};

}  // namespace stylecqa
