/// @file corpus_pipeline.hpp
/// @brief CQA triplet generation (forward-thinking and bottom-up), stylized
/// rewriting into per-cluster CQSA instances, four-metric judging and
/// top-N selection.

#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "stylecqa/llm_client.hpp"
#include "stylecqa/retrieval.hpp"
#include "stylecqa/style_model.hpp"
#include "stylecqa/style_tree.hpp"

namespace stylecqa {

enum class Provenance { ForwardThinking, BottomUp, LiveUser };

std::string_view provenance_name(Provenance p) noexcept;
Provenance parse_provenance(std::string_view name);

struct CqaTriplet {
    std::string id;
    std::string account_id;
    std::vector<std::string> context_refs;  // chunk ids
    std::string context;                    // resolved text of the refs
    std::string question;
    std::string answer;
    Provenance provenance = Provenance::ForwardThinking;

    json to_json() const;
    static CqaTriplet from_json(const json& j);
    friend bool operator==(const CqaTriplet&, const CqaTriplet&) = default;
};

struct ScoreWeights {
    double c_a = 1.0;
    double q_a = 1.0;
    double s_a = 1.0;
    double fluency = 1.0;
};

struct QualityScores {
    double c_a = 0.0;
    double q_a = 0.0;
    double s_a = 0.0;
    double fluency = 0.0;
    double aggregate = 0.0;

    /// Range-checks each metric in [1, 5] and computes the aggregate.
    static QualityScores make(double c_a, double q_a, double s_a, double fluency,
                              const ScoreWeights& weights = {});
    json to_json() const;
    /// Rejects out-of-range metrics and an aggregate that disagrees with the
    /// weighted sum.
    static QualityScores from_json(const json& j, const ScoreWeights& weights = {});
    friend bool operator==(const QualityScores&, const QualityScores&) = default;
};

struct ExemplarRef {
    std::string author_id;
    std::size_t pair_index = 0;
    friend bool operator==(const ExemplarRef&, const ExemplarRef&) = default;
};

struct CqsaInstance {
    std::string cqa_id;
    ClusterId cluster;
    std::string stylized_answer;
    std::optional<QualityScores> scores;
    std::vector<ExemplarRef> exemplars_used;

    /// "<cqa_id>@<cluster key>", unique per (cqa_id, cluster).
    std::string id() const;
    json to_json() const;
    static CqsaInstance from_json(const json& j, const ScoreWeights& weights = {});
    friend bool operator==(const CqsaInstance&, const CqsaInstance&) = default;
};

/// Author id -> that author's (comment, reply) history.
using ExemplarPool = std::map<std::string, std::vector<ReplyPair>>;

ExemplarPool exemplar_pool_from(const std::vector<StyleCorpus>& corpora);

struct GenerationResult {
    std::vector<CqaTriplet> triplets;
    std::size_t malformed = 0;         // MalformedGeneration, dropped
    std::size_t retrieval_misses = 0;  // bottom-up questions with no context
};

/// Parses "Q: ... / A: ..." blocks; answers may span lines.
std::vector<std::pair<std::string, std::string>> parse_qa_blocks(std::string_view text);

/// One backend call per chunk; every parsed (Q, A) becomes a triplet whose
/// context is that chunk.
GenerationResult gen_cqa_forward(const std::string& account_id, const std::vector<ArticleChunk>& chunks,
                                 ChatBackend& llm, std::size_t max_in_flight = 1);

struct BottomUpOptions {
    std::size_t roles = 3;
    std::size_t questions_per_role = 3;
    std::size_t top_n = 3;
};

/// Roles from the account domain, questions per role, retrieval per
/// question, then a grounded answer.
GenerationResult gen_cqa_bottom_up(const std::string& account_id, const std::string& domain,
                                   ChatBackend& llm, const Retriever& retriever,
                                   const BottomUpOptions& options = {});

/// The cluster a CQA answer is rewritten for.
struct CqsaTarget {
    ClusterId cluster;
    StyleLabelVector labels;           // the cluster's style profile
    std::vector<std::string> authors;  // cluster members
    std::size_t m = 3;                 // in-context exemplars
    std::uint64_t seed = 0;
};

/// Builds the target for a leaf of the tree.
CqsaTarget target_for(const StyleTree& tree, const ClusterId& cluster, std::size_t m, std::uint64_t seed);

/// Uniform author, then uniform pair of that author, m times with
/// replacement, from an mt19937_64 seeded by seed ^ fnv1a64(instance id).
std::vector<ExemplarRef> sample_exemplars(const CqaTriplet& cqa, const CqsaTarget& target,
                                          const ExemplarPool& pool);

std::string cqsa_prompt(const CqaTriplet& cqa, const CqsaTarget& target, const StandardRegistry& registry,
                        const ExemplarPool& pool, const std::vector<ExemplarRef>& exemplars);

/// Rewrites the answer only; context and question stay on the CQA record.
CqsaInstance gen_cqsa(const CqaTriplet& cqa, const CqsaTarget& target, const StandardRegistry& registry,
                      const ExemplarPool& pool, ChatBackend& llm);

/// Accepts exactly "C-A=x;Q-A=x;S-A=x;F=x" (any key order) or
/// "x,x,x,x" in C-A, Q-A, S-A, Fluency order. Throws UnparsableJudgment.
QualityScores parse_judgment(std::string_view text, const ScoreWeights& weights = {});

std::string judge_prompt(const CqaTriplet& cqa, std::string_view answer,
                         const StyleLabelVector& cluster_labels, const StandardRegistry& registry);

/// Temperature-0 judgment of any answer to the CQA's context and question.
QualityScores judge_answer(const CqaTriplet& cqa, std::string_view answer, const StyleLabelVector& cluster_labels,
                           const StandardRegistry& registry, ChatBackend& llm, const ScoreWeights& weights = {});

/// Temperature-0 judgment of a stylized answer.
QualityScores judge(const CqsaInstance& instance, const CqaTriplet& cqa,
                    const StyleLabelVector& cluster_labels, const StandardRegistry& registry,
                    ChatBackend& llm, const ScoreWeights& weights = {});

/// Orders by aggregate, then c_a, q_a, s_a, fluency (all descending), then
/// id ascending.
bool ranks_before(const CqsaInstance& a, const CqsaInstance& b);

/// The n best instances in rank order. Throws UnscoredInstance.
std::vector<CqsaInstance> select_top(const std::vector<CqsaInstance>& instances, std::size_t n);

/// select_top applied to each cluster independently, clusters in key order.
std::vector<CqsaInstance> select_top_per_cluster(const std::vector<CqsaInstance>& instances, std::size_t n);

}  // namespace stylecqa
