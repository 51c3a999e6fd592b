/// @file style_model.hpp
/// @brief Style standards registry, per-pair labeling and majority-vote
/// author profiles.

#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "stylecqa/digest.hpp"
#include "stylecqa/llm_client.hpp"

namespace stylecqa {

enum class Dimension { Semantic, Grammatical, Syntactic, Lexical };

std::string_view dimension_name(Dimension d) noexcept;
Dimension parse_dimension(std::string_view name);

struct StyleStandard {
    std::string id;
    Dimension dimension = Dimension::Semantic;
    std::string name;
    std::vector<std::string> labels;  // tie-break order

    /// Index of label in the vocabulary, or npos.
    std::size_t label_index(std::string_view label) const;
};

/// Ordered set of standards. Order is the registry order used for
/// prompts, serialization and the default split order.
class StandardRegistry {
public:
    StandardRegistry() = default;
    /// Validates ids unique, vocabularies non-empty and deduplicated.
    explicit StandardRegistry(std::vector<StyleStandard> standards);

    /// The twelve default standards across the four dimensions.
    static StandardRegistry defaults();
    static StandardRegistry from_json(const json& doc);
    static StandardRegistry load(const std::filesystem::path& path);
    json to_json() const;

    const std::vector<StyleStandard>& standards() const noexcept { return standards_; }
    std::size_t size() const noexcept { return standards_.size(); }
    const StyleStandard* find(std::string_view id) const;
    const StyleStandard& at(std::string_view id) const;  // throws RegistryMismatch
    std::vector<std::string> ids() const;

    /// Digest of the canonical JSON form.
    std::string hash() const;

private:
    std::vector<StyleStandard> standards_;
    std::map<std::string, std::size_t, std::less<>> index_;
};

/// standard-id -> label. A total vector has exactly one key per standard;
/// per-pair vectors may be partial when a label could not be parsed.
using StyleLabelVector = std::map<std::string, std::string>;

/// Throws RegistryMismatch unless every key is registered and every value
/// is in its vocabulary; with require_total, every standard must be present.
void validate_labels(const StyleLabelVector& labels, const StandardRegistry& registry,
                     bool require_total = true);

json labels_to_json(const StyleLabelVector& labels);
StyleLabelVector labels_from_json(const json& j);

struct ReplyPair {
    std::string comment;
    std::string reply;
};

struct StyleCorpus {
    std::string author_id;
    std::string domain;
    std::vector<ReplyPair> pairs;
};

/// Groups line-delimited {author_id, domain, comment, reply} rows by author,
/// preserving first-seen author order and per-author row order.
std::vector<StyleCorpus> corpora_from_rows(const std::vector<json>& rows);

struct StyleProfile {
    std::string author_id;
    StyleLabelVector labels;
    std::size_t support = 0;
    std::set<std::string> tie_flags;
    /// Standards with no valid vote from any pair; assigned the first label.
    std::set<std::string> defaulted;

    json to_json() const;
    static StyleProfile from_json(const json& j);
};

struct PairLabeling {
    StyleLabelVector labels;             // partial when coercion failed
    std::vector<std::string> unlabeled;  // UnparsableLabel, recorded not fatal
};

/// Case-insensitive exact match against the vocabulary.
std::optional<std::string> coerce_label(std::string_view raw, const StyleStandard& standard);

std::string labeling_system_prompt();
std::string labeling_user_prompt(const ReplyPair& pair, const StandardRegistry& registry);

/// Parses "id=label" lines, or a single '/'-separated line in registry order.
PairLabeling parse_labeling(std::string_view response, const StandardRegistry& registry);

/// One temperature-0 backend call per pair. Single-label standards are
/// forced without consulting the response.
PairLabeling label_pair(const ReplyPair& pair, const StandardRegistry& registry, ChatBackend& llm);

/// Labels every pair of a corpus with at most max_in_flight calls in flight.
std::vector<PairLabeling> label_corpus(const StyleCorpus& corpus, const StandardRegistry& registry,
                                       ChatBackend& llm, std::size_t max_in_flight = 1);

/// Majority label per standard; ties go to the earliest vocabulary label and
/// are recorded in tie_flags. Throws EmptyInput for an empty list.
StyleProfile aggregate_profile(std::string_view author_id, const std::vector<StyleLabelVector>& per_pair,
                               const StandardRegistry& registry);

/// Hamming distance over standards; throws RegistryMismatch on differing key sets.
std::size_t profile_distance(const StyleLabelVector& a, const StyleLabelVector& b);

}  // namespace stylecqa
