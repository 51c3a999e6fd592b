/// @file style_tree.hpp
/// @brief Hierarchical style tree: threshold-gated splits over style
/// standards, leaf clusters, sibling queries and cold-start assignment.

#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "stylecqa/style_model.hpp"

namespace stylecqa {

/// What a node's corpus size counts when comparing against k.
enum class SizeUnit { PairCount, AuthorCount };

struct StyleNode {
    std::uint32_t node_id = 0;
    std::optional<std::string> split_standard;  // present iff internal
    std::optional<std::string> edge_label;      // absent for root
    std::set<std::string> members;
    std::vector<StyleNode> children;
    /// Majority label vector over member profiles (one vote per author).
    StyleLabelVector profile;

    bool is_leaf() const noexcept { return children.empty(); }
    friend bool operator==(const StyleNode&, const StyleNode&) = default;
};

using PathStep = std::pair<std::string, std::string>;  // (standard, label)

struct ClusterId {
    std::uint32_t node_id = 0;
    std::vector<PathStep> path;

    /// "root" or "std=label/std=label"; stable across rebuilds with the
    /// same split outcome, used as the cluster key in files and adapter ids.
    std::string key() const;
    static ClusterId from_key(std::uint32_t node_id, std::string_view key);

    json to_json() const;
    static ClusterId from_json(const json& j);

    friend bool operator==(const ClusterId&, const ClusterId&) = default;
};

struct StyleTree {
    StyleNode root;
    std::string registry_hash;
    std::vector<std::string> standard_order;
    std::uint64_t k = 0;
    SizeUnit size_unit = SizeUnit::PairCount;

    friend bool operator==(const StyleTree&, const StyleTree&) = default;

    const StyleNode* find_node(std::uint32_t node_id) const;
    std::vector<const StyleNode*> leaves() const;
    /// Leaf holding the author, if any.
    std::optional<ClusterId> cluster_of(std::string_view author_id) const;
    ClusterId cluster_for(std::uint32_t leaf_id) const;  // throws UnknownCluster
    /// Resolves a cluster key to a leaf; throws UnknownCluster.
    ClusterId cluster_by_key(std::string_view key) const;
};

struct TreeOptions {
    std::vector<std::string> order;  // empty: registry order
    std::uint64_t k = 100;
    SizeUnit size_unit = SizeUnit::PairCount;
};

/// One pass per standard over all current leaves: a leaf splits into one
/// child per distinct member label iff there are at least two labels and
/// every child's corpus size exceeds k. Children are ordered by vocabulary
/// order; node ids are assigned in creation order.
StyleTree build_tree(const std::vector<StyleProfile>& profiles,
                     const std::map<std::string, std::uint64_t>& sizes,
                     const StandardRegistry& registry, const TreeOptions& options);

/// Follows matching edges from the root; on a miss returns the largest leaf
/// (by member count, ties by smallest node id) under the deepest match.
ClusterId assign_cluster(const StyleLabelVector& profile, const StyleTree& tree,
                         const StandardRegistry& registry);

/// Largest leaf of the whole tree (by member count, ties by smallest id).
ClusterId largest_cluster(const StyleTree& tree);

struct SiblingCluster {
    ClusterId cluster;
    std::string differing_standard;
};

/// Leaves under the parent's other children, tagged with the parent's split.
std::vector<SiblingCluster> sibling_clusters(const ClusterId& cluster, const StyleTree& tree);

/// Path from root to the node, inclusive. Empty if node_id is unknown.
std::vector<const StyleNode*> path_to(const StyleTree& tree, std::uint32_t node_id);

inline constexpr int kTreeSchemaVersion = 1;

json serialize_tree(const StyleTree& tree);
StyleTree deserialize_tree(const json& doc);

}  // namespace stylecqa
