#include "stylecqa/style_tree.hpp"

#include <algorithm>
#include <functional>

#include <fmt/format.h>

#include "stylecqa/error.hpp"

namespace stylecqa {
namespace {

constexpr const char* kTreeSchema = "stylecqa.style_tree";

// One vote per author; earliest vocabulary label wins ties.
StyleLabelVector majority_of(const std::set<std::string>& members,
                             const std::map<std::string, const StyleLabelVector*>& profiles,
                             const StandardRegistry& registry) {
    StyleLabelVector out;
    if (members.empty()) return out;
    for (const auto& s : registry.standards()) {
        std::vector<std::size_t> counts(s.labels.size(), 0);
        for (const auto& m : members) {
            ++counts[s.label_index(profiles.at(m)->at(s.id))];
        }
        out[s.id] = s.labels[static_cast<std::size_t>(
            std::max_element(counts.begin(), counts.end()) - counts.begin())];
    }
    return out;
}

void fill_profiles(StyleNode& node, const std::map<std::string, const StyleLabelVector*>& profiles,
                   const StandardRegistry& registry) {
    node.profile = majority_of(node.members, profiles, registry);
    for (auto& child : node.children) fill_profiles(child, profiles, registry);
}

bool find_path(const StyleNode& node, std::uint32_t id, std::vector<const StyleNode*>& path) {
    path.push_back(&node);
    if (node.node_id == id) return true;
    for (const auto& child : node.children) {
        if (find_path(child, id, path)) return true;
    }
    path.pop_back();
    return false;
}

void collect_leaves(const StyleNode& node, std::vector<const StyleNode*>& out) {
    if (node.is_leaf()) {
        out.push_back(&node);
        return;
    }
    for (const auto& child : node.children) collect_leaves(child, out);
}

const StyleNode* largest_leaf(const StyleNode& subtree) {
    std::vector<const StyleNode*> leaves;
    collect_leaves(subtree, leaves);
    return *std::min_element(leaves.begin(), leaves.end(), [](const StyleNode* a, const StyleNode* b) {
        if (a->members.size() != b->members.size()) return a->members.size() > b->members.size();
        return a->node_id < b->node_id;
    });
}

json node_to_json(const StyleNode& node) {
    json children = json::array();
    for (const auto& c : node.children) children.push_back(node_to_json(c));
    json j = {{"id", node.node_id},
              {"members", std::vector<std::string>(node.members.begin(), node.members.end())},
              {"profile", labels_to_json(node.profile)},
              {"children", children}};
    j["split_standard"] = node.split_standard ? json(*node.split_standard) : json(nullptr);
    j["edge_label"] = node.edge_label ? json(*node.edge_label) : json(nullptr);
    return j;
}

StyleNode node_from_json(const json& j) {
    StyleNode node;
    node.node_id = j.at("id").get<std::uint32_t>();
    if (!j.at("split_standard").is_null()) node.split_standard = j["split_standard"].get<std::string>();
    if (!j.at("edge_label").is_null()) node.edge_label = j["edge_label"].get<std::string>();
    for (const auto& m : j.at("members")) node.members.insert(m.get<std::string>());
    node.profile = labels_from_json(j.at("profile"));
    for (const auto& c : j.at("children")) node.children.push_back(node_from_json(c));
    return node;
}

void check_structure(const StyleNode& node, bool is_root, std::set<std::uint32_t>& ids) {
    if (!ids.insert(node.node_id).second) {
        throw Error(Errc::CorruptDocument, fmt::format("duplicate node id {}", node.node_id));
    }
    if (is_root == node.edge_label.has_value()) {
        throw Error(Errc::CorruptDocument, fmt::format("node {} edge label mismatch", node.node_id));
    }
    if (node.children.empty() != !node.split_standard.has_value()) {
        throw Error(Errc::CorruptDocument,
                    fmt::format("node {}: internal iff split_standard present", node.node_id));
    }
    std::set<std::string> union_members;
    std::size_t total = 0;
    for (const auto& c : node.children) {
        check_structure(c, false, ids);
        union_members.insert(c.members.begin(), c.members.end());
        total += c.members.size();
    }
    if (!node.children.empty() && (union_members != node.members || total != node.members.size())) {
        throw Error(Errc::CorruptDocument,
                    fmt::format("children of node {} do not partition its members", node.node_id));
    }
}

}  // namespace

std::string ClusterId::key() const {
    if (path.empty()) return "root";
    std::string out;
    for (const auto& [standard, label] : path) {
        if (!out.empty()) out += '/';
        out += standard;
        out += '=';
        out += label;
    }
    return out;
}

ClusterId ClusterId::from_key(std::uint32_t node_id, std::string_view key) {
    ClusterId id;
    id.node_id = node_id;
    if (key == "root") return id;
    std::size_t start = 0;
    while (start <= key.size()) {
        auto end = key.find('/', start);
        if (end == std::string_view::npos) end = key.size();
        const auto step = key.substr(start, end - start);
        const auto eq = step.find('=');
        if (eq == std::string_view::npos) {
            throw Error(Errc::CorruptDocument, fmt::format("bad cluster key '{}'", key));
        }
        id.path.emplace_back(std::string(step.substr(0, eq)), std::string(step.substr(eq + 1)));
        start = end + 1;
    }
    return id;
}

json ClusterId::to_json() const {
    return {{"node_id", node_id}, {"key", key()}};
}

ClusterId ClusterId::from_json(const json& j) {
    try {
        return from_key(j.at("node_id").get<std::uint32_t>(), j.at("key").get<std::string>());
    } catch (const json::exception& e) {
        throw Error(Errc::CorruptDocument, fmt::format("bad cluster id: {}", e.what()));
    }
}

const StyleNode* StyleTree::find_node(std::uint32_t node_id) const {
    std::vector<const StyleNode*> path;
    return find_path(root, node_id, path) ? path.back() : nullptr;
}

std::vector<const StyleNode*> StyleTree::leaves() const {
    std::vector<const StyleNode*> out;
    collect_leaves(root, out);
    return out;
}

std::vector<const StyleNode*> path_to(const StyleTree& tree, std::uint32_t node_id) {
    std::vector<const StyleNode*> path;
    if (!find_path(tree.root, node_id, path)) path.clear();
    return path;
}

ClusterId StyleTree::cluster_for(std::uint32_t leaf_id) const {
    const auto path = path_to(*this, leaf_id);
    if (path.empty() || !path.back()->is_leaf()) {
        throw Error(Errc::UnknownCluster, fmt::format("node {} is not a leaf of the tree", leaf_id));
    }
    ClusterId id;
    id.node_id = leaf_id;
    for (std::size_t i = 1; i < path.size(); ++i) {
        id.path.emplace_back(*path[i - 1]->split_standard, *path[i]->edge_label);
    }
    return id;
}

std::optional<ClusterId> StyleTree::cluster_of(std::string_view author_id) const {
    for (const auto* leaf : leaves()) {
        if (leaf->members.contains(std::string(author_id))) return cluster_for(leaf->node_id);
    }
    return std::nullopt;
}

ClusterId StyleTree::cluster_by_key(std::string_view key) const {
    for (const auto* leaf : leaves()) {
        auto id = cluster_for(leaf->node_id);
        if (id.key() == key) return id;
    }
    throw Error(Errc::UnknownCluster, fmt::format("no leaf with key '{}'", key));
}

StyleTree build_tree(const std::vector<StyleProfile>& profiles,
                     const std::map<std::string, std::uint64_t>& sizes,
                     const StandardRegistry& registry, const TreeOptions& options) {
    StyleTree tree;
    tree.registry_hash = registry.hash();
    tree.standard_order = options.order.empty() ? registry.ids() : options.order;
    tree.k = options.k;
    tree.size_unit = options.size_unit;

    std::set<std::string> seen_order;
    for (const auto& s : tree.standard_order) {
        registry.at(s);
        if (!seen_order.insert(s).second) {
            throw Error(Errc::RegistryMismatch, fmt::format("standard '{}' repeated in split order", s));
        }
    }

    std::map<std::string, const StyleLabelVector*> by_author;
    for (const auto& p : profiles) {
        validate_labels(p.labels, registry);
        if (!by_author.emplace(p.author_id, &p.labels).second) {
            throw Error(Errc::RegistryMismatch, fmt::format("duplicate author '{}'", p.author_id));
        }
        if (options.size_unit == SizeUnit::PairCount && !sizes.contains(p.author_id)) {
            throw Error(Errc::EmptyInput, fmt::format("no corpus size for author '{}'", p.author_id));
        }
        tree.root.members.insert(p.author_id);
    }

    auto corpus_size = [&](const std::set<std::string>& members) -> std::uint64_t {
        if (options.size_unit == SizeUnit::AuthorCount) return members.size();
        std::uint64_t total = 0;
        for (const auto& m : members) total += sizes.at(m);
        return total;
    };

    std::uint32_t next_id = 1;
    std::vector<StyleNode*> leaves{&tree.root};
    for (const auto& standard_id : tree.standard_order) {
        const auto& standard = registry.at(standard_id);
        std::vector<StyleNode*> next_leaves;
        for (StyleNode* leaf : leaves) {
            std::vector<std::set<std::string>> groups(standard.labels.size());
            for (const auto& m : leaf->members) {
                groups[standard.label_index(by_author.at(m)->at(standard_id))].insert(m);
            }
            const auto non_empty = std::count_if(groups.begin(), groups.end(),
                                                 [](const auto& g) { return !g.empty(); });
            const bool splittable =
                non_empty >= 2 && std::all_of(groups.begin(), groups.end(), [&](const auto& g) {
                    return g.empty() || corpus_size(g) > options.k;
                });
            if (!splittable) {
                next_leaves.push_back(leaf);
                continue;
            }
            leaf->split_standard = standard_id;
            leaf->children.reserve(static_cast<std::size_t>(non_empty));
            for (std::size_t li = 0; li < groups.size(); ++li) {
                if (groups[li].empty()) continue;
                StyleNode child;
                child.node_id = next_id++;
                child.edge_label = standard.labels[li];
                child.members = std::move(groups[li]);
                leaf->children.push_back(std::move(child));
            }
            for (auto& child : leaf->children) next_leaves.push_back(&child);
        }
        leaves = std::move(next_leaves);
    }

    fill_profiles(tree.root, by_author, registry);
    return tree;
}

ClusterId assign_cluster(const StyleLabelVector& profile, const StyleTree& tree,
                         const StandardRegistry& registry) {
    if (registry.hash() != tree.registry_hash) {
        throw Error(Errc::RegistryMismatch, "tree was built over a different standards registry");
    }
    validate_labels(profile, registry);
    const StyleNode* node = &tree.root;
    while (!node->is_leaf()) {
        const auto& label = profile.at(*node->split_standard);
        auto it = std::find_if(node->children.begin(), node->children.end(),
                               [&](const StyleNode& c) { return c.edge_label == label; });
        if (it == node->children.end()) {
            return tree.cluster_for(largest_leaf(*node)->node_id);
        }
        node = &*it;
    }
    return tree.cluster_for(node->node_id);
}

ClusterId largest_cluster(const StyleTree& tree) {
    return tree.cluster_for(largest_leaf(tree.root)->node_id);
}

std::vector<SiblingCluster> sibling_clusters(const ClusterId& cluster, const StyleTree& tree) {
    const auto path = path_to(tree, cluster.node_id);
    if (path.empty() || !path.back()->is_leaf()) {
        throw Error(Errc::UnknownCluster, fmt::format("cluster {} is not a leaf", cluster.key()));
    }
    std::vector<SiblingCluster> out;
    if (path.size() < 2) return out;
    const StyleNode& parent = *path[path.size() - 2];
    for (const auto& child : parent.children) {
        if (child.node_id == cluster.node_id) continue;
        std::vector<const StyleNode*> leaves;
        collect_leaves(child, leaves);
        for (const auto* leaf : leaves) {
            out.push_back({tree.cluster_for(leaf->node_id), *parent.split_standard});
        }
    }
    return out;
}

json serialize_tree(const StyleTree& tree) {
    return {{"schema", kTreeSchema},
            {"version", kTreeSchemaVersion},
            {"registry_hash", tree.registry_hash},
            {"standard_order", tree.standard_order},
            {"k", tree.k},
            {"size_unit", tree.size_unit == SizeUnit::PairCount ? "pairs" : "authors"},
            {"root", node_to_json(tree.root)}};
}

StyleTree deserialize_tree(const json& doc) {
    if (!doc.is_object() || doc.value("schema", "") != kTreeSchema) {
        throw Error(Errc::CorruptDocument, "not a style tree document");
    }
    if (doc.value("version", -1) != kTreeSchemaVersion) {
        throw Error(Errc::SchemaVersionMismatch,
                    fmt::format("style tree version {} unsupported (expected {})",
                                doc.value("version", -1), kTreeSchemaVersion));
    }
    StyleTree tree;
    try {
        tree.registry_hash = doc.at("registry_hash").get<std::string>();
        tree.standard_order = doc.at("standard_order").get<std::vector<std::string>>();
        tree.k = doc.at("k").get<std::uint64_t>();
        const auto unit = doc.at("size_unit").get<std::string>();
        if (unit != "pairs" && unit != "authors") {
            throw Error(Errc::CorruptDocument, fmt::format("bad size_unit '{}'", unit));
        }
        tree.size_unit = unit == "pairs" ? SizeUnit::PairCount : SizeUnit::AuthorCount;
        tree.root = node_from_json(doc.at("root"));
    } catch (const json::exception& e) {
        throw Error(Errc::CorruptDocument, fmt::format("bad style tree document: {}", e.what()));
    }
    std::set<std::uint32_t> ids;
    check_structure(tree.root, true, ids);
    return tree;
}

}  // namespace stylecqa
