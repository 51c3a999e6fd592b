#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "stylecqa/error.hpp"
#include "stylecqa/style_tree.hpp"
#include "test_support.hpp"

using namespace stylecqa;
using namespace testsupport;

namespace {

StyleProfile bin_profile(const std::string& id, const std::string& s1, const std::string& s2, std::size_t support = 200) {
    return {id, {{"s1", s1}, {"s2", s2}}, support, {}, {}};
}

struct Fixture4 {
    StandardRegistry reg = binary_registry(2);
    std::vector<StyleProfile> profiles{bin_profile("a00", "0", "0"), bin_profile("a01", "0", "1"),
                                       bin_profile("a10", "1", "0"), bin_profile("a11", "1", "1")};
    std::map<std::string, std::uint64_t> sizes{{"a00", 200}, {"a01", 200}, {"a10", 200}, {"a11", 200}};
    StyleTree tree = build_tree(profiles, sizes, reg, {{"s1", "s2"}, 100, SizeUnit::PairCount});
};

}  // namespace

TEST(BuildTree, EmptyProfilesGiveBareRoot) {
    const auto reg = binary_registry(2);
    const auto tree = build_tree({}, {}, reg, {});
    EXPECT_TRUE(tree.root.is_leaf());
    EXPECT_TRUE(tree.root.members.empty());
    EXPECT_EQ(tree.k, 100u);
}

TEST(BuildTree, SmallCorporaAtDeployedThresholdStayAtRoot) {
    const auto reg = binary_registry(2);
    std::vector<StyleProfile> profiles{bin_profile("a", "0", "0", 10), bin_profile("b", "0", "1", 10),
                                       bin_profile("c", "1", "0", 10), bin_profile("d", "1", "1", 10)};
    std::map<std::string, std::uint64_t> sizes{{"a", 10}, {"b", 10}, {"c", 10}, {"d", 10}};
    const auto tree = build_tree(profiles, sizes, reg, {{}, 100, SizeUnit::PairCount});
    EXPECT_TRUE(tree.root.is_leaf());
    EXPECT_EQ(tree.root.members.size(), 4u);
}

TEST(BuildTree, FourAuthorsTwoBinaryStandards) {
    Fixture4 f;
    const auto leaves = f.tree.leaves();
    ASSERT_EQ(leaves.size(), 4u);
    for (const auto* leaf : leaves) {
        ASSERT_EQ(leaf->members.size(), 1u);
        const auto& author = *leaf->members.begin();
        const auto path = f.tree.cluster_for(leaf->node_id).path;
        const std::vector<PathStep> expected{{"s1", author.substr(1, 1)}, {"s2", author.substr(2, 1)}};
        EXPECT_EQ(path, expected);
    }
    EXPECT_EQ(f.tree.root.split_standard, "s1");
    EXPECT_EQ(f.tree.cluster_of("a01")->key(), "s1=0/s2=1");
    EXPECT_EQ(tree_partition(f.tree), oracle_partition(f.profiles, f.sizes, {"s1", "s2"}, 100, SizeUnit::PairCount));
}

TEST(BuildTree, SingleLabelNodeDoesNotSplit) {
    const auto reg = binary_registry(2);
    std::vector<StyleProfile> profiles{bin_profile("a", "0", "0"), bin_profile("b", "0", "1")};
    std::map<std::string, std::uint64_t> sizes{{"a", 200}, {"b", 200}};
    const auto tree = build_tree(profiles, sizes, reg, {{}, 100, SizeUnit::PairCount});
    EXPECT_EQ(tree.root.split_standard, "s2");
    EXPECT_EQ(tree.leaves().size(), 2u);
}

TEST(BuildTree, LeafStaysEligibleForLaterStandards) {
    // s1 cannot split (one side too small) but s2 can.
    const auto reg = binary_registry(2);
    std::vector<StyleProfile> profiles{bin_profile("a", "0", "0", 150), bin_profile("b", "0", "1", 150),
                                       bin_profile("c", "1", "1", 5)};
    std::map<std::string, std::uint64_t> sizes{{"a", 150}, {"b", 150}, {"c", 5}};
    const auto tree = build_tree(profiles, sizes, reg, {{}, 100, SizeUnit::PairCount});
    EXPECT_EQ(tree.root.split_standard, "s2");
    EXPECT_EQ(tree.cluster_of("c")->key(), "s2=1");
}

TEST(BuildTree, AuthorCountUnit) {
    const auto reg = binary_registry(1);
    std::vector<StyleProfile> profiles;
    std::map<std::string, std::uint64_t> sizes;
    for (int i = 0; i < 6; ++i) {
        profiles.push_back({"a" + std::to_string(i), {{"s1", i < 3 ? "0" : "1"}}, 1000, {}, {}});
        sizes[profiles.back().author_id] = 1000;
    }
    EXPECT_EQ(build_tree(profiles, sizes, reg, {{}, 2, SizeUnit::AuthorCount}).leaves().size(), 2u);
    EXPECT_EQ(build_tree(profiles, sizes, reg, {{}, 3, SizeUnit::AuthorCount}).leaves().size(), 1u);
}

TEST(BuildTree, RejectsUnknownStandardOrLabel) {
    const auto reg = binary_registry(2);
    std::vector<StyleProfile> profiles{bin_profile("a", "0", "2")};
    EXPECT_THROW(build_tree(profiles, {{"a", 1}}, reg, {}), Error);
    std::vector<StyleProfile> ok{bin_profile("a", "0", "0")};
    EXPECT_THROW(build_tree(ok, {{"a", 1}}, reg, {{"s9"}, 1, SizeUnit::PairCount}), Error);
}

TEST(BuildTree, NodeProfilesAreMemberMajorities) {
    Fixture4 f;
    for (const auto* leaf : f.tree.leaves()) {
        const auto& member = *leaf->members.begin();
        for (const auto& p : f.profiles) {
            if (p.author_id == member) {
                EXPECT_EQ(leaf->profile, p.labels);
            }
        }
    }
    // Root: s1 tie 2-2 -> "0" by vocabulary order.
    EXPECT_EQ(f.tree.root.profile.at("s1"), "0");
}

TEST(BuildTree, RandomCorporaMatchOracleAndInvariants) {
    std::mt19937_64 rng(2024);
    for (int trial = 0; trial < 60; ++trial) {
        auto c = random_corpus(rng, 1 + rng() % 200, 1 + rng() % 6);
        const std::uint64_t k = trial % 4 == 0 ? 100 : rng() % 400;
        auto order = c.registry.ids();
        std::shuffle(order.begin(), order.end(), rng);
        order.resize(1 + rng() % order.size());
        const TreeOptions opts{order, k, SizeUnit::PairCount};
        const auto tree = build_tree(c.profiles, c.sizes, c.registry, opts);
        ASSERT_EQ(tree_partition(tree), oracle_partition(c.profiles, c.sizes, order, k, SizeUnit::PairCount));
        ASSERT_EQ(check_tree_invariants(tree, c.profiles, c.sizes), "");
    }
}

TEST(BuildTree, PermutationInvariant) {
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 30; ++trial) {
        auto c = random_corpus(rng, 50 + rng() % 100, 5);
        const TreeOptions opts{{}, rng() % 300, SizeUnit::PairCount};
        const auto tree = build_tree(c.profiles, c.sizes, c.registry, opts);
        std::shuffle(c.profiles.begin(), c.profiles.end(), rng);
        ASSERT_EQ(build_tree(c.profiles, c.sizes, c.registry, opts), tree);
    }
}

TEST(BuildTree, IncreasingKNeverAddsLeaves) {
    std::mt19937_64 rng(9);
    for (int trial = 0; trial < 30; ++trial) {
        auto c = random_corpus(rng, 20 + rng() % 150, 4);
        std::size_t previous = SIZE_MAX;
        for (std::uint64_t k = 0; k <= 1000; k += 50) {
            const auto n = build_tree(c.profiles, c.sizes, c.registry, {{}, k, SizeUnit::PairCount}).leaves().size();
            ASSERT_LE(n, previous) << "k=" << k;
            previous = n;
        }
    }
}

TEST(AssignCluster, MembersLandInTheirLeaf) {
    std::mt19937_64 rng(13);
    for (int trial = 0; trial < 20; ++trial) {
        auto c = random_corpus(rng, 30 + rng() % 100, 6);
        const auto tree = build_tree(c.profiles, c.sizes, c.registry, {{}, rng() % 200, SizeUnit::PairCount});
        for (const auto& p : c.profiles) {
            ASSERT_EQ(assign_cluster(p.labels, tree, c.registry), *tree.cluster_of(p.author_id));
        }
    }
}

TEST(AssignCluster, RootOnlyTreeReturnsRoot) {
    const auto reg = binary_registry(2);
    const auto tree = build_tree({bin_profile("a", "0", "0", 1)}, {{"a", 1}}, reg, {});
    const auto c = assign_cluster({{"s1", "1"}, {"s2", "1"}}, tree, reg);
    EXPECT_EQ(c.node_id, 0u);
    EXPECT_EQ(c.key(), "root");
}

TEST(AssignCluster, UnseenProfileFollowsDeepestMatch) {
    // Split only on s1 (s2 is excluded from the order).
    const auto reg = binary_registry(2);
    std::vector<StyleProfile> profiles{bin_profile("a", "0", "0"), bin_profile("b", "1", "0")};
    const auto tree = build_tree(profiles, {{"a", 200}, {"b", 200}}, reg, {{"s1"}, 100, SizeUnit::PairCount});
    EXPECT_EQ(assign_cluster({{"s1", "0"}, {"s2", "1"}}, tree, reg).key(), "s1=0");
}

TEST(AssignCluster, MissingEdgeFallsBackToLargestLeafUnderDeepestMatch) {
    // Three-label standard; the tree has only labels l0 and l1 present.
    const StandardRegistry reg({{"t", Dimension::Lexical, "t", {"l0", "l1", "l2"}},
                                {"u", Dimension::Lexical, "u", {"x", "y"}}});
    std::vector<StyleProfile> profiles{{"a", {{"t", "l0"}, {"u", "x"}}, 200, {}, {}},
                                       {"b", {{"t", "l1"}, {"u", "x"}}, 200, {}, {}},
                                       {"c", {{"t", "l1"}, {"u", "x"}}, 200, {}, {}}};
    std::map<std::string, std::uint64_t> sizes{{"a", 200}, {"b", 200}, {"c", 200}};
    const auto tree = build_tree(profiles, sizes, reg, {{}, 100, SizeUnit::PairCount});
    EXPECT_EQ(assign_cluster({{"t", "l2"}, {"u", "x"}}, tree, reg).key(), "t=l1");
    EXPECT_EQ(largest_cluster(tree).key(), "t=l1");
}

TEST(AssignCluster, RegistryMismatch) {
    Fixture4 f;
    EXPECT_THROW(assign_cluster({{"s1", "0"}, {"s2", "0"}}, f.tree, binary_registry(3)), Error);
}

TEST(Siblings, FourLeafTree) {
    Fixture4 f;
    const auto leaf00 = *f.tree.cluster_of("a00");
    const auto sibs = sibling_clusters(leaf00, f.tree);
    ASSERT_EQ(sibs.size(), 1u);
    EXPECT_EQ(sibs[0].cluster.key(), "s1=0/s2=1");
    EXPECT_EQ(sibs[0].differing_standard, "s2");
}

TEST(Siblings, RootOnlyIsEmpty) {
    const auto reg = binary_registry(1);
    const auto tree = build_tree({}, {}, reg, {});
    EXPECT_TRUE(sibling_clusters(tree.cluster_for(0), tree).empty());
}

TEST(Siblings, RootSplitReturnsOtherSubtreeLeaves) {
    // Root split on s1; only the s1=1 side splits again on s2.
    const auto reg = binary_registry(2);
    std::vector<StyleProfile> profiles{bin_profile("a", "0", "0", 300), bin_profile("c", "1", "0"),
                                       bin_profile("d", "1", "1")};
    std::map<std::string, std::uint64_t> sizes{{"a", 300}, {"c", 200}, {"d", 200}};
    const auto tree = build_tree(profiles, sizes, reg, {{}, 100, SizeUnit::PairCount});
    const auto sibs = sibling_clusters(*tree.cluster_of("a"), tree);
    ASSERT_EQ(sibs.size(), 2u);
    for (const auto& s : sibs) EXPECT_EQ(s.differing_standard, "s1");
    EXPECT_EQ(sibs[0].cluster.key(), "s1=1/s2=0");
    EXPECT_EQ(sibs[1].cluster.key(), "s1=1/s2=1");
}

TEST(Siblings, UnknownClusterThrows) {
    Fixture4 f;
    try {
        sibling_clusters(ClusterId{999, {}}, f.tree);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), Errc::UnknownCluster);
    }
    // An internal node is not a cluster either.
    EXPECT_THROW(sibling_clusters(f.tree.cluster_for(0), f.tree), Error);
}

TEST(ClusterIdKey, RoundTrip) {
    Fixture4 f;
    for (const auto* leaf : f.tree.leaves()) {
        const auto c = f.tree.cluster_for(leaf->node_id);
        EXPECT_EQ(ClusterId::from_key(c.node_id, c.key()), c);
        EXPECT_EQ(ClusterId::from_json(c.to_json()), c);
        EXPECT_EQ(f.tree.cluster_by_key(c.key()), c);
    }
    EXPECT_EQ(ClusterId::from_key(0, "root").path.size(), 0u);
}

TEST(Serialize, RoundTripFixtures) {
    Fixture4 f;
    EXPECT_EQ(deserialize_tree(serialize_tree(f.tree)), f.tree);
    const auto bare = build_tree({}, {}, f.reg, {});
    EXPECT_EQ(deserialize_tree(serialize_tree(bare)), bare);
}

TEST(Serialize, RoundTripRandomTrees) {
    std::mt19937_64 rng(17);
    for (int trial = 0; trial < 50; ++trial) {
        auto c = random_corpus(rng, 1 + rng() % 120, 1 + rng() % 8);
        const auto unit = trial % 3 == 0 ? SizeUnit::AuthorCount : SizeUnit::PairCount;
        const auto tree = build_tree(c.profiles, c.sizes, c.registry, {{}, rng() % 150, unit});
        const auto doc = serialize_tree(tree);
        ASSERT_EQ(deserialize_tree(doc), tree);
        ASSERT_EQ(deserialize_tree(json::parse(doc.dump())), tree);
    }
}

TEST(Serialize, SchemaVersionAndCorruption) {
    Fixture4 f;
    auto doc = serialize_tree(f.tree);
    auto future = doc;
    future["version"] = 99;
    try {
        deserialize_tree(future);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), Errc::SchemaVersionMismatch);
    }
    auto corrupt = doc;
    corrupt["root"].erase("members");
    try {
        deserialize_tree(corrupt);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), Errc::CorruptDocument);
    }
    EXPECT_THROW(deserialize_tree(json::array()), Error);
}

TEST(PathTo, RootToLeaf) {
    Fixture4 f;
    const auto leaf = *f.tree.cluster_of("a11");
    const auto path = path_to(f.tree, leaf.node_id);
    ASSERT_EQ(path.size(), 3u);
    EXPECT_EQ(path.front(), &f.tree.root);
    EXPECT_EQ(path.back()->node_id, leaf.node_id);
    EXPECT_TRUE(path_to(f.tree, 12345).empty());
}
