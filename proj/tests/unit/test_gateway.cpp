#include <gtest/gtest.h>

#include <atomic>
#include <random>
#include <thread>

#include "stylecqa/error.hpp"
#include "stylecqa/serving_gateway.hpp"
#include "stylecqa/tokenize.hpp"
#include "test_support.hpp"

using namespace stylecqa;
using namespace testsupport;

namespace {

Errc code_of(const std::function<void()>& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.code();
    }
    return Errc::IoError;
}

std::map<std::string, StyleLabelVector> labels_of(const World& w) {
    std::map<std::string, StyleLabelVector> out;
    for (const auto& p : w.profiles) out[p.author_id] = p.labels;
    return out;
}

AnswerRequest ask(const std::string& account, const std::string& question, bool trace = false) {
    AnswerRequest r;
    r.account_id = account;
    r.question = question;
    r.trace = trace;
    return r;
}

bool contains(const std::string& hay, std::string_view needle) {
    return hay.find(needle) != std::string::npos;
}

}  // namespace

TEST(Resolve, MemberGetsOwnLeafAndAdapter) {
    auto w = make_world();
    const auto r = w.gateway->resolve("a00");
    EXPECT_EQ(r.cluster.key(), "s1=0/s2=0");
    ASSERT_TRUE(r.adapter);
    EXPECT_EQ(r.adapter->artifact_uri, "adapters/" + cluster_slug(r.cluster));
    EXPECT_FALSE(w.gateway->resolve("a01").adapter);
}

TEST(Resolve, ColdStartProfileAndIndexedOnlyAccounts) {
    auto w = make_world();
    auto labels = labels_of(w);
    labels["newcomer"] = {{"s1", "1"}, {"s2", "0"}};
    w.retriever->ingest("fresh", {{"x", "Only articles, no replies yet."}});

    Gateway gw(w.registry, w.tree, w.adapters, labels, w.retriever, w.backend);
    EXPECT_EQ(gw.resolve("newcomer").cluster.key(), "s1=1/s2=0");
    // All leaves hold one author: the largest-leaf tie goes to the smallest node id.
    EXPECT_EQ(gw.resolve("fresh").cluster, largest_cluster(*w.tree));
    EXPECT_EQ(code_of([&] { gw.resolve("nobody"); }), Errc::UnknownAccount);

    GatewayConfig cfg;
    cfg.default_cluster_key = "s1=1/s2=1";
    Gateway pinned(w.registry, w.tree, w.adapters, labels, w.retriever, w.backend, cfg);
    const auto r = pinned.resolve("fresh");
    EXPECT_EQ(r.cluster.key(), "s1=1/s2=1");
    EXPECT_TRUE(r.adapter);
}

TEST(Resolve, CacheIsTransparentAndInvalidated) {
    auto w = make_world();
    const auto first = w.gateway->resolve("a01");
    EXPECT_EQ(w.gateway->resolve("a01"), first);
    EXPECT_EQ(w.gateway->cache_misses(), 1u);

    const auto cluster = w.tree->cluster_by_key("s1=0/s2=1");
    w.adapters->register_adapter(ready_record(cluster, "d", "adapters/new"), "d", w.tree.get());
    const auto after = w.gateway->resolve("a01");
    ASSERT_TRUE(after.adapter);
    EXPECT_EQ(after.adapter->artifact_uri, "adapters/new");
    EXPECT_EQ(w.gateway->cache_misses(), 2u);

    // A rebuilt tree with a higher k collapses everything into the root.
    std::map<std::string, std::uint64_t> sizes;
    for (const auto& p : w.profiles) sizes[p.author_id] = 200;
    w.gateway->publish_tree(std::make_shared<const StyleTree>(
        build_tree(w.profiles, sizes, w.registry, {{"s1", "s2"}, 10000, SizeUnit::PairCount})));
    EXPECT_EQ(w.gateway->resolve("a01").cluster.key(), "root");
    EXPECT_EQ(w.gateway->cache_misses(), 3u);
}

TEST(Answer, AdapterPathSendsShortPrompt) {
    auto w = make_world();
    const auto resp = w.gateway->answer(ask("a00", "When does the museum open?"));
    ASSERT_TRUE(resp.adapter_used);
    EXPECT_FALSE(resp.degraded);
    EXPECT_EQ(resp.answer, "synthetic answer");
    EXPECT_FALSE(resp.context_refs.empty());
    EXPECT_EQ(resp.context_refs[0], "art1#0");
    EXPECT_TRUE(resp.trace.empty());

    const auto sent = w.backend->transcript().back();
    EXPECT_EQ(sent.adapter_id, resp.adapter_used);
    const auto& user = sent.messages.back().content;
    EXPECT_TRUE(contains(user, "The museum opens at nine"));
    EXPECT_FALSE(contains(user, "~~"));
    EXPECT_FALSE(contains(user, "Style examples"));
    EXPECT_EQ(resp.usage.prompt_tokens, static_cast<std::int64_t>(estimate_tokens(sent.system) + estimate_tokens(user)));
}

TEST(Answer, DegradedWithoutAdapter) {
    auto w = make_world();
    const auto resp = w.gateway->answer(ask("a01", "Is parking free?", true));
    EXPECT_TRUE(resp.degraded);
    EXPECT_FALSE(resp.adapter_used);
    EXPECT_FALSE(w.backend->transcript().back().adapter_id);
    EXPECT_FALSE(contains(w.backend->transcript().back().messages.back().content, "~~"));
    ASSERT_FALSE(resp.trace.empty());
    EXPECT_TRUE(contains(resp.trace.back(), "degraded"));
}

TEST(Answer, ExemplarFallbackIsOptIn) {
    GatewayConfig cfg;
    cfg.exemplar_fallback = true;
    auto w = make_world({"s1=0/s2=0"}, cfg);
    const auto fallback = w.gateway->answer(ask("a01", "Is parking free?"));
    EXPECT_TRUE(fallback.degraded);
    const auto& user = w.backend->transcript().back().messages.back().content;
    EXPECT_TRUE(contains(user, "Style examples"));
    EXPECT_TRUE(contains(user, "~~a01~~"));
    // Adapted clusters stay exemplar-free even with the fallback on.
    w.gateway->answer(ask("a00", "Is parking free?"));
    EXPECT_FALSE(contains(w.backend->transcript().back().messages.back().content, "~~"));
}

TEST(Answer, EmptyRetrievalStillAnswers) {
    auto w = make_world();
    const auto resp = w.gateway->answer(ask("a00", "xyzzy plugh?", true));
    EXPECT_TRUE(resp.context_refs.empty());
    EXPECT_EQ(resp.answer, "synthetic answer");
    ASSERT_FALSE(resp.trace.empty());
    EXPECT_TRUE(contains(resp.trace.front(), "EmptyRetrieval"));
    EXPECT_FALSE(contains(w.backend->transcript().back().messages.back().content, "Context:"));
}

TEST(Answer, RejectsEmptyQuestionAndUnknownAccount) {
    auto w = make_world();
    EXPECT_EQ(code_of([&] { w.gateway->answer(ask("a00", "  \n")); }), Errc::EmptyInput);
    EXPECT_EQ(code_of([&] { w.gateway->answer(ask("ghost", "hello?")); }), Errc::UnknownAccount);
    EXPECT_EQ(w.backend->calls(), 0u);
}

TEST(Answer, RequestLogCarriesRoutingFields) {
    auto w = make_world();
    std::vector<json> log;
    w.gateway->set_request_log([&](const json& j) { log.push_back(j); });
    w.gateway->answer(ask("a11", "Are tours guided?"));
    ASSERT_EQ(log.size(), 1u);
    EXPECT_EQ(log[0]["cluster"], "s1=1/s2=1");
    EXPECT_EQ(log[0]["degraded"], false);
    EXPECT_TRUE(log[0]["adapter_id"].is_string());
    EXPECT_GT(log[0]["prompt_tokens"].get<int>(), 0);
}

TEST(Answer, ResponseJsonRoundTrip) {
    auto w = make_world();
    auto resp = w.gateway->answer(ask("a01", "Is parking free?", true));
    const auto back = AnswerResponse::from_json(resp.to_json());
    EXPECT_EQ(back.answer, resp.answer);
    EXPECT_EQ(back.cluster, resp.cluster);
    EXPECT_EQ(back.adapter_used, resp.adapter_used);
    EXPECT_EQ(back.context_refs, resp.context_refs);
    EXPECT_EQ(back.usage, resp.usage);
    EXPECT_EQ(back.degraded, resp.degraded);
    EXPECT_EQ(back.trace, resp.trace);
}

TEST(AnswerRequestJson, Validation) {
    EXPECT_EQ(AnswerRequest::from_json({{"account_id", "a"}, {"question", "q?"}, {"top_n", 2}}).top_n, 2u);
    EXPECT_EQ(code_of([] { AnswerRequest::from_json({{"account_id", "a"}, {"question", " "}}); }), Errc::EmptyInput);
    EXPECT_EQ(code_of([] { AnswerRequest::from_json({{"question", "q"}}); }), Errc::CorruptDocument);
}

TEST(Baseline, ZeroExemplarsEqualsGatewayPrompt) {
    auto w = make_world();
    for (const char* account : {"a00", "a01", "a10", "a11"}) {
        const auto req = ask(account, "When do tours run?");
        const auto base = w.gateway->baseline_request(req, 0);
        const auto gw = w.gateway->gateway_request(req);
        EXPECT_EQ(base.system, gw.system);
        EXPECT_EQ(base.messages, gw.messages);
    }
}

TEST(Baseline, TokenDeltaIsExactlyTheExemplarBlock) {
    auto w = make_world();
    std::mt19937_64 rng(5);
    const std::vector<std::string> questions{"When does the museum open?", "Is parking free?", "How much are tickets?",
                                             "Are tours guided?", "Does the cafe serve lunch?"};
    for (int i = 0; i < 60; ++i) {
        const std::string account = std::vector<std::string>{"a00", "a01", "a10", "a11"}[rng() % 4];
        const auto req = ask(account, questions[rng() % questions.size()]);
        const std::size_t m = 1 + rng() % 5;
        const auto gw = w.gateway->gateway_request(req);
        const auto base = w.gateway->baseline_request(req, m);
        const auto& user = base.messages.back().content;

        // Recover the sampled exemplars through the public sampler.
        CqaTriplet key;
        key.id = req.account_id + "\n" + req.question;
        const auto cluster = w.gateway->resolve(account).cluster;
        const auto refs = sample_exemplars(key, target_for(*w.tree, cluster, m, 0), w.pool);
        ASSERT_EQ(refs.size(), m);
        std::int64_t expected = 3;  // "Style examples:"
        for (const auto& ref : refs) {
            const auto& pair = w.pool.at(ref.author_id).at(ref.pair_index);
            EXPECT_TRUE(contains(user, pair.reply));
            expected += 4 + static_cast<std::int64_t>(estimate_tokens(pair.comment) + estimate_tokens(pair.reply));
        }
        const auto delta = prompt_token_estimate(base) - prompt_token_estimate(gw);
        ASSERT_EQ(delta, expected);
        EXPECT_FALSE(contains(gw.messages.back().content, "~~"));
    }
}

TEST(Baseline, EmptyPoolThrows) {
    auto w = make_world();
    Gateway gw(w.registry, w.tree, w.adapters, labels_of(w), w.retriever, w.backend, {}, {});
    EXPECT_EQ(code_of([&] { gw.baseline_request(ask("a00", "q?"), 3); }), Errc::EmptyExemplarPool);
}

TEST(Concurrency, AnswersDuringRegistryUpdates) {
    auto w = make_world();
    std::atomic<bool> stop{false};
    std::atomic<int> failures{0};
    std::vector<std::thread> readers;
    for (int t = 0; t < 4; ++t) {
        readers.emplace_back([&, t] {
            const std::string account = std::vector<std::string>{"a00", "a01", "a10", "a11"}[t];
            while (!stop) {
                try {
                    const auto r = w.gateway->answer(ask(account, "Is parking free?"));
                    if (r.degraded == r.adapter_used.has_value()) ++failures;
                } catch (...) {
                    ++failures;
                }
            }
        });
    }
    const auto cluster = w.tree->cluster_by_key("s1=1/s2=0");
    for (int i = 0; i < 100; ++i) {
        w.adapters->register_adapter(ready_record(cluster, "d", "adapters/v" + std::to_string(i)), "d");
    }
    stop = true;
    for (auto& th : readers) th.join();
    EXPECT_EQ(failures.load(), 0);
    EXPECT_EQ(w.gateway->resolve("a10").adapter->artifact_uri, "adapters/v99");
}
