#include <gtest/gtest.h>

#include "pipeline_fixture.hpp"
#include "stylecqa/corpus_pipeline.hpp"
#include "stylecqa/eval_harness.hpp"
#include "stylecqa/sedpo_builder.hpp"
#include "test_support.hpp"

using namespace stylecqa;
using namespace testsupport;
namespace fs = std::filesystem;

namespace {

std::string error_code(const StepResult& r) {
    auto j = json::parse(r.err, nullptr, false);
    return j.is_discarded() ? "" : j["error"]["code"].get<std::string>();
}

void write_four_author_workspace(const TempDir& dir) {
    write_file_atomic(dir / "standards.json", binary_registry(2).to_json().dump());
    std::vector<json> rows;
    for (const char* id : {"a00", "a01", "a10", "a11"}) {
        const std::string a = id;
        rows.push_back(StyleProfile{a, {{"s1", a.substr(1, 1)}, {"s2", a.substr(2, 1)}}, 200, {}, {}}.to_json());
    }
    write_jsonl(dir / "profiles.jsonl", rows);
    write_file_atomic(dir / "order.txt", "# split order\ns1\ns2\n");
    write_file_atomic(dir / "cfg.json",
                      json{{"paths", {{"standards", "standards.json"}, {"profiles", "profiles.jsonl"}, {"tree", "tree.json"}}}}
                          .dump());
}

}  // namespace

TEST(Cli, UsageErrors) {
    auto r = run_cli({"frobnicate"});
    EXPECT_EQ(r.exit_code, 2);
    EXPECT_NE(r.err.find("Usage"), std::string::npos);
    EXPECT_EQ(run_cli({}).exit_code, 2);
    EXPECT_EQ(run_cli({"select", "--n", "lots"}).exit_code, 2);
    EXPECT_EQ(run_cli({"register", "--job", "j", "--status", "shiny"}).exit_code, 2);
    r = run_cli({"--help"});
    EXPECT_EQ(r.exit_code, 0);
    EXPECT_NE(r.out.find("build-tree"), std::string::npos);
}

TEST(Cli, StageErrorsAreJson) {
    TempDir dir("cli");
    auto r = run_cli({"label", "--corpora", (dir / "missing.jsonl").string(), "--out", (dir / "p.jsonl").string()});
    EXPECT_EQ(r.exit_code, 1);
    EXPECT_EQ(error_code(r), "StageInputMissing");
    r = run_cli({"build-tree", "--out", (dir / "t.json").string()});
    EXPECT_EQ(r.exit_code, 1);
    EXPECT_EQ(error_code(r), "ConfigError");  // no profiles path configured
    r = run_cli({"--config", (dir / "nope.json").string(), "select"});
    EXPECT_EQ(error_code(r), "ConfigError");
}

TEST(Cli, SelectCapsAtPoolSize) {
    TempDir dir("cli");
    std::vector<json> rows;
    for (int i = 0; i < 5; ++i) {
        CqsaInstance inst;
        inst.cqa_id = "q" + std::to_string(i);
        inst.cluster = ClusterId::from_key(1, "s1=0");
        inst.stylized_answer = "x";
        const double s = 1.0 + i;
        inst.scores = QualityScores::make(s, s, s, s);
        rows.push_back(inst.to_json());
    }
    write_jsonl(dir / "scored.jsonl", rows);
    auto r = run_cli({"select", "--n", "10", "--in", (dir / "scored.jsonl").string(), "--out", (dir / "sel.jsonl").string()});
    ASSERT_EQ(r.exit_code, 0) << r.err;
    EXPECT_EQ(json::parse(r.out)["selected"], 5);
    EXPECT_EQ(read_jsonl(dir / "sel.jsonl").size(), 5u);

    r = run_cli({"select", "--n", "2", "--in", (dir / "scored.jsonl").string(), "--out", (dir / "sel.jsonl").string()});
    ASSERT_EQ(r.exit_code, 0) << r.err;
    const auto top = read_jsonl(dir / "sel.jsonl");
    ASSERT_EQ(top.size(), 2u);
    EXPECT_EQ(top[0]["cqa_id"], "q4");
    EXPECT_EQ(top[1]["cqa_id"], "q3");
    EXPECT_TRUE(fs::exists(dir / "sel.jsonl.manifest.json"));
}

TEST(Cli, BuildTreeMatchesOracleBuild) {
    TempDir dir("cli");
    write_four_author_workspace(dir);
    const auto r = run_cli({"--config", (dir / "cfg.json").string(), "build-tree", "--k", "100", "--order", "order.txt"});
    ASSERT_EQ(r.exit_code, 0) << r.err;
    EXPECT_EQ(json::parse(r.out)["clusters"].size(), 4u);

    // Golden: the same inputs through the library, and the independent partition oracle.
    std::vector<StyleProfile> profiles;
    for (const auto& row : read_jsonl(dir / "profiles.jsonl")) profiles.push_back(StyleProfile::from_json(row));
    const std::map<std::string, std::uint64_t> sizes{{"a00", 200}, {"a01", 200}, {"a10", 200}, {"a11", 200}};
    const auto golden = build_tree(profiles, sizes, binary_registry(2), {{"s1", "s2"}, 100, SizeUnit::PairCount});
    EXPECT_EQ(sha256_file(dir / "tree.json"), sha256_hex(serialize_tree(golden).dump(2) + "\n"));
    const auto loaded = deserialize_tree(json::parse(read_file(dir / "tree.json")));
    EXPECT_EQ(tree_partition(loaded), oracle_partition(profiles, sizes, {"s1", "s2"}, 100, SizeUnit::PairCount));

    const auto manifest = json::parse(read_file(dir / "tree.json.manifest.json"));
    EXPECT_EQ(manifest["stage"], "build-tree");
    EXPECT_EQ(manifest["outputs"]["tree.json"], sha256_file(dir / "tree.json"));
    EXPECT_EQ(manifest["inputs"]["order.txt"], sha256_file(dir / "order.txt"));

    // Children must strictly exceed k: at k=200 the s2 split (200 pairs a child) is refused.
    auto big = run_cli({"--config", (dir / "cfg.json").string(), "build-tree", "--k", "200", "--order", "order.txt"});
    ASSERT_EQ(big.exit_code, 0);
    auto clusters = json::parse(big.out)["clusters"];
    ASSERT_EQ(clusters.size(), 2u);
    EXPECT_EQ(clusters[0]["cluster"], "s1=0");
    EXPECT_EQ(clusters[1]["cluster"], "s1=1");
    big = run_cli({"--config", (dir / "cfg.json").string(), "build-tree", "--k", "400"});
    ASSERT_EQ(big.exit_code, 0);
    EXPECT_EQ(json::parse(big.out)["clusters"][0]["cluster"], "root");
}

TEST(Cli, IngestAndRetrieve) {
    TempDir dir("cli");
    write_jsonl(dir / "articles.jsonl",
                {json{{"account_id", "acc"}, {"article_id", "a1"}, {"text", "Opening hours are nine to five."}},
                 json{{"account_id", "acc"}, {"article_id", "a2"}, {"text", "Parking is free on Sundays."}},
                 json{{"account_id", "acc"}, {"article_id", "a3"}, {"text", "   "}}});
    auto r = run_cli({"ingest", "--articles", (dir / "articles.jsonl").string(), "--out", (dir / "chunks.jsonl").string()});
    ASSERT_EQ(r.exit_code, 0) << r.err;
    EXPECT_EQ(json::parse(r.out)["chunks"], 2);
    EXPECT_EQ(json::parse(r.out)["skipped_empty"], 1);
    r = run_cli({"retrieve", "--chunks", (dir / "chunks.jsonl").string(), "--account", "acc", "--query", "parking"});
    ASSERT_EQ(r.exit_code, 0) << r.err;
    const auto hits = json::parse(r.out)["results"];
    ASSERT_EQ(hits.size(), 1u);
    EXPECT_EQ(hits[0]["chunk_id"], "a2#0");
    r = run_cli({"retrieve", "--chunks", (dir / "chunks.jsonl").string(), "--account", "zzz", "--query", "parking"});
    EXPECT_EQ(error_code(r), "UnknownAccount");
}

TEST(Cli, GenCqsaNeedsSeed) {
    TempDir dir("cli");
    write_pipeline_workspace(dir.path());
    auto cfg = json::parse(read_file(dir / "pipeline.json"));
    cfg.erase("seed");
    write_file_atomic(dir / "noseed.json", cfg.dump());
    const auto cfg_path = (dir / "noseed.json").string();
    for (const char* stage : {"label", "build-tree", "ingest", "gen-cqa"}) {
        ASSERT_EQ(run_cli({"--config", cfg_path, stage}).exit_code, 0) << stage;
    }
    const auto r = run_cli({"--config", cfg_path, "gen-cqsa"});
    EXPECT_EQ(r.exit_code, 1);
    EXPECT_EQ(error_code(r), "ConfigError");
    EXPECT_EQ(run_cli({"--config", cfg_path, "--seed", "7", "gen-cqsa"}).exit_code, 0);
}

TEST(Cli, FullPipeline) {
    TempDir dir("cli");
    write_pipeline_workspace(dir.path());
    const auto steps = run_pipeline(dir.path());
    for (const auto& s : steps) ASSERT_EQ(s.exit_code, 0) << s.name << ": " << s.err;
    ASSERT_EQ(steps.back().name, "eval");

    const auto tree = deserialize_tree(json::parse(read_file(dir / "work/tree.json")));
    ASSERT_GE(tree.leaves().size(), 2u);
    const auto pairs = read_jsonl(dir / "work/pairs.jsonl");
    EXPECT_FALSE(pairs.empty());
    for (const auto& p : pairs) EXPECT_NE(p["cluster"], p["rejected_cluster"]);

    const auto registry = AdapterRegistry::load(dir / "work/registry.json");
    const auto jobs = json::parse(read_file(dir / "work/jobs/jobs.json"));
    for (const auto& job : jobs) {
        const auto spec = TrainingJobSpec::from_json(job);
        EXPECT_NO_THROW(verify_job(spec, dir / "work/jobs" / cluster_slug(spec.cluster)));
        ASSERT_TRUE(registry.lookup(spec.cluster));
        EXPECT_EQ(registry.lookup(spec.cluster)->manifest.data_digest, spec.pairs_digest);
    }

    const auto report = json::parse(read_file(dir / "work/report.json"));
    ASSERT_TRUE(report.contains("time_cost"));
    EXPECT_GT(report["time_cost"]["speedup"].get<double>(), 1.0);
    EXPECT_GT(report["time_cost"]["prompt_token_delta"].get<double>(), 0.0);
    for (const auto& [cluster, systems] : report["per_cluster"].items()) {
        const auto& g = systems["gateway"];
        EXPECT_NEAR(g["q_a"].get<double>(), 4.56, 1e-9) << cluster;
        EXPECT_NEAR(g["c_a"].get<double>(), 4.63, 1e-9) << cluster;
        EXPECT_NEAR(g["s_a"].get<double>(), 4.74, 1e-9) << cluster;
        EXPECT_NEAR(g["fluency"].get<double>(), 4.92, 1e-9) << cluster;
    }
    std::vector<EvalRecord> records;
    for (const auto& row : read_jsonl(dir / "work/report.json.records.jsonl")) records.push_back(EvalRecord::from_json(row));
    EXPECT_EQ(records.size(), 2 * 16u);
    EXPECT_NO_THROW(verify_report(EvalReport::from_json(report), records));
}
