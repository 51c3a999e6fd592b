#include "cli.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "stylecqa/config.hpp"
#include "stylecqa/corpus_pipeline.hpp"
#include "stylecqa/error.hpp"
#include "stylecqa/eval_harness.hpp"
#include "stylecqa/gateway_server.hpp"
#include "stylecqa/parallel.hpp"
#include "stylecqa/retrieval.hpp"
#include "stylecqa/sedpo_builder.hpp"
#include "stylecqa/serving_gateway.hpp"
#include "stylecqa/style_model.hpp"
#include "stylecqa/style_tree.hpp"

namespace stylecqa::cli {
namespace {

namespace fs = std::filesystem;

struct Globals {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    bool verbose = false;
};

struct Stage {
    PipelineConfig cfg;
    StandardRegistry registry;
};

Stage open_stage(const Globals& g) {
    Stage s{g.config_path.empty() ? PipelineConfig::from_json(json::object(), fs::current_path())
                                  : PipelineConfig::load(g.config_path),
            StandardRegistry::defaults()};
    if (g.seed) {
        s.cfg.seed = g.seed;
        s.cfg.gateway.seed = *g.seed;
        s.cfg.job.seed = *g.seed;
    }
    if (auto p = s.cfg.maybe_path("standards")) s.registry = StandardRegistry::load(*p);
    return s;
}

fs::path pick(const Stage& s, const std::string& override_value, const std::string& name) {
    return override_value.empty() ? s.cfg.path(name) : s.cfg.resolve(override_value);
}

void require_input(const fs::path& p) {
    if (!fs::exists(p)) throw Error(Errc::StageInputMissing, fmt::format("input {} does not exist", p.string()));
}

std::uint64_t backend_seed(const Stage& s) {
    return s.cfg.seed.value_or(0);
}

BackendPtr stage_backend(const Stage& s) {
    return make_backend(s.cfg.backend, s.registry, backend_seed(s));
}

BackendPtr judge_backend(const Stage& s) {
    return make_backend(s.cfg.judge_backend.value_or(s.cfg.backend), s.registry, backend_seed(s));
}

/// Writes <first output>.manifest.json with digests of inputs, outputs and config.
void write_manifest(const Stage& s, std::string_view stage, const std::vector<fs::path>& inputs,
                    const std::vector<fs::path>& outputs) {
    json in = json::object();
    for (const auto& p : inputs) {
        if (fs::exists(p) && fs::is_regular_file(p)) in[s.cfg.relative(p)] = sha256_file(p);
    }
    json out = json::object();
    for (const auto& p : outputs) {
        if (fs::exists(p) && fs::is_regular_file(p)) out[s.cfg.relative(p)] = sha256_file(p);
    }
    json manifest = {{"stage", stage},
                     {"config_digest", s.cfg.digest},
                     {"inputs", in},
                     {"outputs", out},
                     {"inputs_digest", sha256_hex(in.dump())},
                     {"outputs_digest", sha256_hex(out.dump())}};
    manifest["seed"] = s.cfg.seed ? json(*s.cfg.seed) : json(nullptr);
    auto path = outputs.front();
    path += ".manifest.json";
    write_file_atomic(path, manifest.dump(2) + "\n");
}

std::vector<StyleProfile> load_profiles(const fs::path& p) {
    require_input(p);
    std::vector<StyleProfile> out;
    for (const auto& row : read_jsonl(p)) out.push_back(StyleProfile::from_json(row));
    return out;
}

StyleTree load_tree(const fs::path& p) {
    if (!fs::exists(p)) throw Error(Errc::NoTree, fmt::format("style tree {} does not exist", p.string()));
    auto doc = json::parse(read_file(p), nullptr, false);
    if (doc.is_discarded()) throw Error(Errc::CorruptDocument, fmt::format("{} is not JSON", p.string()));
    return deserialize_tree(doc);
}

std::vector<CqaTriplet> load_cqa(const fs::path& p) {
    require_input(p);
    std::vector<CqaTriplet> out;
    for (const auto& row : read_jsonl(p)) out.push_back(CqaTriplet::from_json(row));
    return out;
}

std::vector<CqsaInstance> load_cqsa(const fs::path& p) {
    require_input(p);
    std::vector<CqsaInstance> out;
    for (const auto& row : read_jsonl(p)) out.push_back(CqsaInstance::from_json(row));
    return out;
}

std::vector<ArticleChunk> load_chunks(const fs::path& p) {
    require_input(p);
    std::vector<ArticleChunk> out;
    for (const auto& row : read_jsonl(p)) out.push_back(ArticleChunk::from_json(row));
    return out;
}

std::vector<StyleCorpus> load_corpora(const fs::path& p) {
    require_input(p);
    return corpora_from_rows(read_jsonl(p));
}

template <typename T>
std::vector<json> rows_of(const std::vector<T>& items) {
    std::vector<json> rows;
    rows.reserve(items.size());
    for (const auto& i : items) rows.push_back(i.to_json());
    return rows;
}

std::vector<std::string> read_order_file(const fs::path& p) {
    require_input(p);
    const auto text = read_file(p);
    auto j = json::parse(text, nullptr, false);
    if (!j.is_discarded()) {
        if (j.is_array()) return j.get<std::vector<std::string>>();
        if (j.is_object() && j.contains("order")) return j["order"].get<std::vector<std::string>>();
        throw Error(Errc::ConfigError, "order file must be a JSON array or {\"order\": [...]}");
    }
    std::vector<std::string> out;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        line.erase(0, line.find_first_not_of(" \t\r"));
        line.erase(line.find_last_not_of(" \t\r") + 1);
        if (!line.empty() && line.front() != '#') out.push_back(line);
    }
    return out;
}

// --- stages -----------------------------------------------------------------

struct LabelOpts {
    std::string corpora, out;
};

json cmd_label(const Globals& g, const LabelOpts& o) {
    auto s = open_stage(g);
    const auto in = pick(s, o.corpora, "corpora");
    const auto out = pick(s, o.out, "profiles");
    const auto corpora = load_corpora(in);
    auto llm = stage_backend(s);
    std::vector<json> rows;
    std::size_t unlabeled = 0;
    for (const auto& corpus : corpora) {
        const auto labelings = label_corpus(corpus, s.registry, *llm, s.cfg.max_in_flight);
        std::vector<StyleLabelVector> votes;
        for (const auto& l : labelings) {
            votes.push_back(l.labels);
            unlabeled += l.unlabeled.size();
        }
        rows.push_back(aggregate_profile(corpus.author_id, votes, s.registry).to_json());
    }
    write_jsonl(out, rows);
    write_manifest(s, "label", {in}, {out});
    return {{"profiles", rows.size()}, {"unlabeled_votes", unlabeled}};
}

struct TreeOpts {
    std::string profiles, order, out;
    std::optional<std::uint64_t> k;
};

json cmd_build_tree(const Globals& g, const TreeOpts& o) {
    auto s = open_stage(g);
    const auto in = pick(s, o.profiles, "profiles");
    const auto out = pick(s, o.out, "tree");
    const auto profiles = load_profiles(in);
    TreeOptions opts = s.cfg.tree;
    std::vector<fs::path> inputs{in};
    if (o.k) opts.k = *o.k;
    if (!o.order.empty()) {
        inputs.push_back(s.cfg.resolve(o.order));
        opts.order = read_order_file(inputs.back());
    }
    std::map<std::string, std::uint64_t> sizes;
    for (const auto& p : profiles) sizes[p.author_id] = p.support;
    const auto tree = build_tree(profiles, sizes, s.registry, opts);
    write_file_atomic(out, serialize_tree(tree).dump(2) + "\n");
    write_manifest(s, "build-tree", inputs, {out});
    json leaves = json::array();
    for (const auto* leaf : tree.leaves()) {
        leaves.push_back({{"cluster", tree.cluster_for(leaf->node_id).key()}, {"members", leaf->members.size()}});
    }
    return {{"clusters", leaves}, {"k", tree.k}};
}

struct IngestOpts {
    std::string articles, out;
};

json cmd_ingest(const Globals& g, const IngestOpts& o) {
    auto s = open_stage(g);
    const auto in = pick(s, o.articles, "articles");
    const auto out = pick(s, o.out, "chunks");
    require_input(in);
    Retriever retriever(s.cfg.retrieval);
    if (fs::exists(out)) retriever.load_chunks(load_chunks(out));

    std::map<std::string, std::vector<Article>> by_account;
    std::vector<std::string> order;
    for (const auto& row : read_jsonl(in)) {
        try {
            const auto account = row.at("account_id").get<std::string>();
            if (!by_account.contains(account)) order.push_back(account);
            by_account[account].push_back({row.at("article_id").get<std::string>(), row.at("text").get<std::string>()});
        } catch (const json::exception& e) {
            throw Error(Errc::CorruptDocument, fmt::format("bad article row: {}", e.what()));
        }
    }
    IngestStats total;
    for (const auto& account : order) {
        const auto st = retriever.ingest(account, by_account[account]);
        total.chunks += st.chunks;
        total.replaced += st.replaced;
        total.skipped_empty += st.skipped_empty;
    }
    write_jsonl(out, rows_of(retriever.export_chunks()));
    write_manifest(s, "ingest", {in}, {out});
    return {{"chunks", total.chunks}, {"replaced", total.replaced}, {"skipped_empty", total.skipped_empty}};
}

struct RetrieveOpts {
    std::string chunks, account, query;
    std::optional<std::size_t> top_n;
};

json cmd_retrieve(const Globals& g, const RetrieveOpts& o) {
    auto s = open_stage(g);
    Retriever retriever(s.cfg.retrieval);
    retriever.load_chunks(load_chunks(pick(s, o.chunks, "chunks")));
    const auto result = retriever.retrieve(o.account, o.query, o.top_n.value_or(s.cfg.retrieval.top_n));
    json hits = json::array();
    for (const auto& h : result.chunks) {
        hits.push_back({{"chunk_id", h.chunk.chunk_id}, {"article_id", h.chunk.article_id},
                        {"score", h.score},         {"text", h.chunk.text}});
    }
    return {{"account_id", o.account}, {"results", hits}};
}

struct GenCqaOpts {
    std::string chunks, corpora, out;
};

json cmd_gen_cqa(const Globals& g, const GenCqaOpts& o) {
    auto s = open_stage(g);
    const auto chunks_path = pick(s, o.chunks, "chunks");
    const auto out = pick(s, o.out, "cqa");
    const auto chunks = load_chunks(chunks_path);
    Retriever retriever(s.cfg.retrieval);
    retriever.load_chunks(chunks);
    std::vector<fs::path> inputs{chunks_path};

    std::map<std::string, std::string> domains;
    const auto corpora_path = o.corpora.empty() ? s.cfg.maybe_path("corpora") : s.cfg.resolve(o.corpora);
    if (corpora_path && fs::exists(*corpora_path)) {
        inputs.push_back(*corpora_path);
        for (const auto& c : load_corpora(*corpora_path)) domains.emplace(c.author_id, c.domain);
    }

    std::map<std::string, std::vector<ArticleChunk>> by_account;
    for (const auto& c : chunks) by_account[c.account_id].push_back(c);

    const auto& strategies = s.cfg.cqa_strategies;
    const bool forward = std::find(strategies.begin(), strategies.end(), "forward") != strategies.end();
    const bool bottom_up = std::find(strategies.begin(), strategies.end(), "bottom_up") != strategies.end();
    auto llm = stage_backend(s);
    std::vector<CqaTriplet> all;
    std::size_t malformed = 0, misses = 0;
    for (const auto& [account, list] : by_account) {
        if (forward) {
            auto r = gen_cqa_forward(account, list, *llm, s.cfg.max_in_flight);
            malformed += r.malformed;
            all.insert(all.end(), r.triplets.begin(), r.triplets.end());
        }
        if (bottom_up) {
            auto d = domains.find(account);
            if (d == domains.end() || d->second.empty()) {
                spdlog::warn("account {} has no domain; skipping bottom-up generation", account);
                continue;
            }
            auto r = gen_cqa_bottom_up(account, d->second, *llm, retriever, s.cfg.bottom_up);
            malformed += r.malformed;
            misses += r.retrieval_misses;
            all.insert(all.end(), r.triplets.begin(), r.triplets.end());
        }
    }
    write_jsonl(out, rows_of(all));
    write_manifest(s, "gen-cqa", inputs, {out});
    return {{"triplets", all.size()}, {"malformed", malformed}, {"retrieval_misses", misses}};
}

struct GenCqsaOpts {
    std::string cqa, tree, corpora, cluster, out;
};

json cmd_gen_cqsa(const Globals& g, const GenCqsaOpts& o) {
    auto s = open_stage(g);
    const auto seed = s.cfg.require_seed();
    const auto cqa_path = pick(s, o.cqa, "cqa");
    const auto tree_path = pick(s, o.tree, "tree");
    const auto corpora_path = pick(s, o.corpora, "corpora");
    const auto out = pick(s, o.out, "cqsa");
    const auto cqa = load_cqa(cqa_path);
    const auto tree = load_tree(tree_path);
    const auto pool = exemplar_pool_from(load_corpora(corpora_path));

    std::vector<ClusterId> clusters;
    if (!o.cluster.empty()) {
        clusters.push_back(tree.cluster_by_key(o.cluster));
    } else {
        for (const auto* leaf : tree.leaves()) clusters.push_back(tree.cluster_for(leaf->node_id));
    }

    auto llm = stage_backend(s);
    std::vector<CqsaInstance> all;
    std::size_t malformed = 0, skipped_clusters = 0;
    for (const auto& cluster : clusters) {
        const auto target = target_for(tree, cluster, s.cfg.m, seed);
        std::set<std::string> members(target.authors.begin(), target.authors.end());
        std::vector<const CqaTriplet*> work;
        for (const auto& t : cqa) {
            if (s.cfg.cqsa_scope == "all" || members.contains(t.account_id)) work.push_back(&t);
        }
        std::vector<std::optional<CqsaInstance>> results(work.size());
        try {
            parallel_for(work.size(), s.cfg.max_in_flight, [&](std::size_t i) {
                try {
                    results[i] = gen_cqsa(*work[i], target, s.registry, pool, *llm);
                } catch (const Error& e) {
                    if (e.code() != Errc::MalformedGeneration) throw;
                }
            });
        } catch (const Error& e) {
            if (e.code() != Errc::EmptyExemplarPool) throw;
            spdlog::warn("cluster {} has no exemplars; skipped", cluster.key());
            ++skipped_clusters;
            continue;
        }
        for (auto& r : results) {
            if (r) {
                all.push_back(std::move(*r));
            } else {
                ++malformed;
            }
        }
    }
    write_jsonl(out, rows_of(all));
    write_manifest(s, "gen-cqsa", {cqa_path, tree_path, corpora_path}, {out});
    return {{"instances", all.size()}, {"malformed", malformed}, {"skipped_clusters", skipped_clusters}};
}

struct JudgeOpts {
    std::string cqsa, cqa, tree, out;
};

json cmd_judge(const Globals& g, const JudgeOpts& o) {
    auto s = open_stage(g);
    const auto cqsa_path = pick(s, o.cqsa, "cqsa");
    const auto cqa_path = pick(s, o.cqa, "cqa");
    const auto tree_path = pick(s, o.tree, "tree");
    const auto out = pick(s, o.out, "scored");
    auto instances = load_cqsa(cqsa_path);
    std::map<std::string, CqaTriplet> cqa_by_id;
    for (auto& t : load_cqa(cqa_path)) cqa_by_id.emplace(t.id, std::move(t));
    const auto tree = load_tree(tree_path);

    auto llm = judge_backend(s);
    std::vector<std::optional<std::string>> failures(instances.size());
    parallel_for(instances.size(), s.cfg.max_in_flight, [&](std::size_t i) {
        auto& inst = instances[i];
        auto cqa = cqa_by_id.find(inst.cqa_id);
        const auto* node = tree.find_node(inst.cluster.node_id);
        if (cqa == cqa_by_id.end() || !node) {
            failures[i] = "StageInputMissing: unknown CQA or cluster";
            return;
        }
        try {
            inst.scores = judge(inst, cqa->second, node->profile, s.registry, *llm);
        } catch (const Error& e) {
            if (e.code() != Errc::UnparsableJudgment) throw;
            failures[i] = fmt::format("{}: {}", errc_name(e.code()), e.what());
        }
    });

    std::vector<json> scored, unscored;
    for (std::size_t i = 0; i < instances.size(); ++i) {
        if (instances[i].scores) {
            scored.push_back(instances[i].to_json());
        } else {
            json row = instances[i].to_json();
            row["error"] = failures[i].value_or("unscored");
            unscored.push_back(std::move(row));
        }
    }
    write_jsonl(out, scored);
    auto unscored_path = out;
    unscored_path += ".unscored.jsonl";
    write_jsonl(unscored_path, unscored);
    write_manifest(s, "judge", {cqsa_path, cqa_path, tree_path}, {out, unscored_path});
    return {{"scored", scored.size()}, {"unscored", unscored.size()}};
}

struct SelectOpts {
    std::string in, out;
    std::optional<std::size_t> n;
};

json cmd_select(const Globals& g, const SelectOpts& o) {
    auto s = open_stage(g);
    const auto in = pick(s, o.in, "scored");
    const auto out = pick(s, o.out, "selected");
    const auto selected = select_top_per_cluster(load_cqsa(in), o.n.value_or(s.cfg.top_n_select));
    write_jsonl(out, rows_of(selected));
    write_manifest(s, "select", {in}, {out});
    return {{"selected", selected.size()}};
}

struct PairsOpts {
    std::string selected, scored, cqa, tree, cluster, out;
};

json cmd_make_pairs(const Globals& g, const PairsOpts& o) {
    auto s = open_stage(g);
    const auto selected_path = pick(s, o.selected, "selected");
    const auto scored_path = pick(s, o.scored, "scored");
    const auto cqa_path = pick(s, o.cqa, "cqa");
    const auto tree_path = pick(s, o.tree, "tree");
    const auto out = pick(s, o.out, "pairs");
    const auto tree = load_tree(tree_path);
    const CqsaStore store(load_cqsa(scored_path));
    std::map<std::string, CqaTriplet> cqa_by_id;
    for (auto& t : load_cqa(cqa_path)) cqa_by_id.emplace(t.id, std::move(t));

    std::map<std::string, std::vector<CqsaInstance>> chosen_by_cluster;
    for (auto& inst : load_cqsa(selected_path)) {
        if (o.cluster.empty() || inst.cluster.key() == o.cluster) chosen_by_cluster[inst.cluster.key()].push_back(std::move(inst));
    }
    std::vector<PreferencePair> pairs;
    std::size_t unmatched = 0, degenerate = 0;
    for (const auto& [key, chosen] : chosen_by_cluster) {
        const auto cluster = tree.cluster_by_key(key);
        auto r = build_pairs(cluster, chosen, &tree, store, cqa_by_id);
        unmatched += r.unmatched;
        degenerate += r.degenerate;
        pairs.insert(pairs.end(), r.pairs.begin(), r.pairs.end());
    }
    write_jsonl(out, rows_of(pairs));
    write_manifest(s, "make-pairs", {selected_path, scored_path, cqa_path, tree_path}, {out});
    return {{"pairs", pairs.size()}, {"unmatched", unmatched}, {"degenerate", degenerate}};
}

struct EmitOpts {
    std::string pairs, jobs_dir;
};

json cmd_emit_job(const Globals& g, const EmitOpts& o) {
    auto s = open_stage(g);
    const auto pairs_path = pick(s, o.pairs, "pairs");
    const auto jobs_dir = pick(s, o.jobs_dir, "jobs_dir");
    require_input(pairs_path);
    std::map<std::string, std::vector<PreferencePair>> by_cluster;
    for (const auto& row : read_jsonl(pairs_path)) {
        auto p = PreferencePair::from_json(row);
        by_cluster[p.cluster.key()].push_back(std::move(p));
    }
    if (by_cluster.empty()) throw Error(Errc::EmptyPairs, "pairs file is empty");
    json jobs = json::array();
    std::vector<fs::path> outputs;
    for (const auto& [key, pairs] : by_cluster) {
        const auto spec = emit_job(pairs.front().cluster, pairs, s.cfg.job, jobs_dir);
        const auto dir = jobs_dir / cluster_slug(spec.cluster);
        outputs.push_back(dir / "job.json");
        outputs.push_back(dir / spec.pairs_file);
        jobs.push_back(spec.to_json());
    }
    const auto index = jobs_dir / "jobs.json";
    write_file_atomic(index, jobs.dump(2) + "\n");
    outputs.insert(outputs.begin(), index);
    write_manifest(s, "emit-job", {pairs_path}, outputs);
    return {{"jobs", jobs}};
}

struct RegisterOpts {
    std::string job, artifact, status = "ready", created_at, trainer_version, trainer_manifest, registry, tree;
};

json cmd_register(const Globals& g, const RegisterOpts& o) {
    auto s = open_stage(g);
    const auto job_path = s.cfg.resolve(o.job);
    require_input(job_path);
    const auto registry_path = pick(s, o.registry, "registry");
    const auto job = TrainingJobSpec::from_json(json::parse(read_file(job_path)));
    verify_job(job, job_path.parent_path());

    AdapterRecord rec;
    rec.cluster = job.cluster;
    rec.artifact_uri = o.artifact.empty() ? s.cfg.relative(job_path.parent_path() / job.output_dir) : o.artifact;
    rec.manifest.base_model_id = job.base_model_id;
    rec.manifest.rank = job.adapter_rank;
    rec.manifest.data_digest = job.pairs_digest;
    rec.manifest.created_at = o.created_at;
    rec.manifest.trainer_version = o.trainer_version;
    std::vector<fs::path> inputs{job_path};
    if (!o.trainer_manifest.empty()) {
        const auto mp = s.cfg.resolve(o.trainer_manifest);
        require_input(mp);
        inputs.push_back(mp);
        const auto m = json::parse(read_file(mp));
        rec.manifest.data_digest = m.value("pairs_digest", std::string());
        rec.manifest.rank = m.value("rank", rec.manifest.rank);
        rec.manifest.base_model_id = m.value("base_model_id", rec.manifest.base_model_id);
    }
    if (o.status == "ready") {
        rec.status = AdapterStatus::Ready;
    } else if (o.status == "pending") {
        rec.status = AdapterStatus::Pending;
    } else if (o.status == "failed") {
        rec.status = AdapterStatus::Failed;
    } else {
        throw Error(Errc::ConfigError, fmt::format("unknown status '{}'", o.status));
    }

    std::optional<StyleTree> tree;
    const auto tree_path = o.tree.empty() ? s.cfg.maybe_path("tree") : s.cfg.resolve(o.tree);
    if (tree_path && fs::exists(*tree_path)) tree = load_tree(*tree_path);

    AdapterRegistry registry = fs::exists(registry_path) ? AdapterRegistry::load(registry_path) : AdapterRegistry{};
    registry.register_adapter(rec, job, tree ? &*tree : nullptr);
    registry.save(registry_path);
    write_manifest(s, "register", inputs, {registry_path});
    return {{"registered", rec.to_json()}, {"epoch", registry.epoch()}};
}

struct GatewayParts {
    std::shared_ptr<Gateway> gateway;
    BackendPtr backend;
};

GatewayParts open_gateway(const Stage& s) {
    auto tree = std::make_shared<const StyleTree>(load_tree(s.cfg.path("tree")));
    auto adapters = std::make_shared<AdapterRegistry>();
    if (auto p = s.cfg.maybe_path("registry"); p && fs::exists(*p)) *adapters = AdapterRegistry::load(*p);
    std::map<std::string, StyleLabelVector> profiles;
    if (auto p = s.cfg.maybe_path("profiles"); p && fs::exists(*p)) {
        for (auto& prof : load_profiles(*p)) profiles.emplace(prof.author_id, std::move(prof.labels));
    }
    auto retriever = std::make_shared<Retriever>(s.cfg.retrieval);
    if (auto p = s.cfg.maybe_path("chunks"); p && fs::exists(*p)) retriever->load_chunks(load_chunks(*p));
    ExemplarPool pool;
    if (auto p = s.cfg.maybe_path("corpora"); p && fs::exists(*p)) pool = exemplar_pool_from(load_corpora(*p));
    auto backend = stage_backend(s);
    auto gw = std::make_shared<Gateway>(s.registry, tree, adapters, std::move(profiles), retriever, backend,
                                        s.cfg.gateway, std::move(pool));
    return {gw, backend};
}

struct ServeOpts {
    std::string host;
    std::optional<int> port;
};

json cmd_serve(const Globals& g, const ServeOpts& o) {
    auto s = open_stage(g);
    auto parts = open_gateway(s);
    auto logger = spdlog::default_logger();
    parts.gateway->set_request_log([logger](const json& entry) { logger->info("{}", entry.dump()); });
    GatewayServer server(parts.gateway);
    const auto host = o.host.empty() ? s.cfg.serve_host : o.host;
    const auto port = o.port.value_or(s.cfg.serve_port);
    if (!server.bind(host, port)) {
        throw Error(Errc::ConfigError, fmt::format("cannot bind {}:{}", host, port));
    }
    spdlog::info("serving on http://{}:{}", host, port);
    server.listen_after_bind();
    return {{"stopped", true}};
}

struct EvalOpts {
    std::string queries, systems = "gateway,baseline", out;
};

json cmd_eval(const Globals& g, const EvalOpts& o) {
    auto s = open_stage(g);
    const auto queries_path = pick(s, o.queries, "queries");
    const auto out = pick(s, o.out, "report");
    require_input(queries_path);
    std::vector<EvalQuery> queries;
    for (const auto& row : read_jsonl(queries_path)) queries.push_back(EvalQuery::from_json(row));

    auto parts = open_gateway(s);
    std::map<SystemKind, SystemFn> systems;
    std::size_t start = 0;
    while (start <= o.systems.size()) {
        auto end = o.systems.find(',', start);
        if (end == std::string::npos) end = o.systems.size();
        const auto name = o.systems.substr(start, end - start);
        if (!name.empty()) {
            const auto kind = parse_system(name);
            systems[kind] = kind == SystemKind::Gateway ? gateway_system(*parts.gateway)
                                                        : baseline_system(*parts.gateway, parts.backend, s.cfg.eval_baseline_m);
        }
        start = end + 1;
    }
    if (systems.empty()) throw Error(Errc::ConfigError, "no systems selected");

    auto judge_llm = judge_backend(s);
    const auto records = run_eval(queries, systems, *judge_llm, s.registry, s.cfg.max_in_flight);
    const auto rep = report(records);
    json doc = rep.to_json();
    if (systems.size() == 2) doc["time_cost"] = time_cost(records).to_json();

    auto records_path = out;
    records_path += ".records.jsonl";
    auto csv_path = out;
    csv_path += ".csv";
    write_file_atomic(out, doc.dump(2) + "\n");
    write_jsonl(records_path, rows_of(records));
    write_file_atomic(csv_path, rep.to_csv());
    std::vector<fs::path> inputs{queries_path, s.cfg.path("tree")};
    for (const auto* name : {"registry", "profiles", "chunks", "corpora"}) {
        if (auto p = s.cfg.maybe_path(name)) inputs.push_back(*p);
    }
    write_manifest(s, "eval", inputs, {out, records_path, csv_path});
    std::size_t failures = 0;
    for (const auto& r : records) failures += r.error ? 1 : 0;
    json summary = {{"records", records.size()}, {"failures", failures}, {"overall", doc["overall"]}};
    if (doc.contains("time_cost")) summary["time_cost"] = doc["time_cost"];
    return summary;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Stylized contextual QA pipeline: style labeling, style tree, data curation, "
                 "preference pairs, adapter registry, serving and evaluation.",
                 "stylecqa"};
    app.require_subcommand(1);
    Globals g;
    app.add_option("--config", g.config_path, "Pipeline config file (JSON)");
    app.add_option("--seed", g.seed, "Seed for sampling stages (overrides config)");
    app.add_flag("--verbose", g.verbose, "Debug logging");

    std::function<json()> action;

    LabelOpts label;
    auto* c = app.add_subcommand("label", "Label reply corpora and aggregate author style profiles");
    c->add_option("--corpora", label.corpora);
    c->add_option("--out", label.out);
    c->callback([&] { action = [&] { return cmd_label(g, label); }; });

    TreeOpts tree;
    c = app.add_subcommand("build-tree", "Build the style tree from author profiles");
    c->add_option("--profiles", tree.profiles);
    c->add_option("--k", tree.k, "Corpus-size threshold");
    c->add_option("--order", tree.order, "Split order file (JSON array or one id per line)");
    c->add_option("--out", tree.out);
    c->callback([&] { action = [&] { return cmd_build_tree(g, tree); }; });

    IngestOpts ingest;
    c = app.add_subcommand("ingest", "Chunk and index articles");
    c->add_option("--articles", ingest.articles);
    c->add_option("--out", ingest.out);
    c->callback([&] { action = [&] { return cmd_ingest(g, ingest); }; });

    RetrieveOpts retrieve;
    c = app.add_subcommand("retrieve", "Query an account's article index");
    c->add_option("--chunks", retrieve.chunks);
    c->add_option("--account", retrieve.account)->required();
    c->add_option("--query", retrieve.query)->required();
    c->add_option("--top-n", retrieve.top_n);
    c->callback([&] { action = [&] { return cmd_retrieve(g, retrieve); }; });

    GenCqaOpts gen_cqa;
    c = app.add_subcommand("gen-cqa", "Generate CQA triplets (forward-thinking and bottom-up)");
    c->add_option("--chunks", gen_cqa.chunks);
    c->add_option("--corpora", gen_cqa.corpora);
    c->add_option("--out", gen_cqa.out);
    c->callback([&] { action = [&] { return cmd_gen_cqa(g, gen_cqa); }; });

    GenCqsaOpts gen_cqsa;
    c = app.add_subcommand("gen-cqsa", "Rewrite CQA answers into each cluster's style");
    c->add_option("--cqa", gen_cqsa.cqa);
    c->add_option("--tree", gen_cqsa.tree);
    c->add_option("--corpora", gen_cqsa.corpora);
    c->add_option("--cluster", gen_cqsa.cluster, "Cluster key (default: every leaf)");
    c->add_option("--out", gen_cqsa.out);
    c->callback([&] { action = [&] { return cmd_gen_cqsa(g, gen_cqsa); }; });

    JudgeOpts judge_opts;
    c = app.add_subcommand("judge", "Score CQSA instances on C-A, Q-A, S-A and fluency");
    c->add_option("--cqsa", judge_opts.cqsa);
    c->add_option("--cqa", judge_opts.cqa);
    c->add_option("--tree", judge_opts.tree);
    c->add_option("--out", judge_opts.out);
    c->callback([&] { action = [&] { return cmd_judge(g, judge_opts); }; });

    SelectOpts select;
    c = app.add_subcommand("select", "Keep the top-n scored instances per cluster");
    c->add_option("--n", select.n);
    c->add_option("--in", select.in);
    c->add_option("--out", select.out);
    c->callback([&] { action = [&] { return cmd_select(g, select); }; });

    PairsOpts pairs;
    c = app.add_subcommand("make-pairs", "Build style-contrastive preference pairs");
    c->add_option("--selected", pairs.selected);
    c->add_option("--scored", pairs.scored);
    c->add_option("--cqa", pairs.cqa);
    c->add_option("--tree", pairs.tree);
    c->add_option("--cluster", pairs.cluster);
    c->add_option("--out", pairs.out);
    c->callback([&] { action = [&] { return cmd_make_pairs(g, pairs); }; });

    EmitOpts emit;
    c = app.add_subcommand("emit-job", "Write per-cluster training job specs");
    c->add_option("--pairs", emit.pairs);
    c->add_option("--jobs-dir", emit.jobs_dir);
    c->callback([&] { action = [&] { return cmd_emit_job(g, emit); }; });

    RegisterOpts reg;
    c = app.add_subcommand("register", "Register a trained adapter for a cluster");
    c->add_option("--job", reg.job)->required();
    c->add_option("--artifact", reg.artifact);
    c->add_option("--status", reg.status)->check(CLI::IsMember({"ready", "pending", "failed"}));
    c->add_option("--created-at", reg.created_at);
    c->add_option("--trainer-version", reg.trainer_version);
    c->add_option("--trainer-manifest", reg.trainer_manifest);
    c->add_option("--registry", reg.registry);
    c->add_option("--tree", reg.tree);
    c->callback([&] { action = [&] { return cmd_register(g, reg); }; });

    ServeOpts serve;
    c = app.add_subcommand("serve", "Run the HTTP answering gateway");
    c->add_option("--host", serve.host);
    c->add_option("--port", serve.port);
    c->callback([&] { action = [&] { return cmd_serve(g, serve); }; });

    EvalOpts eval;
    c = app.add_subcommand("eval", "Judge gateway and baseline answers and report");
    c->add_option("--queries", eval.queries);
    c->add_option("--systems", eval.systems);
    c->add_option("--out", eval.out);
    c->callback([&] { action = [&] { return cmd_eval(g, eval); }; });

    std::vector<std::string> argv_rest(args.begin() + (args.empty() ? 0 : 1), args.end());
    std::reverse(argv_rest.begin(), argv_rest.end());
    try {
        app.parse(argv_rest);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return 0;
    } catch (const CLI::ParseError& e) {
        err << e.what() << "\n\n" << app.help();
        return 2;
    }

    // stdout carries the JSON summary only; logs go to stderr.
    static const auto logger = [] {
        auto l = spdlog::stderr_color_mt("stylecqa");
        spdlog::set_default_logger(l);
        return l;
    }();
    logger->set_level(g.verbose ? spdlog::level::debug : spdlog::level::warn);
    try {
        out << action().dump(2) << '\n';
        return 0;
    } catch (const Error& e) {
        err << json{{"error", {{"code", errc_name(e.code())}, {"message", e.what()}}}}.dump() << '\n';
        return 1;
    } catch (const std::exception& e) {
        err << json{{"error", {{"code", "Internal"}, {"message", e.what()}}}}.dump() << '\n';
        return 1;
    }
}

}  // namespace stylecqa::cli
