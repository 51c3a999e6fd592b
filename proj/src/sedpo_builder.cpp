#include "stylecqa/sedpo_builder.hpp"

#include <algorithm>
#include <mutex>
#include <set>

#include <fmt/format.h>

#include "stylecqa/error.hpp"

namespace stylecqa {
namespace {

constexpr const char* kRegistrySchema = "stylecqa.adapter_registry";

std::string_view status_name(AdapterStatus s) {
    switch (s) {
        case AdapterStatus::Pending: return "pending";
        case AdapterStatus::Ready: return "ready";
        case AdapterStatus::Failed: return "failed";
    }
    return "pending";
}

AdapterStatus parse_status(std::string_view s) {
    if (s == "pending") return AdapterStatus::Pending;
    if (s == "ready") return AdapterStatus::Ready;
    if (s == "failed") return AdapterStatus::Failed;
    throw Error(Errc::CorruptDocument, fmt::format("unknown adapter status '{}'", s));
}

// Split standard of the lowest common ancestor of two distinct leaves.
std::string lca_split(const StyleTree& tree, std::uint32_t a, std::uint32_t b) {
    const auto pa = path_to(tree, a);
    const auto pb = path_to(tree, b);
    std::size_t i = 0;
    while (i < pa.size() && i < pb.size() && pa[i] == pb[i]) ++i;
    return *pa[i - 1]->split_standard;
}

struct Candidate {
    const StyleNode* leaf;
    const CqsaInstance* instance;
    std::size_t distance;
};

}  // namespace

json PreferencePair::to_json() const {
    json j = {{"cluster", cluster.key()},
              {"cluster_node_id", cluster.node_id},
              {"cqa_id", cqa_id},
              {"prompt", prompt},
              {"chosen", chosen},
              {"rejected", rejected},
              {"rejected_cluster", rejected_cluster.key()},
              {"rejected_node_id", rejected_cluster.node_id},
              {"differing_standard", differing_standard},
              {"sibling_sourced", sibling_sourced}};
    j["margin_meta"] = margin_meta ? json(*margin_meta) : json(nullptr);
    return j;
}

PreferencePair PreferencePair::from_json(const json& j) {
    try {
        PreferencePair p;
        p.cluster = ClusterId::from_key(j.at("cluster_node_id").get<std::uint32_t>(), j.at("cluster").get<std::string>());
        p.cqa_id = j.at("cqa_id").get<std::string>();
        p.prompt = j.at("prompt").get<std::string>();
        p.chosen = j.at("chosen").get<std::string>();
        p.rejected = j.at("rejected").get<std::string>();
        p.rejected_cluster = ClusterId::from_key(j.at("rejected_node_id").get<std::uint32_t>(),
                                                 j.at("rejected_cluster").get<std::string>());
        p.differing_standard = j.at("differing_standard").get<std::string>();
        p.sibling_sourced = j.value("sibling_sourced", true);
        if (j.contains("margin_meta") && !j["margin_meta"].is_null()) p.margin_meta = j["margin_meta"].get<double>();
        return p;
    } catch (const json::exception& e) {
        throw Error(Errc::CorruptDocument, fmt::format("bad preference pair: {}", e.what()));
    }
}

CqsaStore::CqsaStore(const std::vector<CqsaInstance>& instances) {
    for (const auto& inst : instances) add(inst);
}

void CqsaStore::add(const CqsaInstance& instance) {
    by_cluster_[instance.cluster.key()].insert_or_assign(instance.cqa_id, instance);
}

const CqsaInstance* CqsaStore::find(std::string_view cluster_key, std::string_view cqa_id) const {
    auto c = by_cluster_.find(cluster_key);
    if (c == by_cluster_.end()) return nullptr;
    auto it = c->second.find(cqa_id);
    return it == c->second.end() ? nullptr : &it->second;
}

std::size_t CqsaStore::size() const noexcept {
    std::size_t n = 0;
    for (const auto& [_, m] : by_cluster_) n += m.size();
    return n;
}

std::string pair_prompt(const CqaTriplet& cqa) {
    return fmt::format("Context:\n{}\n\nQuestion:\n{}", cqa.context, cqa.question);
}

PairBuildResult build_pairs(const ClusterId& cluster, const std::vector<CqsaInstance>& chosen_set,
                            const StyleTree* tree, const CqsaStore& store,
                            const std::map<std::string, CqaTriplet>& cqa_by_id) {
    if (!tree) throw Error(Errc::NoTree, "pair building requires a style tree");
    if (chosen_set.empty()) {
        throw Error(Errc::EmptyChosenSet, fmt::format("no chosen instances for cluster {}", cluster.key()));
    }
    const auto* self = tree->find_node(cluster.node_id);
    if (!self || !self->is_leaf()) {
        throw Error(Errc::UnknownCluster, fmt::format("cluster {} is not a leaf", cluster.key()));
    }

    const auto siblings = sibling_clusters(cluster, *tree);
    std::set<std::uint32_t> sibling_ids;
    for (const auto& s : siblings) sibling_ids.insert(s.cluster.node_id);
    std::vector<const StyleNode*> others;
    for (const auto* leaf : tree->leaves()) {
        if (leaf->node_id != cluster.node_id && !sibling_ids.contains(leaf->node_id)) others.push_back(leaf);
    }

    PairBuildResult result;
    for (const auto& chosen : chosen_set) {
        if (chosen.cluster.node_id != cluster.node_id) {
            throw Error(Errc::UnknownCluster,
                        fmt::format("chosen instance {} belongs to another cluster", chosen.id()));
        }
        auto cqa = cqa_by_id.find(chosen.cqa_id);
        if (cqa == cqa_by_id.end()) {
            throw Error(Errc::StageInputMissing, fmt::format("CQA triplet '{}' not found", chosen.cqa_id));
        }

        bool saw_degenerate = false;
        auto best_among = [&](const std::vector<const StyleNode*>& leaves) -> std::optional<Candidate> {
            std::optional<Candidate> best;
            for (const auto* leaf : leaves) {
                const auto* inst = store.find(tree->cluster_for(leaf->node_id).key(), chosen.cqa_id);
                if (!inst) continue;
                if (inst->stylized_answer == chosen.stylized_answer) {
                    saw_degenerate = true;
                    continue;
                }
                const auto d = profile_distance(self->profile, leaf->profile);
                if (d == 0) continue;
                if (!best || d < best->distance || (d == best->distance && leaf->node_id < best->leaf->node_id)) {
                    best = Candidate{leaf, inst, d};
                }
            }
            return best;
        };

        std::vector<const StyleNode*> sibling_leaves;
        for (const auto& s : siblings) sibling_leaves.push_back(tree->find_node(s.cluster.node_id));
        auto pick = best_among(sibling_leaves);
        const bool from_sibling = pick.has_value();
        if (!pick) pick = best_among(others);
        if (!pick) {
            ++(saw_degenerate ? result.degenerate : result.unmatched);
            continue;
        }

        PreferencePair pair;
        pair.cluster = cluster;
        pair.cqa_id = chosen.cqa_id;
        pair.prompt = pair_prompt(cqa->second);
        pair.chosen = chosen.stylized_answer;
        pair.rejected = pick->instance->stylized_answer;
        pair.rejected_cluster = tree->cluster_for(pick->leaf->node_id);
        pair.differing_standard = lca_split(*tree, cluster.node_id, pick->leaf->node_id);
        pair.sibling_sourced = from_sibling;
        if (chosen.scores && pick->instance->scores) {
            pair.margin_meta = chosen.scores->aggregate - pick->instance->scores->aggregate;
        }
        result.pairs.push_back(std::move(pair));
    }
    return result;
}

json TrainingJobSpec::to_json() const {
    return {{"cluster", cluster.to_json()},   {"base_model_id", base_model_id}, {"adapter_rank", adapter_rank},
            {"epochs", epochs},               {"beta", beta},                   {"pairs_file", pairs_file},
            {"pairs_digest", pairs_digest},   {"output_dir", output_dir},       {"seed", seed}};
}

TrainingJobSpec TrainingJobSpec::from_json(const json& j) {
    try {
        TrainingJobSpec s;
        s.cluster = ClusterId::from_json(j.at("cluster"));
        s.base_model_id = j.at("base_model_id").get<std::string>();
        s.adapter_rank = j.at("adapter_rank").get<int>();
        s.epochs = j.at("epochs").get<int>();
        s.beta = j.at("beta").get<double>();
        s.pairs_file = j.at("pairs_file").get<std::string>();
        s.pairs_digest = j.at("pairs_digest").get<std::string>();
        s.output_dir = j.at("output_dir").get<std::string>();
        s.seed = j.at("seed").get<std::uint64_t>();
        if (s.adapter_rank < 1 || s.epochs < 1 || s.pairs_file.empty()) {
            throw Error(Errc::CorruptDocument, "job spec violates rank/epochs/pairs_file constraints");
        }
        return s;
    } catch (const json::exception& e) {
        throw Error(Errc::CorruptDocument, fmt::format("bad job spec: {}", e.what()));
    }
}

std::string cluster_slug(const ClusterId& cluster) {
    std::string slug = fmt::format("n{}-", cluster.node_id);
    for (char c : cluster.key()) {
        const bool safe = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '_';
        slug += safe ? c : '-';
    }
    return slug;
}

TrainingJobSpec emit_job(const ClusterId& cluster, const std::vector<PreferencePair>& pairs,
                         const JobConfig& config, const std::filesystem::path& job_root) {
    if (pairs.empty()) {
        throw Error(Errc::EmptyPairs, fmt::format("no preference pairs for cluster {}", cluster.key()));
    }
    if (config.adapter_rank < 1 || config.epochs < 1) {
        throw Error(Errc::ConfigError, "adapter rank and epochs must be >= 1");
    }
    const auto dir = job_root / cluster_slug(cluster);
    std::vector<json> rows;
    rows.reserve(pairs.size());
    for (const auto& p : pairs) rows.push_back(p.to_json());
    const auto body = to_jsonl(rows);
    write_file_atomic(dir / "pairs.jsonl", body);

    TrainingJobSpec spec;
    spec.cluster = cluster;
    spec.base_model_id = config.base_model_id;
    spec.adapter_rank = config.adapter_rank;
    spec.epochs = config.epochs;
    spec.beta = config.beta;
    // Relative to the job directory so job specs are location-independent.
    spec.pairs_file = "pairs.jsonl";
    spec.pairs_digest = sha256_hex(body);
    spec.output_dir = "adapter";
    spec.seed = config.seed;
    write_file_atomic(dir / "job.json", spec.to_json().dump(2) + "\n");
    return spec;
}

void verify_job(const TrainingJobSpec& spec, const std::filesystem::path& job_dir) {
    const auto actual = sha256_file(job_dir / spec.pairs_file);
    if (actual != spec.pairs_digest) {
        throw Error(Errc::DigestMismatch,
                    fmt::format("{} digest {} != job digest {}", spec.pairs_file, actual, spec.pairs_digest));
    }
}

json AdapterRecord::to_json() const {
    return {{"cluster", cluster.to_json()},
            {"artifact_uri", artifact_uri},
            {"manifest",
             {{"base_model_id", manifest.base_model_id},
              {"rank", manifest.rank},
              {"data_digest", manifest.data_digest},
              {"created_at", manifest.created_at},
              {"trainer_version", manifest.trainer_version}}},
            {"status", status_name(status)}};
}

AdapterRecord AdapterRecord::from_json(const json& j) {
    try {
        AdapterRecord r;
        r.cluster = ClusterId::from_json(j.at("cluster"));
        r.artifact_uri = j.at("artifact_uri").get<std::string>();
        const auto& m = j.at("manifest");
        r.manifest.base_model_id = m.at("base_model_id").get<std::string>();
        r.manifest.rank = m.at("rank").get<int>();
        r.manifest.data_digest = m.at("data_digest").get<std::string>();
        r.manifest.created_at = m.value("created_at", "");
        r.manifest.trainer_version = m.value("trainer_version", "");
        r.status = parse_status(j.at("status").get<std::string>());
        return r;
    } catch (const json::exception& e) {
        throw Error(Errc::CorruptDocument, fmt::format("bad adapter record: {}", e.what()));
    }
}

AdapterRegistry::AdapterRegistry(const AdapterRegistry& other) {
    std::shared_lock lock(other.mu_);
    ready_ = other.ready_;
    archive_ = other.archive_;
    epoch_ = other.epoch_;
}

AdapterRegistry& AdapterRegistry::operator=(const AdapterRegistry& other) {
    if (this == &other) return *this;
    AdapterRegistry copy(other);
    std::unique_lock lock(mu_);
    ready_ = std::move(copy.ready_);
    archive_ = std::move(copy.archive_);
    epoch_ = copy.epoch_;
    return *this;
}

void AdapterRegistry::register_adapter(const AdapterRecord& record, std::string_view expected_digest,
                                       const StyleTree* tree) {
    if (record.manifest.data_digest != expected_digest) {
        throw Error(Errc::DigestMismatch,
                    fmt::format("adapter manifest digest {} does not match pairs digest {}",
                                record.manifest.data_digest, expected_digest));
    }
    if (tree) {
        const auto* node = tree->find_node(record.cluster.node_id);
        if (!node || !node->is_leaf() || tree->cluster_for(node->node_id).key() != record.cluster.key()) {
            throw Error(Errc::UnknownCluster, fmt::format("cluster {} is not a leaf of the tree", record.cluster.key()));
        }
    }
    std::unique_lock lock(mu_);
    if (record.status == AdapterStatus::Ready) {
        const auto key = record.cluster.key();
        if (auto it = ready_.find(key); it != ready_.end()) {
            archive_.push_back(std::move(it->second));
            it->second = record;
        } else {
            ready_.emplace(key, record);
        }
    } else {
        archive_.push_back(record);
    }
    ++epoch_;
}

void AdapterRegistry::register_adapter(const AdapterRecord& record, const TrainingJobSpec& job,
                                       const StyleTree* tree) {
    if (job.cluster.key() != record.cluster.key()) {
        throw Error(Errc::UnknownCluster,
                    fmt::format("record cluster {} != job cluster {}", record.cluster.key(), job.cluster.key()));
    }
    register_adapter(record, job.pairs_digest, tree);
}

std::optional<AdapterRecord> AdapterRegistry::lookup(std::string_view cluster_key) const {
    std::shared_lock lock(mu_);
    auto it = ready_.find(cluster_key);
    if (it == ready_.end()) return std::nullopt;
    return it->second;
}

std::vector<AdapterRecord> AdapterRegistry::archived() const {
    std::shared_lock lock(mu_);
    return archive_;
}

std::uint64_t AdapterRegistry::epoch() const {
    std::shared_lock lock(mu_);
    return epoch_;
}

json AdapterRegistry::to_json() const {
    std::shared_lock lock(mu_);
    json ready = json::array();
    for (const auto& [_, r] : ready_) ready.push_back(r.to_json());
    json archive = json::array();
    for (const auto& r : archive_) archive.push_back(r.to_json());
    return {{"schema", kRegistrySchema},
            {"version", kRegistrySchemaVersion},
            {"epoch", epoch_},
            {"ready", ready},
            {"archive", archive}};
}

AdapterRegistry AdapterRegistry::from_json(const json& doc) {
    if (!doc.is_object() || doc.value("schema", "") != kRegistrySchema) {
        throw Error(Errc::CorruptDocument, "not an adapter registry document");
    }
    if (doc.value("version", -1) != kRegistrySchemaVersion) {
        throw Error(Errc::SchemaVersionMismatch, "unsupported adapter registry version");
    }
    AdapterRegistry reg;
    try {
        reg.epoch_ = doc.at("epoch").get<std::uint64_t>();
        for (const auto& r : doc.at("ready")) {
            auto rec = AdapterRecord::from_json(r);
            if (rec.status != AdapterStatus::Ready) {
                throw Error(Errc::CorruptDocument, "non-ready record in the ready table");
            }
            if (!reg.ready_.emplace(rec.cluster.key(), rec).second) {
                throw Error(Errc::CorruptDocument, fmt::format("two ready adapters for {}", rec.cluster.key()));
            }
        }
        for (const auto& r : doc.at("archive")) reg.archive_.push_back(AdapterRecord::from_json(r));
    } catch (const json::exception& e) {
        throw Error(Errc::CorruptDocument, fmt::format("bad adapter registry: {}", e.what()));
    }
    return reg;
}

void AdapterRegistry::save(const std::filesystem::path& path) const {
    write_file_atomic(path, to_json().dump(2) + "\n");
}

AdapterRegistry AdapterRegistry::load(const std::filesystem::path& path) {
    auto doc = json::parse(read_file(path), nullptr, false);
    if (doc.is_discarded()) throw Error(Errc::CorruptDocument, fmt::format("{} is not JSON", path.string()));
    return from_json(doc);
}

}  // namespace stylecqa
