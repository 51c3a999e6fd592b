#include "stylecqa/eval_harness.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "stylecqa/error.hpp"
#include "stylecqa/parallel.hpp"

namespace stylecqa {
namespace {

struct MeanAccumulator {
    double q_a = 0, c_a = 0, s_a = 0, fluency = 0;
    std::size_t n = 0;

    void add(const QualityScores& s) {
        q_a += s.q_a;
        c_a += s.c_a;
        s_a += s.s_a;
        fluency += s.fluency;
        ++n;
    }
    MetricMeans means() const {
        if (n == 0) return {};
        const auto d = static_cast<double>(n);
        return {q_a / d, c_a / d, s_a / d, fluency / d, n};
    }
};

json means_to_json(const MetricMeans& m) {
    return {{"q_a", m.q_a}, {"c_a", m.c_a}, {"s_a", m.s_a}, {"fluency", m.fluency}, {"n", m.n}};
}

MetricMeans means_from_json(const json& j) {
    return {j.at("q_a").get<double>(), j.at("c_a").get<double>(), j.at("s_a").get<double>(),
            j.at("fluency").get<double>(), j.at("n").get<std::size_t>()};
}

bool close(double a, double b) {
    return std::abs(a - b) <= 1e-9;
}

bool means_match(const MetricMeans& a, const MetricMeans& b) {
    return a.n == b.n && close(a.q_a, b.q_a) && close(a.c_a, b.c_a) && close(a.s_a, b.s_a) &&
           close(a.fluency, b.fluency);
}

std::vector<const EvalRecord*> sorted_view(const std::vector<EvalRecord>& records) {
    std::vector<const EvalRecord*> view;
    view.reserve(records.size());
    for (const auto& r : records) view.push_back(&r);
    std::sort(view.begin(), view.end(), [](const EvalRecord* a, const EvalRecord* b) {
        if (a->query_id != b->query_id) return a->query_id < b->query_id;
        return a->system < b->system;
    });
    return view;
}

}  // namespace

std::string_view system_name(SystemKind s) noexcept {
    return s == SystemKind::Gateway ? "gateway" : "baseline";
}

SystemKind parse_system(std::string_view name) {
    if (name == "gateway") return SystemKind::Gateway;
    if (name == "baseline") return SystemKind::PromptBaseline;
    throw Error(Errc::ConfigError, fmt::format("unknown system '{}'", name));
}

EvalQuery EvalQuery::from_json(const json& j) {
    try {
        return {j.at("id").get<std::string>(), j.at("account_id").get<std::string>(),
                j.at("question").get<std::string>()};
    } catch (const json::exception& e) {
        throw Error(Errc::CorruptDocument, fmt::format("bad eval query: {}", e.what()));
    }
}

json EvalQuery::to_json() const {
    return {{"id", id}, {"account_id", account_id}, {"question", question}};
}

json EvalRecord::to_json() const {
    json j = {{"query_id", query_id},
              {"cluster", cluster},
              {"system", system_name(system)},
              {"answer", answer},
              {"usage", {{"prompt_tokens", usage.prompt_tokens}, {"completion_tokens", usage.completion_tokens}}},
              {"latency_ms", latency_ms},
              {"answered", answered}};
    j["scores"] = scores ? scores->to_json() : json(nullptr);
    j["error"] = error ? json(*error) : json(nullptr);
    return j;
}

EvalRecord EvalRecord::from_json(const json& j) {
    try {
        EvalRecord r;
        r.query_id = j.at("query_id").get<std::string>();
        r.cluster = j.at("cluster").get<std::string>();
        r.system = parse_system(j.at("system").get<std::string>());
        r.answer = j.at("answer").get<std::string>();
        r.usage.prompt_tokens = j.at("usage").at("prompt_tokens").get<std::int64_t>();
        r.usage.completion_tokens = j.at("usage").at("completion_tokens").get<std::int64_t>();
        r.latency_ms = j.at("latency_ms").get<double>();
        r.answered = j.at("answered").get<bool>();
        if (!j.at("scores").is_null()) r.scores = QualityScores::from_json(j["scores"]);
        if (!j.at("error").is_null()) r.error = j["error"].get<std::string>();
        return r;
    } catch (const json::exception& e) {
        throw Error(Errc::CorruptDocument, fmt::format("bad eval record: {}", e.what()));
    }
}

std::vector<EvalRecord> run_eval(const std::vector<EvalQuery>& queries, const std::map<SystemKind, SystemFn>& systems,
                                 ChatBackend& judge_llm, const StandardRegistry& registry,
                                 std::size_t max_in_flight) {
    std::vector<std::pair<const EvalQuery*, SystemKind>> jobs;
    for (const auto& q : queries) {
        for (const auto& [kind, _] : systems) jobs.emplace_back(&q, kind);
    }
    std::vector<EvalRecord> records(jobs.size());
    parallel_for(jobs.size(), max_in_flight, [&](std::size_t i) {
        const auto& [query, kind] = jobs[i];
        EvalRecord& rec = records[i];
        rec.query_id = query->id;
        rec.system = kind;
        SystemOutput out;
        try {
            out = systems.at(kind)(*query);
        } catch (const Error& e) {
            rec.error = fmt::format("{}: {}", errc_name(e.code()), e.what());
            return;
        }
        rec.cluster = out.cluster.key();
        rec.answer = out.answer;
        rec.usage = out.usage;
        rec.latency_ms = out.latency_ms;
        rec.answered = true;
        CqaTriplet cqa;
        cqa.id = query->id;
        cqa.account_id = query->account_id;
        cqa.context = out.context;
        cqa.question = query->question;
        try {
            rec.scores = judge_answer(cqa, out.answer, out.cluster_labels, registry, judge_llm);
        } catch (const Error& e) {
            rec.error = fmt::format("{}: {}", errc_name(e.code()), e.what());
        }
    });
    return records;
}

namespace {

std::string join_context(const std::vector<ArticleChunk>& chunks) {
    std::string out;
    for (const auto& c : chunks) {
        if (!out.empty()) out += "\n\n";
        out += c.text;
    }
    return out;
}

StyleLabelVector labels_of(const Gateway& gateway, const ClusterId& cluster) {
    const auto tree = gateway.tree();
    const auto* node = tree->find_node(cluster.node_id);
    return node ? node->profile : StyleLabelVector{};
}

}  // namespace

SystemFn gateway_system(const Gateway& gateway) {
    return [&gateway](const EvalQuery& q) {
        AnswerRequest req{q.account_id, q.question, std::nullopt, false};
        auto resp = gateway.answer(req);
        SystemOutput out;
        out.answer = resp.answer;
        out.cluster = resp.cluster;
        out.cluster_labels = labels_of(gateway, resp.cluster);
        out.context = join_context(gateway.context_for(req));
        out.usage = resp.usage;
        out.latency_ms = resp.latency_ms;
        return out;
    };
}

SystemFn baseline_system(const Gateway& gateway, BackendPtr backend, std::size_t m) {
    return [&gateway, backend = std::move(backend), m](const EvalQuery& q) {
        AnswerRequest req{q.account_id, q.question, std::nullopt, false};
        const auto res = gateway.resolve(q.account_id);
        const auto chat = gateway.baseline_request(req, m);
        const auto resp = backend->complete(chat);
        SystemOutput out;
        out.answer = resp.text;
        out.cluster = res.cluster;
        out.cluster_labels = labels_of(gateway, res.cluster);
        out.context = join_context(gateway.context_for(req));
        out.usage = resp.usage;
        out.latency_ms = resp.latency_ms;
        return out;
    };
}

json EvalReport::to_json() const {
    json clusters = json::object();
    for (const auto& [cluster, systems] : per_cluster) {
        for (const auto& [system, m] : systems) clusters[cluster][system] = means_to_json(m);
    }
    json overall_j = json::object();
    for (const auto& [system, m] : overall) overall_j[system] = means_to_json(m);
    json cost_j = json::object();
    for (const auto& [system, c] : cost) {
        cost_j[system] = {{"mean_prompt_tokens", c.mean_prompt_tokens},
                          {"mean_completion_tokens", c.mean_completion_tokens},
                          {"mean_latency_ms", c.mean_latency_ms},
                          {"n", c.n},
                          {"failures", c.failures}};
    }
    return {{"schema", "stylecqa.eval_report"},
            {"version", 1},
            {"per_cluster", clusters},
            {"overall", overall_j},
            {"cost", cost_j}};
}

EvalReport EvalReport::from_json(const json& j) {
    try {
        EvalReport r;
        for (const auto& [cluster, systems] : j.at("per_cluster").items()) {
            for (const auto& [system, m] : systems.items()) r.per_cluster[cluster][system] = means_from_json(m);
        }
        for (const auto& [system, m] : j.at("overall").items()) r.overall[system] = means_from_json(m);
        for (const auto& [system, c] : j.at("cost").items()) {
            r.cost[system] = {c.at("mean_prompt_tokens").get<double>(), c.at("mean_completion_tokens").get<double>(),
                              c.at("mean_latency_ms").get<double>(), c.at("n").get<std::size_t>(),
                              c.at("failures").get<std::size_t>()};
        }
        return r;
    } catch (const json::exception& e) {
        throw Error(Errc::CorruptDocument, fmt::format("bad eval report: {}", e.what()));
    }
}

std::string EvalReport::to_csv() const {
    std::vector<std::string> systems;
    for (const auto& [system, _] : overall) systems.push_back(system);
    for (const auto& [system, _] : cost) {
        if (std::find(systems.begin(), systems.end(), system) == systems.end()) systems.push_back(system);
    }
    std::string out = "row";
    for (const auto& s : systems) out += "," + s;
    out += '\n';

    auto emit_rows = [&](const std::string& label, const std::map<std::string, MetricMeans>& by_system) {
        static const std::pair<const char*, double MetricMeans::*> kMetrics[] = {
            {"Q-A", &MetricMeans::q_a}, {"C-A", &MetricMeans::c_a}, {"S-A", &MetricMeans::s_a},
            {"Fluency", &MetricMeans::fluency}};
        for (const auto& [name, field] : kMetrics) {
            out += fmt::format("{} {}", label, name);
            for (const auto& s : systems) {
                auto it = by_system.find(s);
                out += it == by_system.end() || it->second.n == 0 ? std::string(",") : fmt::format(",{:.2f}", it->second.*field);
            }
            out += '\n';
        }
    };
    for (const auto& [cluster, by_system] : per_cluster) emit_rows("cluster " + cluster, by_system);
    emit_rows("average", overall);
    return out;
}

EvalReport report(const std::vector<EvalRecord>& records) {
    if (records.empty()) throw Error(Errc::EmptyRecords, "no evaluation records");
    std::map<std::string, std::map<std::string, MeanAccumulator>> per_cluster;
    std::map<std::string, MeanAccumulator> overall;
    struct CostAcc {
        double prompt = 0, completion = 0, latency = 0;
        std::size_t n = 0, failures = 0;
    };
    std::map<std::string, CostAcc> cost;

    for (const auto* r : sorted_view(records)) {
        const std::string sys(system_name(r->system));
        auto& c = cost[sys];
        if (r->error) ++c.failures;
        if (r->answered) {
            c.prompt += static_cast<double>(r->usage.prompt_tokens);
            c.completion += static_cast<double>(r->usage.completion_tokens);
            c.latency += r->latency_ms;
            ++c.n;
        }
        if (r->scores) {
            per_cluster[r->cluster][sys].add(*r->scores);
            overall[sys].add(*r->scores);
        }
    }

    EvalReport out;
    for (const auto& [cluster, systems] : per_cluster) {
        for (const auto& [sys, acc] : systems) out.per_cluster[cluster][sys] = acc.means();
    }
    for (const auto& [sys, acc] : overall) out.overall[sys] = acc.means();
    for (const auto& [sys, c] : cost) {
        CostSummary s;
        s.n = c.n;
        s.failures = c.failures;
        if (c.n > 0) {
            const auto d = static_cast<double>(c.n);
            s.mean_prompt_tokens = c.prompt / d;
            s.mean_completion_tokens = c.completion / d;
            s.mean_latency_ms = c.latency / d;
        }
        out.cost[sys] = s;
    }
    return out;
}

void verify_report(const EvalReport& stored, const std::vector<EvalRecord>& records) {
    const auto fresh = report(records);
    auto fail = [](const std::string& what) {
        throw Error(Errc::CorruptDocument, "stored report disagrees with its records: " + what);
    };
    if (fresh.per_cluster.size() != stored.per_cluster.size()) fail("cluster set");
    for (const auto& [cluster, systems] : fresh.per_cluster) {
        auto it = stored.per_cluster.find(cluster);
        if (it == stored.per_cluster.end() || it->second.size() != systems.size()) fail("cluster " + cluster);
        for (const auto& [sys, m] : systems) {
            auto s = it->second.find(sys);
            if (s == it->second.end() || !means_match(m, s->second)) fail(cluster + "/" + sys);
        }
    }
    if (fresh.overall.size() != stored.overall.size()) fail("overall");
    for (const auto& [sys, m] : fresh.overall) {
        auto s = stored.overall.find(sys);
        if (s == stored.overall.end() || !means_match(m, s->second)) fail("overall/" + sys);
    }
    for (const auto& [sys, c] : fresh.cost) {
        auto s = stored.cost.find(sys);
        if (s == stored.cost.end() || s->second.n != c.n || !close(s->second.mean_prompt_tokens, c.mean_prompt_tokens) ||
            !close(s->second.mean_latency_ms, c.mean_latency_ms)) {
            fail("cost/" + sys);
        }
    }
}

json TimeCost::to_json() const {
    return {{"gateway_latency_ms", gateway_latency_ms},       {"baseline_latency_ms", baseline_latency_ms},
            {"speedup", speedup},                             {"gateway_prompt_tokens", gateway_prompt_tokens},
            {"baseline_prompt_tokens", baseline_prompt_tokens}, {"prompt_token_delta", prompt_token_delta}};
}

double speedup_ratio(double gateway_latency, double baseline_latency) {
    if (!(gateway_latency > 0.0)) {
        throw Error(Errc::EmptyInput, "gateway latency must be positive to form a speedup ratio");
    }
    return baseline_latency / gateway_latency;
}

TimeCost time_cost(const std::vector<EvalRecord>& records) {
    const auto rep = report(records);
    auto g = rep.cost.find("gateway");
    auto b = rep.cost.find("baseline");
    if (g == rep.cost.end() || g->second.n == 0) throw Error(Errc::MissingSystem, "no answered gateway records");
    if (b == rep.cost.end() || b->second.n == 0) throw Error(Errc::MissingSystem, "no answered baseline records");
    TimeCost t;
    t.gateway_latency_ms = g->second.mean_latency_ms;
    t.baseline_latency_ms = b->second.mean_latency_ms;
    t.speedup = speedup_ratio(t.gateway_latency_ms, t.baseline_latency_ms);
    t.gateway_prompt_tokens = g->second.mean_prompt_tokens;
    t.baseline_prompt_tokens = b->second.mean_prompt_tokens;
    t.prompt_token_delta = t.baseline_prompt_tokens - t.gateway_prompt_tokens;
    return t;
}

}  // namespace stylecqa
