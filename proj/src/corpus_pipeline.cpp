#include "stylecqa/corpus_pipeline.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <random>

#include <fmt/format.h>

#include "stylecqa/error.hpp"
#include "stylecqa/parallel.hpp"

namespace stylecqa {
namespace {

std::string_view trim(std::string_view s) {
    const auto first = s.find_first_not_of(" \t\r\n");
    if (first == std::string_view::npos) return {};
    const auto last = s.find_last_not_of(" \t\r\n");
    return s.substr(first, last - first + 1);
}

std::vector<std::string_view> split(std::string_view s, char sep) {
    std::vector<std::string_view> parts;
    std::size_t start = 0;
    while (true) {
        const auto pos = s.find(sep, start);
        parts.push_back(s.substr(start, pos == std::string_view::npos ? pos : pos - start));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return parts;
}

// Strips list markers such as "- ", "* ", "1. ", "2) ".
std::string strip_list_marker(std::string_view line) {
    line = trim(line);
    if (line.starts_with("- ") || line.starts_with("* ")) return std::string(trim(line.substr(2)));
    std::size_t i = 0;
    while (i < line.size() && line[i] >= '0' && line[i] <= '9') ++i;
    if (i > 0 && i < line.size() && (line[i] == '.' || line[i] == ')')) {
        return std::string(trim(line.substr(i + 1)));
    }
    return std::string(line);
}

std::vector<std::string> non_empty_lines(std::string_view text, std::size_t limit) {
    std::vector<std::string> out;
    for (auto line : split(text, '\n')) {
        auto item = strip_list_marker(line);
        if (item.empty()) continue;
        out.push_back(std::move(item));
        if (out.size() == limit) break;
    }
    return out;
}

std::string standards_block(const StyleLabelVector& labels, const StandardRegistry& registry) {
    std::string out;
    for (const auto& s : registry.standards()) {
        auto it = labels.find(s.id);
        out += fmt::format("- {} ({}): {}\n", s.name, dimension_name(s.dimension),
                           it == labels.end() ? std::string("unspecified") : it->second);
    }
    return out;
}

std::optional<double> parse_number(std::string_view s) {
    s = trim(s);
    if (s.empty()) return std::nullopt;
    double value = 0.0;
    const auto* end = s.data() + s.size();
    auto [ptr, ec] = std::from_chars(s.data(), end, value);
    if (ec != std::errc() || ptr != end || !std::isfinite(value)) return std::nullopt;
    return value;
}

// Uniform integer in [0, n) by rejection from the raw 64-bit stream.
std::size_t uniform_index(std::mt19937_64& rng, std::size_t n) {
    const std::uint64_t bound = static_cast<std::uint64_t>(n);
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                std::numeric_limits<std::uint64_t>::max() % bound;
    std::uint64_t x = rng();
    while (x >= limit) x = rng();
    return static_cast<std::size_t>(x % bound);
}

constexpr const char* kForwardSystem =
    "You write question-answer pairs grounded in an article segment. Every question must be answerable "
    "from the segment alone and every answer must use only facts stated in it. Output each pair as a "
    "line starting with 'Q:' followed by a line starting with 'A:'.";

constexpr const char* kRolesSystem =
    "You imagine realistic readers of an official account. List distinct user roles, one per line, "
    "with no other text.";

constexpr const char* kQuestionsSystem =
    "You write information-seeking questions a given reader would ask an official account. List "
    "the questions one per line with no other text.";

constexpr const char* kAnswerSystem =
    "You answer a reader's question using only the provided context. Be accurate and concise.";

constexpr const char* kRewriteSystem =
    "You rewrite answers into the voice of a specific group of authors. Preserve every fact of the "
    "original answer and add none. Match the target style labels and the tone of the example "
    "replies. Output only the rewritten answer.";

constexpr const char* kJudgeSystem =
    "You grade a stylized answer on four metrics from 1 to 5: contextual alignment with the context "
    "(C-A), relevance to the question (Q-A), strength of the target style (S-A) and fluency (F). "
    "Reply with exactly one line in the form C-A=x;Q-A=x;S-A=x;F=x and nothing else.";

}  // namespace

std::string_view provenance_name(Provenance p) noexcept {
    switch (p) {
        case Provenance::ForwardThinking: return "forward_thinking";
        case Provenance::BottomUp: return "bottom_up";
        case Provenance::LiveUser: return "live_user";
    }
    return "forward_thinking";
}

Provenance parse_provenance(std::string_view name) {
    if (name == "forward_thinking") return Provenance::ForwardThinking;
    if (name == "bottom_up") return Provenance::BottomUp;
    if (name == "live_user") return Provenance::LiveUser;
    throw Error(Errc::CorruptDocument, fmt::format("unknown provenance '{}'", name));
}

json CqaTriplet::to_json() const {
    return {{"id", id},
            {"account_id", account_id},
            {"context_refs", context_refs},
            {"context", context},
            {"question", question},
            {"answer", answer},
            {"provenance", provenance_name(provenance)}};
}

CqaTriplet CqaTriplet::from_json(const json& j) {
    try {
        CqaTriplet t;
        t.id = j.at("id").get<std::string>();
        t.account_id = j.at("account_id").get<std::string>();
        t.context_refs = j.at("context_refs").get<std::vector<std::string>>();
        t.context = j.at("context").get<std::string>();
        t.question = j.at("question").get<std::string>();
        t.answer = j.at("answer").get<std::string>();
        t.provenance = parse_provenance(j.at("provenance").get<std::string>());
        if (t.provenance != Provenance::LiveUser && t.context_refs.empty()) {
            throw Error(Errc::CorruptDocument, fmt::format("triplet '{}' has no context", t.id));
        }
        return t;
    } catch (const json::exception& e) {
        throw Error(Errc::CorruptDocument, fmt::format("bad CQA record: {}", e.what()));
    }
}

QualityScores QualityScores::make(double c_a, double q_a, double s_a, double fluency,
                                  const ScoreWeights& weights) {
    for (double v : {c_a, q_a, s_a, fluency}) {
        if (!(v >= 1.0 && v <= 5.0)) {
            throw Error(Errc::UnparsableJudgment, fmt::format("score {} outside [1, 5]", v));
        }
    }
    QualityScores s{c_a, q_a, s_a, fluency, 0.0};
    s.aggregate = weights.c_a * c_a + weights.q_a * q_a + weights.s_a * s_a + weights.fluency * fluency;
    return s;
}

json QualityScores::to_json() const {
    return {{"c_a", c_a}, {"q_a", q_a}, {"s_a", s_a}, {"fluency", fluency}, {"aggregate", aggregate}};
}

QualityScores QualityScores::from_json(const json& j, const ScoreWeights& weights) {
    QualityScores s;
    try {
        s = make(j.at("c_a").get<double>(), j.at("q_a").get<double>(), j.at("s_a").get<double>(),
                 j.at("fluency").get<double>(), weights);
        const double stored = j.at("aggregate").get<double>();
        if (std::abs(stored - s.aggregate) > 1e-9) {
            throw Error(Errc::CorruptDocument,
                        fmt::format("stored aggregate {} != recomputed {}", stored, s.aggregate));
        }
    } catch (const json::exception& e) {
        throw Error(Errc::CorruptDocument, fmt::format("bad score record: {}", e.what()));
    } catch (const Error& e) {
        if (e.code() == Errc::UnparsableJudgment) throw Error(Errc::CorruptDocument, e.what());
        throw;
    }
    return s;
}

std::string CqsaInstance::id() const {
    return cqa_id + "@" + cluster.key();
}

json CqsaInstance::to_json() const {
    json ex = json::array();
    for (const auto& e : exemplars_used) ex.push_back({{"author_id", e.author_id}, {"pair_index", e.pair_index}});
    json j = {{"cqa_id", cqa_id},
              {"cluster", cluster.to_json()},
              {"stylized_answer", stylized_answer},
              {"exemplars_used", ex}};
    j["scores"] = scores ? scores->to_json() : json(nullptr);
    return j;
}

CqsaInstance CqsaInstance::from_json(const json& j, const ScoreWeights& weights) {
    try {
        CqsaInstance c;
        c.cqa_id = j.at("cqa_id").get<std::string>();
        c.cluster = ClusterId::from_json(j.at("cluster"));
        c.stylized_answer = j.at("stylized_answer").get<std::string>();
        if (c.stylized_answer.empty()) {
            throw Error(Errc::CorruptDocument, fmt::format("instance '{}' has an empty answer", c.id()));
        }
        if (j.contains("scores") && !j["scores"].is_null()) {
            c.scores = QualityScores::from_json(j["scores"], weights);
        }
        for (const auto& e : j.value("exemplars_used", json::array())) {
            c.exemplars_used.push_back({e.at("author_id").get<std::string>(), e.at("pair_index").get<std::size_t>()});
        }
        return c;
    } catch (const json::exception& e) {
        throw Error(Errc::CorruptDocument, fmt::format("bad CQSA record: {}", e.what()));
    }
}

ExemplarPool exemplar_pool_from(const std::vector<StyleCorpus>& corpora) {
    ExemplarPool pool;
    for (const auto& c : corpora) {
        auto& pairs = pool[c.author_id];
        pairs.insert(pairs.end(), c.pairs.begin(), c.pairs.end());
    }
    return pool;
}

std::vector<std::pair<std::string, std::string>> parse_qa_blocks(std::string_view text) {
    std::vector<std::pair<std::string, std::string>> out;
    std::optional<std::string> question;
    std::optional<std::string> answer;
    auto flush = [&] {
        if (question && answer) {
            auto q = std::string(trim(*question));
            auto a = std::string(trim(*answer));
            if (!q.empty() && !a.empty()) out.emplace_back(std::move(q), std::move(a));
        }
        question.reset();
        answer.reset();
    };
    for (auto line : split(text, '\n')) {
        const auto t = trim(line);
        if (t.starts_with("Q:")) {
            flush();
            question = std::string(t.substr(2));
        } else if (t.starts_with("A:") && question && !answer) {
            answer = std::string(t.substr(2));
        } else if (answer) {
            *answer += '\n';
            *answer += t;
        } else if (question && !t.empty()) {
            *question += ' ';
            *question += t;
        }
    }
    flush();
    return out;
}

GenerationResult gen_cqa_forward(const std::string& account_id, const std::vector<ArticleChunk>& chunks,
                                 ChatBackend& llm, std::size_t max_in_flight) {
    std::vector<std::vector<std::pair<std::string, std::string>>> parsed(chunks.size());
    parallel_for(chunks.size(), max_in_flight, [&](std::size_t i) {
        auto req = ChatRequest::single(kForwardSystem,
                                       fmt::format("Article segment:\n{}\n\nWrite question-answer pairs.",
                                                   chunks[i].text),
                                       "cqa-forward");
        parsed[i] = parse_qa_blocks(llm.complete(req).text);
    });

    GenerationResult result;
    for (std::size_t i = 0; i < chunks.size(); ++i) {
        if (parsed[i].empty()) {
            ++result.malformed;
            continue;
        }
        for (std::size_t j = 0; j < parsed[i].size(); ++j) {
            CqaTriplet t;
            t.id = fmt::format("fw:{}:{}:{}", account_id, chunks[i].chunk_id, j);
            t.account_id = account_id;
            t.context_refs = {chunks[i].chunk_id};
            t.context = chunks[i].text;
            t.question = std::move(parsed[i][j].first);
            t.answer = std::move(parsed[i][j].second);
            t.provenance = Provenance::ForwardThinking;
            result.triplets.push_back(std::move(t));
        }
    }
    return result;
}

GenerationResult gen_cqa_bottom_up(const std::string& account_id, const std::string& domain,
                                   ChatBackend& llm, const Retriever& retriever,
                                   const BottomUpOptions& options) {
    if (!retriever.has_account(account_id)) {
        throw Error(Errc::UnknownAccount, fmt::format("account '{}' is not indexed", account_id));
    }
    GenerationResult result;
    auto roles_req = ChatRequest::single(
        kRolesSystem,
        fmt::format("Account domain: {}\nList {} representative user roles.", domain, options.roles), "roles");
    const auto roles = non_empty_lines(llm.complete(roles_req).text, options.roles);

    for (std::size_t r = 0; r < roles.size(); ++r) {
        auto q_req = ChatRequest::single(
            kQuestionsSystem,
            fmt::format("Account domain: {}\nUser role: {}\nList {} questions this user would ask.", domain,
                        roles[r], options.questions_per_role),
            "questions");
        const auto questions = non_empty_lines(llm.complete(q_req).text, options.questions_per_role);
        for (std::size_t q = 0; q < questions.size(); ++q) {
            const auto hits = retriever.retrieve(account_id, questions[q], options.top_n);
            if (hits.chunks.empty()) {
                ++result.retrieval_misses;
                continue;
            }
            CqaTriplet t;
            t.id = fmt::format("bu:{}:{}:{}", account_id, r, q);
            t.account_id = account_id;
            for (const auto& h : hits.chunks) {
                t.context_refs.push_back(h.chunk.chunk_id);
                if (!t.context.empty()) t.context += "\n\n";
                t.context += h.chunk.text;
            }
            t.question = questions[q];
            auto a_req = ChatRequest::single(
                kAnswerSystem, fmt::format("Context:\n{}\n\nQuestion: {}", t.context, t.question), "answer");
            t.answer = std::string(trim(llm.complete(a_req).text));
            if (t.answer.empty()) {
                ++result.malformed;
                continue;
            }
            t.provenance = Provenance::BottomUp;
            result.triplets.push_back(std::move(t));
        }
    }
    return result;
}

CqsaTarget target_for(const StyleTree& tree, const ClusterId& cluster, std::size_t m, std::uint64_t seed) {
    const auto* node = tree.find_node(cluster.node_id);
    if (!node || !node->is_leaf()) {
        throw Error(Errc::UnknownCluster, fmt::format("cluster {} is not a leaf", cluster.key()));
    }
    return {cluster, node->profile, std::vector<std::string>(node->members.begin(), node->members.end()), m, seed};
}

std::vector<ExemplarRef> sample_exemplars(const CqaTriplet& cqa, const CqsaTarget& target,
                                          const ExemplarPool& pool) {
    std::vector<std::string> authors;
    for (const auto& a : target.authors) {
        if (auto it = pool.find(a); it != pool.end() && !it->second.empty()) authors.push_back(a);
    }
    std::sort(authors.begin(), authors.end());
    authors.erase(std::unique(authors.begin(), authors.end()), authors.end());
    if (authors.empty()) {
        throw Error(Errc::EmptyExemplarPool,
                    fmt::format("cluster {} has no author with reply history", target.cluster.key()));
    }
    std::mt19937_64 rng(target.seed ^ fnv1a64(cqa.id + "@" + target.cluster.key()));
    std::vector<ExemplarRef> out;
    out.reserve(target.m);
    for (std::size_t i = 0; i < target.m; ++i) {
        const auto& author = authors[uniform_index(rng, authors.size())];
        out.push_back({author, uniform_index(rng, pool.at(author).size())});
    }
    return out;
}

std::string cqsa_prompt(const CqaTriplet& cqa, const CqsaTarget& target, const StandardRegistry& registry,
                        const ExemplarPool& pool, const std::vector<ExemplarRef>& exemplars) {
    std::string out = fmt::format("Context:\n{}\n\nQuestion:\n{}\n\nOriginal answer:\n{}\n\n", cqa.context,
                                  cqa.question, cqa.answer);
    out += "Target style labels:\n";
    out += standards_block(target.labels, registry);
    out += "\nExample replies from this group of authors:\n";
    for (std::size_t i = 0; i < exemplars.size(); ++i) {
        const auto& pair = pool.at(exemplars[i].author_id).at(exemplars[i].pair_index);
        out += fmt::format("[{}] Comment: {}\n[{}] Reply: {}\n", i + 1, pair.comment, i + 1, pair.reply);
    }
    out += "\nRewrite the original answer in this style.";
    return out;
}

CqsaInstance gen_cqsa(const CqaTriplet& cqa, const CqsaTarget& target, const StandardRegistry& registry,
                      const ExemplarPool& pool, ChatBackend& llm) {
    auto exemplars = sample_exemplars(cqa, target, pool);
    auto req = ChatRequest::single(kRewriteSystem, cqsa_prompt(cqa, target, registry, pool, exemplars), "cqsa");
    auto text = std::string(trim(llm.complete(req).text));
    if (text.empty()) {
        throw Error(Errc::MalformedGeneration, fmt::format("empty rewrite for {}", cqa.id));
    }
    CqsaInstance inst;
    inst.cqa_id = cqa.id;
    inst.cluster = target.cluster;
    inst.stylized_answer = std::move(text);
    inst.exemplars_used = std::move(exemplars);
    return inst;
}

QualityScores parse_judgment(std::string_view text, const ScoreWeights& weights) {
    const auto body = trim(text);
    auto fail = [&](std::string_view why) {
        return Error(Errc::UnparsableJudgment, fmt::format("judgment '{}': {}", body, why));
    };
    std::optional<double> ca, qa, sa, fl;
    if (body.find('=') != std::string_view::npos) {
        const auto fields = split(body, ';');
        if (fields.size() != 4) throw fail("expected four fields");
        for (auto field : fields) {
            const auto eq = field.find('=');
            if (eq == std::string_view::npos) throw fail("field without '='");
            const auto key = trim(field.substr(0, eq));
            auto value = parse_number(field.substr(eq + 1));
            if (!value) throw fail("non-numeric score");
            std::optional<double>* slot = key == "C-A" ? &ca : key == "Q-A" ? &qa : key == "S-A" ? &sa
                                        : key == "F"   ? &fl : nullptr;
            if (!slot) throw fail("unknown metric key");
            if (slot->has_value()) throw fail("repeated metric key");
            *slot = value;
        }
    } else {
        const auto fields = split(body, ',');
        if (fields.size() != 4) throw fail("expected four comma-separated scores");
        std::optional<double>* slots[] = {&ca, &qa, &sa, &fl};
        for (std::size_t i = 0; i < 4; ++i) {
            *slots[i] = parse_number(fields[i]);
            if (!*slots[i]) throw fail("non-numeric score");
        }
    }
    if (!ca || !qa || !sa || !fl) throw fail("missing metric");
    return QualityScores::make(*ca, *qa, *sa, *fl, weights);
}

std::string judge_prompt(const CqaTriplet& cqa, std::string_view answer, const StyleLabelVector& cluster_labels,
                         const StandardRegistry& registry) {
    return fmt::format("Context:\n{}\n\nQuestion:\n{}\n\nTarget style labels:\n{}\nAnswer to grade:\n{}\n",
                       cqa.context, cqa.question, standards_block(cluster_labels, registry), answer);
}

QualityScores judge_answer(const CqaTriplet& cqa, std::string_view answer, const StyleLabelVector& cluster_labels,
                           const StandardRegistry& registry, ChatBackend& llm, const ScoreWeights& weights) {
    auto req = ChatRequest::single(kJudgeSystem, judge_prompt(cqa, answer, cluster_labels, registry), "judge");
    req.temperature = 0.0;
    req.max_tokens = 32;
    return parse_judgment(llm.complete(req).text, weights);
}

QualityScores judge(const CqsaInstance& instance, const CqaTriplet& cqa, const StyleLabelVector& cluster_labels,
                    const StandardRegistry& registry, ChatBackend& llm, const ScoreWeights& weights) {
    return judge_answer(cqa, instance.stylized_answer, cluster_labels, registry, llm, weights);
}

bool ranks_before(const CqsaInstance& a, const CqsaInstance& b) {
    const auto& sa = *a.scores;
    const auto& sb = *b.scores;
    if (sa.aggregate != sb.aggregate) return sa.aggregate > sb.aggregate;
    if (sa.c_a != sb.c_a) return sa.c_a > sb.c_a;
    if (sa.q_a != sb.q_a) return sa.q_a > sb.q_a;
    if (sa.s_a != sb.s_a) return sa.s_a > sb.s_a;
    if (sa.fluency != sb.fluency) return sa.fluency > sb.fluency;
    return a.id() < b.id();
}

std::vector<CqsaInstance> select_top(const std::vector<CqsaInstance>& instances, std::size_t n) {
    for (const auto& inst : instances) {
        if (!inst.scores) {
            throw Error(Errc::UnscoredInstance, fmt::format("instance {} has no scores", inst.id()));
        }
    }
    std::vector<const CqsaInstance*> order;
    order.reserve(instances.size());
    for (const auto& inst : instances) order.push_back(&inst);
    const auto keep = std::min(n, order.size());
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(keep), order.end(),
                      [](const CqsaInstance* a, const CqsaInstance* b) { return ranks_before(*a, *b); });
    std::vector<CqsaInstance> out;
    out.reserve(keep);
    for (std::size_t i = 0; i < keep; ++i) out.push_back(*order[i]);
    return out;
}

std::vector<CqsaInstance> select_top_per_cluster(const std::vector<CqsaInstance>& instances, std::size_t n) {
    std::map<std::string, std::vector<CqsaInstance>> by_cluster;
    for (const auto& inst : instances) by_cluster[inst.cluster.key()].push_back(inst);
    std::vector<CqsaInstance> out;
    for (const auto& [_, group] : by_cluster) {
        auto top = select_top(group, n);
        out.insert(out.end(), std::make_move_iterator(top.begin()), std::make_move_iterator(top.end()));
    }
    return out;
}

}  // namespace stylecqa
