#include "stylecqa/style_model.hpp"

#include <algorithm>
#include <cctype>

#include <fmt/format.h>

#include "stylecqa/error.hpp"
#include "stylecqa/parallel.hpp"

namespace stylecqa {
namespace {

std::string lower(std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return out;
}

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

}  // namespace

std::string_view dimension_name(Dimension d) noexcept {
    switch (d) {
        case Dimension::Semantic: return "semantic";
        case Dimension::Grammatical: return "grammatical";
        case Dimension::Syntactic: return "syntactic";
        case Dimension::Lexical: return "lexical";
    }
    return "semantic";
}

Dimension parse_dimension(std::string_view name) {
    const auto n = lower(name);
    if (n == "semantic") return Dimension::Semantic;
    if (n == "grammatical") return Dimension::Grammatical;
    if (n == "syntactic") return Dimension::Syntactic;
    if (n == "lexical") return Dimension::Lexical;
    throw Error(Errc::ConfigError, fmt::format("unknown style dimension '{}'", name));
}

std::size_t StyleStandard::label_index(std::string_view label) const {
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] == label) return i;
    }
    return std::string::npos;
}

StandardRegistry::StandardRegistry(std::vector<StyleStandard> standards)
    : standards_(std::move(standards)) {
    for (std::size_t i = 0; i < standards_.size(); ++i) {
        const auto& s = standards_[i];
        if (s.id.empty()) throw Error(Errc::ConfigError, "style standard with empty id");
        if (s.labels.empty()) {
            throw Error(Errc::ConfigError, fmt::format("standard '{}' has an empty vocabulary", s.id));
        }
        std::set<std::string> seen(s.labels.begin(), s.labels.end());
        if (seen.size() != s.labels.size()) {
            throw Error(Errc::ConfigError, fmt::format("standard '{}' has duplicate labels", s.id));
        }
        if (!index_.emplace(s.id, i).second) {
            throw Error(Errc::ConfigError, fmt::format("duplicate standard id '{}'", s.id));
        }
    }
}

StandardRegistry StandardRegistry::defaults() {
    using D = Dimension;
    return StandardRegistry({
        {"intention_type", D::Semantic, "intention type", {"inform", "advise", "persuade", "socialize"}},
        {"authority", D::Semantic, "degree of authority", {"authoritative", "neutral", "tentative"}},
        {"omission", D::Grammatical, "omitted features", {"frequent", "rare"}},
        {"inversion", D::Grammatical, "use of inversion", {"present", "absent"}},
        {"passive_voice", D::Grammatical, "use of passive voice", {"present", "absent"}},
        {"sentence_complexity", D::Syntactic, "sentence complexity", {"simple", "compound", "complex"}},
        {"rhetoric", D::Syntactic, "rhetorical features",
         {"none", "rhetorical_question", "metaphor", "parallelism"}},
        {"cohesion", D::Syntactic, "cohesion mechanisms", {"explicit", "implicit"}},
        {"lexical_complexity", D::Lexical, "lexical complexity", {"plain", "moderate", "sophisticated"}},
        {"emotional_polarity", D::Lexical, "emotional polarity", {"positive", "neutral", "negative"}},
        {"emoji_frequency", D::Lexical, "frequency of emojis", {"none", "occasional", "frequent"}},
        {"formality", D::Lexical, "degree of formality", {"formal", "neutral", "informal"}},
    });
}

StandardRegistry StandardRegistry::from_json(const json& doc) {
    try {
        const json& list = doc.is_object() ? doc.at("standards") : doc;
        std::vector<StyleStandard> standards;
        for (const auto& e : list) {
            StyleStandard s;
            s.id = e.at("id").get<std::string>();
            s.dimension = parse_dimension(e.at("dimension").get<std::string>());
            s.name = e.value("name", s.id);
            s.labels = e.at("labels").get<std::vector<std::string>>();
            standards.push_back(std::move(s));
        }
        return StandardRegistry(std::move(standards));
    } catch (const json::exception& e) {
        throw Error(Errc::ConfigError, fmt::format("bad standards registry: {}", e.what()));
    }
}

StandardRegistry StandardRegistry::load(const std::filesystem::path& path) {
    auto doc = json::parse(read_file(path), nullptr, false);
    if (doc.is_discarded()) {
        throw Error(Errc::ConfigError, fmt::format("{} is not valid JSON", path.string()));
    }
    return from_json(doc);
}

json StandardRegistry::to_json() const {
    json list = json::array();
    for (const auto& s : standards_) {
        list.push_back({{"id", s.id},
                        {"dimension", dimension_name(s.dimension)},
                        {"name", s.name},
                        {"labels", s.labels}});
    }
    return {{"standards", list}};
}

const StyleStandard* StandardRegistry::find(std::string_view id) const {
    auto it = index_.find(id);
    return it == index_.end() ? nullptr : &standards_[it->second];
}

const StyleStandard& StandardRegistry::at(std::string_view id) const {
    if (const auto* s = find(id)) return *s;
    throw Error(Errc::RegistryMismatch, fmt::format("standard '{}' is not registered", id));
}

std::vector<std::string> StandardRegistry::ids() const {
    std::vector<std::string> out;
    out.reserve(standards_.size());
    for (const auto& s : standards_) out.push_back(s.id);
    return out;
}

std::string StandardRegistry::hash() const {
    return sha256_hex(to_json().dump());
}

void validate_labels(const StyleLabelVector& labels, const StandardRegistry& registry,
                     bool require_total) {
    for (const auto& [id, label] : labels) {
        const auto* s = registry.find(id);
        if (!s) throw Error(Errc::RegistryMismatch, fmt::format("standard '{}' is not registered", id));
        if (s->label_index(label) == std::string::npos) {
            throw Error(Errc::RegistryMismatch,
                        fmt::format("label '{}' is not in the vocabulary of '{}'", label, id));
        }
    }
    if (require_total && labels.size() != registry.size()) {
        throw Error(Errc::RegistryMismatch,
                    fmt::format("label vector covers {} of {} standards", labels.size(), registry.size()));
    }
}

json labels_to_json(const StyleLabelVector& labels) {
    json j = json::object();
    for (const auto& [k, v] : labels) j[k] = v;
    return j;
}

StyleLabelVector labels_from_json(const json& j) {
    StyleLabelVector out;
    for (const auto& [k, v] : j.items()) out[k] = v.get<std::string>();
    return out;
}

std::vector<StyleCorpus> corpora_from_rows(const std::vector<json>& rows) {
    std::vector<StyleCorpus> out;
    std::map<std::string, std::size_t> index;
    for (const auto& row : rows) {
        try {
            const auto author = row.at("author_id").get<std::string>();
            auto [it, inserted] = index.emplace(author, out.size());
            if (inserted) out.push_back({author, row.value("domain", ""), {}});
            out[it->second].pairs.push_back(
                {row.value("comment", ""), row.at("reply").get<std::string>()});
        } catch (const json::exception& e) {
            throw Error(Errc::CorruptDocument, fmt::format("bad corpus row: {}", e.what()));
        }
    }
    return out;
}

json StyleProfile::to_json() const {
    return {{"author_id", author_id},
            {"labels", labels_to_json(labels)},
            {"support", support},
            {"tie_flags", std::vector<std::string>(tie_flags.begin(), tie_flags.end())},
            {"defaulted", std::vector<std::string>(defaulted.begin(), defaulted.end())}};
}

StyleProfile StyleProfile::from_json(const json& j) {
    try {
        StyleProfile p;
        p.author_id = j.at("author_id").get<std::string>();
        p.labels = labels_from_json(j.at("labels"));
        p.support = j.at("support").get<std::size_t>();
        for (const auto& t : j.value("tie_flags", json::array())) p.tie_flags.insert(t.get<std::string>());
        for (const auto& t : j.value("defaulted", json::array())) p.defaulted.insert(t.get<std::string>());
        if (p.support < 1) throw Error(Errc::CorruptDocument, "profile support must be >= 1");
        return p;
    } catch (const json::exception& e) {
        throw Error(Errc::CorruptDocument, fmt::format("bad profile record: {}", e.what()));
    }
}

std::optional<std::string> coerce_label(std::string_view raw, const StyleStandard& standard) {
    const auto want = lower(trim(raw));
    for (const auto& label : standard.labels) {
        if (lower(label) == want) return label;
    }
    return std::nullopt;
}

std::string labeling_system_prompt() {
    return "You annotate the writing style of an author's reply to a user comment. "
           "For every standard, choose exactly one label from its candidate list. "
           "Answer with one line per standard in the form standard_id=label and nothing else.";
}

std::string labeling_user_prompt(const ReplyPair& pair, const StandardRegistry& registry) {
    std::string out = "Standards:\n";
    for (const auto& s : registry.standards()) {
        out += fmt::format("- {} ({}, {}): {}\n", s.id, dimension_name(s.dimension), s.name,
                           fmt::join(s.labels, " | "));
    }
    out += fmt::format("\nUser comment:\n{}\n\nAuthor reply:\n{}\n", pair.comment, pair.reply);
    return out;
}

PairLabeling parse_labeling(std::string_view response, const StandardRegistry& registry) {
    std::map<std::string, std::string> raw;
    const auto body = trim(response);
    if (body.find('=') != std::string_view::npos) {
        for (auto line : split(body, '\n')) {
            line = trim(line);
            const auto eq = line.find('=');
            if (eq == std::string_view::npos) continue;
            auto key = lower(trim(line.substr(0, eq)));
            if (!key.empty() && key.front() == '-') key = lower(trim(std::string_view(key).substr(1)));
            raw.emplace(std::move(key), std::string(trim(line.substr(eq + 1))));
        }
    } else {
        const auto parts = split(body, '/');
        for (std::size_t i = 0; i < parts.size() && i < registry.size(); ++i) {
            raw.emplace(lower(registry.standards()[i].id), std::string(trim(parts[i])));
        }
    }

    PairLabeling out;
    for (const auto& s : registry.standards()) {
        if (s.labels.size() == 1) {
            out.labels[s.id] = s.labels.front();
            continue;
        }
        auto it = raw.find(lower(s.id));
        std::optional<std::string> label;
        if (it != raw.end()) label = coerce_label(it->second, s);
        if (label) {
            out.labels[s.id] = *label;
        } else {
            out.unlabeled.push_back(s.id);
        }
    }
    return out;
}

PairLabeling label_pair(const ReplyPair& pair, const StandardRegistry& registry, ChatBackend& llm) {
    if (pair.reply.empty()) {
        throw Error(Errc::EmptyInput, "cannot label an empty reply");
    }
    auto req = ChatRequest::single(labeling_system_prompt(), labeling_user_prompt(pair, registry), "label");
    req.temperature = 0.0;
    req.max_tokens = 256;
    return parse_labeling(llm.complete(req).text, registry);
}

std::vector<PairLabeling> label_corpus(const StyleCorpus& corpus, const StandardRegistry& registry,
                                       ChatBackend& llm, std::size_t max_in_flight) {
    std::vector<PairLabeling> out(corpus.pairs.size());
    parallel_for(corpus.pairs.size(), max_in_flight,
                 [&](std::size_t i) { out[i] = label_pair(corpus.pairs[i], registry, llm); });
    return out;
}

StyleProfile aggregate_profile(std::string_view author_id, const std::vector<StyleLabelVector>& per_pair,
                               const StandardRegistry& registry) {
    if (per_pair.empty()) {
        throw Error(Errc::EmptyInput, fmt::format("no labeled pairs for author '{}'", author_id));
    }
    for (const auto& v : per_pair) validate_labels(v, registry, /*require_total=*/false);

    StyleProfile profile;
    profile.author_id = std::string(author_id);
    profile.support = per_pair.size();
    for (const auto& s : registry.standards()) {
        std::vector<std::size_t> counts(s.labels.size(), 0);
        std::size_t votes = 0;
        for (const auto& v : per_pair) {
            if (auto it = v.find(s.id); it != v.end()) {
                ++counts[s.label_index(it->second)];
                ++votes;
            }
        }
        if (votes == 0) {
            profile.labels[s.id] = s.labels.front();
            profile.defaulted.insert(s.id);
            continue;
        }
        // max_element returns the first maximum, i.e. the earliest vocabulary label.
        const auto best = std::max_element(counts.begin(), counts.end());
        const auto winners = std::count(counts.begin(), counts.end(), *best);
        profile.labels[s.id] = s.labels[static_cast<std::size_t>(best - counts.begin())];
        if (winners > 1) profile.tie_flags.insert(s.id);
    }
    return profile;
}

std::size_t profile_distance(const StyleLabelVector& a, const StyleLabelVector& b) {
    if (a.size() != b.size()) {
        throw Error(Errc::RegistryMismatch, "label vectors cover different standards");
    }
    std::size_t d = 0;
    auto ia = a.begin();
    auto ib = b.begin();
    for (; ia != a.end(); ++ia, ++ib) {
        if (ia->first != ib->first) {
            throw Error(Errc::RegistryMismatch, "label vectors cover different standards");
        }
        if (ia->second != ib->second) ++d;
    }
    return d;
}

}  // namespace stylecqa
