#include "stylecqa/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "stylecqa/error.hpp"
#include "stylecqa/tokenize.hpp"

namespace stylecqa {
namespace {

std::string trim_copy(std::string_view s) {
    const auto first = s.find_first_not_of(" \t\r\n");
    if (first == std::string_view::npos) return {};
    const auto last = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(first, last - first + 1));
}

std::vector<std::string> split_paragraphs(const std::string& text) {
    std::vector<std::string> out;
    std::string current;
    std::size_t start = 0;
    while (start <= text.size()) {
        auto end = text.find('\n', start);
        if (end == std::string::npos) end = text.size();
        const auto line = std::string_view(text).substr(start, end - start);
        if (line.find_first_not_of(" \t\r") == std::string_view::npos) {
            if (auto p = trim_copy(current); !p.empty()) out.push_back(std::move(p));
            current.clear();
        } else {
            if (!current.empty()) current += '\n';
            current += line;
        }
        start = end + 1;
    }
    if (auto p = trim_copy(current); !p.empty()) out.push_back(std::move(p));
    return out;
}

bool ends_sentence(std::string_view text, std::size_t i, std::size_t& terminator_len) {
    static constexpr std::string_view kCjk[] = {"\xE3\x80\x82", "\xEF\xBC\x81", "\xEF\xBC\x9F"};
    for (auto t : kCjk) {
        if (text.substr(i, t.size()) == t) {
            terminator_len = t.size();
            return true;
        }
    }
    const char c = text[i];
    if (c == '.' || c == '!' || c == '?') {
        terminator_len = 1;
        return i + 1 == text.size() || text[i + 1] == ' ' || text[i + 1] == '\n' || text[i + 1] == '\t';
    }
    return false;
}

std::vector<std::string> split_sentences(const std::string& paragraph) {
    std::vector<std::string> out;
    std::size_t start = 0;
    for (std::size_t i = 0; i < paragraph.size();) {
        std::size_t len = 0;
        if (ends_sentence(paragraph, i, len)) {
            if (auto s = trim_copy(std::string_view(paragraph).substr(start, i + len - start)); !s.empty()) {
                out.push_back(std::move(s));
            }
            start = i + len;
            i += len;
        } else {
            ++i;
        }
    }
    if (auto s = trim_copy(std::string_view(paragraph).substr(start)); !s.empty()) out.push_back(std::move(s));
    return out;
}

std::vector<std::string> hard_split(const std::string& text, std::size_t max_tokens) {
    const auto tokens = tokenize(text);
    std::vector<std::string> out;
    for (std::size_t i = 0; i < tokens.size(); i += max_tokens) {
        const auto last = std::min(tokens.size(), i + max_tokens) - 1;
        const auto begin = static_cast<std::size_t>(tokens[i].text.data() - text.data());
        const auto end = static_cast<std::size_t>(tokens[last].text.data() - text.data()) + tokens[last].text.size();
        out.push_back(text.substr(begin, end - begin));
    }
    return out;
}

// Greedy packing of units (each already <= max_tokens) joined by sep.
void pack(const std::vector<std::string>& units, std::size_t max_tokens, std::string_view sep,
          std::vector<std::string>& out) {
    std::string current;
    std::size_t current_tokens = 0;
    for (const auto& unit : units) {
        const auto n = estimate_tokens(unit);
        if (!current.empty() && current_tokens + n > max_tokens) {
            out.push_back(std::move(current));
            current.clear();
            current_tokens = 0;
        }
        if (!current.empty()) current += sep;
        current += unit;
        current_tokens += n;
    }
    if (!current.empty()) out.push_back(std::move(current));
}

}  // namespace

json ArticleChunk::to_json() const {
    return {{"account_id", account_id}, {"article_id", article_id}, {"chunk_id", chunk_id},
            {"text", text},             {"token_count", token_count}, {"position", position}};
}

ArticleChunk ArticleChunk::from_json(const json& j) {
    try {
        return {j.at("account_id").get<std::string>(), j.at("article_id").get<std::string>(),
                j.at("chunk_id").get<std::string>(),   j.at("text").get<std::string>(),
                j.at("token_count").get<std::size_t>(), j.at("position").get<std::size_t>()};
    } catch (const json::exception& e) {
        throw Error(Errc::CorruptDocument, fmt::format("bad chunk record: {}", e.what()));
    }
}

std::vector<std::string> chunk_text(const std::string& text, std::size_t max_tokens) {
    max_tokens = std::max<std::size_t>(max_tokens, 1);
    std::vector<std::string> chunks;
    std::vector<std::string> pending;
    for (auto& paragraph : split_paragraphs(text)) {
        if (estimate_tokens(paragraph) == 0) continue;
        if (estimate_tokens(paragraph) <= max_tokens) {
            pending.push_back(std::move(paragraph));
            continue;
        }
        pack(pending, max_tokens, "\n\n", chunks);
        pending.clear();
        std::vector<std::string> sentences;
        for (auto& sentence : split_sentences(paragraph)) {
            if (estimate_tokens(sentence) <= max_tokens) {
                sentences.push_back(std::move(sentence));
            } else {
                for (auto& piece : hard_split(sentence, max_tokens)) sentences.push_back(std::move(piece));
            }
        }
        pack(sentences, max_tokens, " ", chunks);
    }
    pack(pending, max_tokens, "\n\n", chunks);
    return chunks;
}

AccountIndex::AccountIndex(std::vector<ArticleChunk> chunks, const RetrievalParams& params)
    : chunks_(std::move(chunks)), params_(params) {
    std::sort(chunks_.begin(), chunks_.end(), [](const ArticleChunk& a, const ArticleChunk& b) {
        return std::tie(a.article_id, a.position) < std::tie(b.article_id, b.position);
    });
    std::size_t total = 0;
    for (const auto& c : chunks_) {
        std::map<std::string, std::size_t> tf;
        const auto terms = index_terms(c.text);
        for (const auto& t : terms) ++tf[t];
        for (const auto& [t, _] : tf) ++doc_freq_[t];
        lengths_.push_back(terms.size());
        total += terms.size();
        term_freqs_.push_back(std::move(tf));
    }
    avg_length_ = chunks_.empty() ? 0.0 : static_cast<double>(total) / static_cast<double>(chunks_.size());
}

RetrievalResult AccountIndex::search(const std::string& query, std::size_t top_n) const {
    auto terms = index_terms(query);
    std::sort(terms.begin(), terms.end());
    terms.erase(std::unique(terms.begin(), terms.end()), terms.end());

    const auto n_docs = static_cast<double>(chunks_.size());
    std::vector<ScoredChunk> scored;
    for (std::size_t d = 0; d < chunks_.size(); ++d) {
        double score = 0.0;
        const double norm = avg_length_ > 0.0
                                ? 1.0 - params_.b + params_.b * static_cast<double>(lengths_[d]) / avg_length_
                                : 1.0;
        for (const auto& t : terms) {
            auto it = term_freqs_[d].find(t);
            if (it == term_freqs_[d].end()) continue;
            const auto df = static_cast<double>(doc_freq_.at(t));
            const double idf = std::log(1.0 + (n_docs - df + 0.5) / (df + 0.5));
            const auto tf = static_cast<double>(it->second);
            score += idf * tf * (params_.k1 + 1.0) / (tf + params_.k1 * norm);
        }
        if (score > 0.0) scored.push_back({chunks_[d], score});
    }
    // chunks_ is already in (article_id, position) order, so a stable sort on
    // score alone keeps the tie-break.
    std::stable_sort(scored.begin(), scored.end(),
                     [](const ScoredChunk& a, const ScoredChunk& b) { return a.score > b.score; });
    if (scored.size() > top_n) scored.resize(top_n);
    return {std::move(scored)};
}

Retriever::Retriever(RetrievalParams params) : params_(params) {}

IngestStats Retriever::ingest(const std::string& account_id, const std::vector<Article>& articles) {
    std::mutex* writer = nullptr;
    {
        std::unique_lock lock(mu_);
        auto& slot = writer_locks_[account_id];
        if (!slot) slot = std::make_unique<std::mutex>();
        writer = slot.get();
    }
    std::lock_guard account_lock(*writer);

    std::map<std::string, std::vector<ArticleChunk>> by_article;
    if (auto current = snapshot(account_id)) {
        for (const auto& c : current->chunks()) by_article[c.article_id].push_back(c);
    }

    IngestStats stats;
    std::set<std::string> seen_in_batch;
    for (const auto& article : articles) {
        auto pieces = chunk_text(article.text, params_.max_chunk_tokens);
        if (pieces.empty()) {
            ++stats.skipped_empty;
            spdlog::warn("account {}: article '{}' is empty, skipped", account_id, article.article_id);
            continue;
        }
        if (by_article.contains(article.article_id)) {
            ++stats.replaced;
            spdlog::warn("account {}: article '{}' already indexed, replacing", account_id, article.article_id);
        }
        std::vector<ArticleChunk> chunks;
        for (std::size_t i = 0; i < pieces.size(); ++i) {
            ArticleChunk c;
            c.account_id = account_id;
            c.article_id = article.article_id;
            c.chunk_id = fmt::format("{}#{}", article.article_id, i);
            c.token_count = estimate_tokens(pieces[i]);
            c.text = std::move(pieces[i]);
            c.position = i;
            chunks.push_back(std::move(c));
        }
        by_article[article.article_id] = std::move(chunks);
        seen_in_batch.insert(article.article_id);
    }

    for (const auto& id : seen_in_batch) stats.chunks += by_article[id].size();

    std::vector<ArticleChunk> all;
    for (auto& [_, chunks] : by_article) {
        for (auto& c : chunks) all.push_back(std::move(c));
    }
    auto index = std::make_shared<const AccountIndex>(std::move(all), params_);
    std::unique_lock lock(mu_);
    accounts_[account_id] = std::move(index);
    return stats;
}

void Retriever::load_chunks(const std::vector<ArticleChunk>& chunks) {
    std::map<std::string, std::vector<ArticleChunk>> by_account;
    for (const auto& c : chunks) by_account[c.account_id].push_back(c);
    std::unique_lock lock(mu_);
    for (auto& [account, list] : by_account) {
        accounts_[account] = std::make_shared<const AccountIndex>(std::move(list), params_);
    }
}

std::shared_ptr<const AccountIndex> Retriever::snapshot(const std::string& account_id) const {
    std::shared_lock lock(mu_);
    auto it = accounts_.find(account_id);
    return it == accounts_.end() ? nullptr : it->second;
}

bool Retriever::has_account(const std::string& account_id) const {
    return snapshot(account_id) != nullptr;
}

RetrievalResult Retriever::retrieve(const std::string& account_id, const std::string& query,
                                    std::size_t top_n) const {
    auto index = snapshot(account_id);
    if (!index) {
        throw Error(Errc::UnknownAccount, fmt::format("account '{}' has no article index", account_id));
    }
    return index->search(query, top_n);
}

std::vector<ArticleChunk> Retriever::export_chunks() const {
    std::shared_lock lock(mu_);
    std::vector<ArticleChunk> out;
    for (const auto& [_, index] : accounts_) {
        out.insert(out.end(), index->chunks().begin(), index->chunks().end());
    }
    return out;
}

}  // namespace stylecqa
