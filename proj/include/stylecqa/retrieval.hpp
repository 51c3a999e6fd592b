/// @file retrieval.hpp
/// @brief Article chunking and per-account BM25 retrieval.

#pragma once

#include <cstddef>
#include <map>
#include <memory>
#include <mutex>
#include <shared_mutex>
#include <string>
#include <vector>

#include "stylecqa/digest.hpp"

namespace stylecqa {

struct ArticleChunk {
    std::string account_id;
    std::string article_id;
    std::string chunk_id;  // "<article_id>#<position>"
    std::string text;
    std::size_t token_count = 0;
    std::size_t position = 0;

    json to_json() const;
    static ArticleChunk from_json(const json& j);
    friend bool operator==(const ArticleChunk&, const ArticleChunk&) = default;
};

struct Article {
    std::string article_id;
    std::string text;
};

struct ScoredChunk {
    ArticleChunk chunk;
    double score = 0.0;
};

struct RetrievalResult {
    std::vector<ScoredChunk> chunks;  // scores non-increasing
};

struct RetrievalParams {
    std::size_t max_chunk_tokens = 256;
    std::size_t top_n = 3;
    double k1 = 1.2;
    double b = 0.75;
};

/// Packs paragraphs (blank-line separated) greedily up to max_tokens;
/// oversized paragraphs fall back to sentences, oversized sentences to a
/// hard token split.
std::vector<std::string> chunk_text(const std::string& text, std::size_t max_tokens);

struct IngestStats {
    std::size_t chunks = 0;
    std::size_t replaced = 0;       // DuplicateArticleId
    std::size_t skipped_empty = 0;  // EmptyArticle
};

/// Immutable per-account BM25 snapshot.
class AccountIndex {
public:
    AccountIndex(std::vector<ArticleChunk> chunks, const RetrievalParams& params);

    RetrievalResult search(const std::string& query, std::size_t top_n) const;
    const std::vector<ArticleChunk>& chunks() const noexcept { return chunks_; }

private:
    std::vector<ArticleChunk> chunks_;
    std::vector<std::map<std::string, std::size_t>> term_freqs_;
    std::vector<std::size_t> lengths_;
    std::map<std::string, std::size_t> doc_freq_;
    double avg_length_ = 0.0;
    RetrievalParams params_;
};

class Retriever {
public:
    explicit Retriever(RetrievalParams params = {});

    /// Articles with an id already present replace the old chunks.
    IngestStats ingest(const std::string& account_id, const std::vector<Article>& articles);
    /// Loads pre-chunked records (as written by export_chunks).
    void load_chunks(const std::vector<ArticleChunk>& chunks);

    /// Throws UnknownAccount if the account has never been ingested.
    RetrievalResult retrieve(const std::string& account_id, const std::string& query,
                             std::size_t top_n) const;
    RetrievalResult retrieve(const std::string& account_id, const std::string& query) const {
        return retrieve(account_id, query, params_.top_n);
    }

    bool has_account(const std::string& account_id) const;
    std::shared_ptr<const AccountIndex> snapshot(const std::string& account_id) const;
    std::vector<ArticleChunk> export_chunks() const;
    const RetrievalParams& params() const noexcept { return params_; }

private:
    RetrievalParams params_;
    mutable std::shared_mutex mu_;
    std::map<std::string, std::shared_ptr<const AccountIndex>> accounts_;
    std::map<std::string, std::unique_ptr<std::mutex>> writer_locks_;
};

}  // namespace stylecqa
