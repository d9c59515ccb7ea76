#pragma once

#include "stepchain/corpus.hpp"
#include "stepchain/embedding.hpp"

#include <cstddef>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

namespace stepchain {

enum class HitSource { lexical, vector, fused };

struct RetrievalHit {
    std::string chunk_id;
    double score = 0.0;
    std::size_t rank = 0; // 1-based
    HitSource source = HitSource::fused;
};

struct IndexParams {
    double k1 = 1.2;
    double b = 0.75;
    std::size_t rrf_k = 60;
    std::size_t fusion_depth = 50;
};

// BM25 inverted index half of the hybrid index.
struct LexicalIndex {
    // term -> (chunk ordinal, term frequency), chunk ordinals ascending
    std::unordered_map<std::string, std::vector<std::pair<std::size_t, std::size_t>>> postings;
    std::vector<std::size_t> doc_lengths; // per chunk ordinal, in terms
    double avg_doc_length = 0.0;
};

// Dense half: one unit vector per chunk, exhaustively scored.
struct VectorIndex {
    std::size_t dimension = 0;
    std::vector<Embedding> embeddings; // per chunk ordinal
};

// The global index over all chunks. Built once, immutable afterwards.
class Index {
public:
    static Index build(const std::vector<Chunk>& chunks, const EmbeddingProvider& embedder,
                       IndexParams params = {});

    std::vector<RetrievalHit> lexical_search(const std::string& query, std::size_t k) const;
    std::vector<RetrievalHit> vector_search(const std::string& query, std::size_t k,
                                            const EmbeddingProvider& embedder) const;
    std::vector<RetrievalHit> hybrid_search(const std::string& query, std::size_t k,
                                            const EmbeddingProvider* embedder = nullptr) const;

    // Hybrid search over the sub-question expanded with the frontier entity
    // names (deduplicated, lexicographic), skipping chunks already parsed
    // into the graph this run.
    std::vector<RetrievalHit> frontier_conditioned_search(
        const std::string& sub_question, const std::set<std::string>& frontier, std::size_t k,
        const std::set<std::string>& exclude_chunk_ids,
        const EmbeddingProvider* embedder = nullptr) const;

    const Chunk& chunk(const std::string& chunk_id) const;
    const std::vector<Chunk>& chunks() const { return chunks_; }
    std::size_t size() const { return chunks_.size(); }
    const IndexParams& params() const { return params_; }
    const LexicalIndex& lexical() const { return lexical_; }
    const VectorIndex& vectors() const { return vectors_; }

    void save(const std::filesystem::path& path) const;
    static Index load(const std::filesystem::path& path);

private:
    std::vector<Chunk> chunks_;
    std::unordered_map<std::string, std::size_t> ordinal_of_id_;
    LexicalIndex lexical_;
    VectorIndex vectors_;
    IndexParams params_;

    double bm25_score(const std::vector<std::string>& query_terms, std::size_t ordinal) const;
    std::vector<RetrievalHit> rank_all(std::vector<std::pair<std::size_t, double>> scored,
                                       std::size_t k, HitSource source) const;
};

// Query expansion used by frontier-conditioned retrieval: sub-question text
// followed by the frontier names, each appended once, lexicographic order.
std::string expand_query(const std::string& sub_question, const std::set<std::string>& frontier);

} // namespace stepchain
