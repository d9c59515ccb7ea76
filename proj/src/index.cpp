#include "stepchain/index.hpp"
#include "stepchain/errors.hpp"
#include "stepchain/text.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

namespace stepchain {

namespace {

constexpr char kMagic[8] = {'S', 'C', 'G', 'R', 'A', 'G', 'I', 'X'};
constexpr std::uint32_t kFormatVersion = 1;

} // namespace

Index Index::build(const std::vector<Chunk>& chunks, const EmbeddingProvider& embedder,
                   IndexParams params) {
    if (chunks.empty()) {
        throw ValidationError("cannot build an index over zero chunks");
    }
    Index index;
    index.params_ = params;
    index.chunks_ = chunks;
    for (std::size_t i = 0; i < index.chunks_.size(); ++i) {
        auto [it, inserted] = index.ordinal_of_id_.emplace(index.chunks_[i].chunk_id, i);
        if (!inserted) {
            throw ValidationError("duplicate chunk_id \"" + index.chunks_[i].chunk_id + "\"");
        }
    }

    std::size_t total_terms = 0;
    for (std::size_t i = 0; i < index.chunks_.size(); ++i) {
        const auto terms = text_terms(index.chunks_[i].text);
        index.lexical_.doc_lengths.push_back(terms.size());
        total_terms += terms.size();
        std::map<std::string, std::size_t> tf;
        for (const auto& t : terms) ++tf[t];
        for (const auto& [term, freq] : tf) {
            index.lexical_.postings[term].emplace_back(i, freq);
        }
    }
    index.lexical_.avg_doc_length =
        static_cast<double>(total_terms) / static_cast<double>(index.chunks_.size());

    index.vectors_.dimension = embedder.dimension();
    index.vectors_.embeddings.reserve(index.chunks_.size());
    for (const auto& chunk : index.chunks_) {
        Embedding v;
        try {
            v = embedder.embed(chunk.text);
        } catch (const Error&) {
            throw IndexingError("embedder failed on chunk \"" + chunk.chunk_id + "\"");
        }
        if (v.size() != index.vectors_.dimension) {
            throw IndexingError("embedder returned wrong dimension for chunk \"" + chunk.chunk_id +
                                "\"");
        }
        if (std::abs(dot(v, v) - 1.0f) > 1e-5f) {
            throw IndexingError("embedder produced a non-unit vector for chunk \"" +
                                chunk.chunk_id + "\"");
        }
        index.vectors_.embeddings.push_back(std::move(v));
    }
    return index;
}

const Chunk& Index::chunk(const std::string& chunk_id) const {
    auto it = ordinal_of_id_.find(chunk_id);
    if (it == ordinal_of_id_.end()) {
        throw NotFoundError("unknown chunk_id \"" + chunk_id + "\"");
    }
    return chunks_[it->second];
}

// Okapi BM25 with the smoothed non-negative idf ln(1 + (N - df + 0.5)/(df + 0.5)).
// Query terms are counted with multiplicity.
double Index::bm25_score(const std::vector<std::string>& query_terms, std::size_t ordinal) const {
    const double n_chunks = static_cast<double>(chunks_.size());
    const double dl = static_cast<double>(lexical_.doc_lengths[ordinal]);
    const double len_norm = 1.0 - params_.b + params_.b * dl / lexical_.avg_doc_length;
    double score = 0.0;
    for (const auto& term : query_terms) {
        auto it = lexical_.postings.find(term);
        if (it == lexical_.postings.end()) continue;
        const auto& plist = it->second;
        auto pit = std::lower_bound(plist.begin(), plist.end(), ordinal,
                                    [](const auto& entry, std::size_t ord) { return entry.first < ord; });
        if (pit == plist.end() || pit->first != ordinal) continue;
        const double df = static_cast<double>(plist.size());
        const double tf = static_cast<double>(pit->second);
        const double idf = std::log(1.0 + (n_chunks - df + 0.5) / (df + 0.5));
        score += idf * tf * (params_.k1 + 1.0) / (tf + params_.k1 * len_norm);
    }
    return score;
}

std::vector<RetrievalHit> Index::rank_all(std::vector<std::pair<std::size_t, double>> scored,
                                          std::size_t k, HitSource source) const {
    std::sort(scored.begin(), scored.end(), [this](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return chunks_[a.first].chunk_id < chunks_[b.first].chunk_id;
    });
    if (scored.size() > k) scored.resize(k);
    std::vector<RetrievalHit> hits;
    hits.reserve(scored.size());
    for (std::size_t i = 0; i < scored.size(); ++i) {
        hits.push_back({chunks_[scored[i].first].chunk_id, scored[i].second, i + 1, source});
    }
    return hits;
}

std::vector<RetrievalHit> Index::lexical_search(const std::string& query, std::size_t k) const {
    const auto query_terms = text_terms(query);
    if (query_terms.empty()) return {};
    // candidates: chunks containing at least one query term
    std::vector<bool> seen(chunks_.size(), false);
    std::vector<std::size_t> candidates;
    for (const auto& term : query_terms) {
        auto it = lexical_.postings.find(term);
        if (it == lexical_.postings.end()) continue;
        for (const auto& [ordinal, tf] : it->second) {
            if (!seen[ordinal]) {
                seen[ordinal] = true;
                candidates.push_back(ordinal);
            }
        }
    }
    std::vector<std::pair<std::size_t, double>> scored;
    scored.reserve(candidates.size());
    for (std::size_t ordinal : candidates) {
        scored.emplace_back(ordinal, bm25_score(query_terms, ordinal));
    }
    return rank_all(std::move(scored), k, HitSource::lexical);
}

std::vector<RetrievalHit> Index::vector_search(const std::string& query, std::size_t k,
                                               const EmbeddingProvider& embedder) const {
    if (embedder.dimension() != vectors_.dimension) {
        throw ConfigError("embedder dimension " + std::to_string(embedder.dimension()) +
                          " does not match index dimension " +
                          std::to_string(vectors_.dimension));
    }
    const Embedding q = embedder.embed(query);
    if (dot(q, q) == 0.0f) return {}; // featureless query: nothing to match
    std::vector<std::pair<std::size_t, double>> scored;
    scored.reserve(chunks_.size());
    for (std::size_t i = 0; i < chunks_.size(); ++i) {
        scored.emplace_back(i, static_cast<double>(dot(q, vectors_.embeddings[i])));
    }
    return rank_all(std::move(scored), k, HitSource::vector);
}

std::vector<RetrievalHit> Index::hybrid_search(const std::string& query, std::size_t k,
                                               const EmbeddingProvider* embedder) const {
    const auto lexical_hits = lexical_search(query, params_.fusion_depth);
    std::vector<RetrievalHit> vector_hits;
    if (embedder != nullptr) {
        vector_hits = vector_search(query, params_.fusion_depth, *embedder);
    }
    // reciprocal rank fusion: score(c) = sum over lists of 1/(rrf_k + rank)
    std::map<std::string, double> fused;
    const std::vector<RetrievalHit>* lists[] = {&lexical_hits, &vector_hits};
    for (const auto* list : lists) {
        for (const auto& hit : *list) {
            fused[hit.chunk_id] += 1.0 / static_cast<double>(params_.rrf_k + hit.rank);
        }
    }
    std::vector<std::pair<std::size_t, double>> scored;
    scored.reserve(fused.size());
    for (const auto& [chunk_id, score] : fused) {
        scored.emplace_back(ordinal_of_id_.at(chunk_id), score);
    }
    return rank_all(std::move(scored), k, HitSource::fused);
}

std::string expand_query(const std::string& sub_question, const std::set<std::string>& frontier) {
    std::string expanded = sub_question;
    for (const auto& name : frontier) { // std::set iterates lexicographically
        expanded += " ";
        expanded += name;
    }
    return expanded;
}

std::vector<RetrievalHit> Index::frontier_conditioned_search(
    const std::string& sub_question, const std::set<std::string>& frontier, std::size_t k,
    const std::set<std::string>& exclude_chunk_ids, const EmbeddingProvider* embedder) const {
    const std::string expanded = expand_query(sub_question, frontier);
    auto hits = hybrid_search(expanded, k + exclude_chunk_ids.size(), embedder);
    std::vector<RetrievalHit> kept;
    for (auto& hit : hits) {
        if (exclude_chunk_ids.count(hit.chunk_id)) continue;
        hit.rank = kept.size() + 1;
        kept.push_back(std::move(hit));
        if (kept.size() == k) break;
    }
    return kept;
}

void Index::save(const std::filesystem::path& path) const {
    nlohmann::json doc;
    doc["params"] = {{"k1", params_.k1},
                     {"b", params_.b},
                     {"rrf_k", params_.rrf_k},
                     {"fusion_depth", params_.fusion_depth}};
    nlohmann::json chunk_array = nlohmann::json::array();
    for (const auto& c : chunks_) {
        chunk_array.push_back({{"chunk_id", c.chunk_id},
                               {"doc_id", c.doc_id},
                               {"ordinal", c.ordinal},
                               {"token_start", c.token_start},
                               {"token_end", c.token_end},
                               {"text", c.text}});
    }
    doc["chunks"] = std::move(chunk_array);
    nlohmann::json postings = nlohmann::json::object();
    for (const auto& [term, plist] : lexical_.postings) {
        nlohmann::json entries = nlohmann::json::array();
        for (const auto& [ordinal, tf] : plist) entries.push_back({ordinal, tf});
        postings[term] = std::move(entries);
    }
    doc["postings"] = std::move(postings);
    doc["doc_lengths"] = lexical_.doc_lengths;
    doc["avg_doc_length"] = lexical_.avg_doc_length;
    doc["dimension"] = vectors_.dimension;
    nlohmann::json vectors = nlohmann::json::array();
    for (const auto& v : vectors_.embeddings) vectors.push_back(v);
    doc["vectors"] = std::move(vectors);

    const auto blob = nlohmann::json::to_msgpack(doc);
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw CorpusLoadError("cannot open index file for writing: " + path.string());
    }
    out.write(kMagic, sizeof(kMagic));
    const std::uint32_t version = kFormatVersion;
    out.write(reinterpret_cast<const char*>(&version), sizeof(version));
    out.write(reinterpret_cast<const char*>(blob.data()), static_cast<std::streamsize>(blob.size()));
    if (!out) {
        throw CorpusLoadError("I/O failure while writing index file: " + path.string());
    }
}

Index Index::load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw CorpusLoadError("cannot open index file: " + path.string());
    }
    char magic[sizeof(kMagic)];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
        throw CorpusLoadError("not a stepchain index file (bad magic header): " + path.string());
    }
    std::uint32_t version = 0;
    in.read(reinterpret_cast<char*>(&version), sizeof(version));
    if (!in || version != kFormatVersion) {
        throw CorpusLoadError("unsupported index format version " + std::to_string(version) +
                              " (this build reads version " + std::to_string(kFormatVersion) +
                              "): " + path.string());
    }
    std::vector<std::uint8_t> blob((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
    nlohmann::json doc;
    try {
        doc = nlohmann::json::from_msgpack(blob);
    } catch (const nlohmann::json::exception& e) {
        throw CorpusLoadError("corrupt index payload in " + path.string() + ": " + e.what());
    }

    Index index;
    index.params_.k1 = doc["params"]["k1"].get<double>();
    index.params_.b = doc["params"]["b"].get<double>();
    index.params_.rrf_k = doc["params"]["rrf_k"].get<std::size_t>();
    index.params_.fusion_depth = doc["params"]["fusion_depth"].get<std::size_t>();
    for (const auto& c : doc["chunks"]) {
        Chunk chunk;
        chunk.chunk_id = c["chunk_id"].get<std::string>();
        chunk.doc_id = c["doc_id"].get<std::string>();
        chunk.ordinal = c["ordinal"].get<std::size_t>();
        chunk.token_start = c["token_start"].get<std::size_t>();
        chunk.token_end = c["token_end"].get<std::size_t>();
        chunk.text = c["text"].get<std::string>();
        index.ordinal_of_id_.emplace(chunk.chunk_id, index.chunks_.size());
        index.chunks_.push_back(std::move(chunk));
    }
    for (const auto& [term, entries] : doc["postings"].items()) {
        auto& plist = index.lexical_.postings[term];
        for (const auto& e : entries) {
            plist.emplace_back(e[0].get<std::size_t>(), e[1].get<std::size_t>());
        }
    }
    index.lexical_.doc_lengths = doc["doc_lengths"].get<std::vector<std::size_t>>();
    index.lexical_.avg_doc_length = doc["avg_doc_length"].get<double>();
    index.vectors_.dimension = doc["dimension"].get<std::size_t>();
    for (const auto& v : doc["vectors"]) {
        index.vectors_.embeddings.push_back(v.get<Embedding>());
    }
    return index;
}

} // namespace stepchain
