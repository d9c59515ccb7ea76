#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace stepchain {

using Embedding = std::vector<float>;

// Deterministic text -> unit vector. Same text must always produce the
// identical vector.
class EmbeddingProvider {
public:
    virtual ~EmbeddingProvider() = default;
    virtual Embedding embed(std::string_view text) const = 0;
    virtual std::size_t dimension() const = 0;
};

// Offline embedder: feature hashing of lowercased word unigrams and
// bigrams into a fixed number of dimensions, signed, L2-normalized.
// Dependency-free and deterministic; good enough to rank toy fixtures.
class HashingEmbedder final : public EmbeddingProvider {
public:
    explicit HashingEmbedder(std::size_t dimension = 256) : dim_(dimension) {}
    Embedding embed(std::string_view text) const override;
    std::size_t dimension() const override { return dim_; }

private:
    std::size_t dim_;
};

// Remote embedding endpoint speaking the common embeddings JSON protocol:
// POST {"model": ..., "input": [text]} -> {"data": [{"embedding": [...]}]}.
// Responses are L2-normalized before use.
class RemoteEmbedder final : public EmbeddingProvider {
public:
    RemoteEmbedder(std::string base_url, std::string path, std::string model,
                   std::string api_key, std::size_t dimension);
    Embedding embed(std::string_view text) const override;
    std::size_t dimension() const override { return dim_; }

private:
    std::string base_url_;
    std::string path_;
    std::string model_;
    std::string api_key_;
    std::size_t dim_;
};

float dot(const Embedding& a, const Embedding& b);
void l2_normalize(Embedding& v);

} // namespace stepchain
