#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace stepchain {

struct Document {
    std::string doc_id;
    std::string title; // may be empty
    std::string text;
};

// One overlapping token-window slice of a document; the retrieval unit.
struct Chunk {
    std::string chunk_id; // "{doc_id}#{ordinal}"
    std::string doc_id;
    std::size_t ordinal = 0;
    std::size_t token_start = 0; // half-open token offsets within the parent
    std::size_t token_end = 0;
    std::string text;
};

// Byte span of one token within the source text.
struct TokenSpan {
    std::size_t begin = 0;
    std::size_t end = 0;
};

// A token is a maximal run of non-whitespace characters.
class WhitespaceTokenizer {
public:
    std::vector<TokenSpan> token_spans(std::string_view text) const;
    std::vector<std::string> tokenize(std::string_view text) const;
    std::size_t count(std::string_view text) const { return token_spans(text).size(); }
};

// Loads a line-delimited JSON corpus: {"id": string, "title": string?, "text": string}.
// Duplicate ids and malformed records are rejected with the offending line numbers.
std::vector<Document> load_corpus(const std::filesystem::path& path);

// Splits a document into overlapping token windows. Consecutive chunks start
// chunk_size - overlap tokens apart; the last chunk ends at the document end.
std::vector<Chunk> chunk_document(const Document& doc, std::size_t chunk_size_tokens,
                                  std::size_t overlap_tokens);

std::vector<Chunk> chunk_corpus(const std::vector<Document>& docs, std::size_t chunk_size_tokens,
                                std::size_t overlap_tokens);

} // namespace stepchain
