#include "stepchain/corpus.hpp"
#include "stepchain/errors.hpp"

#include <nlohmann/json.hpp>

#include <cctype>
#include <fstream>
#include <unordered_map>

namespace stepchain {

std::vector<TokenSpan> WhitespaceTokenizer::token_spans(std::string_view text) const {
    std::vector<TokenSpan> spans;
    std::size_t i = 0;
    const std::size_t n = text.size();
    while (i < n) {
        while (i < n && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
        if (i >= n) break;
        std::size_t start = i;
        while (i < n && !std::isspace(static_cast<unsigned char>(text[i]))) ++i;
        spans.push_back({start, i});
    }
    return spans;
}

std::vector<std::string> WhitespaceTokenizer::tokenize(std::string_view text) const {
    std::vector<std::string> tokens;
    for (const auto& s : token_spans(text)) {
        tokens.emplace_back(text.substr(s.begin, s.end - s.begin));
    }
    return tokens;
}

std::vector<Document> load_corpus(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw CorpusLoadError("cannot open corpus file: " + path.string());
    }
    std::vector<Document> docs;
    std::unordered_map<std::string, std::size_t> first_line_of_id; // doc_id -> line number
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        nlohmann::json rec;
        try {
            rec = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw ParseError("corpus line " + std::to_string(line_no) +
                             ": malformed JSON record: " + e.what());
        }
        if (!rec.is_object() || !rec.contains("id") || !rec["id"].is_string() ||
            !rec.contains("text") || !rec["text"].is_string()) {
            throw ParseError("corpus line " + std::to_string(line_no) +
                             ": record must carry string fields \"id\" and \"text\"");
        }
        Document doc;
        doc.doc_id = rec["id"].get<std::string>();
        doc.text = rec["text"].get<std::string>();
        if (rec.contains("title") && rec["title"].is_string()) {
            doc.title = rec["title"].get<std::string>();
        }
        if (doc.text.empty()) {
            throw ValidationError("corpus line " + std::to_string(line_no) + ": document \"" +
                                  doc.doc_id + "\" has empty text");
        }
        auto [it, inserted] = first_line_of_id.emplace(doc.doc_id, line_no);
        if (!inserted) {
            throw ValidationError("duplicate doc_id \"" + doc.doc_id + "\" on lines " +
                                  std::to_string(it->second) + " and " + std::to_string(line_no));
        }
        docs.push_back(std::move(doc));
    }
    if (in.bad()) {
        throw CorpusLoadError("I/O failure while reading corpus file: " + path.string());
    }
    return docs;
}

std::vector<Chunk> chunk_document(const Document& doc, std::size_t chunk_size_tokens,
                                  std::size_t overlap_tokens) {
    if (chunk_size_tokens == 0 || overlap_tokens >= chunk_size_tokens) {
        throw ConfigError("overlap_tokens (" + std::to_string(overlap_tokens) +
                          ") must be smaller than chunk_size_tokens (" +
                          std::to_string(chunk_size_tokens) + ")");
    }
    if (doc.text.empty()) {
        throw ValidationError("document \"" + doc.doc_id + "\" has empty text");
    }
    WhitespaceTokenizer tokenizer;
    const auto spans = tokenizer.token_spans(doc.text);
    const std::size_t n = spans.size();
    std::vector<Chunk> chunks;
    if (n == 0) return chunks;

    const std::size_t stride = chunk_size_tokens - overlap_tokens;
    std::size_t start = 0;
    std::size_t ordinal = 0;
    while (true) {
        const std::size_t end = std::min(start + chunk_size_tokens, n);
        Chunk chunk;
        chunk.doc_id = doc.doc_id;
        chunk.ordinal = ordinal;
        chunk.chunk_id = doc.doc_id + "#" + std::to_string(ordinal);
        chunk.token_start = start;
        chunk.token_end = end;
        chunk.text = doc.text.substr(spans[start].begin, spans[end - 1].end - spans[start].begin);
        chunks.push_back(std::move(chunk));
        if (end >= n) break;
        start += stride;
        ++ordinal;
    }
    return chunks;
}

std::vector<Chunk> chunk_corpus(const std::vector<Document>& docs, std::size_t chunk_size_tokens,
                                std::size_t overlap_tokens) {
    std::vector<Chunk> all;
    for (const auto& doc : docs) {
        auto chunks = chunk_document(doc, chunk_size_tokens, overlap_tokens);
        all.insert(all.end(), std::make_move_iterator(chunks.begin()),
                   std::make_move_iterator(chunks.end()));
    }
    return all;
}

} // namespace stepchain
