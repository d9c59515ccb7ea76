#pragma once

#include "stepchain/config.hpp"
#include "stepchain/corpus.hpp"
#include "stepchain/embedding.hpp"
#include "stepchain/extraction.hpp"
#include "stepchain/index.hpp"
#include "stepchain/llm.hpp"

#include <filesystem>
#include <memory>
#include <random>
#include <string>
#include <vector>

namespace testutil {

inline std::filesystem::path fixture_path(const std::string& name) {
    return std::filesystem::path(STEPCHAIN_FIXTURE_DIR) / name;
}

inline stepchain::TemplateStore project_templates() {
    return stepchain::TemplateStore::from_directory(STEPCHAIN_TEMPLATE_DIR);
}

inline stepchain::Chunk make_chunk(const std::string& id, const std::string& text) {
    stepchain::Chunk chunk;
    chunk.chunk_id = id;
    chunk.doc_id = id.substr(0, id.find('#'));
    chunk.text = text;
    return chunk;
}

inline std::vector<stepchain::Chunk> fixture_chunks() {
    const auto docs = stepchain::load_corpus(fixture_path("hp_corpus.jsonl"));
    return stepchain::chunk_corpus(docs, 1200, 100);
}

// Random words drawn from a small vocabulary so that term overlaps occur.
inline std::string random_text(std::mt19937& rng, std::size_t words) {
    static const std::vector<std::string> vocab{
        "wand",  "spell",  "potion", "castle", "broom", "snake",  "sword", "crown",
        "raven", "badger", "lion",   "serpent", "night", "forest", "stone", "fire",
        "water", "letter", "owl",    "map"};
    std::uniform_int_distribution<std::size_t> pick(0, vocab.size() - 1);
    std::string text;
    for (std::size_t i = 0; i < words; ++i) {
        if (!text.empty()) text += " ";
        text += vocab[pick(rng)];
    }
    return text;
}

inline std::vector<stepchain::Chunk> random_chunks(std::mt19937& rng, std::size_t count,
                                                   std::size_t min_words = 3,
                                                   std::size_t max_words = 12) {
    std::uniform_int_distribution<std::size_t> len(min_words, max_words);
    std::vector<stepchain::Chunk> chunks;
    for (std::size_t i = 0; i < count; ++i) {
        chunks.push_back(make_chunk("c" + std::to_string(100 + i) + "#0", random_text(rng, len(rng))));
    }
    return chunks;
}

inline std::shared_ptr<stepchain::MockProvider> mock_provider(const std::string& script_json,
                                                              int latency_ms = 0) {
    return std::make_shared<stepchain::MockProvider>(
        stepchain::MockScript::from_json_text(script_json), latency_ms);
}

inline stepchain::LlmClientOptions fast_client_options() {
    stepchain::LlmClientOptions options;
    options.backoff_base_ms = 0;
    return options;
}

} // namespace testutil
