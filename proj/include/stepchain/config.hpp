#pragma once

#include "stepchain/bfs_rf.hpp"
#include "stepchain/graph.hpp"

#include <filesystem>
#include <nlohmann/json.hpp>
#include <string>

namespace stepchain {

struct ProviderConfig {
    std::string mode = "mock"; // mock | real
    std::string mock_script_path;
    std::string endpoint = "https://api.openai.com";
    std::string chat_path = "/v1/chat/completions";
    std::string model = "gpt-4o";
    std::string api_key_env = "STEPCHAIN_API_KEY"; // the key itself never enters config or traces
    std::string embedding_endpoint; // empty -> offline hashing embedder
    std::string embedding_path = "/v1/embeddings";
    std::string embedding_model;
    std::size_t embedding_dimension = 256;
    std::string templates_dir = "templates";
    std::string cache_dir; // empty -> in-memory cache only
    int in_flight_limit = 4;
    int max_retries = 2;
    int backoff_base_ms = 50;
    std::string extractor = "rule"; // rule | llm
    std::string gazetteer_path;
};

struct PipelineConfig {
    std::size_t chunk_size_tokens = 1200;
    std::size_t overlap_tokens = 100;
    std::size_t bfs_depth = 2;
    std::size_t k_passages = 20;
    std::size_t k_seeds = 5;
    std::size_t reseed_r = 10;
    std::size_t min_edge_support = 1;
    std::size_t context_budget_chars = 8000;
    std::size_t max_subquestions = 6;
    PathCaps caps;
    unsigned int community_seed = 42;
    bool decomposition_enabled = true;   // ablation: off -> the question is its own sub-question
    bool graph_reasoning_enabled = true; // ablation: off -> retrieved passages replace chains
    SeedEmbeddingMode seed_mode = SeedEmbeddingMode::label;
    ProviderConfig provider;

    void check() const;

    static PipelineConfig from_file(const std::filesystem::path& path);
    static PipelineConfig from_json(const nlohmann::json& doc);
    nlohmann::ordered_json snapshot() const; // for eval reports and traces
};

} // namespace stepchain
