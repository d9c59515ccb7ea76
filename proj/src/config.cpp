#include "stepchain/config.hpp"
#include "stepchain/errors.hpp"

#include <fstream>

namespace stepchain {

void PipelineConfig::check() const {
    if (chunk_size_tokens == 0 || k_passages == 0 || k_seeds == 0 || reseed_r == 0 ||
        min_edge_support == 0 || context_budget_chars == 0 || max_subquestions == 0 ||
        caps.max_paths_per_seed == 0 || caps.max_branch == 0) {
        throw ConfigError("all pipeline sizes must be positive");
    }
    if (overlap_tokens >= chunk_size_tokens) {
        throw ConfigError("overlap_tokens must be smaller than chunk_size_tokens");
    }
    if (bfs_depth < 1) {
        throw ConfigError("bfs_depth must be at least 1");
    }
    if (provider.mode != "mock" && provider.mode != "real") {
        throw ConfigError("provider.mode must be \"mock\" or \"real\"");
    }
    if (provider.extractor != "rule" && provider.extractor != "llm") {
        throw ConfigError("provider.extractor must be \"rule\" or \"llm\"");
    }
}

PipelineConfig PipelineConfig::from_json(const nlohmann::json& doc) {
    PipelineConfig config;
    auto get_size = [&](const char* key, std::size_t fallback) {
        return doc.contains(key) ? doc[key].get<std::size_t>() : fallback;
    };
    config.chunk_size_tokens = get_size("chunk_size_tokens", config.chunk_size_tokens);
    config.overlap_tokens = doc.contains("overlap_tokens")
                                ? doc["overlap_tokens"].get<std::size_t>()
                                : config.overlap_tokens;
    config.bfs_depth = get_size("bfs_depth", config.bfs_depth);
    config.k_passages = get_size("k_passages", config.k_passages);
    config.k_seeds = get_size("k_seeds", config.k_seeds);
    config.reseed_r = get_size("reseed_r", config.reseed_r);
    config.min_edge_support = get_size("min_edge_support", config.min_edge_support);
    config.context_budget_chars = get_size("context_budget_chars", config.context_budget_chars);
    config.max_subquestions = get_size("max_subquestions", config.max_subquestions);
    if (doc.contains("caps")) {
        config.caps.max_paths_per_seed =
            doc["caps"].value("max_paths_per_seed", config.caps.max_paths_per_seed);
        config.caps.max_branch = doc["caps"].value("max_branch", config.caps.max_branch);
    }
    config.community_seed = doc.value("community_seed", config.community_seed);
    config.decomposition_enabled = doc.value("decomposition", config.decomposition_enabled);
    config.graph_reasoning_enabled = doc.value("graph_reasoning", config.graph_reasoning_enabled);
    if (doc.value("seed_embedding", std::string("label")) == "support_text") {
        config.seed_mode = SeedEmbeddingMode::support_text;
    }
    if (doc.contains("provider")) {
        const auto& p = doc["provider"];
        ProviderConfig& pc = config.provider;
        pc.mode = p.value("mode", pc.mode);
        pc.mock_script_path = p.value("mock_script", pc.mock_script_path);
        pc.endpoint = p.value("endpoint", pc.endpoint);
        pc.chat_path = p.value("chat_path", pc.chat_path);
        pc.model = p.value("model", pc.model);
        pc.api_key_env = p.value("api_key_env", pc.api_key_env);
        pc.embedding_endpoint = p.value("embedding_endpoint", pc.embedding_endpoint);
        pc.embedding_path = p.value("embedding_path", pc.embedding_path);
        pc.embedding_model = p.value("embedding_model", pc.embedding_model);
        pc.embedding_dimension = p.value("embedding_dimension", pc.embedding_dimension);
        pc.templates_dir = p.value("templates_dir", pc.templates_dir);
        pc.cache_dir = p.value("cache_dir", pc.cache_dir);
        pc.in_flight_limit = p.value("in_flight_limit", pc.in_flight_limit);
        pc.max_retries = p.value("max_retries", pc.max_retries);
        pc.backoff_base_ms = p.value("backoff_base_ms", pc.backoff_base_ms);
        pc.extractor = p.value("extractor", pc.extractor);
        pc.gazetteer_path = p.value("gazetteer", pc.gazetteer_path);
    }
    config.check();
    return config;
}

PipelineConfig PipelineConfig::from_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot open config file: " + path.string());
    }
    nlohmann::json doc;
    try {
        in >> doc;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("malformed config file " + path.string() + ": " + e.what());
    }
    return from_json(doc);
}

nlohmann::ordered_json PipelineConfig::snapshot() const {
    return nlohmann::ordered_json{
        {"chunk_size_tokens", chunk_size_tokens},
        {"overlap_tokens", overlap_tokens},
        {"bfs_depth", bfs_depth},
        {"k_passages", k_passages},
        {"k_seeds", k_seeds},
        {"reseed_r", reseed_r},
        {"min_edge_support", min_edge_support},
        {"context_budget_chars", context_budget_chars},
        {"max_subquestions", max_subquestions},
        {"max_paths_per_seed", caps.max_paths_per_seed},
        {"max_branch", caps.max_branch},
        {"community_seed", community_seed},
        {"decomposition", decomposition_enabled},
        {"graph_reasoning", graph_reasoning_enabled},
        {"provider_mode", provider.mode},
        {"extractor", provider.extractor},
    };
}

} // namespace stepchain
