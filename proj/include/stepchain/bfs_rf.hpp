#pragma once

#include "stepchain/embedding.hpp"
#include "stepchain/graph.hpp"
#include "stepchain/llm.hpp"

#include <string>
#include <vector>

namespace stepchain {

struct SeedSelection {
    int sub_question_ordinal = 0;
    std::vector<std::pair<std::string, double>> seeds; // (canonical, similarity), scores non-increasing
};

struct EvidenceContext {
    std::vector<std::string> chains; // rendered chain strings, in order
    std::string rendered;            // chains joined by newline
    std::vector<EvidencePath> source_paths;
    std::set<std::string> supporting_chunk_ids;
    std::size_t dropped_count = 0; // chains cut by the character budget
};

struct PartialAnswer {
    int sub_question_ordinal = 0;
    std::string answer_text; // empty when the provider call failed
    bool provider_failed = false;
    EvidenceContext evidence;
    std::string provider_trace_id;
    std::string prompt_hash;
};

enum class SeedEmbeddingMode {
    label,       // embed canonical + aliases (default)
    support_text // average the embeddings of supporting chunk texts
};

// Top k_seeds graph nodes by cosine similarity between the sub-question
// embedding and the node embedding, ties by ascending canonical. An empty
// graph yields an empty selection; the caller re-seeds first.
SeedSelection select_seeds(const std::string& sub_question, const KnowledgeGraph& graph,
                           const EmbeddingProvider& embedder, std::size_t k_seeds,
                           int sub_question_ordinal = 0,
                           SeedEmbeddingMode mode = SeedEmbeddingMode::label,
                           const class Index* chunk_source = nullptr);

// Renders one evidence chain:
//   forward   A -- (rel) --> B
//   reversed  A <-- (rel) -- B
std::string describe_path(const EvidencePath& path);

// Chains rendered in path order, duplicates removed keeping the first
// occurrence, concatenated until the character budget would be exceeded.
EvidenceContext build_context(const std::vector<EvidencePath>& paths, std::size_t budget_chars);

// Feeds the sub-question and its evidence context to the LLM. Provider
// failure yields an empty answer with the failure marker set; no exception
// escapes.
PartialAnswer answer_subquestion(const std::string& sub_question, const EvidenceContext& context,
                                 LlmClient& llm, const TemplateStore& templates,
                                 int sub_question_ordinal = 0);

} // namespace stepchain
