#pragma once

#include "stepchain/bfs_rf.hpp"
#include "stepchain/config.hpp"
#include "stepchain/extraction.hpp"
#include "stepchain/graph.hpp"
#include "stepchain/index.hpp"
#include "stepchain/llm.hpp"
#include "stepchain/trace.hpp"

#include <optional>
#include <set>
#include <string>
#include <vector>

namespace stepchain {

struct SubQuestion {
    int ordinal = 1; // 1-based, consecutive
    std::string text;
    std::optional<int> depends_on; // informational
};

// Entities and relation labels visited by the latest BFS; conditions the
// next retrieval batch.
struct Frontier {
    std::set<std::string> entities;
    std::set<std::string> relations;
};

struct AnswerRecord {
    std::string question;
    std::vector<SubQuestion> sub_questions;
    std::vector<PartialAnswer> partial_answers;
    std::string merged;
    std::string final_answer;
    std::vector<std::string> community_summaries_used;
    std::string trace_path; // empty when tracing stayed in memory
};

// End-to-end orchestration for one question: decompose, cold-start the
// graph, per-sub-question BFS reasoning with incremental augmentation,
// merge, finalize. One instance drives one run; answer() resets run state.
class Pipeline {
public:
    Pipeline(const Index& index, const EmbeddingProvider& embedder, const Extractor& extractor,
             LlmClient& llm, const TemplateStore& templates, PipelineConfig config,
             TraceWriter* trace = nullptr);
    ~Pipeline();
    Pipeline(const Pipeline&) = delete;
    Pipeline& operator=(const Pipeline&) = delete;

    AnswerRecord answer(const std::string& question);

    std::vector<SubQuestion> decompose(const std::string& question);
    UpsertReport cold_start(const std::string& first_sub_question);
    UpsertReport augment_graph(const Frontier& frontier, const std::string& sub_question);
    UpsertReport reseed_if_empty(const std::string& sub_question);
    std::string merge_answers(const std::vector<PartialAnswer>& partials,
                              const std::vector<std::string>& summaries);
    std::string finalize(const std::string& question, const std::string& merged);

    const KnowledgeGraph& graph() const { return graph_; }
    KnowledgeGraph& graph() { return graph_; }
    const std::set<std::string>& parsed_chunk_ids() const { return parsed_chunk_ids_; }
    const PipelineConfig& config() const { return config_; }

private:
    const Index* index_;
    const EmbeddingProvider* embedder_;
    const Extractor* extractor_;
    LlmClient* llm_;
    const TemplateStore* templates_;
    PipelineConfig config_;
    TraceWriter* trace_;

    KnowledgeGraph graph_;
    std::set<std::string> parsed_chunk_ids_;
    int current_ordinal_ = 0; // sub-question being processed; 0 during cold start

    void trace_event(nlohmann::ordered_json record);
    UpsertReport parse_and_upsert(const std::vector<RetrievalHit>& hits, const char* stage);
    std::vector<std::string> collect_community_summaries(const std::set<std::string>& seed_entities);
};

} // namespace stepchain
