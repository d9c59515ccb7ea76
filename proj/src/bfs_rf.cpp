#include "stepchain/bfs_rf.hpp"
#include "stepchain/errors.hpp"
#include "stepchain/index.hpp"

#include <algorithm>

namespace stepchain {

namespace {

Embedding node_embedding(const Node& node, const EmbeddingProvider& embedder,
                         SeedEmbeddingMode mode, const Index* chunk_source) {
    if (mode == SeedEmbeddingMode::support_text && chunk_source != nullptr) {
        Embedding mean(embedder.dimension(), 0.0f);
        std::size_t used = 0;
        for (const auto& chunk_id : node.support_chunk_ids) {
            try {
                const Embedding v = embedder.embed(chunk_source->chunk(chunk_id).text);
                for (std::size_t i = 0; i < mean.size(); ++i) mean[i] += v[i];
                ++used;
            } catch (const NotFoundError&) {
                // support can reference chunks outside the provided index
            }
        }
        if (used > 0) {
            l2_normalize(mean);
            return mean;
        }
    }
    std::string label = node.canonical;
    for (const auto& alias : node.aliases) {
        label += " ";
        label += alias;
    }
    return embedder.embed(label);
}

} // namespace

SeedSelection select_seeds(const std::string& sub_question, const KnowledgeGraph& graph,
                           const EmbeddingProvider& embedder, std::size_t k_seeds,
                           int sub_question_ordinal, SeedEmbeddingMode mode,
                           const Index* chunk_source) {
    SeedSelection selection;
    selection.sub_question_ordinal = sub_question_ordinal;
    if (graph.empty()) return selection; // empty-seeds signal: caller must re-seed

    const Embedding query = embedder.embed(sub_question);
    std::vector<std::pair<std::string, double>> scored;
    scored.reserve(graph.node_count());
    for (const auto& [canonical, node] : graph.nodes()) {
        const Embedding v = node_embedding(node, embedder, mode, chunk_source);
        scored.emplace_back(canonical, static_cast<double>(dot(query, v)));
    }
    std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    if (scored.size() > k_seeds) scored.resize(k_seeds);
    selection.seeds = std::move(scored);
    return selection;
}

std::string describe_path(const EvidencePath& path) {
    std::string out = path.nodes.empty() ? std::string() : path.nodes.front();
    for (std::size_t i = 0; i < path.edges.size(); ++i) {
        const PathStep& step = path.edges[i];
        if (step.forward) {
            out += " -- (" + step.relation_label + ") --> ";
        } else {
            out += " <-- (" + step.relation_label + ") -- ";
        }
        out += path.nodes[i + 1];
    }
    return out;
}

EvidenceContext build_context(const std::vector<EvidencePath>& paths, std::size_t budget_chars) {
    EvidenceContext context;
    std::set<std::string> seen;
    bool budget_exhausted = false;
    for (const auto& path : paths) {
        std::string chain = describe_path(path);
        if (!seen.insert(chain).second) continue; // duplicate chain, first kept
        if (budget_exhausted) {
            ++context.dropped_count;
            continue;
        }
        const std::size_t needed = chain.size() + (context.chains.empty() ? 0 : 1);
        if (context.rendered.size() + needed > budget_chars) {
            budget_exhausted = true;
            ++context.dropped_count;
            continue;
        }
        if (!context.chains.empty()) context.rendered += "\n";
        context.rendered += chain;
        context.chains.push_back(std::move(chain));
        context.source_paths.push_back(path);
        for (const auto& step : path.edges) {
            context.supporting_chunk_ids.insert(step.support_chunk_ids.begin(),
                                                step.support_chunk_ids.end());
        }
    }
    return context;
}

PartialAnswer answer_subquestion(const std::string& sub_question, const EvidenceContext& context,
                                 LlmClient& llm, const TemplateStore& templates,
                                 int sub_question_ordinal) {
    PartialAnswer partial;
    partial.sub_question_ordinal = sub_question_ordinal;
    partial.evidence = context;

    PromptRequest request;
    request.template_name = "subanswer";
    request.role = Role::subanswer;
    const std::string evidence_block =
        context.rendered.empty() ? "(no graph evidence was found for this sub-question)"
                                 : context.rendered;
    request.rendered_prompt =
        templates.render("subanswer", {{"sub_question", sub_question}, {"evidence", evidence_block}});
    partial.prompt_hash = llm.prompt_hash(request);
    try {
        Completion completion = llm.complete(request);
        partial.answer_text = completion.text;
        partial.provider_trace_id = completion.provider_trace_id;
    } catch (const ProviderError& e) {
        partial.provider_failed = true;
        partial.provider_trace_id = e.prompt_hash;
    }
    return partial;
}

} // namespace stepchain
