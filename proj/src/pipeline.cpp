#include "stepchain/pipeline.hpp"
#include "stepchain/errors.hpp"
#include "stepchain/text.hpp"

#include <algorithm>
#include <future>

namespace stepchain {

Pipeline::Pipeline(const Index& index, const EmbeddingProvider& embedder,
                   const Extractor& extractor, LlmClient& llm, const TemplateStore& templates,
                   PipelineConfig config, TraceWriter* trace)
    : index_(&index), embedder_(&embedder), extractor_(&extractor), llm_(&llm),
      templates_(&templates), config_(std::move(config)), trace_(trace),
      graph_(config_.min_edge_support) {
    config_.check();
    if (trace_ != nullptr) {
        TraceWriter* sink = trace_;
        llm_->set_observer([sink](const LlmCallRecord& record) {
            sink->append({{"type", "llm_call"},
                          {"role", record.role},
                          {"template", record.template_name},
                          {"prompt_hash", record.prompt_hash},
                          {"cached", record.cached},
                          {"retries", record.retries},
                          {"latency_ms", record.latency_ms},
                          {"response", record.response}});
        });
    }
}

Pipeline::~Pipeline() {
    if (trace_ != nullptr) llm_->set_observer(nullptr);
}

void Pipeline::trace_event(nlohmann::ordered_json record) {
    if (trace_ != nullptr) trace_->append(std::move(record));
}

// ---------------------------------------------------------------------------
// Decomposition
// ---------------------------------------------------------------------------

namespace {

std::vector<SubQuestion> parse_decomposition(const std::string& text,
                                             std::size_t max_subquestions, bool& truncated) {
    nlohmann::json doc = nlohmann::json::parse(text); // throws on malformed JSON
    if (!doc.is_array() || doc.empty()) {
        throw ParseError("decomposition response must be a non-empty JSON array");
    }
    std::vector<SubQuestion> subs;
    for (const auto& item : doc) {
        SubQuestion sq;
        if (item.is_string()) {
            sq.text = item.get<std::string>();
        } else if (item.is_object() && item.contains("text") && item["text"].is_string()) {
            sq.text = item["text"].get<std::string>();
            if (item.contains("depends_on") && item["depends_on"].is_number_integer()) {
                sq.depends_on = item["depends_on"].get<int>();
            }
        } else {
            throw ParseError("decomposition entries must be strings or {\"text\": ...} objects");
        }
        if (sq.text.empty()) {
            throw ParseError("decomposition produced an empty sub-question");
        }
        sq.ordinal = static_cast<int>(subs.size()) + 1;
        subs.push_back(std::move(sq));
        if (subs.size() == max_subquestions) break;
    }
    truncated = doc.size() > max_subquestions;
    return subs;
}

} // namespace

std::vector<SubQuestion> Pipeline::decompose(const std::string& question) {
    if (question.empty()) {
        throw ValidationError("question must be non-empty");
    }
    if (!config_.decomposition_enabled) {
        trace_event({{"type", "decomposition"},
                     {"bypassed", true},
                     {"sub_questions", nlohmann::json::array({question})}});
        return {SubQuestion{1, question, std::nullopt}};
    }

    PromptRequest request;
    request.template_name = "decompose";
    request.role = Role::decompose;
    request.rendered_prompt = templates_->render("decompose", {{"question", question}});

    auto fallback = [&](const std::string& reason) {
        trace_event({{"type", "decomposition"},
                     {"fallback", reason},
                     {"sub_questions", nlohmann::json::array({question})}});
        return std::vector<SubQuestion>{SubQuestion{1, question, std::nullopt}};
    };

    std::string raw;
    try {
        raw = llm_->complete(request).text;
    } catch (const ProviderError& e) {
        return fallback(std::string("provider failure: ") + e.what());
    }

    bool truncated = false;
    std::vector<SubQuestion> subs;
    try {
        subs = parse_decomposition(raw, config_.max_subquestions, truncated);
    } catch (const std::exception&) {
        // repair retry with an amended prompt; the original would replay the cache
        PromptRequest repair = request;
        repair.rendered_prompt +=
            "\n\nYour previous reply was not a valid JSON array of sub-questions. "
            "Return only the JSON array.";
        try {
            raw = llm_->complete(repair).text;
            subs = parse_decomposition(raw, config_.max_subquestions, truncated);
        } catch (const std::exception& e) {
            return fallback(std::string("unusable decomposition after repair retry: ") + e.what());
        }
    }

    nlohmann::json listed = nlohmann::json::array();
    for (const auto& sq : subs) listed.push_back(sq.text);
    nlohmann::ordered_json record{{"type", "decomposition"}, {"sub_questions", listed}};
    if (truncated) record["truncated_to"] = config_.max_subquestions;
    trace_event(std::move(record));
    return subs;
}

// ---------------------------------------------------------------------------
// Retrieval -> extraction -> upsert
// ---------------------------------------------------------------------------

UpsertReport Pipeline::parse_and_upsert(const std::vector<RetrievalHit>& hits, const char* stage) {
    UpsertReport total;
    std::vector<const Chunk*> batch;
    for (const auto& hit : hits) {
        if (parsed_chunk_ids_.count(hit.chunk_id)) continue;
        batch.push_back(&index_->chunk(hit.chunk_id));
    }

    // extraction may fan out; upserts are applied serially in batch order
    struct Outcome {
        Extraction extraction;
        bool failed = false;
        std::string error;
    };
    std::vector<Outcome> outcomes(batch.size());
    auto run_one = [this](const Chunk& chunk) {
        Outcome outcome;
        try {
            outcome.extraction = extractor_->extract(chunk);
        } catch (const std::exception& e) {
            outcome.failed = true;
            outcome.error = e.what();
        }
        return outcome;
    };
    if (batch.size() > 1) {
        std::vector<std::future<Outcome>> futures;
        futures.reserve(batch.size());
        for (const Chunk* chunk : batch) {
            futures.push_back(
                std::async(std::launch::async, [&run_one, chunk] { return run_one(*chunk); }));
        }
        for (std::size_t i = 0; i < futures.size(); ++i) outcomes[i] = futures[i].get();
    } else if (batch.size() == 1) {
        outcomes[0] = run_one(*batch[0]);
    }

    for (std::size_t i = 0; i < batch.size(); ++i) {
        const Chunk& chunk = *batch[i];
        parsed_chunk_ids_.insert(chunk.chunk_id); // failed chunks are not retried this run
        if (outcomes[i].failed) {
            ++total.extraction_failures;
            trace_event({{"type", "extraction_error"},
                         {"stage", stage},
                         {"chunk_id", chunk.chunk_id},
                         {"error", outcomes[i].error}});
            continue;
        }
        total += graph_.upsert(outcomes[i].extraction.mentions, outcomes[i].extraction.triples,
                               chunk.chunk_id, current_ordinal_);
    }

    trace_event({{"type", "upsert"},
                 {"stage", stage},
                 {"ordinal", current_ordinal_},
                 {"new_nodes", total.new_nodes},
                 {"merged_nodes", total.merged_nodes},
                 {"new_edges", total.new_edges},
                 {"merged_edges", total.merged_edges},
                 {"staged_edges", total.staged_edges},
                 {"extraction_failures", total.extraction_failures},
                 {"graph_nodes", graph_.node_count()},
                 {"graph_edges", graph_.admitted_edge_count()}});
    return total;
}

namespace {

nlohmann::json hits_to_json(const std::vector<RetrievalHit>& hits) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& hit : hits) {
        arr.push_back({{"chunk_id", hit.chunk_id}, {"score", hit.score}, {"rank", hit.rank}});
    }
    return arr;
}

} // namespace

UpsertReport Pipeline::cold_start(const std::string& first_sub_question) {
    const auto hits = index_->hybrid_search(first_sub_question, config_.reseed_r, embedder_);
    trace_event({{"type", "retrieval"},
                 {"stage", "cold_start"},
                 {"query", first_sub_question},
                 {"hits", hits_to_json(hits)}});
    if (hits.empty()) {
        trace_event({{"type", "warning"},
                     {"stage", "cold_start"},
                     {"message", "no passages retrieved; graph starts empty"}});
        return {};
    }
    return parse_and_upsert(hits, "cold_start");
}

UpsertReport Pipeline::augment_graph(const Frontier& frontier, const std::string& sub_question) {
    const auto hits = index_->frontier_conditioned_search(sub_question, frontier.entities,
                                                          config_.k_passages, parsed_chunk_ids_,
                                                          embedder_);
    trace_event({{"type", "retrieval"},
                 {"stage", "augment"},
                 {"ordinal", current_ordinal_},
                 {"query", expand_query(sub_question, frontier.entities)},
                 {"hits", hits_to_json(hits)}});
    return parse_and_upsert(hits, "augment");
}

UpsertReport Pipeline::reseed_if_empty(const std::string& sub_question) {
    if (!graph_.empty()) return {};
    const auto hits = index_->hybrid_search(sub_question, config_.reseed_r, embedder_);
    trace_event({{"type", "retrieval"},
                 {"stage", "reseed"},
                 {"ordinal", current_ordinal_},
                 {"query", sub_question},
                 {"hits", hits_to_json(hits)}});
    if (hits.empty()) {
        trace_event({{"type", "warning"},
                     {"stage", "reseed"},
                     {"message", "re-seed retrieval returned nothing; graph stays empty"}});
        return {};
    }
    return parse_and_upsert(hits, "reseed");
}

// ---------------------------------------------------------------------------
// Merging and final synthesis
// ---------------------------------------------------------------------------

std::string Pipeline::merge_answers(const std::vector<PartialAnswer>& partials,
                                    const std::vector<std::string>& summaries) {
    if (partials.empty()) {
        throw ValidationError("merge_answers needs at least one partial answer");
    }
    std::string partial_block;
    for (const auto& partial : partials) {
        partial_block += std::to_string(partial.sub_question_ordinal) + ". ";
        partial_block += partial.answer_text.empty() ? "(no answer)" : partial.answer_text;
        partial_block += "\n";
    }
    std::string summary_block;
    for (const auto& summary : summaries) {
        summary_block += summary;
        summary_block += "\n";
    }
    if (summary_block.empty()) summary_block = "(none)\n";

    PromptRequest request;
    request.template_name = "merge";
    request.role = Role::merge;
    request.rendered_prompt = templates_->render(
        "merge", {{"partial_answers", partial_block}, {"community_summaries", summary_block}});
    try {
        const std::string merged = llm_->complete(request).text;
        trace_event({{"type", "merge"}, {"prompt_hash", llm_->prompt_hash(request)},
                     {"merged", merged}});
        return merged;
    } catch (const ProviderError&) {
        // fallback: ordinal-ordered concatenation of the partial answers
        std::string merged;
        for (const auto& partial : partials) {
            if (partial.answer_text.empty()) continue;
            if (!merged.empty()) merged += "\n";
            merged += partial.answer_text;
        }
        trace_event({{"type", "merge"}, {"fallback", "concatenated partials"}, {"merged", merged}});
        return merged;
    }
}

std::string Pipeline::finalize(const std::string& question, const std::string& merged) {
    if (merged.empty()) {
        // nothing to synthesize from; the record keeps the empty merge result
        trace_event({{"type", "final"}, {"fallback", "empty merge"}, {"answer", ""}});
        return merged;
    }
    PromptRequest request;
    request.template_name = "finalize";
    request.role = Role::finalize;
    request.rendered_prompt =
        templates_->render("finalize", {{"question", question}, {"merged", merged}});
    try {
        const std::string final_answer = llm_->complete(request).text;
        trace_event({{"type", "final"}, {"prompt_hash", llm_->prompt_hash(request)},
                     {"answer", final_answer}});
        return final_answer;
    } catch (const ProviderError&) {
        trace_event({{"type", "final"}, {"fallback", "merged passed through"}, {"answer", merged}});
        return merged;
    }
}

// ---------------------------------------------------------------------------
// Community summaries for the merge step
// ---------------------------------------------------------------------------

std::vector<std::string> Pipeline::collect_community_summaries(
    const std::set<std::string>& seed_entities) {
    std::vector<std::string> summaries;
    if (graph_.empty()) return summaries;
    auto communities = graph_.detect_communities(config_.community_seed);
    for (auto& community : communities) {
        const bool relevant = std::any_of(
            community.members.begin(), community.members.end(),
            [&](const std::string& member) { return seed_entities.count(member) > 0; });
        if (!relevant) continue;
        // up to five supporting chunk texts, ascending chunk id
        std::set<std::string> support_ids;
        for (const auto& member : community.members) {
            const auto& node = graph_.node(member);
            support_ids.insert(node.support_chunk_ids.begin(), node.support_chunk_ids.end());
        }
        std::vector<std::string> texts;
        for (const auto& chunk_id : support_ids) {
            if (texts.size() == 5) break;
            try {
                texts.push_back(index_->chunk(chunk_id).text);
            } catch (const NotFoundError&) {
            }
        }
        const std::string summary = summarize_community(community, texts, *llm_, *templates_);
        trace_event({{"type", "community_summary"},
                     {"community_id", community.id},
                     {"members", community.members},
                     {"summary", summary}});
        if (!summary.empty()) summaries.push_back(summary);
    }
    return summaries;
}

// ---------------------------------------------------------------------------
// answer(): the full loop
// ---------------------------------------------------------------------------

AnswerRecord Pipeline::answer(const std::string& question) {
    graph_ = KnowledgeGraph(config_.min_edge_support);
    parsed_chunk_ids_.clear();
    current_ordinal_ = 0;

    AnswerRecord record;
    record.question = question;
    if (trace_ != nullptr) record.trace_path = trace_->path().string();
    trace_event({{"type", "question"}, {"text", question}, {"config", config_.snapshot()}});

    record.sub_questions = decompose(question);

    if (config_.graph_reasoning_enabled) {
        cold_start(record.sub_questions.front().text);
    }

    std::set<std::string> all_seed_entities;
    for (const auto& sub_question : record.sub_questions) {
        current_ordinal_ = sub_question.ordinal;

        SeedSelection seeds;
        EvidenceContext context;
        Frontier frontier;
        if (config_.graph_reasoning_enabled) {
            reseed_if_empty(sub_question.text);
            seeds = select_seeds(sub_question.text, graph_, *embedder_, config_.k_seeds,
                                 sub_question.ordinal, config_.seed_mode, index_);
            std::vector<EvidencePath> paths;
            for (const auto& [seed_name, score] : seeds.seeds) {
                all_seed_entities.insert(seed_name);
                for (const auto& [node_name, dist] : graph_.bfs_reachable(seed_name, config_.bfs_depth)) {
                    frontier.entities.insert(node_name);
                }
                auto seed_paths = graph_.enumerate_paths(seed_name, config_.bfs_depth, config_.caps);
                for (const auto& path : seed_paths) {
                    for (const auto& step : path.edges) frontier.relations.insert(step.relation_label);
                }
                paths.insert(paths.end(), std::make_move_iterator(seed_paths.begin()),
                             std::make_move_iterator(seed_paths.end()));
            }
            context = build_context(paths, config_.context_budget_chars);
        } else {
            // ablation: plain retrieval context, no graph
            const auto hits = index_->hybrid_search(sub_question.text, config_.k_passages, embedder_);
            std::string rendered;
            for (const auto& hit : hits) {
                const std::string& text = index_->chunk(hit.chunk_id).text;
                const std::size_t needed = text.size() + (rendered.empty() ? 0 : 1);
                if (rendered.size() + needed > config_.context_budget_chars) break;
                if (!rendered.empty()) rendered += "\n";
                rendered += text;
                context.supporting_chunk_ids.insert(hit.chunk_id);
            }
            context.rendered = std::move(rendered);
        }

        PartialAnswer partial = answer_subquestion(sub_question.text, context, *llm_, *templates_,
                                                   sub_question.ordinal);
        nlohmann::json seed_list = nlohmann::json::array();
        for (const auto& [name, score] : seeds.seeds) seed_list.push_back({name, score});
        trace_event({{"type", "subquestion"},
                     {"ordinal", sub_question.ordinal},
                     {"text", sub_question.text},
                     {"seeds", seed_list},
                     {"chains", context.chains},
                     {"dropped_count", context.dropped_count},
                     {"prompt_hash", partial.prompt_hash},
                     {"answer", partial.answer_text},
                     {"provider_failed", partial.provider_failed}});
        record.partial_answers.push_back(std::move(partial));

        if (config_.graph_reasoning_enabled) {
            augment_graph(frontier, sub_question.text);
        }
    }
    current_ordinal_ = static_cast<int>(record.sub_questions.size());

    if (config_.graph_reasoning_enabled) {
        record.community_summaries_used = collect_community_summaries(all_seed_entities);
    }
    record.merged = merge_answers(record.partial_answers, record.community_summaries_used);
    record.final_answer = finalize(question, record.merged);
    return record;
}

} // namespace stepchain
