#pragma once

#include "stepchain/corpus.hpp"
#include "stepchain/llm.hpp"

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace stepchain {

struct EntityMention {
    std::string surface;   // as it appears in the chunk
    std::string canonical; // canonicalize_entity(surface)
    std::map<std::string, std::string> attributes;
};

struct RelationTriple {
    std::string head_canonical;
    std::string relation_label;
    std::string tail_canonical;
    std::string support_chunk_id;
    double confidence = 1.0;
};

struct Extraction {
    std::vector<EntityMention> mentions; // deduplicated by canonical
    std::vector<RelationTriple> triples; // heads/tails closed over mentions
};

class Extractor {
public:
    virtual ~Extractor() = default;
    virtual Extraction extract(const Chunk& chunk) const = 0;
};

// Deterministic extractor used offline and in tests.
//
// Entities: maximal spans of capitalized words inside one sentence, plus
// case-insensitive matches of configured gazetteer terms. A span made
// entirely of function words (pronouns, determiners, auxiliaries, ...) is
// not a mention unless the gazetteer names it.
//
// Relations: for two mentions in one sentence, the label is the first token
// between them that is not a function word, confidence 0.9; if every token
// between them is a function word, or the mentions never share a sentence,
// the pair is linked as "related_to" with confidence 0.3.
class RuleBasedExtractor final : public Extractor {
public:
    explicit RuleBasedExtractor(std::vector<std::string> gazetteer = {});

    static RuleBasedExtractor with_gazetteer_file(const std::filesystem::path& path);

    Extraction extract(const Chunk& chunk) const override;
    std::vector<EntityMention> extract_entities(const Chunk& chunk) const;
    std::vector<RelationTriple> link_relations(const Chunk& chunk,
                                               const std::vector<EntityMention>& mentions) const;

private:
    std::vector<std::vector<std::string>> gazetteer_; // lowercased word sequences
};

// LLM-backed extractor. The prompt requests {"entities": [{"name", "type"}],
// "relations": [{"head", "relation", "tail"}]}; the response is schema
// validated with one repair retry, then the chunk fails extraction.
class LlmExtractor final : public Extractor {
public:
    LlmExtractor(LlmClient& client, const TemplateStore& templates,
                 double default_confidence = 1.0)
        : client_(&client), templates_(&templates), default_confidence_(default_confidence) {}

    Extraction extract(const Chunk& chunk) const override;

private:
    LlmClient* client_;
    const TemplateStore* templates_;
    double default_confidence_;
};

} // namespace stepchain
