#pragma once

#include "stepchain/extraction.hpp"
#include "stepchain/llm.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

namespace stepchain {

struct Node {
    std::string canonical;
    std::set<std::string> aliases;
    std::map<std::string, std::string> attributes;
    std::set<std::string> support_chunk_ids;
    int first_seen_subquestion = 0;

    bool operator==(const Node&) const = default;
};

struct EdgeKey {
    std::string head;
    std::string relation_label;
    std::string tail;

    auto operator<=>(const EdgeKey&) const = default;
};

struct Edge {
    std::string head;
    std::string relation_label;
    std::string tail;
    std::set<std::string> support_chunk_ids;
    double confidence = 0.0; // max over supporting triples

    EdgeKey key() const { return {head, relation_label, tail}; }
    bool operator==(const Edge&) const = default;
};

struct UpsertReport {
    std::size_t new_nodes = 0;
    std::size_t merged_nodes = 0;
    std::size_t new_edges = 0;    // admitted by this upsert (fresh or promoted from staging)
    std::size_t merged_edges = 0; // already-admitted edges that gained support
    std::size_t staged_edges = 0; // triples still below the support threshold
    std::size_t extraction_failures = 0;
    std::vector<std::string> attribute_conflicts;

    UpsertReport& operator+=(const UpsertReport& other);
};

struct Community {
    int id = 0;
    std::set<std::string> members;
    std::string summary; // filled lazily by summarize_community
    std::uint64_t summarized_fingerprint = 0;
};

// One traversed edge inside an evidence path.
struct PathStep {
    std::string relation_label;
    bool forward = true; // false: the edge was walked tail-to-head
    std::set<std::string> support_chunk_ids;

    bool operator==(const PathStep&) const = default;
};

// A simple path from a seed entity; |nodes| = |edges| + 1.
struct EvidencePath {
    std::vector<std::string> nodes;
    std::vector<PathStep> edges;

    std::size_t length() const { return edges.size(); }
    bool operator==(const EvidencePath&) const = default;
};

struct PathCaps {
    std::size_t max_paths_per_seed = 32;
    std::size_t max_branch = 16; // expansions considered per node, in neighbor order
};

// The global knowledge graph G = (V, E). Upserts merge by canonical name and
// union aliases/attributes/support; edges enter a staging area until they
// reach min_edge_support distinct supporting chunks. Reachability treats
// edges as undirected; path rendering preserves direction.
class KnowledgeGraph {
public:
    explicit KnowledgeGraph(std::size_t min_edge_support = 1)
        : min_edge_support_(min_edge_support) {}

    UpsertReport upsert(const std::vector<EntityMention>& mentions,
                        const std::vector<RelationTriple>& triples,
                        const std::string& support_chunk_id, int subquestion_ordinal);

    std::map<std::string, std::size_t> bfs_reachable(const std::string& seed,
                                                     std::size_t max_depth) const;

    std::vector<EvidencePath> enumerate_paths(const std::string& seed, std::size_t max_depth,
                                              const PathCaps& caps = {}) const;

    // Leiden modularity partition (resolution 1.0) with the given random
    // seed; graphs below 4 nodes fall back to connected components.
    std::vector<Community> detect_communities(unsigned int seed) const;

    bool empty() const { return nodes_.empty(); }
    std::size_t node_count() const { return nodes_.size(); }
    std::size_t admitted_edge_count() const { return edges_.size(); }
    std::size_t staged_edge_count() const { return staged_.size(); }
    std::size_t min_edge_support() const { return min_edge_support_; }

    bool has_node(const std::string& canonical) const { return nodes_.count(canonical) > 0; }
    const Node& node(const std::string& canonical) const;
    const std::map<std::string, Node>& nodes() const { return nodes_; }
    const std::map<EdgeKey, Edge>& edges() const { return edges_; }
    const std::map<EdgeKey, Edge>& staged_edges() const { return staged_; }

    // Walks adjacency against the edge set; throws on any inconsistency.
    void validate() const;

    void export_to(const std::filesystem::path& path) const;
    static KnowledgeGraph import_from(const std::filesystem::path& path);

    bool operator==(const KnowledgeGraph& other) const;

private:
    std::size_t min_edge_support_;
    std::map<std::string, Node> nodes_;
    std::map<EdgeKey, Edge> edges_;  // admitted
    std::map<EdgeKey, Edge> staged_; // below support threshold
    std::map<std::string, std::vector<EdgeKey>> adjacency_; // incident admitted edges

    void admit_edge(const Edge& edge);

    struct Expansion {
        std::string neighbor;
        EdgeKey key;
        bool forward;
    };
    std::vector<Expansion> expansions_of(const std::string& canonical) const;
};

// Summarizes one community with the LLM, caching by membership. Empty
// support texts skip the provider and join the member names instead. A
// provider failure leaves the summary empty; summaries are optional.
std::string summarize_community(Community& community,
                                const std::vector<std::string>& member_support_texts,
                                LlmClient& llm, const TemplateStore& templates);

} // namespace stepchain
