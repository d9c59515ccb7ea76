#include "stepchain/graph.hpp"
#include "stepchain/errors.hpp"
#include "stepchain/text.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <deque>
#include <fstream>
#include <numeric>
#include <random>
#include <tuple>

namespace stepchain {

UpsertReport& UpsertReport::operator+=(const UpsertReport& other) {
    new_nodes += other.new_nodes;
    merged_nodes += other.merged_nodes;
    new_edges += other.new_edges;
    merged_edges += other.merged_edges;
    staged_edges += other.staged_edges;
    extraction_failures += other.extraction_failures;
    attribute_conflicts.insert(attribute_conflicts.end(), other.attribute_conflicts.begin(),
                               other.attribute_conflicts.end());
    return *this;
}

const Node& KnowledgeGraph::node(const std::string& canonical) const {
    auto it = nodes_.find(canonical);
    if (it == nodes_.end()) {
        throw NotFoundError("unknown graph node \"" + canonical + "\"");
    }
    return it->second;
}

void KnowledgeGraph::admit_edge(const Edge& edge) {
    edges_[edge.key()] = edge;
    for (const std::string* endpoint : {&edge.head, &edge.tail}) {
        auto& incident = adjacency_[*endpoint];
        incident.push_back(edge.key());
        const std::string self = *endpoint;
        std::sort(incident.begin(), incident.end(), [&self](const EdgeKey& a, const EdgeKey& b) {
            auto view = [&self](const EdgeKey& k) {
                const bool forward = (k.head == self);
                return std::make_tuple(forward ? k.tail : k.head, k.relation_label, !forward);
            };
            return view(a) < view(b);
        });
    }
}

UpsertReport KnowledgeGraph::upsert(const std::vector<EntityMention>& mentions,
                                    const std::vector<RelationTriple>& triples,
                                    const std::string& support_chunk_id,
                                    int subquestion_ordinal) {
    UpsertReport report;
    std::set<std::string> mention_canonicals;
    for (const auto& m : mentions) mention_canonicals.insert(m.canonical);
    for (const auto& t : triples) {
        if (!mention_canonicals.count(t.head_canonical) ||
            !mention_canonicals.count(t.tail_canonical)) {
            throw ValidationError("triple (" + t.head_canonical + ", " + t.relation_label + ", " +
                                  t.tail_canonical + ") references a mention absent from input");
        }
    }

    for (const auto& m : mentions) {
        auto [it, created] = nodes_.try_emplace(m.canonical);
        Node& node = it->second;
        if (created) {
            node.canonical = m.canonical;
            node.first_seen_subquestion = subquestion_ordinal;
            ++report.new_nodes;
        } else {
            ++report.merged_nodes;
        }
        node.aliases.insert(m.surface);
        if (!support_chunk_id.empty()) node.support_chunk_ids.insert(support_chunk_id);
        for (const auto& [key, value] : m.attributes) {
            auto [attr_it, attr_new] = node.attributes.emplace(key, value);
            if (!attr_new && attr_it->second != value) {
                // conflicting attribute keeps the earlier value; the later one is logged
                report.attribute_conflicts.push_back(m.canonical + "." + key + ": kept \"" +
                                                     attr_it->second + "\", dropped \"" + value +
                                                     "\"");
            }
        }
    }

    for (const auto& t : triples) {
        const EdgeKey key{t.head_canonical, t.relation_label, t.tail_canonical};
        if (auto admitted = edges_.find(key); admitted != edges_.end()) {
            admitted->second.support_chunk_ids.insert(t.support_chunk_id);
            admitted->second.confidence = std::max(admitted->second.confidence, t.confidence);
            ++report.merged_edges;
            continue;
        }
        Edge& staged = staged_[key];
        if (staged.head.empty()) {
            staged.head = t.head_canonical;
            staged.relation_label = t.relation_label;
            staged.tail = t.tail_canonical;
        }
        staged.support_chunk_ids.insert(t.support_chunk_id);
        staged.confidence = std::max(staged.confidence, t.confidence);
        if (staged.support_chunk_ids.size() >= min_edge_support_) {
            admit_edge(staged);
            staged_.erase(key);
            ++report.new_edges;
        } else {
            ++report.staged_edges;
        }
    }
    return report;
}

std::vector<KnowledgeGraph::Expansion> KnowledgeGraph::expansions_of(
    const std::string& canonical) const {
    std::vector<Expansion> expansions;
    auto it = adjacency_.find(canonical);
    if (it == adjacency_.end()) return expansions;
    expansions.reserve(it->second.size());
    for (const EdgeKey& key : it->second) {
        const bool forward = (key.head == canonical);
        expansions.push_back({forward ? key.tail : key.head, key, forward});
    }
    return expansions;
}

std::map<std::string, std::size_t> KnowledgeGraph::bfs_reachable(const std::string& seed,
                                                                 std::size_t max_depth) const {
    if (!has_node(seed)) {
        throw NotFoundError("BFS seed \"" + seed + "\" is not in the graph");
    }
    std::map<std::string, std::size_t> dist;
    dist[seed] = 0;
    std::deque<std::string> frontier{seed};
    while (!frontier.empty()) {
        const std::string current = frontier.front();
        frontier.pop_front();
        const std::size_t d = dist[current];
        if (d == max_depth) continue;
        for (const auto& exp : expansions_of(current)) {
            if (dist.count(exp.neighbor)) continue;
            dist[exp.neighbor] = d + 1;
            frontier.push_back(exp.neighbor);
        }
    }
    return dist;
}

namespace {

bool path_less(const EvidencePath& a, const EvidencePath& b) {
    if (a.length() != b.length()) return a.length() < b.length();
    if (a.nodes != b.nodes) return a.nodes < b.nodes;
    for (std::size_t i = 0; i < a.edges.size(); ++i) {
        if (a.edges[i].relation_label != b.edges[i].relation_label) {
            return a.edges[i].relation_label < b.edges[i].relation_label;
        }
        if (a.edges[i].forward != b.edges[i].forward) {
            return a.edges[i].forward; // forward sorts first
        }
    }
    return false;
}

} // namespace

std::vector<EvidencePath> KnowledgeGraph::enumerate_paths(const std::string& seed,
                                                          std::size_t max_depth,
                                                          const PathCaps& caps) const {
    if (!has_node(seed)) {
        throw NotFoundError("path enumeration seed \"" + seed + "\" is not in the graph");
    }
    std::vector<EvidencePath> paths;
    std::vector<std::string> node_stack{seed};
    std::vector<PathStep> step_stack;
    std::set<std::string> on_path{seed};

    auto expand = [&](auto&& self, const std::string& current) -> void {
        auto expansions = expansions_of(current);
        if (expansions.size() > caps.max_branch) expansions.resize(caps.max_branch);
        for (const auto& exp : expansions) {
            if (on_path.count(exp.neighbor)) continue; // simple paths only
            node_stack.push_back(exp.neighbor);
            step_stack.push_back(
                {exp.key.relation_label, exp.forward, edges_.at(exp.key).support_chunk_ids});
            on_path.insert(exp.neighbor);
            paths.push_back({node_stack, step_stack});
            if (node_stack.size() - 1 < max_depth) self(self, exp.neighbor);
            on_path.erase(exp.neighbor);
            step_stack.pop_back();
            node_stack.pop_back();
        }
    };
    if (max_depth > 0) expand(expand, seed);

    // shorter paths first, then lexicographic; the per-seed cap cuts the tail
    std::sort(paths.begin(), paths.end(), path_less);
    if (paths.size() > caps.max_paths_per_seed) paths.resize(caps.max_paths_per_seed);
    return paths;
}

void KnowledgeGraph::validate() const {
    for (const auto& [key, edge] : edges_) {
        if (!nodes_.count(edge.head) || !nodes_.count(edge.tail)) {
            throw ValidationError("edge (" + edge.head + ", " + edge.relation_label + ", " +
                                  edge.tail + ") has an endpoint missing from the node set");
        }
        for (const std::string* endpoint : {&edge.head, &edge.tail}) {
            auto it = adjacency_.find(*endpoint);
            if (it == adjacency_.end() ||
                std::count(it->second.begin(), it->second.end(), key) != 1) {
                throw ValidationError("adjacency of \"" + *endpoint +
                                      "\" is inconsistent with the edge set");
            }
        }
    }
    std::size_t incident_total = 0;
    for (const auto& [canonical, incident] : adjacency_) {
        if (!nodes_.count(canonical)) {
            throw ValidationError("adjacency lists unknown node \"" + canonical + "\"");
        }
        for (const EdgeKey& key : incident) {
            if (!edges_.count(key)) {
                throw ValidationError("adjacency of \"" + canonical +
                                      "\" references a non-admitted edge");
            }
        }
        incident_total += incident.size();
    }
    if (incident_total != edges_.size() * 2) {
        throw ValidationError("adjacency entry count does not match the edge set");
    }
    for (const auto& [canonical, node] : nodes_) {
        if (node.support_chunk_ids.empty()) {
            throw ValidationError("node \"" + canonical + "\" has no supporting chunks");
        }
    }
}

// ---------------------------------------------------------------------------
// Community detection (Leiden, resolution 1.0)
// ---------------------------------------------------------------------------

namespace {

struct WorkGraph {
    std::size_t n = 0;
    std::vector<std::map<std::size_t, double>> adj; // neighbor -> weight, no self entries
    std::vector<double> self_loop;
    std::vector<double> degree; // adj weights + 2 * self_loop
    double two_m = 0.0;

    void recompute_degrees() {
        degree.assign(n, 0.0);
        two_m = 0.0;
        for (std::size_t v = 0; v < n; ++v) {
            double d = 2.0 * self_loop[v];
            for (const auto& [u, w] : adj[v]) d += w;
            degree[v] = d;
            two_m += d;
        }
    }
};

// One pass of queue-driven local moving; returns whether any node moved.
bool local_move(const WorkGraph& g, std::vector<std::size_t>& comm, std::mt19937& rng) {
    std::vector<double> sum_tot(g.n, 0.0);
    std::vector<std::size_t> size(g.n, 0);
    for (std::size_t v = 0; v < g.n; ++v) {
        sum_tot[comm[v]] += g.degree[v];
        ++size[comm[v]];
    }
    std::vector<std::size_t> order(g.n);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);

    std::deque<std::size_t> queue(order.begin(), order.end());
    std::vector<bool> queued(g.n, true);
    bool any_moved = false;
    if (g.two_m <= 0.0) return false;

    while (!queue.empty()) {
        const std::size_t v = queue.front();
        queue.pop_front();
        queued[v] = false;

        const std::size_t c_old = comm[v];
        sum_tot[c_old] -= g.degree[v];
        --size[c_old];

        std::map<std::size_t, double> k_to; // community -> weight from v
        for (const auto& [u, w] : g.adj[v]) k_to[comm[u]] += w;

        auto gain_of = [&](std::size_t c) {
            const double k = k_to.count(c) ? k_to.at(c) : 0.0;
            return k - g.degree[v] * sum_tot[c] / g.two_m;
        };

        // move only on strict improvement over staying put; ties among the
        // improving candidates break to the smallest community id
        std::size_t best = c_old;
        double best_gain = gain_of(c_old);
        for (const auto& [c, k] : k_to) {
            if (c == c_old) continue;
            const double gain = gain_of(c);
            if (gain > best_gain + 1e-12) {
                best = c;
                best_gain = gain;
            } else if (best != c_old && gain > best_gain - 1e-12 && c < best) {
                best = c;
            }
        }
        // escaping to an empty community (gain 0) when every option is negative
        if (best_gain < -1e-12 && size[c_old] > 0) {
            for (std::size_t c = 0; c < g.n; ++c) {
                if (size[c] == 0) {
                    best = c;
                    best_gain = 0.0;
                    break;
                }
            }
        }

        comm[v] = best;
        sum_tot[best] += g.degree[v];
        ++size[best];
        if (best != c_old) {
            any_moved = true;
            for (const auto& [u, w] : g.adj[v]) {
                if (comm[u] != best && !queued[u]) {
                    queue.push_back(u);
                    queued[u] = true;
                }
            }
        }
    }
    return any_moved;
}

// Refinement: inside each community, well-connected singleton nodes greedily
// join adjacent refined sub-communities with positive modularity gain.
std::vector<std::size_t> refine(const WorkGraph& g, const std::vector<std::size_t>& comm,
                                std::mt19937& rng) {
    std::vector<std::size_t> refined(g.n);
    std::iota(refined.begin(), refined.end(), 0);
    if (g.two_m <= 0.0) return refined;

    std::vector<double> sub_sum_tot(g.n, 0.0);
    std::vector<std::size_t> sub_size(g.n, 1);
    for (std::size_t v = 0; v < g.n; ++v) sub_sum_tot[v] = g.degree[v];

    std::vector<double> comm_sum_tot(g.n, 0.0);
    for (std::size_t v = 0; v < g.n; ++v) comm_sum_tot[comm[v]] += g.degree[v];

    std::vector<std::size_t> order(g.n);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);

    for (const std::size_t v : order) {
        if (sub_size[refined[v]] != 1) continue;
        const std::size_t c = comm[v];
        double k_in_comm = 0.0;
        std::map<std::size_t, double> k_to_sub;
        for (const auto& [u, w] : g.adj[v]) {
            if (comm[u] != c) continue;
            k_in_comm += w;
            k_to_sub[refined[u]] += w;
        }
        // well-connectedness of v within its community
        if (k_in_comm < g.degree[v] * (comm_sum_tot[c] - g.degree[v]) / g.two_m) continue;

        std::size_t best = refined[v];
        double best_gain = 0.0;
        for (const auto& [s, k] : k_to_sub) {
            if (s == refined[v]) continue;
            const double gain = k - g.degree[v] * sub_sum_tot[s] / g.two_m;
            if (gain > best_gain + 1e-12 || (gain > best_gain - 1e-12 && gain > 0.0 && s < best)) {
                best = s;
                best_gain = gain;
            }
        }
        if (best != refined[v]) {
            sub_sum_tot[refined[v]] -= g.degree[v];
            --sub_size[refined[v]];
            refined[v] = best;
            sub_sum_tot[best] += g.degree[v];
            ++sub_size[best];
        }
    }
    return refined;
}

// Relabels arbitrary ids to a dense 0..K-1 range ordered by first appearance
// over ascending node index.
std::size_t compress_labels(std::vector<std::size_t>& labels) {
    std::map<std::size_t, std::size_t> remap;
    for (std::size_t& label : labels) {
        auto [it, inserted] = remap.emplace(label, remap.size());
        label = it->second;
    }
    return remap.size();
}

} // namespace

std::vector<Community> KnowledgeGraph::detect_communities(unsigned int seed) const {
    std::vector<Community> communities;
    if (nodes_.empty()) return communities;

    std::vector<std::string> names;
    names.reserve(nodes_.size());
    for (const auto& [canonical, node] : nodes_) names.push_back(canonical);
    std::map<std::string, std::size_t> index_of;
    for (std::size_t i = 0; i < names.size(); ++i) index_of[names[i]] = i;

    WorkGraph g;
    g.n = names.size();
    g.adj.resize(g.n);
    g.self_loop.assign(g.n, 0.0);
    for (const auto& [key, edge] : edges_) {
        const std::size_t u = index_of.at(edge.head);
        const std::size_t v = index_of.at(edge.tail);
        g.adj[u][v] += 1.0;
        g.adj[v][u] += 1.0;
    }
    g.recompute_degrees();

    std::vector<std::size_t> membership(g.n);
    if (g.n < 4) {
        // modularity is degenerate on tiny graphs: connected components
        std::vector<std::size_t> component(g.n, g.n);
        std::size_t next = 0;
        for (std::size_t start = 0; start < g.n; ++start) {
            if (component[start] != g.n) continue;
            std::deque<std::size_t> frontier{start};
            component[start] = next;
            while (!frontier.empty()) {
                const std::size_t v = frontier.front();
                frontier.pop_front();
                for (const auto& [u, w] : g.adj[v]) {
                    if (component[u] == g.n) {
                        component[u] = next;
                        frontier.push_back(u);
                    }
                }
            }
            ++next;
        }
        membership = component;
    } else {
        std::mt19937 rng(seed);
        WorkGraph level = g;
        std::vector<std::size_t> comm(level.n);
        std::iota(comm.begin(), comm.end(), 0);
        std::vector<std::vector<std::size_t>> members_of(level.n);
        for (std::size_t v = 0; v < level.n; ++v) members_of[v] = {v};

        while (true) {
            local_move(level, comm, rng);
            compress_labels(comm);
            auto refined = refine(level, comm, rng);
            const std::size_t k_refined = compress_labels(refined);
            if (k_refined == level.n) break; // nothing left to aggregate

            // aggregate refined sub-communities into super-nodes
            WorkGraph next;
            next.n = k_refined;
            next.adj.resize(next.n);
            next.self_loop.assign(next.n, 0.0);
            for (std::size_t v = 0; v < level.n; ++v) {
                next.self_loop[refined[v]] += level.self_loop[v];
                for (const auto& [u, w] : level.adj[v]) {
                    if (u < v) continue; // count each undirected pair once
                    if (refined[u] == refined[v]) {
                        next.self_loop[refined[v]] += w;
                    } else {
                        next.adj[refined[v]][refined[u]] += w;
                        next.adj[refined[u]][refined[v]] += w;
                    }
                }
            }
            next.recompute_degrees();

            std::vector<std::vector<std::size_t>> next_members(next.n);
            std::vector<std::size_t> next_comm(next.n);
            for (std::size_t v = 0; v < level.n; ++v) {
                next_members[refined[v]].insert(next_members[refined[v]].end(),
                                                members_of[v].begin(), members_of[v].end());
                next_comm[refined[v]] = comm[v]; // refinement stays inside communities
            }
            level = std::move(next);
            members_of = std::move(next_members);
            comm = std::move(next_comm);
            compress_labels(comm);
        }

        for (std::size_t v = 0; v < level.n; ++v) {
            for (const std::size_t original : members_of[v]) {
                membership[original] = comm[v];
            }
        }
    }

    std::map<std::size_t, std::set<std::string>> grouped;
    for (std::size_t i = 0; i < names.size(); ++i) {
        grouped[membership[i]].insert(names[i]);
    }
    std::vector<std::set<std::string>> ordered;
    ordered.reserve(grouped.size());
    for (auto& [label, members] : grouped) ordered.push_back(std::move(members));
    std::sort(ordered.begin(), ordered.end(),
              [](const auto& a, const auto& b) { return *a.begin() < *b.begin(); });
    for (std::size_t i = 0; i < ordered.size(); ++i) {
        Community community;
        community.id = static_cast<int>(i);
        community.members = std::move(ordered[i]);
        communities.push_back(std::move(community));
    }
    return communities;
}

// ---------------------------------------------------------------------------
// Community summaries
// ---------------------------------------------------------------------------

std::string summarize_community(Community& community,
                                const std::vector<std::string>& member_support_texts,
                                LlmClient& llm, const TemplateStore& templates) {
    if (community.members.empty()) {
        throw ValidationError("cannot summarize an empty community");
    }
    std::string joined_members;
    std::string fingerprint_material;
    for (const auto& member : community.members) {
        if (!joined_members.empty()) joined_members += ", ";
        joined_members += member;
        fingerprint_material += member;
        fingerprint_material += '\x1f';
    }
    const std::uint64_t fingerprint = fnv1a64(fingerprint_material);
    if (!community.summary.empty() && community.summarized_fingerprint == fingerprint) {
        return community.summary;
    }
    if (member_support_texts.empty()) {
        community.summary = joined_members;
        community.summarized_fingerprint = fingerprint;
        return community.summary;
    }
    std::string joined_texts;
    for (const auto& text : member_support_texts) {
        if (!joined_texts.empty()) joined_texts += "\n";
        joined_texts += text;
    }
    PromptRequest request;
    request.template_name = "summarize";
    request.role = Role::summarize;
    request.rendered_prompt = templates.render(
        "summarize", {{"member_names", joined_members}, {"support_texts", joined_texts}});
    try {
        community.summary = llm.complete(request).text;
        community.summarized_fingerprint = fingerprint;
    } catch (const ProviderError&) {
        community.summary.clear(); // summaries are optional; the pipeline proceeds
    }
    return community.summary;
}

// ---------------------------------------------------------------------------
// Export / import
// ---------------------------------------------------------------------------

namespace {

nlohmann::ordered_json edge_to_json(const Edge& edge) {
    return {{"head", edge.head},
            {"relation", edge.relation_label},
            {"tail", edge.tail},
            {"support_chunk_ids", edge.support_chunk_ids},
            {"confidence", edge.confidence}};
}

Edge edge_from_json(const nlohmann::json& j) {
    Edge edge;
    edge.head = j["head"].get<std::string>();
    edge.relation_label = j["relation"].get<std::string>();
    edge.tail = j["tail"].get<std::string>();
    edge.support_chunk_ids = j["support_chunk_ids"].get<std::set<std::string>>();
    edge.confidence = j["confidence"].get<double>();
    return edge;
}

} // namespace

void KnowledgeGraph::export_to(const std::filesystem::path& path) const {
    nlohmann::ordered_json doc;
    doc["format"] = "stepchain-graph";
    doc["version"] = 1;
    doc["min_edge_support"] = min_edge_support_;
    nlohmann::ordered_json node_array = nlohmann::ordered_json::array();
    for (const auto& [canonical, node] : nodes_) {
        node_array.push_back({{"canonical", node.canonical},
                              {"aliases", node.aliases},
                              {"attributes", node.attributes},
                              {"support_chunk_ids", node.support_chunk_ids},
                              {"first_seen_subquestion", node.first_seen_subquestion}});
    }
    doc["nodes"] = std::move(node_array);
    nlohmann::ordered_json edge_array = nlohmann::ordered_json::array();
    for (const auto& [key, edge] : edges_) edge_array.push_back(edge_to_json(edge));
    doc["edges"] = std::move(edge_array);
    nlohmann::ordered_json staged_array = nlohmann::ordered_json::array();
    for (const auto& [key, edge] : staged_) staged_array.push_back(edge_to_json(edge));
    doc["staged_edges"] = std::move(staged_array);

    std::ofstream out(path);
    if (!out) {
        throw CorpusLoadError("cannot open graph export file for writing: " + path.string());
    }
    out << doc.dump(2) << "\n";
}

KnowledgeGraph KnowledgeGraph::import_from(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw CorpusLoadError("cannot open graph file: " + path.string());
    }
    nlohmann::json doc;
    try {
        in >> doc;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError("malformed graph file " + path.string() + ": " + e.what());
    }
    if (!doc.is_object() || doc.value("format", "") != "stepchain-graph") {
        throw CorpusLoadError("not a stepchain graph file: " + path.string());
    }
    KnowledgeGraph graph(doc.value("min_edge_support", std::size_t{1}));
    for (const auto& n : doc["nodes"]) {
        Node node;
        node.canonical = n["canonical"].get<std::string>();
        node.aliases = n["aliases"].get<std::set<std::string>>();
        node.attributes = n["attributes"].get<std::map<std::string, std::string>>();
        node.support_chunk_ids = n["support_chunk_ids"].get<std::set<std::string>>();
        node.first_seen_subquestion = n["first_seen_subquestion"].get<int>();
        graph.nodes_[node.canonical] = std::move(node);
    }
    for (const auto& e : doc["edges"]) {
        graph.admit_edge(edge_from_json(e));
    }
    if (doc.contains("staged_edges")) {
        for (const auto& e : doc["staged_edges"]) {
            Edge edge = edge_from_json(e);
            graph.staged_[edge.key()] = std::move(edge);
        }
    }
    return graph;
}

bool KnowledgeGraph::operator==(const KnowledgeGraph& other) const {
    return min_edge_support_ == other.min_edge_support_ && nodes_ == other.nodes_ &&
           edges_ == other.edges_ && staged_ == other.staged_;
}

} // namespace stepchain
