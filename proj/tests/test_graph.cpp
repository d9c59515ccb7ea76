#include "stepchain/graph.hpp"
#include "stepchain/errors.hpp"

#include "helpers.hpp"
#include "oracles.hpp"

#include <doctest.h>

#include <algorithm>
#include <random>

using namespace stepchain;

namespace {

EntityMention mention(const std::string& surface) {
    return {surface, canonicalize_entity(surface), {}};
}

RelationTriple triple(const std::string& head, const std::string& rel, const std::string& tail,
                      const std::string& chunk, double confidence = 0.9) {
    return {head, rel, tail, chunk, confidence};
}

// one undirected simple edge per pair, relation "r"
KnowledgeGraph graph_from_pairs(const std::vector<std::pair<std::string, std::string>>& pairs,
                                const std::vector<std::string>& isolated = {}) {
    KnowledgeGraph graph(1);
    std::size_t chunk_no = 0;
    for (const auto& [a, b] : pairs) {
        const std::string chunk = "c" + std::to_string(chunk_no++) + "#0";
        graph.upsert({mention(a), mention(b)}, {triple(a, "r", b, chunk)}, chunk, 0);
    }
    for (const auto& name : isolated) {
        graph.upsert({mention(name)}, {}, "iso#0", 0);
    }
    return graph;
}

} // namespace

TEST_CASE("upsert of one triple into an empty graph creates two nodes and one edge") {
    KnowledgeGraph graph(1);
    const auto report = graph.upsert({mention("Neville"), mention("Nagini")},
                                     {triple("neville", "destroys", "nagini", "hp04#0")},
                                     "hp04#0", 1);
    CHECK(report.new_nodes == 2);
    CHECK(report.new_edges == 1);
    CHECK(report.merged_nodes == 0);
    CHECK(graph.node_count() == 2);
    CHECK(graph.admitted_edge_count() == 1);
    CHECK(graph.node("neville").aliases.count("Neville") == 1);
    CHECK(graph.node("neville").support_chunk_ids.count("hp04#0") == 1);
    CHECK(graph.node("neville").first_seen_subquestion == 1);
    graph.validate();
}

TEST_CASE("re-upserting identical input changes nothing") {
    KnowledgeGraph graph(1);
    const std::vector<EntityMention> mentions{mention("Neville"), mention("Nagini")};
    const std::vector<RelationTriple> triples{triple("neville", "destroys", "nagini", "hp04#0")};
    graph.upsert(mentions, triples, "hp04#0", 1);
    const auto second = graph.upsert(mentions, triples, "hp04#0", 2);
    CHECK(second.new_nodes == 0);
    CHECK(second.new_edges == 0);
    CHECK(second.merged_nodes == 2);
    CHECK(graph.node_count() == 2);
    CHECK(graph.admitted_edge_count() == 1);
    // the creation stamp survives the merge
    CHECK(graph.node("neville").first_seen_subquestion == 1);
}

TEST_CASE("a triple naming an absent mention is rejected") {
    KnowledgeGraph graph(1);
    CHECK_THROWS_AS(graph.upsert({mention("Neville")},
                                 {triple("neville", "destroys", "nagini", "c#0")}, "c#0", 0),
                    ValidationError);
}

TEST_CASE("edges below min support stage until a second distinct chunk promotes them") {
    KnowledgeGraph graph(2);
    const auto first = graph.upsert({mention("Neville"), mention("Nagini")},
                                    {triple("neville", "destroys", "nagini", "hp04#0")},
                                    "hp04#0", 1);
    CHECK(first.new_edges == 0);
    CHECK(first.staged_edges == 1);
    CHECK(graph.admitted_edge_count() == 0);
    CHECK(graph.staged_edge_count() == 1);
    CHECK(graph.enumerate_paths("neville", 2).empty()); // staged edges are not traversable
    // the same supporting chunk again does not promote
    const auto again = graph.upsert({mention("Neville"), mention("Nagini")},
                                    {triple("neville", "destroys", "nagini", "hp04#0")},
                                    "hp04#0", 1);
    CHECK(again.new_edges == 0);
    CHECK(graph.admitted_edge_count() == 0);
    // a second distinct chunk does
    const auto promote = graph.upsert({mention("Neville"), mention("Nagini")},
                                      {triple("neville", "destroys", "nagini", "hp09#0")},
                                      "hp09#0", 2);
    CHECK(promote.new_edges == 1);
    CHECK(graph.admitted_edge_count() == 1);
    CHECK(graph.staged_edge_count() == 0);
    CHECK(graph.edges().begin()->second.support_chunk_ids.size() == 2);
    graph.validate();
}

TEST_CASE("conflicting attributes keep the earlier value and log the later") {
    KnowledgeGraph graph(1);
    EntityMention first = mention("Nagini");
    first.attributes["type"] = "creature";
    graph.upsert({first}, {}, "c1#0", 0);
    EntityMention second = mention("Nagini");
    second.attributes["type"] = "snake";
    const auto report = graph.upsert({second}, {}, "c2#0", 0);
    CHECK(graph.node("nagini").attributes.at("type") == "creature");
    REQUIRE(report.attribute_conflicts.size() == 1);
    CHECK(report.attribute_conflicts[0].find("snake") != std::string::npos);
}

TEST_CASE("node-level upsert permutation invariance over random multisets") {
    std::mt19937 rng(505);
    const std::vector<std::string> pool{"alpha", "beta", "gamma", "delta", "epsilon", "zeta"};
    const std::vector<std::string> relations{"guards", "follows", "related_to"};
    for (int round = 0; round < 50; ++round) {
        struct UpsertInput {
            std::vector<EntityMention> mentions;
            std::vector<RelationTriple> triples;
            std::string chunk;
        };
        std::vector<UpsertInput> inputs;
        const std::size_t count = 2 + rng() % 5;
        for (std::size_t i = 0; i < count; ++i) {
            UpsertInput input;
            input.chunk = "c" + std::to_string(rng() % 6) + "#0";
            const std::string a = pool[rng() % pool.size()];
            std::string b = pool[rng() % pool.size()];
            input.mentions = {mention(a), mention(b)};
            if (a != b && rng() % 2 == 0) {
                input.triples = {
                    triple(a, relations[rng() % relations.size()], b, input.chunk, 0.9)};
            }
            inputs.push_back(std::move(input));
        }

        const std::size_t support = 1 + rng() % 2;
        KnowledgeGraph in_order(support);
        for (const auto& input : inputs) {
            in_order.upsert(input.mentions, input.triples, input.chunk, 0);
        }
        auto shuffled = inputs;
        std::shuffle(shuffled.begin(), shuffled.end(), rng);
        KnowledgeGraph permuted(support);
        for (const auto& input : shuffled) {
            permuted.upsert(input.mentions, input.triples, input.chunk, 0);
        }

        REQUIRE(in_order.node_count() == permuted.node_count());
        for (const auto& [canonical, node] : in_order.nodes()) {
            REQUIRE(permuted.has_node(canonical));
            CHECK(permuted.node(canonical).aliases == node.aliases);
            CHECK(permuted.node(canonical).support_chunk_ids == node.support_chunk_ids);
        }
        REQUIRE(in_order.admitted_edge_count() == permuted.admitted_edge_count());
        for (const auto& [key, edge] : in_order.edges()) {
            REQUIRE(permuted.edges().count(key) == 1);
            CHECK(permuted.edges().at(key).support_chunk_ids == edge.support_chunk_ids);
        }
        in_order.validate();
        permuted.validate();
    }
}

// ---------------------------------------------------------------------------
// BFS and path enumeration
// ---------------------------------------------------------------------------

TEST_CASE("BFS on the chain a-b-c-d caps at the configured depth") {
    const auto graph = graph_from_pairs({{"a", "b"}, {"b", "c"}, {"c", "d"}});
    const auto reach = graph.bfs_reachable("a", 2);
    REQUIRE(reach.size() == 3);
    CHECK(reach.at("a") == 0);
    CHECK(reach.at("b") == 1);
    CHECK(reach.at("c") == 2);
    CHECK(reach.count("d") == 0);
}

TEST_CASE("BFS with depth zero is the seed alone") {
    const auto graph = graph_from_pairs({{"a", "b"}});
    const auto reach = graph.bfs_reachable("a", 0);
    REQUIRE(reach.size() == 1);
    CHECK(reach.at("a") == 0);
}

TEST_CASE("BFS from a missing seed is a not-found error") {
    const auto graph = graph_from_pairs({{"a", "b"}});
    CHECK_THROWS_AS(graph.bfs_reachable("zz", 2), NotFoundError);
}

TEST_CASE("voldemort reaches nagini within two hops via the horcrux node") {
    KnowledgeGraph graph(1);
    graph.upsert({mention("Voldemort"), mention("Horcrux")},
                 {triple("voldemort", "creates", "horcrux", "hp01#0")}, "hp01#0", 0);
    graph.upsert({mention("Nagini"), mention("Horcrux")},
                 {triple("nagini", "remains", "horcrux", "hp03#0")}, "hp03#0", 0);
    const auto reach = graph.bfs_reachable("voldemort", 2);
    REQUIRE(reach.count("nagini") == 1);
    CHECK(reach.at("nagini") == 2);
}

TEST_CASE("BFS distances match Floyd-Warshall on random graphs") {
    std::mt19937 rng(31337);
    for (int round = 0; round < 100; ++round) {
        const std::size_t n = 2 + rng() % 29;
        std::vector<std::vector<bool>> adjacent(n, std::vector<bool>(n, false));
        std::vector<std::pair<std::string, std::string>> pairs;
        std::uniform_real_distribution<double> coin(0.0, 1.0);
        auto name = [](std::size_t i) { return "n" + std::to_string(100 + i); };
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = i + 1; j < n; ++j) {
                if (coin(rng) < 0.2) {
                    adjacent[i][j] = adjacent[j][i] = true;
                    pairs.emplace_back(name(i), name(j));
                }
            }
        }
        std::vector<std::string> all_names;
        for (std::size_t i = 0; i < n; ++i) all_names.push_back(name(i));
        const auto graph = graph_from_pairs(pairs, all_names);
        const auto oracle_dist = oracle::floyd_warshall(adjacent);

        const std::size_t h = 1 + rng() % 4;
        for (std::size_t s = 0; s < n; ++s) {
            const auto reach = graph.bfs_reachable(name(s), h);
            for (std::size_t v = 0; v < n; ++v) {
                const bool expected = oracle_dist[s][v] <= h;
                REQUIRE(reach.count(name(v)) == (expected ? 1u : 0u));
                if (expected) REQUIRE(reach.at(name(v)) == oracle_dist[s][v]);
            }
        }
    }
}

TEST_CASE("triangle paths enumerate exhaustively in deterministic order") {
    const auto graph = graph_from_pairs({{"a", "b"}, {"b", "c"}, {"a", "c"}});
    PathCaps no_caps{1000, 1000};
    const auto paths = graph.enumerate_paths("a", 2, no_caps);
    REQUIRE(paths.size() == 4);
    CHECK(paths[0].nodes == std::vector<std::string>{"a", "b"});
    CHECK(paths[1].nodes == std::vector<std::string>{"a", "c"});
    CHECK(paths[2].nodes == std::vector<std::string>{"a", "b", "c"});
    CHECK(paths[3].nodes == std::vector<std::string>{"a", "c", "b"});
    for (const auto& path : paths) {
        CHECK(path.nodes.size() == path.edges.size() + 1);
        CHECK(path.length() <= 2);
        std::set<std::string> unique(path.nodes.begin(), path.nodes.end());
        CHECK(unique.size() == path.nodes.size());
    }
}

TEST_CASE("path soundness: every consecutive pair is an admitted edge") {
    const auto graph = graph_from_pairs({{"a", "b"}, {"b", "c"}, {"a", "c"}, {"c", "d"}});
    for (const auto& path : graph.enumerate_paths("a", 3, {1000, 1000})) {
        for (std::size_t i = 0; i < path.edges.size(); ++i) {
            const auto& step = path.edges[i];
            EdgeKey key = step.forward
                              ? EdgeKey{path.nodes[i], step.relation_label, path.nodes[i + 1]}
                              : EdgeKey{path.nodes[i + 1], step.relation_label, path.nodes[i]};
            CHECK(graph.edges().count(key) == 1);
        }
    }
}

TEST_CASE("an isolated seed yields no paths") {
    const auto graph = graph_from_pairs({{"a", "b"}}, {"lonely"});
    CHECK(graph.enumerate_paths("lonely", 2).empty());
}

TEST_CASE("the per-seed cap keeps shorter paths first") {
    const auto graph = graph_from_pairs({{"a", "b"}, {"b", "c"}, {"a", "c"}});
    const auto paths = graph.enumerate_paths("a", 2, {2, 1000});
    REQUIRE(paths.size() == 2);
    CHECK(paths[0].nodes == std::vector<std::string>{"a", "b"});
    CHECK(paths[1].nodes == std::vector<std::string>{"a", "c"});
}

TEST_CASE("max_branch truncates expansions per node in neighbor order") {
    const auto graph =
        graph_from_pairs({{"hub", "a"}, {"hub", "b"}, {"hub", "c"}, {"hub", "d"}});
    const auto paths = graph.enumerate_paths("hub", 1, {1000, 2});
    REQUIRE(paths.size() == 2);
    CHECK(paths[0].nodes == std::vector<std::string>{"hub", "a"});
    CHECK(paths[1].nodes == std::vector<std::string>{"hub", "b"});
}

// ---------------------------------------------------------------------------
// Communities
// ---------------------------------------------------------------------------

namespace {

std::vector<std::vector<double>> weights_for(const KnowledgeGraph& graph,
                                             std::vector<std::string>& names_out) {
    names_out.clear();
    for (const auto& [canonical, node] : graph.nodes()) names_out.push_back(canonical);
    std::map<std::string, std::size_t> idx;
    for (std::size_t i = 0; i < names_out.size(); ++i) idx[names_out[i]] = i;
    std::vector<std::vector<double>> w(names_out.size(),
                                       std::vector<double>(names_out.size(), 0.0));
    for (const auto& [key, edge] : graph.edges()) {
        w[idx[edge.head]][idx[edge.tail]] += 1.0;
        w[idx[edge.tail]][idx[edge.head]] += 1.0;
    }
    return w;
}

std::set<std::set<std::string>> as_family(const std::vector<Community>& communities) {
    std::set<std::set<std::string>> family;
    for (const auto& c : communities) family.insert(c.members);
    return family;
}

} // namespace

TEST_CASE("two disjoint triangles split into exactly the two triangles") {
    const auto graph = graph_from_pairs(
        {{"a", "b"}, {"b", "c"}, {"a", "c"}, {"x", "y"}, {"y", "z"}, {"x", "z"}});
    const auto communities = graph.detect_communities(42);
    REQUIRE(communities.size() == 2);
    const auto family = as_family(communities);
    CHECK(family.count({"a", "b", "c"}) == 1);
    CHECK(family.count({"x", "y", "z"}) == 1);

    // brute-force modularity enumeration agrees
    std::vector<std::string> names;
    const auto w = weights_for(graph, names);
    const auto [best_q, best_membership] = oracle::best_partition_by_enumeration(w);
    std::map<std::size_t, std::set<std::string>> oracle_family;
    for (std::size_t i = 0; i < names.size(); ++i) oracle_family[best_membership[i]].insert(names[i]);
    std::set<std::set<std::string>> oracle_sets;
    for (auto& [label, members] : oracle_family) oracle_sets.insert(members);
    CHECK(family == oracle_sets);
}

TEST_CASE("K4 stays one community, matching the enumeration oracle") {
    const auto graph = graph_from_pairs(
        {{"a", "b"}, {"a", "c"}, {"a", "d"}, {"b", "c"}, {"b", "d"}, {"c", "d"}});
    const auto communities = graph.detect_communities(7);
    REQUIRE(communities.size() == 1);
    CHECK(communities[0].members == std::set<std::string>{"a", "b", "c", "d"});

    std::vector<std::string> names;
    const auto w = weights_for(graph, names);
    const auto [best_q, best_membership] = oracle::best_partition_by_enumeration(w);
    const std::set<std::size_t> labels(best_membership.begin(), best_membership.end());
    CHECK(labels.size() == 1);
}

TEST_CASE("a single node is its own community") {
    KnowledgeGraph graph(1);
    graph.upsert({mention("alone")}, {}, "c#0", 0);
    const auto communities = graph.detect_communities(1);
    REQUIRE(communities.size() == 1);
    CHECK(communities[0].members == std::set<std::string>{"alone"});
}

TEST_CASE("an empty graph has no communities") {
    KnowledgeGraph graph(1);
    CHECK(graph.detect_communities(1).empty());
}

TEST_CASE("communities always partition the node set") {
    std::mt19937 rng(808);
    for (int round = 0; round < 20; ++round) {
        const std::size_t n = 1 + rng() % 20;
        std::vector<std::pair<std::string, std::string>> pairs;
        auto name = [](std::size_t i) { return "p" + std::to_string(100 + i); };
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = i + 1; j < n; ++j) {
                if (rng() % 5 == 0) pairs.emplace_back(name(i), name(j));
            }
        }
        std::vector<std::string> all_names;
        for (std::size_t i = 0; i < n; ++i) all_names.push_back(name(i));
        const auto graph = graph_from_pairs(pairs, all_names);
        const auto communities = graph.detect_communities(round);
        std::set<std::string> covered;
        std::size_t total = 0;
        for (const auto& c : communities) {
            total += c.members.size();
            covered.insert(c.members.begin(), c.members.end());
        }
        CHECK(total == graph.node_count());   // pairwise disjoint
        CHECK(covered.size() == graph.node_count()); // union covers V
    }
}

TEST_CASE("a fixed seed reproduces the same partition") {
    const auto graph = graph_from_pairs({{"a", "b"},
                                         {"b", "c"},
                                         {"a", "c"},
                                         {"c", "d"},
                                         {"d", "e"},
                                         {"e", "f"},
                                         {"d", "f"}});
    const auto first = graph.detect_communities(99);
    const auto second = graph.detect_communities(99);
    CHECK(as_family(first) == as_family(second));
}

// ---------------------------------------------------------------------------
// Community summaries
// ---------------------------------------------------------------------------

TEST_CASE("summaries cache on membership and skip the provider when unchanged") {
    const std::string script =
        R"({"entries": [{"role": "summarize", "response": "Horcrux-related entities"}]})";
    auto provider = testutil::mock_provider(script);
    LlmClient client(provider, testutil::fast_client_options());
    const auto templates = testutil::project_templates();

    Community community;
    community.members = {"horcrux", "nagini"};
    const auto first = summarize_community(community, {"some support text"}, client, templates);
    CHECK(first == "Horcrux-related entities");
    CHECK(provider->calls() == 1);
    const auto second = summarize_community(community, {"different text"}, client, templates);
    CHECK(second == "Horcrux-related entities");
    CHECK(provider->calls() == 1); // served from the community cache

    community.members.insert("neville");
    summarize_community(community, {"text"}, client, templates);
    CHECK(provider->calls() == 2); // membership changed, provider re-invoked
}

TEST_CASE("empty support texts summarize as the joined member names, no provider call") {
    auto provider = testutil::mock_provider(R"({"entries": []})");
    LlmClient client(provider, testutil::fast_client_options());
    const auto templates = testutil::project_templates();
    Community community;
    community.members = {"nagini", "horcrux"};
    CHECK(summarize_community(community, {}, client, templates) == "horcrux, nagini");
    CHECK(provider->calls() == 0);
}

TEST_CASE("a provider failure leaves the summary empty") {
    const std::string script =
        R"({"entries": [{"role": "summarize", "response": "x", "fail_times": -1}]})";
    LlmClient client(testutil::mock_provider(script), testutil::fast_client_options());
    const auto templates = testutil::project_templates();
    Community community;
    community.members = {"a", "b"};
    CHECK(summarize_community(community, {"text"}, client, templates).empty());
}

// ---------------------------------------------------------------------------
// Export / import
// ---------------------------------------------------------------------------

TEST_CASE("graph export and import round-trip without loss") {
    KnowledgeGraph graph(2);
    EntityMention typed = mention("Nagini");
    typed.attributes["type"] = "creature";
    graph.upsert({typed, mention("Voldemort")},
                 {triple("nagini", "remains", "voldemort", "hp03#0")}, "hp03#0", 1);
    graph.upsert({mention("Nagini"), mention("Voldemort")},
                 {triple("nagini", "remains", "voldemort", "hp01#0")}, "hp01#0", 2);
    graph.upsert({mention("Neville"), mention("Nagini")},
                 {triple("neville", "destroys", "nagini", "hp04#0")}, "hp04#0", 3); // stays staged
    REQUIRE(graph.admitted_edge_count() == 1);
    REQUIRE(graph.staged_edge_count() == 1);

    const auto path = std::filesystem::temp_directory_path() / "sc_graph_roundtrip.json";
    graph.export_to(path);
    const auto loaded = KnowledgeGraph::import_from(path);
    CHECK(loaded == graph);
    loaded.validate();
}

TEST_CASE("import rejects files that are not graph exports") {
    const auto path = std::filesystem::temp_directory_path() / "sc_graph_bad.json";
    {
        std::ofstream out(path);
        out << R"({"something": "else"})";
    }
    CHECK_THROWS_AS(KnowledgeGraph::import_from(path), CorpusLoadError);
}
