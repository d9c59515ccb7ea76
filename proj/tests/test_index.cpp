#include "stepchain/index.hpp"
#include "stepchain/errors.hpp"

#include "helpers.hpp"
#include "oracles.hpp"

#include <doctest.h>

#include <random>

using namespace stepchain;
using testutil::make_chunk;

namespace {

Index toy_index() {
    std::vector<Chunk> chunks{
        make_chunk("t1#0", "the horcrux hides a fragment of the dark lord"),
        make_chunk("t2#0", "nagini the snake is the final horcrux"),
        make_chunk("t3#0", "quidditch is played on broomsticks at the castle"),
    };
    return Index::build(chunks, HashingEmbedder(64));
}

} // namespace

TEST_CASE("build populates postings and lengths over exactly the given chunks") {
    const auto index = toy_index();
    CHECK(index.size() == 3);
    CHECK(index.lexical().doc_lengths.size() == 3);
    // every term of every chunk resolvable
    for (const auto& chunk : index.chunks()) {
        for (const auto& term : text_terms(chunk.text)) {
            CHECK(index.lexical().postings.count(term) == 1);
        }
    }
}

TEST_CASE("single chunk 'a b a' counts tf 2 and doc length 3") {
    const auto index = Index::build({make_chunk("x#0", "a b a")}, HashingEmbedder(16));
    const auto& plist = index.lexical().postings.at("a");
    REQUIRE(plist.size() == 1);
    CHECK(plist[0].second == 2);
    CHECK(index.lexical().doc_lengths[0] == 3);
    CHECK(index.lexical().avg_doc_length == doctest::Approx(3.0));
}

TEST_CASE("duplicate chunk ids are rejected at build") {
    std::vector<Chunk> chunks{make_chunk("dup#0", "one"), make_chunk("dup#0", "two")};
    CHECK_THROWS_AS(Index::build(chunks, HashingEmbedder(16)), ValidationError);
}

TEST_CASE("lexical search: no shared term means an empty result") {
    const auto index = toy_index();
    CHECK(index.lexical_search("wand elder", 5).empty());
    CHECK(index.lexical_search("", 5).empty());
    CHECK(index.lexical_search("...", 5).empty());
}

TEST_CASE("lexical search on a single-chunk corpus returns that chunk at rank 1") {
    const auto index = Index::build({make_chunk("only#0", "hippogriff flies high")},
                                    HashingEmbedder(16));
    const auto hits = index.lexical_search("hippogriff", 3);
    REQUIRE(hits.size() == 1);
    CHECK(hits[0].chunk_id == "only#0");
    CHECK(hits[0].rank == 1);
    CHECK(hits[0].source == HitSource::lexical);
}

TEST_CASE("toy corpus BM25 ranking matches the brute-force scorer") {
    const auto index = toy_index();
    const auto hits = index.lexical_search("horcrux nagini", 3);
    std::vector<std::string> texts, ids;
    for (const auto& c : index.chunks()) {
        texts.push_back(c.text);
        ids.push_back(c.chunk_id);
    }
    const auto expected = oracle::naive_bm25_ranking(texts, ids, "horcrux nagini", 1.2, 0.75);
    REQUIRE(hits.size() == expected.size());
    for (std::size_t i = 0; i < hits.size(); ++i) {
        CHECK(hits[i].chunk_id == ids[expected[i].first]);
        CHECK(hits[i].score == doctest::Approx(expected[i].second).epsilon(1e-12));
    }
    // nagini chunk mentions both query terms and must rank first
    CHECK(hits[0].chunk_id == "t2#0");
}

TEST_CASE("BM25 oracle equivalence on random corpora") {
    std::mt19937 rng(1234);
    for (int round = 0; round < 12; ++round) {
        const std::size_t n = 2 + rng() % 49;
        const auto chunks = testutil::random_chunks(rng, n);
        const auto index = Index::build(chunks, HashingEmbedder(32));
        const std::string query = testutil::random_text(rng, 1 + rng() % 4);
        const auto hits = index.lexical_search(query, n);
        std::vector<std::string> texts, ids;
        for (const auto& c : chunks) {
            texts.push_back(c.text);
            ids.push_back(c.chunk_id);
        }
        const auto expected = oracle::naive_bm25_ranking(texts, ids, query, 1.2, 0.75);
        REQUIRE(hits.size() == expected.size());
        for (std::size_t i = 0; i < hits.size(); ++i) {
            CHECK(hits[i].chunk_id == ids[expected[i].first]);
            CHECK(hits[i].score == doctest::Approx(expected[i].second).epsilon(1e-12));
        }
    }
}

TEST_CASE("vector search: identical text ranks first with self-similarity 1") {
    const auto index = toy_index();
    const HashingEmbedder embedder(64);
    const auto hits = index.vector_search("nagini the snake is the final horcrux", 3, embedder);
    REQUIRE(!hits.empty());
    CHECK(hits[0].chunk_id == "t2#0");
    CHECK(hits[0].score == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("vector search with k beyond corpus returns everything sorted") {
    const auto index = toy_index();
    const HashingEmbedder embedder(64);
    const auto hits = index.vector_search("horcrux", 50, embedder);
    CHECK(hits.size() == 3);
    for (std::size_t i = 1; i < hits.size(); ++i) CHECK(hits[i].score <= hits[i - 1].score);
}

TEST_CASE("vector search ranking equals exhaustive cosine over stored vectors") {
    std::mt19937 rng(99);
    const auto chunks = testutil::random_chunks(rng, 10);
    const HashingEmbedder embedder(64);
    const auto index = Index::build(chunks, embedder);
    const std::string query = testutil::random_text(rng, 3);
    const auto hits = index.vector_search(query, 10, embedder);

    const Embedding q = embedder.embed(query);
    std::vector<std::pair<std::string, double>> expected;
    for (const auto& c : chunks) {
        expected.emplace_back(c.chunk_id, static_cast<double>(dot(q, embedder.embed(c.text))));
    }
    std::sort(expected.begin(), expected.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    REQUIRE(hits.size() == expected.size());
    for (std::size_t i = 0; i < hits.size(); ++i) {
        CHECK(hits[i].chunk_id == expected[i].first);
        CHECK(hits[i].score == doctest::Approx(expected[i].second).epsilon(1e-9));
    }
}

TEST_CASE("vector search rejects a mismatched embedder dimension") {
    const auto index = toy_index();
    CHECK_THROWS_AS(index.vector_search("q", 3, HashingEmbedder(16)), ConfigError);
}

TEST_CASE("a chunk ranked first in both lists gets fused score 2/61") {
    // both sub-searches agree on t2#0 for this query
    const auto index = toy_index();
    const HashingEmbedder embedder(64);
    const std::string query = "nagini the snake is the final horcrux";
    const auto lexical = index.lexical_search(query, 50);
    const auto vector = index.vector_search(query, 50, embedder);
    REQUIRE(lexical[0].chunk_id == "t2#0");
    REQUIRE(vector[0].chunk_id == "t2#0");
    const auto fused = index.hybrid_search(query, 3, &embedder);
    REQUIRE(!fused.empty());
    CHECK(fused[0].chunk_id == "t2#0");
    CHECK(fused[0].score == doctest::Approx(2.0 / 61.0).epsilon(1e-12));
    // outranks anything present in only one list: 2/61 > 1/61 >= any single entry
    for (std::size_t i = 1; i < fused.size(); ++i) CHECK(fused[i].score < fused[0].score);
}

TEST_CASE("hybrid search with nothing lexical and no embedder is empty") {
    const auto index = toy_index();
    CHECK(index.hybrid_search("wand elder phoenix", 5, nullptr).empty());
}

TEST_CASE("hybrid ranking equals brute-force reciprocal rank fusion") {
    std::mt19937 rng(2024);
    const auto chunks = testutil::random_chunks(rng, 10);
    const HashingEmbedder embedder(64);
    const auto index = Index::build(chunks, embedder);
    const std::string query = testutil::random_text(rng, 3);

    const auto lexical = index.lexical_search(query, 50);
    const auto vector = index.vector_search(query, 50, embedder);
    std::map<std::string, double> fused_expected;
    for (const auto& h : lexical) fused_expected[h.chunk_id] += 1.0 / (60.0 + h.rank);
    for (const auto& h : vector) fused_expected[h.chunk_id] += 1.0 / (60.0 + h.rank);
    std::vector<std::pair<std::string, double>> expected(fused_expected.begin(),
                                                         fused_expected.end());
    std::sort(expected.begin(), expected.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });

    const auto fused = index.hybrid_search(query, 10, &embedder);
    REQUIRE(fused.size() == std::min<std::size_t>(10, expected.size()));
    for (std::size_t i = 0; i < fused.size(); ++i) {
        CHECK(fused[i].chunk_id == expected[i].first);
        CHECK(fused[i].score == doctest::Approx(expected[i].second).epsilon(1e-12));
    }
}

TEST_CASE("rank and score stay coherent in every hit list") {
    const auto index = toy_index();
    const HashingEmbedder embedder(64);
    for (const auto& hits : {index.lexical_search("the horcrux", 3),
                             index.vector_search("the horcrux", 3, embedder),
                             index.hybrid_search("the horcrux", 3, &embedder)}) {
        for (std::size_t i = 0; i < hits.size(); ++i) {
            CHECK(hits[i].rank == i + 1);
            if (i > 0) CHECK(hits[i].score <= hits[i - 1].score);
        }
    }
}

TEST_CASE("identical index and query produce identical hit lists") {
    const auto index = toy_index();
    const HashingEmbedder embedder(64);
    const auto a = index.hybrid_search("final horcrux", 3, &embedder);
    const auto b = index.hybrid_search("final horcrux", 3, &embedder);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].chunk_id == b[i].chunk_id);
        CHECK(a[i].score == b[i].score);
    }
}

TEST_CASE("empty frontier conditioning degenerates to plain hybrid search") {
    const auto index = toy_index();
    const HashingEmbedder embedder(64);
    const auto plain = index.hybrid_search("final horcrux", 3, &embedder);
    const auto conditioned = index.frontier_conditioned_search("final horcrux", {}, 3, {}, &embedder);
    REQUIRE(plain.size() == conditioned.size());
    for (std::size_t i = 0; i < plain.size(); ++i) {
        CHECK(plain[i].chunk_id == conditioned[i].chunk_id);
    }
}

TEST_CASE("frontier naming nagini surfaces the chunk naming her destroyer") {
    const auto chunks = testutil::fixture_chunks();
    const HashingEmbedder embedder(256);
    const auto index = Index::build(chunks, embedder);
    const auto hits =
        index.frontier_conditioned_search("Who destroys the final Horcrux?", {"nagini"}, 3, {},
                                          &embedder);
    bool found = false;
    for (const auto& hit : hits) {
        if (hit.chunk_id == "hp04#0") found = true;
    }
    CHECK(found);
}

TEST_CASE("already-parsed chunks are skipped in favor of next-ranked ones") {
    const auto index = toy_index();
    const HashingEmbedder embedder(64);
    const auto full = index.hybrid_search("the horcrux", 3, &embedder);
    REQUIRE(full.size() == 3);
    const std::set<std::string> parsed{full[0].chunk_id, full[1].chunk_id};
    const auto filtered =
        index.frontier_conditioned_search("the horcrux", {}, 2, parsed, &embedder);
    REQUIRE(filtered.size() == 1);
    CHECK(filtered[0].chunk_id == full[2].chunk_id);
    CHECK(filtered[0].rank == 1);
}

TEST_CASE("expanded query appends frontier names once, in lexicographic order") {
    CHECK(expand_query("who?", {"zeta", "alpha", "alpha"}) == "who? alpha zeta");
    CHECK(expand_query("who?", {}) == "who?");
}

TEST_CASE("index round-trips through its persistence format") {
    const auto index = toy_index();
    const auto path = std::filesystem::temp_directory_path() / "sc_index_roundtrip.bin";
    index.save(path);
    const auto loaded = Index::load(path);
    CHECK(loaded.size() == index.size());
    CHECK(loaded.params().k1 == index.params().k1);
    CHECK(loaded.lexical().avg_doc_length == index.lexical().avg_doc_length);
    const HashingEmbedder embedder(64);
    const auto before = index.hybrid_search("final horcrux", 3, &embedder);
    const auto after = loaded.hybrid_search("final horcrux", 3, &embedder);
    REQUIRE(before.size() == after.size());
    for (std::size_t i = 0; i < before.size(); ++i) {
        CHECK(before[i].chunk_id == after[i].chunk_id);
        CHECK(before[i].score == after[i].score);
    }
}

TEST_CASE("a file with the wrong magic header is rejected loudly") {
    const auto path = std::filesystem::temp_directory_path() / "sc_index_bad.bin";
    {
        std::ofstream out(path, std::ios::binary);
        out << "NOTANIDX0000 garbage";
    }
    CHECK_THROWS_WITH_AS(Index::load(path), doctest::Contains("magic"), CorpusLoadError);
}
