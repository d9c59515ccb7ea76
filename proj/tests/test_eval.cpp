#include "stepchain/eval.hpp"
#include "stepchain/errors.hpp"

#include "helpers.hpp"
#include "oracles.hpp"

#include <doctest.h>

#include <fstream>
#include <random>

using namespace stepchain;

TEST_CASE("normalization lowercases, strips punctuation and articles, collapses spaces") {
    CHECK(normalize_answer("The Elder Wand.") == "elder wand");
    CHECK(normalize_answer("") == "");
    CHECK(normalize_answer("Neville") == "neville");
    CHECK(normalize_answer("  an   Owl ") == "owl");
    CHECK(normalize_answer("a") == "");
}

TEST_CASE("exact match accepts any gold alias") {
    CHECK(exact_match("Neville", {"Neville Longbottom", "Neville"}) == 1);
    CHECK(exact_match("neville longbottom", {"Neville Longbottom"}) == 1);
    CHECK(exact_match("Harry", {"Neville"}) == 0);
}

TEST_CASE("token F1 pins the derived fixtures") {
    // article stripping makes the prediction identical to the gold
    CHECK(token_f1("the last Horcrux", {"last Horcrux"}) == doctest::Approx(1.0).epsilon(1e-9));
    // {last, horcrux} vs {final, horcrux}: overlap 1, precision 1/2, recall 1/2
    CHECK(token_f1("the last horcrux", {"final horcrux"}) == doctest::Approx(0.5).epsilon(1e-9));
    // {nagini, snake} vs {snake}: precision 1/2, recall 1 -> 2/3
    CHECK(token_f1("nagini the snake", {"snake"}) ==
          doctest::Approx(2.0 / 3.0).epsilon(1e-9));
    CHECK(token_f1("identical words", {"identical words"}) == doctest::Approx(1.0));
    CHECK(token_f1("completely different", {"nothing shared"}) == doctest::Approx(0.0));
    // empty cases
    CHECK(token_f1("", {"the"}) == doctest::Approx(1.0)); // both normalize to empty
    CHECK(token_f1("", {"word"}) == doctest::Approx(0.0));
}

TEST_CASE("metrics match the naive oracle on random pairs and keep their bounds") {
    std::mt19937 rng(2718);
    auto random_answer = [&rng]() {
        std::string out;
        const std::size_t words = rng() % 6;
        static const std::vector<std::string> vocab{"the", "last",  "horcrux", "elder",
                                                    "wand", "snake", "a",      "Neville!",
                                                    "brave", "sword"};
        for (std::size_t i = 0; i < words; ++i) {
            if (!out.empty()) out += " ";
            out += vocab[rng() % vocab.size()];
        }
        return out;
    };
    for (int round = 0; round < 200; ++round) {
        const std::string prediction = random_answer();
        const std::vector<std::string> golds{random_answer(), random_answer()};
        const double f1 = token_f1(prediction, golds);
        const int em = exact_match(prediction, golds);
        CHECK(f1 == doctest::Approx(oracle::naive_f1(prediction, golds)).epsilon(1e-12));
        CHECK(em == oracle::naive_em(prediction, golds));
        CHECK(f1 >= 0.0);
        CHECK(f1 <= 1.0);
        CHECK((em == 0 || em == 1));
        if (em == 1) CHECK(f1 == doctest::Approx(1.0));
    }
}

TEST_CASE("token F1 of any non-empty answer against itself is 1") {
    for (const char* s : {"x", "two words", "The Answer!", "a b c d"}) {
        if (normalize_answer(s).empty()) continue;
        CHECK(token_f1(s, {s}) == doctest::Approx(1.0));
    }
}

TEST_CASE("dataset loader adapts common validation formats") {
    const auto path = std::filesystem::temp_directory_path() / "sc_dataset.jsonl";
    {
        std::ofstream out(path);
        out << R"({"qid": "q1", "question": "Q one?", "answers": ["A", "B"]})" << "\n";
        out << R"({"_id": "q2", "question": "Q two?", "answer": "C", "level": "hard"})" << "\n";
    }
    const auto examples = load_dataset(path);
    REQUIRE(examples.size() == 2);
    CHECK(examples[0].qid == "q1");
    CHECK(examples[0].gold_answers.size() == 2);
    CHECK(examples[1].qid == "q2");
    CHECK(examples[1].gold_answers == std::vector<std::string>{"C"});
}

TEST_CASE("dataset records without usable gold answers are rejected") {
    const auto path = std::filesystem::temp_directory_path() / "sc_dataset_bad.jsonl";
    {
        std::ofstream out(path);
        out << R"({"qid": "q1", "question": "Q?", "answers": []})" << "\n";
    }
    CHECK_THROWS_AS(load_dataset(path), ParseError);
}

namespace {

std::vector<QAExample> two_question_dataset() {
    return {{"q1", "Who destroys the last Horcrux?", {"Neville"}},
            {"q2", "What is the final Horcrux?", {"Nagini"}}};
}

} // namespace

TEST_CASE("a perfect two-question run aggregates to EM 100 F1 100") {
    const auto out = std::filesystem::temp_directory_path() / "sc_report_perfect.jsonl";
    std::filesystem::remove(out);
    const auto report = run_benchmark(
        two_question_dataset(),
        [](const QAExample& example) {
            return example.qid == "q1" ? std::string("Neville") : std::string("Nagini");
        },
        out, {}, {});
    CHECK(report.em_pct == doctest::Approx(100.0));
    CHECK(report.f1_pct == doctest::Approx(100.0));
}

TEST_CASE("one of two correct aggregates to EM 50") {
    const auto out = std::filesystem::temp_directory_path() / "sc_report_half.jsonl";
    std::filesystem::remove(out);
    const auto report = run_benchmark(
        two_question_dataset(),
        [](const QAExample& example) {
            return example.qid == "q1" ? std::string("Neville") : std::string("Dobby");
        },
        out, {}, {});
    CHECK(report.em_pct == doctest::Approx(50.0));
}

TEST_CASE("a throwing pipeline scores zero for that question and the run continues") {
    const auto out = std::filesystem::temp_directory_path() / "sc_report_error.jsonl";
    std::filesystem::remove(out);
    const auto report = run_benchmark(
        two_question_dataset(),
        [](const QAExample& example) -> std::string {
            if (example.qid == "q1") throw std::runtime_error("pipeline abort");
            return "Nagini";
        },
        out, {}, {});
    REQUIRE(report.per_question.size() == 2);
    CHECK(report.per_question[0].em == 0);
    CHECK(report.per_question[0].f1 == doctest::Approx(0.0));
    CHECK(report.per_question[0].error == "pipeline abort");
    CHECK(report.em_pct == doctest::Approx(50.0));
}

TEST_CASE("a resumed run scores only unscored qids and reproduces the aggregates") {
    const auto out = std::filesystem::temp_directory_path() / "sc_report_resume.jsonl";
    std::filesystem::remove(out);
    const auto dataset = two_question_dataset();
    int calls = 0;
    auto answer = [&calls](const QAExample& example) {
        ++calls;
        return example.qid == "q1" ? std::string("Neville") : std::string("Nagini");
    };

    // interrupted run: only the first question was scored
    run_benchmark({dataset[0]}, answer, out, {}, {});
    CHECK(calls == 1);

    // resume over the full dataset: q1 is reused, q2 freshly scored
    const auto resumed = run_benchmark(dataset, answer, out, {}, {});
    CHECK(calls == 2);
    CHECK(resumed.em_pct == doctest::Approx(100.0));

    // the resumed file matches an uninterrupted run's aggregates
    const auto fresh_out = std::filesystem::temp_directory_path() / "sc_report_fresh.jsonl";
    std::filesystem::remove(fresh_out);
    const auto fresh = run_benchmark(dataset, answer, fresh_out, {}, {});
    CHECK(fresh.em_pct == doctest::Approx(resumed.em_pct));
    CHECK(fresh.f1_pct == doctest::Approx(resumed.f1_pct));
}

TEST_CASE("the report file ends with one aggregate record carrying the flags") {
    const auto out = std::filesystem::temp_directory_path() / "sc_report_shape.jsonl";
    std::filesystem::remove(out);
    run_benchmark(two_question_dataset(),
                  [](const QAExample&) { return std::string("x"); }, out,
                  nlohmann::ordered_json{{"k_passages", 20}},
                  nlohmann::ordered_json{{"decomposition", false}});
    std::ifstream in(out);
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty()) lines.push_back(line);
    }
    REQUIRE(lines.size() == 3);
    const auto aggregate = nlohmann::json::parse(lines.back());
    CHECK(aggregate.value("aggregate", false));
    CHECK(aggregate["n"] == 2);
    CHECK(aggregate["ablation"]["decomposition"] == false);
    for (std::size_t i = 0; i + 1 < lines.size(); ++i) {
        CHECK_FALSE(nlohmann::json::parse(lines[i]).value("aggregate", false));
    }
}
