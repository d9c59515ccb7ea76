#pragma once

#include <filesystem>
#include <functional>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

namespace stepchain {

struct QAExample {
    std::string qid;
    std::string question;
    std::vector<std::string> gold_answers; // non-empty
};

struct QuestionScore {
    std::string qid;
    std::string prediction;
    int em = 0;
    double f1 = 0.0;
    long long elapsed_ms = 0;
    std::string error; // set when the pipeline aborted on this question
};

struct EvalReport {
    std::vector<QuestionScore> per_question;
    double em_pct = 0.0; // mean EM x 100
    double f1_pct = 0.0; // mean F1 x 100
};

// SQuAD-style normalization: lowercase, strip punctuation, strip the
// articles a/an/the, collapse whitespace.
std::string normalize_answer(const std::string& s);

// 1 iff the normalized prediction equals any normalized gold answer.
int exact_match(const std::string& prediction, const std::vector<std::string>& gold_answers);

// Max over gold answers of the harmonic mean of token precision and recall
// (multiset overlap of normalized whitespace tokens). Both empty -> 1.0,
// exactly one empty -> 0.0.
double token_f1(const std::string& prediction, const std::vector<std::string>& gold_answers);

// Line-delimited JSON: {"qid", "question", "answers": [...]}. Also accepts
// the HotpotQA/2Wiki/MuSiQue validation shapes ("_id"/"id", "answer").
std::vector<QAExample> load_dataset(const std::filesystem::path& path);

// Scores every example with the supplied answer function, appending one
// record per question to out_path as it goes; a rerun skips qids already
// scored in the file and reproduces identical aggregates. Per-question
// failures score as zero with an error note. jobs > 1 evaluates questions
// concurrently; the report writer serializes appends and the aggregate is
// order-independent.
EvalReport run_benchmark(const std::vector<QAExample>& dataset,
                         const std::function<std::string(const QAExample&)>& answer_fn,
                         const std::filesystem::path& out_path,
                         const nlohmann::ordered_json& config_snapshot,
                         const nlohmann::ordered_json& ablation_flags, std::size_t jobs = 1);

} // namespace stepchain
