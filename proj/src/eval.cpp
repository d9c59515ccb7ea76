#include "stepchain/eval.hpp"
#include "stepchain/errors.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <chrono>
#include <fstream>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

namespace stepchain {

std::string normalize_answer(const std::string& s) {
    std::string lowered;
    lowered.reserve(s.size());
    for (char c : s) {
        const unsigned char uc = static_cast<unsigned char>(c);
        if (std::ispunct(uc)) continue; // punctuation removed, not replaced
        lowered.push_back(static_cast<char>(std::tolower(uc)));
    }
    std::istringstream words(lowered);
    std::string word;
    std::string out;
    while (words >> word) {
        if (word == "a" || word == "an" || word == "the") continue;
        if (!out.empty()) out.push_back(' ');
        out += word;
    }
    return out;
}

namespace {

std::vector<std::string> normalized_tokens(const std::string& s) {
    std::istringstream stream(normalize_answer(s));
    std::vector<std::string> tokens;
    std::string token;
    while (stream >> token) tokens.push_back(std::move(token));
    return tokens;
}

double f1_against(const std::vector<std::string>& pred, const std::vector<std::string>& gold) {
    if (pred.empty() && gold.empty()) return 1.0;
    if (pred.empty() || gold.empty()) return 0.0;
    std::map<std::string, std::size_t> gold_counts;
    for (const auto& t : gold) ++gold_counts[t];
    std::size_t overlap = 0;
    for (const auto& t : pred) {
        auto it = gold_counts.find(t);
        if (it != gold_counts.end() && it->second > 0) {
            --it->second;
            ++overlap;
        }
    }
    if (overlap == 0) return 0.0;
    const double precision = static_cast<double>(overlap) / static_cast<double>(pred.size());
    const double recall = static_cast<double>(overlap) / static_cast<double>(gold.size());
    return 2.0 * precision * recall / (precision + recall);
}

} // namespace

int exact_match(const std::string& prediction, const std::vector<std::string>& gold_answers) {
    const std::string normalized = normalize_answer(prediction);
    for (const auto& gold : gold_answers) {
        if (normalized == normalize_answer(gold)) return 1;
    }
    return 0;
}

double token_f1(const std::string& prediction, const std::vector<std::string>& gold_answers) {
    const auto pred_tokens = normalized_tokens(prediction);
    double best = 0.0;
    for (const auto& gold : gold_answers) {
        best = std::max(best, f1_against(pred_tokens, normalized_tokens(gold)));
    }
    return best;
}

std::vector<QAExample> load_dataset(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw CorpusLoadError("cannot open dataset file: " + path.string());
    }
    std::vector<QAExample> examples;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        nlohmann::json rec;
        try {
            rec = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw ParseError("dataset line " + std::to_string(line_no) + ": malformed JSON: " +
                             e.what());
        }
        QAExample example;
        for (const char* key : {"qid", "_id", "id"}) {
            if (rec.contains(key) && rec[key].is_string()) {
                example.qid = rec[key].get<std::string>();
                break;
            }
        }
        if (example.qid.empty()) example.qid = "q" + std::to_string(line_no);
        if (!rec.contains("question") || !rec["question"].is_string()) {
            throw ParseError("dataset line " + std::to_string(line_no) +
                             ": record needs a string \"question\"");
        }
        example.question = rec["question"].get<std::string>();
        if (rec.contains("answers") && rec["answers"].is_array()) {
            for (const auto& a : rec["answers"]) {
                if (a.is_string()) example.gold_answers.push_back(a.get<std::string>());
            }
        } else if (rec.contains("answer") && rec["answer"].is_string()) {
            example.gold_answers.push_back(rec["answer"].get<std::string>());
        }
        example.gold_answers.erase(
            std::remove_if(example.gold_answers.begin(), example.gold_answers.end(),
                           [](const std::string& a) { return normalize_answer(a).empty(); }),
            example.gold_answers.end());
        if (example.gold_answers.empty()) {
            throw ParseError("dataset line " + std::to_string(line_no) +
                             ": record needs at least one non-empty gold answer");
        }
        examples.push_back(std::move(example));
    }
    return examples;
}

EvalReport run_benchmark(const std::vector<QAExample>& dataset,
                         const std::function<std::string(const QAExample&)>& answer_fn,
                         const std::filesystem::path& out_path,
                         const nlohmann::ordered_json& config_snapshot,
                         const nlohmann::ordered_json& ablation_flags, std::size_t jobs) {
    // resume: pick up already-scored qids from a previous interrupted run
    std::map<std::string, QuestionScore> already;
    if (std::filesystem::exists(out_path)) {
        std::ifstream in(out_path);
        std::string line;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            nlohmann::json rec;
            try {
                rec = nlohmann::json::parse(line);
            } catch (const nlohmann::json::exception&) {
                continue;
            }
            if (!rec.is_object() || rec.value("aggregate", false) || !rec.contains("qid")) continue;
            QuestionScore score;
            score.qid = rec["qid"].get<std::string>();
            score.prediction = rec.value("prediction", "");
            score.em = rec.value("em", 0);
            score.f1 = rec.value("f1", 0.0);
            score.elapsed_ms = rec.value("elapsed_ms", 0LL);
            score.error = rec.value("error", "");
            already.emplace(score.qid, std::move(score));
        }
    }

    if (out_path.has_parent_path()) std::filesystem::create_directories(out_path.parent_path());
    std::ofstream out(out_path, std::ios::trunc);
    if (!out) {
        throw CorpusLoadError("cannot open report file for writing: " + out_path.string());
    }
    auto write_record = [&out](const QuestionScore& score) {
        nlohmann::ordered_json rec{{"qid", score.qid},
                                   {"prediction", score.prediction},
                                   {"em", score.em},
                                   {"f1", score.f1},
                                   {"elapsed_ms", score.elapsed_ms}};
        if (!score.error.empty()) rec["error"] = score.error;
        out << rec.dump() << "\n";
        out.flush();
    };

    auto score_one = [&answer_fn](const QAExample& example) {
        QuestionScore score;
        score.qid = example.qid;
        const auto started = std::chrono::steady_clock::now();
        try {
            score.prediction = answer_fn(example);
            score.em = exact_match(score.prediction, example.gold_answers);
            score.f1 = token_f1(score.prediction, example.gold_answers);
        } catch (const std::exception& e) {
            score.em = 0;
            score.f1 = 0.0;
            score.error = e.what();
        }
        score.elapsed_ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                               std::chrono::steady_clock::now() - started)
                               .count();
        return score;
    };

    EvalReport report;
    if (jobs <= 1) {
        for (const auto& example : dataset) {
            auto it = already.find(example.qid);
            if (it != already.end()) {
                write_record(it->second);
                report.per_question.push_back(it->second);
                continue;
            }
            QuestionScore score = score_one(example);
            write_record(score);
            report.per_question.push_back(std::move(score));
        }
    } else {
        // workers pull unscored examples; records flush in completion order
        std::vector<const QAExample*> todo;
        for (const auto& example : dataset) {
            auto it = already.find(example.qid);
            if (it != already.end()) {
                write_record(it->second);
            } else {
                todo.push_back(&example);
            }
        }
        std::mutex sink_mutex;
        std::atomic<std::size_t> next{0};
        auto worker = [&] {
            while (true) {
                const std::size_t i = next.fetch_add(1);
                if (i >= todo.size()) break;
                QuestionScore score = score_one(*todo[i]);
                std::lock_guard<std::mutex> lock(sink_mutex);
                write_record(score);
                already.emplace(score.qid, std::move(score));
            }
        };
        std::vector<std::thread> pool;
        for (std::size_t i = 0; i < std::min(jobs, todo.size()); ++i) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
        for (const auto& example : dataset) {
            report.per_question.push_back(already.at(example.qid));
        }
    }

    double em_sum = 0.0;
    double f1_sum = 0.0;
    for (const auto& score : report.per_question) {
        em_sum += score.em;
        f1_sum += score.f1;
    }
    const double n = report.per_question.empty()
                         ? 1.0
                         : static_cast<double>(report.per_question.size());
    report.em_pct = 100.0 * em_sum / n;
    report.f1_pct = 100.0 * f1_sum / n;

    out << nlohmann::ordered_json{{"aggregate", true},
                                  {"n", report.per_question.size()},
                                  {"em_pct", report.em_pct},
                                  {"f1_pct", report.f1_pct},
                                  {"config", config_snapshot},
                                  {"ablation", ablation_flags}}
               .dump()
        << "\n";
    return report;
}

} // namespace stepchain
