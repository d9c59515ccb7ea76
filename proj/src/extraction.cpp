#include "stepchain/extraction.hpp"
#include "stepchain/errors.hpp"
#include "stepchain/text.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>
#include <unordered_map>
#include <unordered_set>

namespace stepchain {

namespace {

// Function words skipped when scanning for the relation verb between two
// mentions. Auxiliaries and copulas are deliberately absent: "is", "became"
// and friends are legitimate main verbs for a relation label.
const std::unordered_set<std::string>& verb_skip_words() {
    static const std::unordered_set<std::string> words{
        "the",     "a",       "an",      "of",      "in",      "on",      "at",     "by",
        "with",    "from",    "to",      "for",     "into",    "over",    "under",  "about",
        "against", "between", "through", "during",  "without", "within",  "upon",   "among",
        "across",  "and",     "or",      "but",     "nor",     "so",      "if",     "then",
        "than",    "that",    "which",   "who",     "whom",    "whose",   "also",   "not",
        "no",      "never",   "always",  "often",   "sometimes", "later", "soon",
        "eventually", "finally", "still", "yet",    "just",    "only",    "very",   "quite",
        "rather",  "too",     "both",    "each",    "every",   "all",     "some",   "any",
        "many",    "few",     "several", "one",     "two",     "three",   "four",   "five",
        "six",     "seven",   "eight",   "nine",    "ten",     "more",    "most",   "other",
        "another", "such",    "its",     "his",     "her",     "their",   "our",    "my",
        "your"};
    return words;
}

// Words that cannot carry a mention on their own: a capitalized span made
// entirely of these (sentence starters, pronouns, auxiliaries) is dropped.
const std::unordered_set<std::string>& mention_stop_words() {
    static const std::unordered_set<std::string> words = [] {
        std::unordered_set<std::string> s = verb_skip_words();
        for (const char* w :
             {"he",    "she",   "it",    "they",  "we",     "i",       "you",      "what",
              "when",  "where", "why",   "how",   "this",   "these",   "those",    "there",
              "here",  "after", "before", "meanwhile", "however", "although", "though",
              "because", "since", "while", "once", "now",   "today",   "yesterday",
              "tomorrow", "is",  "are",   "was",   "were",  "be",      "been",     "being",
              "has",   "have",  "had",   "do",    "does",   "did",     "will",     "would",
              "can",   "could", "shall", "should", "may",   "might",   "must",     "as"}) {
            s.insert(w);
        }
        return s;
    }();
    return words;
}

struct Word {
    std::string text; // surrounding punctuation stripped
    bool capitalized = false;
};

struct Sentence {
    std::vector<Word> words;
};

std::string strip_punctuation(std::string_view token) {
    std::size_t begin = 0;
    std::size_t end = token.size();
    while (begin < end && !std::isalnum(static_cast<unsigned char>(token[begin]))) ++begin;
    while (end > begin && !std::isalnum(static_cast<unsigned char>(token[end - 1]))) --end;
    return std::string(token.substr(begin, end - begin));
}

std::vector<Sentence> split_sentences(const std::string& text) {
    std::vector<Sentence> sentences;
    Sentence current;
    WhitespaceTokenizer tokenizer;
    for (const auto& span : tokenizer.token_spans(text)) {
        std::string_view raw(text.data() + span.begin, span.end - span.begin);
        std::string word = strip_punctuation(raw);
        if (!word.empty()) {
            Word w;
            w.capitalized = std::isupper(static_cast<unsigned char>(word.front())) != 0;
            w.text = std::move(word);
            current.words.push_back(std::move(w));
        }
        const char last = raw.back();
        if ((last == '.' || last == '!' || last == '?') && !current.words.empty()) {
            sentences.push_back(std::move(current));
            current = Sentence{};
        }
    }
    if (!current.words.empty()) sentences.push_back(std::move(current));
    return sentences;
}

// Half-open word-index span of one mention occurrence within a sentence.
struct Occurrence {
    std::size_t sentence = 0;
    std::size_t begin = 0;
    std::size_t end = 0;
    std::string surface;
    std::string canonical;
};

bool all_stop_words(const std::vector<Word>& words, std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
        if (!mention_stop_words().count(to_lower(words[i].text))) return false;
    }
    return true;
}

std::string join_words(const std::vector<Word>& words, std::size_t begin, std::size_t end) {
    std::string out;
    for (std::size_t i = begin; i < end; ++i) {
        if (!out.empty()) out.push_back(' ');
        out += words[i].text;
    }
    return out;
}

std::vector<Occurrence> find_occurrences(const std::vector<Sentence>& sentences,
                                         const std::vector<std::vector<std::string>>& gazetteer) {
    std::vector<Occurrence> occurrences;
    for (std::size_t s = 0; s < sentences.size(); ++s) {
        const auto& words = sentences[s].words;
        // maximal spans of capitalized words
        std::size_t i = 0;
        while (i < words.size()) {
            if (!words[i].capitalized) {
                ++i;
                continue;
            }
            std::size_t j = i;
            while (j < words.size() && words[j].capitalized) ++j;
            if (!all_stop_words(words, i, j)) {
                Occurrence occ;
                occ.sentence = s;
                occ.begin = i;
                occ.end = j;
                occ.surface = join_words(words, i, j);
                occ.canonical = canonicalize_entity(occ.surface);
                if (!occ.canonical.empty()) occurrences.push_back(std::move(occ));
            }
            i = j;
        }
        // gazetteer terms, matched case-insensitively as word sequences
        for (const auto& term : gazetteer) {
            if (term.empty() || term.size() > words.size()) continue;
            for (std::size_t start = 0; start + term.size() <= words.size(); ++start) {
                bool match = true;
                for (std::size_t k = 0; k < term.size(); ++k) {
                    if (to_lower(words[start + k].text) != term[k]) {
                        match = false;
                        break;
                    }
                }
                if (!match) continue;
                Occurrence occ;
                occ.sentence = s;
                occ.begin = start;
                occ.end = start + term.size();
                occ.surface = join_words(words, start, start + term.size());
                occ.canonical = canonicalize_entity(occ.surface);
                if (!occ.canonical.empty()) occurrences.push_back(std::move(occ));
            }
        }
    }
    // stable order: by (sentence, begin, end); drop exact duplicates
    std::sort(occurrences.begin(), occurrences.end(), [](const Occurrence& a, const Occurrence& b) {
        return std::tie(a.sentence, a.begin, a.end, a.canonical) <
               std::tie(b.sentence, b.begin, b.end, b.canonical);
    });
    occurrences.erase(std::unique(occurrences.begin(), occurrences.end(),
                                  [](const Occurrence& a, const Occurrence& b) {
                                      return a.sentence == b.sentence && a.begin == b.begin &&
                                             a.end == b.end && a.canonical == b.canonical;
                                  }),
                      occurrences.end());
    return occurrences;
}

} // namespace

RuleBasedExtractor::RuleBasedExtractor(std::vector<std::string> gazetteer) {
    for (const auto& name : gazetteer) {
        auto terms = text_terms(name);
        if (!terms.empty()) gazetteer_.push_back(std::move(terms));
    }
}

RuleBasedExtractor RuleBasedExtractor::with_gazetteer_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw CorpusLoadError("cannot open gazetteer file: " + path.string());
    }
    std::vector<std::string> names;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty()) names.push_back(line);
    }
    return RuleBasedExtractor(std::move(names));
}

std::vector<EntityMention> RuleBasedExtractor::extract_entities(const Chunk& chunk) const {
    const auto sentences = split_sentences(chunk.text);
    const auto occurrences = find_occurrences(sentences, gazetteer_);
    std::vector<EntityMention> mentions;
    std::unordered_set<std::string> seen;
    for (const auto& occ : occurrences) {
        if (!seen.insert(occ.canonical).second) continue;
        mentions.push_back({occ.surface, occ.canonical, {}});
    }
    return mentions;
}

std::vector<RelationTriple> RuleBasedExtractor::link_relations(
    const Chunk& chunk, const std::vector<EntityMention>& mentions) const {
    std::unordered_set<std::string> allowed;
    for (const auto& m : mentions) allowed.insert(m.canonical);

    const auto sentences = split_sentences(chunk.text);
    auto occurrences = find_occurrences(sentences, gazetteer_);
    occurrences.erase(std::remove_if(occurrences.begin(), occurrences.end(),
                                     [&](const Occurrence& o) { return !allowed.count(o.canonical); }),
                      occurrences.end());

    struct TripleKey {
        std::string head, relation, tail;
        bool operator<(const TripleKey& other) const {
            return std::tie(head, relation, tail) <
                   std::tie(other.head, other.relation, other.tail);
        }
    };
    std::map<TripleKey, double> triples;
    std::set<std::pair<std::string, std::string>> same_sentence_pairs; // unordered canonical pair

    auto pair_key = [](const std::string& a, const std::string& b) {
        return a < b ? std::make_pair(a, b) : std::make_pair(b, a);
    };

    // same-sentence pairs: verb label if one is found between the mentions
    for (std::size_t s = 0; s < sentences.size(); ++s) {
        const auto& words = sentences[s].words;
        std::vector<const Occurrence*> in_sentence;
        for (const auto& occ : occurrences) {
            if (occ.sentence == s) in_sentence.push_back(&occ);
        }
        for (std::size_t a = 0; a < in_sentence.size(); ++a) {
            for (std::size_t b = a + 1; b < in_sentence.size(); ++b) {
                const Occurrence& head = *in_sentence[a];
                const Occurrence& tail = *in_sentence[b];
                if (head.canonical == tail.canonical) continue;
                same_sentence_pairs.insert(pair_key(head.canonical, tail.canonical));
                std::string label = "related_to";
                double confidence = 0.3;
                if (head.end <= tail.begin) {
                    for (std::size_t w = head.end; w < tail.begin; ++w) {
                        const std::string lower = to_lower(words[w].text);
                        if (!verb_skip_words().count(lower)) {
                            label = lower;
                            confidence = 0.9;
                            break;
                        }
                    }
                }
                TripleKey key{head.canonical, label, tail.canonical};
                auto [it, inserted] = triples.emplace(key, confidence);
                if (!inserted) it->second = std::max(it->second, confidence);
            }
        }
    }

    // chunk-level co-occurrence with no shared sentence: weak related_to edge
    std::unordered_map<std::string, std::size_t> first_position;
    std::vector<std::string> order;
    for (std::size_t i = 0; i < occurrences.size(); ++i) {
        if (first_position.emplace(occurrences[i].canonical, i).second) {
            order.push_back(occurrences[i].canonical);
        }
    }
    for (std::size_t a = 0; a < order.size(); ++a) {
        for (std::size_t b = a + 1; b < order.size(); ++b) {
            if (same_sentence_pairs.count(pair_key(order[a], order[b]))) continue;
            TripleKey key{order[a], "related_to", order[b]};
            auto [it, inserted] = triples.emplace(key, 0.3);
            if (!inserted) it->second = std::max(it->second, 0.3);
        }
    }

    std::vector<RelationTriple> out;
    out.reserve(triples.size());
    for (const auto& [key, confidence] : triples) {
        out.push_back({key.head, key.relation, key.tail, chunk.chunk_id, confidence});
    }
    return out;
}

Extraction RuleBasedExtractor::extract(const Chunk& chunk) const {
    Extraction result;
    result.mentions = extract_entities(chunk);
    result.triples = link_relations(chunk, result.mentions);
    return result;
}

// ---------------------------------------------------------------------------
// LlmExtractor
// ---------------------------------------------------------------------------

namespace {

Extraction parse_extraction_response(const std::string& text, const Chunk& chunk,
                                     double default_confidence) {
    nlohmann::json doc = nlohmann::json::parse(text); // throws on malformed JSON
    if (!doc.is_object() || !doc.contains("entities") || !doc["entities"].is_array() ||
        !doc.contains("relations") || !doc["relations"].is_array()) {
        throw ParseError("extraction response must carry \"entities\" and \"relations\" arrays");
    }
    Extraction result;
    std::unordered_set<std::string> seen;
    auto add_mention = [&](const std::string& name, const std::string& type) {
        const std::string canonical = canonicalize_entity(name);
        if (canonical.empty() || !seen.insert(canonical).second) return;
        EntityMention mention{name, canonical, {}};
        if (!type.empty()) mention.attributes["type"] = type;
        result.mentions.push_back(std::move(mention));
    };
    for (const auto& e : doc["entities"]) {
        if (!e.is_object() || !e.contains("name") || !e["name"].is_string()) {
            throw ParseError("extraction entity entries need a string \"name\"");
        }
        std::string type;
        if (e.contains("type") && e["type"].is_string()) type = e["type"].get<std::string>();
        add_mention(e["name"].get<std::string>(), type);
    }
    for (const auto& r : doc["relations"]) {
        if (!r.is_object() || !r.contains("head") || !r.contains("relation") ||
            !r.contains("tail") || !r["head"].is_string() || !r["relation"].is_string() ||
            !r["tail"].is_string()) {
            throw ParseError("extraction relation entries need string head/relation/tail");
        }
        RelationTriple triple;
        triple.head_canonical = canonicalize_entity(r["head"].get<std::string>());
        triple.tail_canonical = canonicalize_entity(r["tail"].get<std::string>());
        triple.relation_label = to_lower(r["relation"].get<std::string>());
        triple.support_chunk_id = chunk.chunk_id;
        triple.confidence = default_confidence;
        if (triple.head_canonical.empty() || triple.tail_canonical.empty() ||
            triple.relation_label.empty() || triple.head_canonical == triple.tail_canonical) {
            continue;
        }
        // closure: endpoints the model forgot to list still become mentions
        add_mention(r["head"].get<std::string>(), "");
        add_mention(r["tail"].get<std::string>(), "");
        result.triples.push_back(std::move(triple));
    }
    return result;
}

} // namespace

Extraction LlmExtractor::extract(const Chunk& chunk) const {
    PromptRequest request;
    request.template_name = "extract";
    request.role = Role::extract;
    request.rendered_prompt = templates_->render("extract", {{"chunk_text", chunk.text}});

    std::string raw;
    try {
        raw = client_->complete(request).text;
        return parse_extraction_response(raw, chunk, default_confidence_);
    } catch (const ProviderError&) {
        throw; // transport already retried inside the client
    } catch (const nlohmann::json::exception&) {
    } catch (const ParseError&) {
    }

    // one repair retry with an amended prompt (an identical prompt would just
    // replay the cached bad response)
    PromptRequest repair = request;
    repair.rendered_prompt += "\n\nYour previous reply was not valid JSON for the schema. "
                              "Return only the JSON object.";
    std::string repaired;
    try {
        repaired = client_->complete(repair).text;
        return parse_extraction_response(repaired, chunk, default_confidence_);
    } catch (const ProviderError&) {
        throw;
    } catch (const nlohmann::json::exception& e) {
        throw ExtractionError("extraction response unparseable after repair retry for chunk \"" +
                                  chunk.chunk_id + "\": " + e.what(),
                              repaired);
    } catch (const ParseError& e) {
        throw ExtractionError("extraction response unparseable after repair retry for chunk \"" +
                                  chunk.chunk_id + "\": " + e.what(),
                              repaired);
    }
}

} // namespace stepchain
