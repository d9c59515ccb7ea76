#include "stepchain/llm.hpp"
#include "stepchain/errors.hpp"
#include "stepchain/text.hpp"

#include <httplib.h>
#include <nlohmann/json.hpp>

#include <cctype>
#include <chrono>
#include <fstream>
#include <thread>

namespace stepchain {

namespace {

std::atomic<std::uint64_t> g_http_requests{0};

std::optional<Role> role_from_name(const std::string& name) {
    if (name == "decompose") return Role::decompose;
    if (name == "extract") return Role::extract;
    if (name == "subanswer") return Role::subanswer;
    if (name == "merge") return Role::merge;
    if (name == "finalize") return Role::finalize;
    if (name == "summarize") return Role::summarize;
    return std::nullopt;
}

} // namespace

std::string role_name(Role role) {
    switch (role) {
    case Role::decompose: return "decompose";
    case Role::extract: return "extract";
    case Role::subanswer: return "subanswer";
    case Role::merge: return "merge";
    case Role::finalize: return "finalize";
    case Role::summarize: return "summarize";
    }
    return "unknown";
}

// ---------------------------------------------------------------------------
// MockScript / MockProvider
// ---------------------------------------------------------------------------

MockScript MockScript::from_json_text(const std::string& text) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("malformed mock script: ") + e.what());
    }
    MockScript script;
    const nlohmann::json* entries = nullptr;
    if (doc.is_array()) {
        entries = &doc;
    } else if (doc.is_object()) {
        if (doc.contains("default_response")) {
            script.default_response = doc["default_response"].get<std::string>();
        }
        if (doc.contains("entries")) entries = &doc["entries"];
    }
    if (entries != nullptr) {
        for (const auto& e : *entries) {
            MockScriptEntry entry;
            if (e.contains("match")) entry.match_substring = e["match"].get<std::string>();
            if (e.contains("role")) {
                const auto role = role_from_name(e["role"].get<std::string>());
                if (!role) {
                    throw ParseError("mock script entry names unknown role \"" +
                                     e["role"].get<std::string>() + "\"");
                }
                entry.match_role = role;
            }
            if (entry.match_substring.empty() && !entry.match_role) {
                throw ParseError("mock script entry needs \"match\" or \"role\"");
            }
            if (e.contains("response")) entry.response = e["response"].get<std::string>();
            if (e.contains("fail_times")) entry.fail_times = e["fail_times"].get<int>();
            script.entries.push_back(std::move(entry));
        }
    }
    return script;
}

MockScript MockScript::from_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw CorpusLoadError("cannot open mock script: " + path.string());
    }
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return from_json_text(text);
}

MockProvider::MockProvider(MockScript script, int simulated_latency_ms)
    : script_(std::move(script)), simulated_latency_ms_(simulated_latency_ms) {
    remaining_failures_.reserve(script_.entries.size());
    for (const auto& e : script_.entries) remaining_failures_.push_back(e.fail_times);
}

std::string MockProvider::complete_raw(const PromptRequest& request) {
    const int now_in_flight = ++in_flight_;
    int peak = peak_in_flight_.load();
    while (now_in_flight > peak && !peak_in_flight_.compare_exchange_weak(peak, now_in_flight)) {
    }
    ++calls_;
    if (simulated_latency_ms_ > 0) {
        std::this_thread::sleep_for(std::chrono::milliseconds(simulated_latency_ms_));
    }
    struct InFlightGuard {
        std::atomic<int>& counter;
        ~InFlightGuard() { --counter; }
    } guard{in_flight_};

    std::lock_guard<std::mutex> lock(mutex_);
    for (std::size_t i = 0; i < script_.entries.size(); ++i) {
        const auto& entry = script_.entries[i];
        const bool role_hit = entry.match_role && *entry.match_role == request.role;
        const bool text_hit = !entry.match_substring.empty() &&
                              request.rendered_prompt.find(entry.match_substring) !=
                                  std::string::npos;
        if (!role_hit && !text_hit) continue;
        if (remaining_failures_[i] != 0) {
            if (remaining_failures_[i] > 0) --remaining_failures_[i];
            throw ProviderError("scripted mock failure for role " + role_name(request.role));
        }
        return entry.response;
    }
    return script_.default_response;
}

// ---------------------------------------------------------------------------
// HttpChatProvider
// ---------------------------------------------------------------------------

HttpChatProvider::HttpChatProvider(std::string base_url, std::string path, std::string model,
                                   std::string api_key)
    : base_url_(std::move(base_url)), path_(std::move(path)), model_(std::move(model)),
      api_key_(std::move(api_key)) {}

std::uint64_t HttpChatProvider::request_count() {
    return g_http_requests.load();
}

std::string HttpChatProvider::complete_raw(const PromptRequest& request) {
    ++g_http_requests;
    httplib::Client client(base_url_);
    client.set_read_timeout(120, 0);
    httplib::Headers headers;
    if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);
    nlohmann::json body = {
        {"model", model_},
        {"messages", nlohmann::json::array({nlohmann::json{{"role", "user"},
                                                           {"content", request.rendered_prompt}}})},
        {"temperature", request.temperature},
        {"max_tokens", request.max_output_tokens},
    };
    auto res = client.Post(path_, headers, body.dump(), "application/json");
    if (!res) {
        throw ProviderError("chat endpoint unreachable");
    }
    if (res->status != 200) {
        throw ProviderError("chat endpoint returned status " + std::to_string(res->status));
    }
    nlohmann::json parsed;
    try {
        parsed = nlohmann::json::parse(res->body);
    } catch (const nlohmann::json::exception& e) {
        throw ProviderError(std::string("chat endpoint returned malformed JSON: ") + e.what());
    }
    if (!parsed.contains("choices") || !parsed["choices"].is_array() ||
        parsed["choices"].empty()) {
        throw ProviderError("chat endpoint response carries no choices");
    }
    const auto& first = parsed["choices"][0];
    if (first.contains("message") && first["message"].contains("content")) {
        return first["message"]["content"].get<std::string>();
    }
    if (first.contains("text")) {
        return first["text"].get<std::string>();
    }
    throw ProviderError("chat endpoint response carries no message content");
}

// ---------------------------------------------------------------------------
// Templates
// ---------------------------------------------------------------------------

TemplateStore TemplateStore::from_directory(const std::filesystem::path& dir) {
    TemplateStore store;
    if (!std::filesystem::is_directory(dir)) {
        throw ConfigError("template directory does not exist: " + dir.string());
    }
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        if (!entry.is_regular_file() || entry.path().extension() != ".txt") continue;
        std::ifstream in(entry.path());
        std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        store.add_template(entry.path().stem().string(), std::move(text));
    }
    return store;
}

void TemplateStore::add_template(const std::string& name, std::string text) {
    templates_[name] = std::move(text);
}

bool TemplateStore::has_template(const std::string& name) const {
    return templates_.count(name) > 0;
}

std::string render_template_text(const std::string& template_text,
                                 const std::map<std::string, std::string>& variables,
                                 const std::string& template_name) {
    std::string out;
    out.reserve(template_text.size());
    std::size_t i = 0;
    const std::size_t n = template_text.size();
    auto is_placeholder_char = [](char c) {
        return (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c == '_';
    };
    while (i < n) {
        const char c = template_text[i];
        if (c != '{') {
            out.push_back(c);
            ++i;
            continue;
        }
        std::size_t j = i + 1;
        while (j < n && is_placeholder_char(template_text[j])) ++j;
        if (j > i + 1 && j < n && template_text[j] == '}') {
            const std::string name = template_text.substr(i + 1, j - i - 1);
            auto it = variables.find(name);
            if (it == variables.end()) {
                throw ConfigError("template \"" + template_name + "\" has unbound placeholder {" +
                                  name + "}");
            }
            out += it->second;
            i = j + 1;
        } else {
            out.push_back(c); // literal brace, not a placeholder
            ++i;
        }
    }
    return out;
}

std::string TemplateStore::render(const std::string& template_name,
                                  const std::map<std::string, std::string>& variables) const {
    auto it = templates_.find(template_name);
    if (it == templates_.end()) {
        throw ConfigError("unknown prompt template \"" + template_name + "\"");
    }
    return render_template_text(it->second, variables, template_name);
}

// ---------------------------------------------------------------------------
// LlmClient
// ---------------------------------------------------------------------------

LlmClient::LlmClient(std::shared_ptr<Provider> provider, LlmClientOptions options)
    : provider_(std::move(provider)), options_(std::move(options)) {
    if (!options_.cache_dir.empty()) {
        std::filesystem::create_directories(options_.cache_dir);
    }
}

void LlmClient::set_observer(std::function<void(const LlmCallRecord&)> observer) {
    std::lock_guard<std::mutex> lock(observer_mutex_);
    observer_ = std::move(observer);
}

std::string LlmClient::cache_key(const PromptRequest& request) const {
    std::string material = provider_->id();
    material += '\x1f';
    material += provider_->model();
    material += '\x1f';
    material += request.rendered_prompt;
    material += '\x1f';
    material += std::to_string(request.temperature);
    material += '\x1f';
    material += std::to_string(request.max_output_tokens);
    return hex64(fnv1a64(material));
}

std::string LlmClient::prompt_hash(const PromptRequest& request) const {
    return cache_key(request);
}

std::optional<std::string> LlmClient::cache_lookup(const std::string& key) {
    {
        std::lock_guard<std::mutex> lock(cache_mutex_);
        auto it = memory_cache_.find(key);
        if (it != memory_cache_.end()) return it->second;
    }
    if (options_.cache_dir.empty()) return std::nullopt;
    const auto path = options_.cache_dir / (key + ".json");
    std::ifstream in(path);
    if (!in) return std::nullopt;
    nlohmann::json doc;
    try {
        in >> doc;
    } catch (const nlohmann::json::exception&) {
        return std::nullopt; // unreadable entry treated as a miss
    }
    if (!doc.contains("text")) return std::nullopt;
    auto text = doc["text"].get<std::string>();
    std::lock_guard<std::mutex> lock(cache_mutex_);
    memory_cache_[key] = text;
    return text;
}

void LlmClient::cache_store(const std::string& key, const std::string& text) {
    {
        std::lock_guard<std::mutex> lock(cache_mutex_);
        memory_cache_[key] = text;
    }
    if (options_.cache_dir.empty()) return;
    const auto path = options_.cache_dir / (key + ".json");
    std::ofstream out(path);
    out << nlohmann::json{{"text", text}}.dump();
}

Completion LlmClient::complete(const PromptRequest& request) {
    if (request.rendered_prompt.empty()) {
        throw ValidationError("rendered_prompt must be non-empty");
    }
    const std::string key = cache_key(request);
    const auto started = std::chrono::steady_clock::now();

    std::uint64_t ordinal;
    {
        std::lock_guard<std::mutex> lock(cache_mutex_);
        ordinal = ++call_ordinal_;
    }

    auto finish = [&](std::string text, bool cached, int retries) {
        Completion completion;
        completion.text = std::move(text);
        completion.cached = cached;
        completion.retries = retries;
        completion.provider_trace_id = key + ":" + std::to_string(ordinal);
        completion.latency_ms = static_cast<int>(
            std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() -
                                                                  started)
                .count());
        LlmCallRecord record{role_name(request.role), request.template_name, key,
                             completion.text,         completion.cached,     completion.retries,
                             completion.latency_ms};
        std::lock_guard<std::mutex> lock(observer_mutex_);
        if (observer_) observer_(record);
        return completion;
    };

    if (auto hit = cache_lookup(key)) {
        return finish(std::move(*hit), true, 0);
    }

    int retries = 0;
    std::string last_error;
    for (int attempt = 0; attempt <= options_.max_retries; ++attempt) {
        if (attempt > 0) {
            retries = attempt;
            const auto delay = options_.backoff_base_ms * (1 << (attempt - 1));
            if (delay > 0) std::this_thread::sleep_for(std::chrono::milliseconds(delay));
        }
        try {
            std::string text;
            {
                std::unique_lock<std::mutex> gate(gate_mutex_);
                gate_cv_.wait(gate, [this] { return in_flight_ < options_.in_flight_limit; });
                ++in_flight_;
                gate.unlock();
                struct GateGuard {
                    LlmClient* client;
                    ~GateGuard() {
                        std::lock_guard<std::mutex> lock(client->gate_mutex_);
                        --client->in_flight_;
                        client->gate_cv_.notify_one();
                    }
                } guard{this};
                text = provider_->complete_raw(request);
            }
            cache_store(key, text);
            return finish(std::move(text), false, retries);
        } catch (const Error& e) {
            last_error = e.what();
        }
    }
    // Failed calls are traced too, with the error as the recorded response.
    {
        LlmCallRecord record{role_name(request.role), request.template_name, key,
                             "<provider-error> " + last_error, false, retries, 0};
        std::lock_guard<std::mutex> lock(observer_mutex_);
        if (observer_) observer_(record);
    }
    throw ProviderError("provider failed after " + std::to_string(options_.max_retries) +
                            " retries for role " + role_name(request.role) + ": " + last_error,
                        role_name(request.role), key);
}

} // namespace stepchain
