#pragma once

#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

namespace stepchain {

// The six pipeline roles a prompt can play.
enum class Role { decompose, extract, subanswer, merge, finalize, summarize };

std::string role_name(Role role);

struct PromptRequest {
    std::string template_name;
    std::string rendered_prompt;
    Role role = Role::subanswer;
    double temperature = 0.0;
    int max_output_tokens = 1024;
};

struct Completion {
    std::string text;
    std::string provider_trace_id;
    bool cached = false;
    int latency_ms = 0;
    int retries = 0;
};

// Raw transport behind LlmClient. complete_raw throws on failure; the
// client owns caching and retries.
class Provider {
public:
    virtual ~Provider() = default;
    virtual std::string complete_raw(const PromptRequest& request) = 0;
    virtual std::string id() const = 0;
    virtual std::string model() const = 0;
};

// Scripted deterministic test double. Entries match on a prompt substring
// or on a role name, first match wins; unmatched prompts get the default
// response. fail_times > 0 makes the entry fail that many calls before
// succeeding; fail_times < 0 fails forever.
struct MockScriptEntry {
    std::string match_substring; // empty when matching by role
    std::optional<Role> match_role;
    std::string response;
    int fail_times = 0;
};

struct MockScript {
    std::vector<MockScriptEntry> entries;
    std::string default_response = "unknown";

    static MockScript from_file(const std::filesystem::path& path);
    static MockScript from_json_text(const std::string& text);
};

class MockProvider final : public Provider {
public:
    explicit MockProvider(MockScript script, int simulated_latency_ms = 0);

    std::string complete_raw(const PromptRequest& request) override;
    std::string id() const override { return "mock"; }
    std::string model() const override { return "scripted"; }

    int peak_in_flight() const { return peak_in_flight_.load(); }
    int calls() const { return calls_.load(); }

private:
    MockScript script_;
    std::vector<int> remaining_failures_;
    int simulated_latency_ms_;
    std::mutex mutex_;
    std::atomic<int> in_flight_{0};
    std::atomic<int> peak_in_flight_{0};
    std::atomic<int> calls_{0};
};

// Chat-completions JSON over HTTP POST. The API key is read from the
// environment and never written to traces, caches, or error text.
class HttpChatProvider final : public Provider {
public:
    HttpChatProvider(std::string base_url, std::string path, std::string model,
                     std::string api_key);

    std::string complete_raw(const PromptRequest& request) override;
    std::string id() const override { return "http:" + base_url_; }
    std::string model() const override { return model_; }

    // Outbound request counter; the mock-mode network guard asserts it stays 0.
    static std::uint64_t request_count();

private:
    std::string base_url_;
    std::string path_;
    std::string model_;
    std::string api_key_;
};

// Prompt templates: plain-text files with {snake_case} placeholders.
class TemplateStore {
public:
    TemplateStore() = default;
    static TemplateStore from_directory(const std::filesystem::path& dir);

    void add_template(const std::string& name, std::string text);
    bool has_template(const std::string& name) const;

    // Deterministic substitution; an unbound placeholder or missing template
    // is a configuration error naming the offender.
    std::string render(const std::string& template_name,
                       const std::map<std::string, std::string>& variables) const;

private:
    std::map<std::string, std::string> templates_;
};

std::string render_template_text(const std::string& template_text,
                                 const std::map<std::string, std::string>& variables,
                                 const std::string& template_name);

struct LlmClientOptions {
    int max_retries = 2;        // transient failures retried with exponential backoff
    int backoff_base_ms = 50;
    int in_flight_limit = 4;    // bound on concurrent provider round-trips
    std::filesystem::path cache_dir; // empty -> in-memory cache only
};

// Observer invoked once per complete() call; feeds the run trace.
struct LlmCallRecord {
    std::string role;
    std::string template_name;
    std::string prompt_hash;
    std::string response;
    bool cached = false;
    int retries = 0;
    int latency_ms = 0;
};

class LlmClient {
public:
    LlmClient(std::shared_ptr<Provider> provider, LlmClientOptions options = {});

    // Cache key: provider id, model, rendered prompt, temperature, max
    // output tokens. A hit returns the stored text with zero round-trips.
    Completion complete(const PromptRequest& request);

    void set_observer(std::function<void(const LlmCallRecord&)> observer);
    std::string prompt_hash(const PromptRequest& request) const;

    const LlmClientOptions& options() const { return options_; }

private:
    std::shared_ptr<Provider> provider_;
    LlmClientOptions options_;
    std::mutex cache_mutex_;
    std::map<std::string, std::string> memory_cache_;
    std::function<void(const LlmCallRecord&)> observer_;
    std::mutex observer_mutex_;
    std::uint64_t call_ordinal_ = 0;

    // in-flight limiter
    std::mutex gate_mutex_;
    std::condition_variable gate_cv_;
    int in_flight_ = 0;

    std::string cache_key(const PromptRequest& request) const;
    std::optional<std::string> cache_lookup(const std::string& key);
    void cache_store(const std::string& key, const std::string& text);
};

} // namespace stepchain
