#pragma once

#include <stdexcept>
#include <string>

namespace stepchain {

// Base for everything thrown by the library.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Input files: missing, unreadable, wrong magic.
struct CorpusLoadError : Error {
    using Error::Error;
};

// A record or response that could not be parsed.
struct ParseError : Error {
    using Error::Error;
};

// Violated preconditions and data invariants (duplicate ids, bad references).
struct ValidationError : Error {
    using Error::Error;
};

// Bad configuration values (overlap >= chunk size, dimension mismatch, ...).
struct ConfigError : Error {
    using Error::Error;
};

struct IndexingError : Error {
    using Error::Error;
};

struct ExtractionError : Error {
    ExtractionError(const std::string& what, std::string raw)
        : Error(what), raw_response(std::move(raw)) {}
    explicit ExtractionError(const std::string& what) : Error(what) {}
    // Raw provider output kept for the trace log.
    std::string raw_response;
};

// Provider call failed after retries; carries the role and prompt hash so
// callers can apply their role-specific fallback.
struct ProviderError : Error {
    ProviderError(const std::string& what, std::string role_, std::string prompt_hash_)
        : Error(what), role(std::move(role_)), prompt_hash(std::move(prompt_hash_)) {}
    explicit ProviderError(const std::string& what) : Error(what) {}
    std::string role;
    std::string prompt_hash;
};

struct NotFoundError : Error {
    using Error::Error;
};

} // namespace stepchain
