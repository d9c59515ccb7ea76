#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace stepchain {

// Lowercased maximal runs of ASCII alphanumerics. Shared by the lexical
// index and the hashing embedder so both halves of the hybrid index agree
// on what a term is.
std::vector<std::string> text_terms(std::string_view text);

// Entity identity rule: case-fold, trim, collapse internal whitespace,
// strip one leading article (the/a/an). "The Elder Wand" and "Elder Wand"
// become the same node.
std::string canonicalize_entity(std::string_view surface);

std::string to_lower(std::string_view s);

// FNV-1a 64-bit. Stable across platforms; used for feature hashing,
// cache keys, and prompt hashes in traces.
std::uint64_t fnv1a64(std::string_view s);

std::string hex64(std::uint64_t v);

} // namespace stepchain
