#include "stepchain/text.hpp"

#include <cctype>
#include <cstdint>

namespace stepchain {

std::string to_lower(std::string_view s) {
    std::string out(s);
    for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return out;
}

std::vector<std::string> text_terms(std::string_view text) {
    std::vector<std::string> terms;
    std::string current;
    for (char ch : text) {
        if (std::isalnum(static_cast<unsigned char>(ch))) {
            current.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
        } else if (!current.empty()) {
            terms.push_back(std::move(current));
            current.clear();
        }
    }
    if (!current.empty()) terms.push_back(std::move(current));
    return terms;
}

std::string canonicalize_entity(std::string_view surface) {
    // case-fold + collapse runs of whitespace, trimming the ends
    std::string folded;
    folded.reserve(surface.size());
    bool in_space = true; // swallow leading whitespace
    for (char ch : surface) {
        if (std::isspace(static_cast<unsigned char>(ch))) {
            in_space = true;
        } else {
            if (in_space && !folded.empty()) folded.push_back(' ');
            folded.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
            in_space = false;
        }
    }
    for (const char* article : {"the ", "a ", "an "}) {
        std::string_view a(article);
        if (folded.size() > a.size() && std::string_view(folded).substr(0, a.size()) == a) {
            folded.erase(0, a.size());
            break;
        }
    }
    return folded;
}

std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

std::string hex64(std::uint64_t v) {
    static const char* digits = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[static_cast<std::size_t>(i)] = digits[v & 0xf];
        v >>= 4;
    }
    return out;
}

} // namespace stepchain
