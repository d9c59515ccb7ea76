#include "stepchain/embedding.hpp"
#include "stepchain/errors.hpp"
#include "stepchain/text.hpp"

#include <httplib.h>
#include <nlohmann/json.hpp>

#include <cmath>

namespace stepchain {

float dot(const Embedding& a, const Embedding& b) {
    float acc = 0.0f;
    const std::size_t n = std::min(a.size(), b.size());
    for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
    return acc;
}

void l2_normalize(Embedding& v) {
    double norm_sq = 0.0;
    for (float x : v) norm_sq += static_cast<double>(x) * x;
    if (norm_sq <= 0.0) return; // zero vector stays zero
    const float inv = static_cast<float>(1.0 / std::sqrt(norm_sq));
    for (float& x : v) x *= inv;
}

Embedding HashingEmbedder::embed(std::string_view text) const {
    Embedding v(dim_, 0.0f);
    const auto terms = text_terms(text);
    auto add_feature = [&](const std::string& feature) {
        const std::uint64_t h = fnv1a64(feature);
        const std::size_t slot = static_cast<std::size_t>(h % dim_);
        const float sign = ((h >> 32) & 1u) ? 1.0f : -1.0f;
        v[slot] += sign;
    };
    for (const auto& t : terms) add_feature(t);
    for (std::size_t i = 0; i + 1 < terms.size(); ++i) {
        add_feature(terms[i] + " " + terms[i + 1]);
    }
    l2_normalize(v);
    return v;
}

RemoteEmbedder::RemoteEmbedder(std::string base_url, std::string path, std::string model,
                               std::string api_key, std::size_t dimension)
    : base_url_(std::move(base_url)), path_(std::move(path)), model_(std::move(model)),
      api_key_(std::move(api_key)), dim_(dimension) {}

Embedding RemoteEmbedder::embed(std::string_view text) const {
    httplib::Client client(base_url_);
    client.set_read_timeout(60, 0);
    httplib::Headers headers;
    if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);
    nlohmann::json body = {{"model", model_}, {"input", std::vector<std::string>{std::string(text)}}};
    auto res = client.Post(path_, headers, body.dump(), "application/json");
    if (!res || res->status != 200) {
        throw IndexingError("embedding endpoint failure (status " +
                            (res ? std::to_string(res->status) : std::string("none")) + ")");
    }
    nlohmann::json parsed;
    try {
        parsed = nlohmann::json::parse(res->body);
    } catch (const nlohmann::json::exception& e) {
        throw IndexingError(std::string("embedding endpoint returned malformed JSON: ") + e.what());
    }
    if (!parsed.contains("data") || !parsed["data"].is_array() || parsed["data"].empty() ||
        !parsed["data"][0].contains("embedding")) {
        throw IndexingError("embedding endpoint response missing data[0].embedding");
    }
    Embedding v = parsed["data"][0]["embedding"].get<Embedding>();
    if (v.size() != dim_) {
        throw ConfigError("embedding dimension mismatch: endpoint returned " +
                          std::to_string(v.size()) + ", configured " + std::to_string(dim_));
    }
    l2_normalize(v);
    return v;
}

} // namespace stepchain
