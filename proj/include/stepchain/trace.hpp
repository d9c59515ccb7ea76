#pragma once

#include <filesystem>
#include <fstream>
#include <mutex>
#include <nlohmann/json.hpp>
#include <vector>

namespace stepchain {

// Append-only run trace: one JSON record per line, kept in memory and
// optionally mirrored to a file as the run progresses.
class TraceWriter {
public:
    TraceWriter() = default;
    explicit TraceWriter(const std::filesystem::path& path);

    void append(nlohmann::ordered_json record);

    const std::vector<nlohmann::ordered_json>& records() const { return records_; }
    const std::filesystem::path& path() const { return path_; }

private:
    std::filesystem::path path_;
    std::ofstream out_;
    std::vector<nlohmann::ordered_json> records_;
    std::mutex mutex_;
};

} // namespace stepchain
