#include "stepchain/trace.hpp"
#include "stepchain/errors.hpp"

namespace stepchain {

TraceWriter::TraceWriter(const std::filesystem::path& path) : path_(path) {
    if (path_.has_parent_path()) {
        std::filesystem::create_directories(path_.parent_path());
    }
    out_.open(path_, std::ios::trunc);
    if (!out_) {
        throw CorpusLoadError("cannot open trace file for writing: " + path.string());
    }
}

void TraceWriter::append(nlohmann::ordered_json record) {
    std::lock_guard<std::mutex> lock(mutex_);
    if (out_.is_open()) {
        out_ << record.dump() << "\n";
        out_.flush();
    }
    records_.push_back(std::move(record));
}

} // namespace stepchain
