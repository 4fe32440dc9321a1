#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "elena/types.hpp"

namespace elena {

// Append-only JSONL of PredictionRecords keyed by (record_id, prompt_kind).
// Opening an existing file reloads it; a torn final line left by a crash is
// dropped (and the file truncated to the last complete line). Appends are
// serialized and flushed line by line.
class CaptureStore {
public:
    explicit CaptureStore(std::filesystem::path path);

    bool contains(const std::string& record_id, PromptKind kind) const;
    std::optional<PredictionRecord> find(const std::string& record_id, PromptKind kind) const;
    void append(const PredictionRecord& record);

    // In file order.
    std::vector<PredictionRecord> records() const;
    std::size_t size() const;
    bool recovered_torn_line() const { return recovered_; }
    const std::filesystem::path& path() const { return path_; }

private:
    static std::string key(const std::string& record_id, PromptKind kind);

    std::filesystem::path path_;
    mutable std::mutex mu_;
    std::ofstream out_;
    std::vector<PredictionRecord> records_;
    std::map<std::string, std::size_t> index_;
    bool recovered_ = false;
};

// Reads every line of a JSONL file; throws Parse naming the line.
std::vector<Json> read_jsonl(const std::filesystem::path& path);
// Writes via a temporary file and rename so readers never see a partial file.
void write_jsonl_atomic(const std::filesystem::path& path, const std::vector<Json>& lines);

}  // namespace elena
