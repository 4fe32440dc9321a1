#include "elena/capture_store.hpp"

#include <sstream>

#include "elena/assets.hpp"
#include "elena/error.hpp"

namespace elena {

std::string CaptureStore::key(const std::string& record_id, PromptKind kind) {
    return record_id + '\x1f' + std::string(to_string(kind));
}

CaptureStore::CaptureStore(std::filesystem::path path) : path_(std::move(path)) {
    if (path_.has_parent_path()) std::filesystem::create_directories(path_.parent_path());
    if (std::filesystem::exists(path_)) {
        const std::string text = read_text_file(path_);
        std::size_t start = 0, line_no = 0, good_bytes = 0;
        while (start < text.size()) {
            const auto end = text.find('\n', start);
            const bool complete = end != std::string::npos;
            const std::string line = text.substr(start, complete ? end - start : std::string::npos);
            ++line_no;
            const auto j = Json::parse(line, nullptr, false);
            if (j.is_discarded()) {
                if (!complete) {
                    recovered_ = true;
                    break;
                }
                if (trim(line).empty()) {
                    start = end + 1;
                    good_bytes = start;
                    continue;
                }
                fail(ErrorCode::Parse, path_.string() + ":" + std::to_string(line_no) + ": corrupt capture line");
            }
            if (!complete) {
                // Valid JSON but no newline: keep it and terminate the line.
                recovered_ = true;
            }
            auto rec = prediction_from_json(j);
            const auto k = key(rec.record_id, rec.prompt_kind);
            if (auto it = index_.find(k); it != index_.end()) {
                records_[it->second] = std::move(rec);  // later line wins
            } else {
                index_[k] = records_.size();
                records_.push_back(std::move(rec));
            }
            if (!complete) {
                good_bytes = text.size();
                break;
            }
            start = end + 1;
            good_bytes = start;
        }
        if (recovered_) {
            std::filesystem::resize_file(path_, good_bytes);
            if (good_bytes > 0 && good_bytes == text.size() && text.back() != '\n') {
                std::ofstream fix(path_, std::ios::app | std::ios::binary);
                fix << '\n';
            }
        }
    }
    out_.open(path_, std::ios::app | std::ios::binary);
    if (!out_) fail(ErrorCode::Write, "cannot open " + path_.string() + " for appending");
}

bool CaptureStore::contains(const std::string& record_id, PromptKind kind) const {
    std::lock_guard lock(mu_);
    return index_.count(key(record_id, kind)) > 0;
}

std::optional<PredictionRecord> CaptureStore::find(const std::string& record_id, PromptKind kind) const {
    std::lock_guard lock(mu_);
    auto it = index_.find(key(record_id, kind));
    if (it == index_.end()) return std::nullopt;
    return records_[it->second];
}

void CaptureStore::append(const PredictionRecord& record) {
    const std::string line = to_json(record).dump() + "\n";
    std::lock_guard lock(mu_);
    out_ << line;
    out_.flush();
    if (!out_) fail(ErrorCode::Write, "append to " + path_.string() + " failed");
    const auto k = key(record.record_id, record.prompt_kind);
    if (auto it = index_.find(k); it != index_.end()) {
        records_[it->second] = record;
    } else {
        index_[k] = records_.size();
        records_.push_back(record);
    }
}

std::vector<PredictionRecord> CaptureStore::records() const {
    std::lock_guard lock(mu_);
    return records_;
}

std::size_t CaptureStore::size() const {
    std::lock_guard lock(mu_);
    return records_.size();
}

std::vector<Json> read_jsonl(const std::filesystem::path& path) {
    const std::string text = read_text_file(path);
    std::vector<Json> out;
    std::istringstream in(text);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        auto j = Json::parse(line, nullptr, false);
        if (j.is_discarded()) fail(ErrorCode::Parse, path.string() + ":" + std::to_string(line_no) + ": invalid JSON");
        out.push_back(std::move(j));
    }
    return out;
}

void write_jsonl_atomic(const std::filesystem::path& path, const std::vector<Json>& lines) {
    std::string text;
    for (const auto& j : lines) text += j.dump() + "\n";
    auto tmp = path;
    tmp += ".tmp";
    write_text_file(tmp, text);
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) fail(ErrorCode::Write, "rename " + tmp.string() + " -> " + path.string() + ": " + ec.message());
}

}  // namespace elena
