#include "elena/assets.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

#include "elena/error.hpp"
#include "embedded_assets.hpp"

namespace elena {

std::string_view error_code_name(ErrorCode code) noexcept {
    switch (code) {
        case ErrorCode::InvalidArgument: return "InvalidArgument";
        case ErrorCode::Io: return "IoError";
        case ErrorCode::Parse: return "ParseError";
        case ErrorCode::UnknownLabel: return "UnknownLabel";
        case ErrorCode::MissingField: return "MissingField";
        case ErrorCode::NoJsonFound: return "NoJsonFound";
        case ErrorCode::UnrepairableJson: return "UnrepairableJson";
        case ErrorCode::UnmappedSourceLabel: return "UnmappedSourceLabel";
        case ErrorCode::DuplicateRecordId: return "DuplicateRecordId";
        case ErrorCode::MissingImage: return "MissingImage";
        case ErrorCode::Schema: return "SchemaError";
        case ErrorCode::AnnotationParse: return "AnnotationParseError";
        case ErrorCode::ModelLoad: return "ModelLoadError";
        case ErrorCode::Inference: return "InferenceError";
        case ErrorCode::AttachmentMissing: return "AttachmentMissing";
        case ErrorCode::FixtureLoad: return "FixtureLoadError";
        case ErrorCode::EmptyMatrix: return "EmptyMatrix";
        case ErrorCode::HeaderMismatch: return "HeaderMismatch";
        case ErrorCode::TruncatedFile: return "TruncatedFile";
        case ErrorCode::ZeroMassGrid: return "ZeroMassGrid";
        case ErrorCode::GeometryMismatch: return "GeometryMismatch";
        case ErrorCode::PairingMismatch: return "PairingMismatch";
        case ErrorCode::MissingRun: return "MissingRun";
        case ErrorCode::ConfigMismatch: return "ConfigMismatch";
        case ErrorCode::Write: return "WriteError";
        case ErrorCode::NoAgentMatched: return "NoAgentMatched";
    }
    return "Unknown";
}

std::optional<std::string_view> embedded_asset(std::string_view key) {
    for (const auto& asset : detail::kEmbeddedAssets) {
        if (asset.key == key) return asset.text;
    }
    return std::nullopt;
}

std::vector<std::string> embedded_asset_keys() {
    std::vector<std::string> keys;
    for (const auto& asset : detail::kEmbeddedAssets) keys.emplace_back(asset.key);
    std::sort(keys.begin(), keys.end());
    return keys;
}

std::string AssetStore::read(std::string_view key) const {
    if (root_) {
        const auto path = *root_ / std::filesystem::path(std::string(key));
        if (std::filesystem::exists(path)) return read_text_file(path);
    }
    if (auto text = embedded_asset(key)) return std::string(*text);
    fail(ErrorCode::Io, "asset not found: " + std::string(key));
}

bool AssetStore::contains(std::string_view key) const {
    if (root_ && std::filesystem::exists(*root_ / std::filesystem::path(std::string(key)))) {
        return true;
    }
    return embedded_asset(key).has_value();
}

std::string read_text_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorCode::Io, "cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text_file(const std::filesystem::path& path, std::string_view text) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorCode::Write, "cannot write " + path.string());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!out) fail(ErrorCode::Write, "short write to " + path.string());
}

std::vector<std::vector<std::string>> parse_tsv(std::string_view text) {
    std::vector<std::vector<std::string>> rows;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        auto end = text.find('\n', pos);
        if (end == std::string_view::npos) end = text.size();
        std::string_view line = text.substr(pos, end - pos);
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        pos = end + 1;
        if (trim(line).empty() || line.front() == '#') continue;
        std::vector<std::string> fields;
        std::size_t start = 0;
        while (true) {
            auto tab = line.find('\t', start);
            fields.push_back(trim(line.substr(start, tab - start)));
            if (tab == std::string_view::npos) break;
            start = tab + 1;
        }
        rows.push_back(std::move(fields));
    }
    return rows;
}

std::string trim(std::string_view s) {
    auto is_space = [](unsigned char c) { return std::isspace(c) != 0; };
    std::size_t b = 0, e = s.size();
    while (b < e && is_space(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && is_space(static_cast<unsigned char>(s[e - 1]))) --e;
    return std::string(s.substr(b, e - b));
}

std::string to_lower(std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return out;
}

}  // namespace elena
