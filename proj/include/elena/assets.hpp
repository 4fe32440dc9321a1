#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace elena {

// Text assets (config tables, prompt templates) compiled into the library.
// Keys are repository-relative paths such as "config/body_lexicon.tsv".
std::optional<std::string_view> embedded_asset(std::string_view key);
std::vector<std::string> embedded_asset_keys();

// Resolves assets from an override directory first, then the embedded copy.
class AssetStore {
public:
    AssetStore() = default;
    explicit AssetStore(std::filesystem::path override_root)
        : root_(std::move(override_root)) {}

    std::string read(std::string_view key) const;
    bool contains(std::string_view key) const;
    const std::optional<std::filesystem::path>& root() const { return root_; }

private:
    std::optional<std::filesystem::path> root_;
};

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, std::string_view text);

// Splits a TSV asset into rows of fields. Blank lines and lines starting with
// '#' are skipped.
std::vector<std::vector<std::string>> parse_tsv(std::string_view text);

std::string trim(std::string_view s);
std::string to_lower(std::string_view s);

}  // namespace elena
