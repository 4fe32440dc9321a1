#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include "elena/types.hpp"

namespace elena {

// TOML subset: [table], [dotted.table], [[array.of.tables]], bare or quoted
// keys, basic/literal strings, integers, floats, booleans and single-line
// arrays of those. '#' starts a comment outside strings. Throws Parse with
// "<source>:<line>: ..." diagnostics.
Json parse_toml(std::string_view text, const std::string& source = "<toml>");
Json load_toml(const std::filesystem::path& path);

}  // namespace elena
