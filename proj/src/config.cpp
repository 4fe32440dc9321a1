#include "elena/config.hpp"

#include <cctype>
#include <cstdint>

#include "elena/assets.hpp"
#include "elena/error.hpp"

namespace elena {

namespace {

class LineParser {
public:
    LineParser(std::string_view line, const std::string& where) : s_(line), where_(where) {}

    [[noreturn]] void error(const std::string& msg) const { fail(ErrorCode::Parse, where_ + ": " + msg); }

    void skip_ws() {
        while (pos_ < s_.size() && (s_[pos_] == ' ' || s_[pos_] == '\t')) ++pos_;
    }
    bool at_end_or_comment() {
        skip_ws();
        return pos_ >= s_.size() || s_[pos_] == '#';
    }
    bool eat(char c) {
        skip_ws();
        if (pos_ < s_.size() && s_[pos_] == c) {
            ++pos_;
            return true;
        }
        return false;
    }
    void expect(char c) {
        if (!eat(c)) error(std::string("expected '") + c + "'");
    }

    std::string key_part() {
        skip_ws();
        if (pos_ < s_.size() && (s_[pos_] == '"' || s_[pos_] == '\'')) return string_value();
        const auto start = pos_;
        while (pos_ < s_.size() && (std::isalnum(static_cast<unsigned char>(s_[pos_])) || s_[pos_] == '_' || s_[pos_] == '-')) {
            ++pos_;
        }
        if (start == pos_) error("expected a key");
        return std::string(s_.substr(start, pos_ - start));
    }

    std::vector<std::string> dotted_key() {
        std::vector<std::string> parts{key_part()};
        while (eat('.')) parts.push_back(key_part());
        return parts;
    }

    std::string string_value() {
        const char quote = s_[pos_++];
        std::string out;
        while (pos_ < s_.size() && s_[pos_] != quote) {
            char c = s_[pos_++];
            if (quote == '"' && c == '\\') {
                if (pos_ >= s_.size()) error("unterminated escape");
                const char e = s_[pos_++];
                switch (e) {
                    case 'n': out += '\n'; break;
                    case 't': out += '\t'; break;
                    case 'r': out += '\r'; break;
                    case '"': out += '"'; break;
                    case '\\': out += '\\'; break;
                    case 'u': append_utf8(out, hex_code(4)); break;
                    case 'U': append_utf8(out, hex_code(8)); break;
                    default: error(std::string("unsupported escape \\") + e);
                }
            } else {
                out += c;
            }
        }
        if (pos_ >= s_.size()) error("unterminated string");
        ++pos_;
        return out;
    }

    std::uint32_t hex_code(std::size_t digits) {
        if (pos_ + digits > s_.size()) error("short unicode escape");
        std::uint32_t cp = 0;
        for (std::size_t i = 0; i < digits; ++i) {
            const char h = s_[pos_++];
            if (!std::isxdigit(static_cast<unsigned char>(h))) error("bad unicode escape");
            cp = cp * 16 + static_cast<std::uint32_t>(std::isdigit(static_cast<unsigned char>(h)) ? h - '0' : (std::tolower(h) - 'a' + 10));
        }
        if (cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF)) error("invalid code point");
        return cp;
    }

    static void append_utf8(std::string& out, std::uint32_t cp) {
        if (cp < 0x80) {
            out += static_cast<char>(cp);
        } else if (cp < 0x800) {
            out += static_cast<char>(0xC0 | (cp >> 6));
            out += static_cast<char>(0x80 | (cp & 0x3F));
        } else if (cp < 0x10000) {
            out += static_cast<char>(0xE0 | (cp >> 12));
            out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
            out += static_cast<char>(0x80 | (cp & 0x3F));
        } else {
            out += static_cast<char>(0xF0 | (cp >> 18));
            out += static_cast<char>(0x80 | ((cp >> 12) & 0x3F));
            out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
            out += static_cast<char>(0x80 | (cp & 0x3F));
        }
    }

    Json value() {
        skip_ws();
        if (pos_ >= s_.size()) error("missing value");
        const char c = s_[pos_];
        if (c == '"' || c == '\'') return string_value();
        if (c == '[') {
            ++pos_;
            Json arr = Json::array();
            if (eat(']')) return arr;
            for (;;) {
                arr.push_back(value());
                if (eat(']')) break;
                expect(',');
                if (eat(']')) break;  // trailing comma
            }
            return arr;
        }
        const auto start = pos_;
        while (pos_ < s_.size() && s_[pos_] != ',' && s_[pos_] != ']' && s_[pos_] != '#' && s_[pos_] != ' ' &&
               s_[pos_] != '\t') {
            ++pos_;
        }
        std::string tok(s_.substr(start, pos_ - start));
        if (tok == "true") return true;
        if (tok == "false") return false;
        std::string digits;
        for (char ch : tok) {
            if (ch != '_') digits += ch;
        }
        if (digits.empty()) error("missing value");
        const bool is_float = digits.find_first_of(".eE") != std::string::npos;
        try {
            std::size_t used = 0;
            if (is_float) {
                const double d = std::stod(digits, &used);
                if (used == digits.size()) return d;
            } else {
                const long long v = std::stoll(digits, &used);
                if (used == digits.size()) return v;
            }
        } catch (const std::exception&) {
        }
        error("unrecognized value '" + tok + "'");
    }

private:
    std::string_view s_;
    std::string where_;
    std::size_t pos_ = 0;
};

Json& descend(Json& root, const std::vector<std::string>& path, const std::string& where) {
    Json* node = &root;
    for (const auto& part : path) {
        if (node->is_array()) node = &node->back();
        if (!node->is_object()) fail(ErrorCode::Parse, where + ": '" + part + "' is not a table");
        if (!node->contains(part)) (*node)[part] = Json::object();
        node = &(*node)[part];
    }
    if (node->is_array()) node = &node->back();
    if (!node->is_object()) fail(ErrorCode::Parse, where + ": '" + path.back() + "' is not a table");
    return *node;
}

}  // namespace

Json parse_toml(std::string_view text, const std::string& source) {
    Json root = Json::object();
    Json* table = &root;
    std::size_t line_no = 0;
    std::size_t start = 0;
    while (start <= text.size()) {
        auto end = text.find('\n', start);
        if (end == std::string_view::npos) end = text.size();
        std::string_view line = text.substr(start, end - start);
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        ++line_no;
        start = end + 1;
        const std::string where = source + ":" + std::to_string(line_no);
        LineParser p(line, where);
        if (p.at_end_or_comment()) {
            if (end == text.size()) break;
            continue;
        }
        if (p.eat('[')) {
            const bool array_table = p.eat('[');
            const auto path = p.dotted_key();
            p.expect(']');
            if (array_table) p.expect(']');
            if (!p.at_end_or_comment()) p.error("unexpected text after table header");
            if (array_table) {
                std::vector<std::string> parent(path.begin(), path.end() - 1);
                Json& owner = descend(root, parent, where);
                Json& arr = owner[path.back()];
                if (arr.is_null()) arr = Json::array();
                if (!arr.is_array()) p.error("'" + path.back() + "' is not an array of tables");
                arr.push_back(Json::object());
                table = &arr.back();
            } else {
                table = &descend(root, path, where);
            }
        } else {
            const auto path = p.dotted_key();
            p.expect('=');
            Json v = p.value();
            if (!p.at_end_or_comment()) p.error("unexpected text after value");
            std::vector<std::string> parent(path.begin(), path.end() - 1);
            Json& owner = descend(*table, parent, where);
            if (owner.contains(path.back())) p.error("duplicate key '" + path.back() + "'");
            owner[path.back()] = std::move(v);
        }
        if (end == text.size()) break;
    }
    return root;
}

Json load_toml(const std::filesystem::path& path) { return parse_toml(read_text_file(path), path.string()); }

}  // namespace elena
