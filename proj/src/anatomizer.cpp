#include "elena/anatomizer.hpp"

#include <algorithm>
#include <cctype>
#include <set>

#include "elena/assets.hpp"
#include "elena/error.hpp"

namespace elena {

namespace {

// Index one past the '}' matching the '{' at `open`, or npos when unbalanced.
std::size_t balanced_end(std::string_view text, std::size_t open) {
    int depth = 0;
    bool in_string = false;
    bool escaped = false;
    for (std::size_t i = open; i < text.size(); ++i) {
        const char c = text[i];
        if (in_string) {
            if (escaped) {
                escaped = false;
            } else if (c == '\\') {
                escaped = true;
            } else if (c == '"') {
                in_string = false;
            }
            continue;
        }
        if (c == '"') {
            in_string = true;
        } else if (c == '{' || c == '[') {
            ++depth;
        } else if (c == '}' || c == ']') {
            if (--depth == 0) return c == '}' ? i + 1 : std::string_view::npos;
            if (depth < 0) return std::string_view::npos;
        }
    }
    return std::string_view::npos;
}

// Drops commas that directly precede a closing brace or bracket, outside
// string literals.
std::string remove_trailing_commas(std::string_view text, bool& changed) {
    std::string out;
    out.reserve(text.size());
    bool in_string = false;
    bool escaped = false;
    for (std::size_t i = 0; i < text.size(); ++i) {
        const char c = text[i];
        if (in_string) {
            out += c;
            if (escaped) {
                escaped = false;
            } else if (c == '\\') {
                escaped = true;
            } else if (c == '"') {
                in_string = false;
            }
            continue;
        }
        if (c == '"') in_string = true;
        if (c == ',') {
            std::size_t j = i + 1;
            while (j < text.size() && std::isspace(static_cast<unsigned char>(text[j]))) ++j;
            if (j < text.size() && (text[j] == '}' || text[j] == ']')) {
                changed = true;
                continue;
            }
        }
        out += c;
    }
    return out;
}

struct Region {
    std::string_view text;
    bool fenced;
};

std::vector<Region> fence_regions(std::string_view raw) {
    std::vector<Region> regions;
    std::size_t pos = 0;
    while (true) {
        const auto open = raw.find("```", pos);
        if (open == std::string_view::npos) break;
        auto body = raw.find('\n', open);
        if (body == std::string_view::npos) break;
        ++body;
        const auto close = raw.find("```", body);
        if (close == std::string_view::npos) break;
        regions.push_back({raw.substr(body, close - body), true});
        pos = close + 3;
    }
    regions.push_back({raw, false});
    return regions;
}

std::string value_as_text(const Json& v) {
    if (v.is_string()) return v.get<std::string>();
    if (v.is_null()) return {};
    if (v.is_array()) {
        std::string out;
        for (const auto& item : v) {
            if (!out.empty()) out += "; ";
            out += item.is_string() ? item.get<std::string>() : item.dump();
        }
        return out;
    }
    return v.dump();
}

std::vector<std::string> value_as_list(const Json& v) {
    std::vector<std::string> out;
    if (v.is_array()) {
        for (const auto& item : v) {
            auto s = trim(item.is_string() ? item.get<std::string>() : item.dump());
            if (!s.empty()) out.push_back(s);
        }
    } else if (v.is_string()) {
        const auto s = v.get<std::string>();
        std::size_t start = 0;
        while (start <= s.size()) {
            auto end = s.find_first_of(",;", start);
            if (end == std::string::npos) end = s.size();
            auto item = trim(std::string_view(s).substr(start, end - start));
            if (!item.empty()) out.push_back(item);
            start = end + 1;
        }
    }
    return out;
}

std::optional<double> value_as_number(const Json& v) {
    if (v.is_number()) return v.get<double>();
    if (v.is_string()) {
        try {
            std::size_t used = 0;
            const auto s = trim(v.get<std::string>());
            const double d = std::stod(s, &used);
            if (used == s.size()) return d;
        } catch (const std::exception&) {
        }
    }
    return std::nullopt;
}

// field name -> value, preferring a key that is already canonical.
std::map<std::string, Json> collect_fields(const Json& doc, const KeyAliases& aliases) {
    if (!doc.is_object()) fail(ErrorCode::Schema, "response JSON is not an object");
    std::map<std::string, Json> fields;
    std::set<std::string> canonical_hit;
    auto absorb = [&](const Json& obj) {
        for (const auto& [key, value] : obj.items()) {
            auto field = aliases.field_for(key);
            if (!field) continue;
            const bool canonical = KeyAliases::normalize(key) == *field;
            if (fields.count(*field) && (canonical_hit.count(*field) || !canonical)) continue;
            fields[*field] = value;
            if (canonical) canonical_hit.insert(*field);
        }
    };
    absorb(doc);
    // Scores are sometimes nested under a "vad" object.
    for (const auto& [key, value] : doc.items()) {
        if (KeyAliases::normalize(key) == "vad" && value.is_object()) absorb(value);
    }
    return fields;
}

std::optional<VadScores> read_vad(const std::map<std::string, Json>& fields) {
    auto get = [&](const char* name) -> std::optional<double> {
        auto it = fields.find(name);
        if (it == fields.end()) return std::nullopt;
        return value_as_number(it->second);
    };
    auto v = get("valence");
    auto a = get("arousal");
    auto d = get("dominance");
    if (!v || !a || !d) return std::nullopt;
    return VadScores{*v, *a, *d};
}

void fill_description(ElenaOutput& out, const std::map<std::string, Json>& fields) {
    if (auto it = fields.find("explicit"); it != fields.end()) out.explicit_desc = value_as_text(it->second);
    if (auto it = fields.find("implicit"); it != fields.end()) out.implicit_desc = value_as_text(it->second);
    if (auto it = fields.find("narrative"); it != fields.end()) out.narrative = value_as_text(it->second);
    if (auto it = fields.find("body_parts"); it != fields.end()) out.body_parts = value_as_list(it->second);
    out.vad = read_vad(fields);
}

EkmanLabel label_from(const std::map<std::string, Json>& fields, const LabelSynonyms& synonyms) {
    auto it = fields.find("label");
    if (it == fields.end()) fail(ErrorCode::MissingField, "MissingField(label)");
    if (!it->second.is_string()) fail(ErrorCode::UnknownLabel, "label is not a string: " + it->second.dump());
    return parse_label(it->second.get<std::string>(), synonyms);
}

}  // namespace

std::string_view to_string(Repair r) {
    switch (r) {
        case Repair::FenceStripped: return "FenceStripped";
        case Repair::ProseTrimmed: return "ProseTrimmed";
        case Repair::TrailingCommaRemoved: return "TrailingCommaRemoved";
    }
    return "?";
}

ExtractedJson extract_json(std::string_view raw) {
    if (trim(raw).empty()) fail(ErrorCode::NoJsonFound, "empty response");
    bool saw_candidate = false;
    for (const auto& region : fence_regions(raw)) {
        const std::string_view text = region.text;
        std::size_t pos = 0;
        while ((pos = text.find('{', pos)) != std::string_view::npos) {
            saw_candidate = true;
            const auto end = balanced_end(text, pos);
            if (end == std::string_view::npos) {
                ++pos;
                continue;
            }
            const auto candidate = text.substr(pos, end - pos);
            ExtractedJson result;
            bool comma_fixed = false;
            auto parsed = Json::parse(candidate, nullptr, false);
            if (parsed.is_discarded()) {
                parsed = Json::parse(remove_trailing_commas(candidate, comma_fixed), nullptr, false);
            }
            if (!parsed.is_discarded() && parsed.is_object()) {
                if (region.fenced) result.repairs.push_back(Repair::FenceStripped);
                if (trim(text) != candidate) result.repairs.push_back(Repair::ProseTrimmed);
                if (comma_fixed) result.repairs.push_back(Repair::TrailingCommaRemoved);
                result.doc = std::move(parsed);
                return result;
            }
            // Skip the whole balanced span so nested fragments of a broken
            // object are not mistaken for the answer.
            pos = end;
        }
    }
    if (saw_candidate) fail(ErrorCode::UnrepairableJson, "no parseable JSON object in response");
    fail(ErrorCode::NoJsonFound, "no JSON object in response");
}

KeyAliases KeyAliases::from_tsv(std::string_view text) {
    KeyAliases table;
    for (const auto& row : parse_tsv(text)) {
        if (row.size() < 2) fail(ErrorCode::Parse, "key alias row needs two columns: " + row.front());
        table.aliases_[normalize(row[0])] = row[1];
    }
    return table;
}

const KeyAliases& KeyAliases::builtin() {
    static const KeyAliases table = from_tsv(*embedded_asset("config/key_aliases.tsv"));
    return table;
}

std::string KeyAliases::normalize(std::string_view key) {
    std::string out = to_lower(trim(key));
    std::replace(out.begin(), out.end(), ' ', '_');
    std::replace(out.begin(), out.end(), '-', '_');
    return out;
}

std::optional<std::string> KeyAliases::field_for(std::string_view raw_key) const {
    auto it = aliases_.find(normalize(raw_key));
    if (it == aliases_.end()) return std::nullopt;
    return it->second;
}

ElenaOutput parse_elena(const Json& doc, const KeyAliases& aliases, const LabelSynonyms& synonyms) {
    const auto fields = collect_fields(doc, aliases);
    ElenaOutput out;
    out.label = label_from(fields, synonyms);
    if (!fields.count("narrative")) fail(ErrorCode::MissingField, "MissingField(narrative)");
    fill_description(out, fields);
    return out;
}

EkmanLabel parse_label_answer(const Json& doc, const KeyAliases& aliases, const LabelSynonyms& synonyms) {
    return label_from(collect_fields(doc, aliases), synonyms);
}

ElenaOutput parse_description(const Json& doc, const KeyAliases& aliases) {
    const auto fields = collect_fields(doc, aliases);
    if (!fields.count("narrative")) fail(ErrorCode::MissingField, "MissingField(narrative)");
    ElenaOutput out;
    fill_description(out, fields);
    return out;
}

std::string_view to_string(BodyRegion r) {
    switch (r) {
        case BodyRegion::HeadFace: return "HeadFace";
        case BodyRegion::Limbs: return "Limbs";
        case BodyRegion::Torso: return "Torso";
        case BodyRegion::InternalConceptual: return "InternalConceptual";
        case BodyRegion::Other: return "Other";
    }
    return "?";
}

std::string_view display_name(BodyRegion r) {
    switch (r) {
        case BodyRegion::HeadFace: return "Head/Face";
        case BodyRegion::Limbs: return "Limbs";
        case BodyRegion::Torso: return "Torso";
        case BodyRegion::InternalConceptual: return "Internal/Conceptual";
        case BodyRegion::Other: return "Other";
    }
    return "?";
}

BodyRegion parse_region(std::string_view raw) {
    const auto key = to_lower(trim(raw));
    for (auto r : kAllRegions) {
        if (to_lower(to_string(r)) == key || to_lower(display_name(r)) == key) return r;
    }
    fail(ErrorCode::Parse, "unknown body region: " + std::string(raw));
}

std::string normalize_mention(std::string_view surface) {
    std::string s = to_lower(trim(surface));
    while (!s.empty() && (s.back() == '.' || s.back() == ',' || s.back() == ';' || s.back() == ':')) s.pop_back();
    std::string out;
    bool space = false;
    for (char c : s) {
        if (std::isspace(static_cast<unsigned char>(c))) {
            space = !out.empty();
            continue;
        }
        if (space) out += ' ';
        space = false;
        out += c;
    }
    return out;
}

BodyPartLexicon BodyPartLexicon::from_tsv(std::string_view text) {
    BodyPartLexicon lex;
    std::vector<std::pair<std::string, std::string>> pending;
    for (const auto& row : parse_tsv(text)) {
        if (row.size() < 2) fail(ErrorCode::Parse, "lexicon row needs term and region: " + row.front());
        const auto term = normalize_mention(row[0]);
        lex.entries_[term] = parse_region(row[1]);
        for (std::size_t i = 2; i < row.size(); ++i) {
            std::size_t start = 0;
            const auto& cell = row[i];
            while (start <= cell.size()) {
                auto end = cell.find(',', start);
                if (end == std::string::npos) end = cell.size();
                auto alias = normalize_mention(std::string_view(cell).substr(start, end - start));
                if (!alias.empty()) pending.emplace_back(alias, term);
                start = end + 1;
            }
        }
    }
    for (auto& [alias, term] : pending) {
        if (!lex.entries_.count(term)) fail(ErrorCode::Parse, "alias target missing from lexicon: " + term);
        lex.aliases_[alias] = term;
    }
    for (auto region : kAllRegions) {
        const bool covered = std::any_of(lex.entries_.begin(), lex.entries_.end(),
                                         [&](const auto& e) { return e.second == region; });
        if (!covered) fail(ErrorCode::Parse, "lexicon has no entry for region " + std::string(to_string(region)));
    }
    return lex;
}

const BodyPartLexicon& BodyPartLexicon::builtin() {
    static const BodyPartLexicon lex = from_tsv(*embedded_asset("config/body_lexicon.tsv"));
    return lex;
}

std::optional<std::pair<std::string, BodyRegion>> BodyPartLexicon::exact(const std::string& key) const {
    if (auto it = entries_.find(key); it != entries_.end()) return *it;
    if (auto it = aliases_.find(key); it != aliases_.end()) return std::make_pair(it->second, entries_.at(it->second));
    return std::nullopt;
}

std::optional<std::pair<std::string, BodyRegion>> BodyPartLexicon::lookup(std::string_view surface) const {
    const auto key = normalize_mention(surface);
    if (key.empty()) return std::nullopt;
    if (auto hit = exact(key)) return hit;
    const auto space = key.rfind(' ');
    if (space != std::string::npos) return exact(key.substr(space + 1));
    return std::nullopt;
}

AnatomizedResponse anatomize(const ElenaOutput& output, const BodyPartLexicon& lexicon) {
    AnatomizedResponse out;
    out.output = output;
    std::set<std::string> seen;
    for (const auto& part : output.body_parts) {
        const auto mention = normalize_mention(part);
        if (mention.empty()) continue;
        if (auto hit = lexicon.lookup(mention)) {
            if (seen.insert("t:" + hit->first).second) out.normalized_parts.push_back(*hit);
        } else if (seen.insert("u:" + mention).second) {
            out.unrecognized_parts.push_back(mention);
        }
    }
    return out;
}

Json to_json(const AnatomizedResponse& a) {
    Json parts = Json::array();
    for (const auto& [term, region] : a.normalized_parts) parts.push_back({term, std::string(to_string(region))});
    return Json{{"output", to_json(a.output)}, {"normalized_parts", parts}, {"unrecognized_parts", a.unrecognized_parts}};
}

AnatomizedResponse anatomized_from_json(const Json& j) {
    AnatomizedResponse a;
    a.output = elena_from_canonical_json(j.at("output"));
    for (const auto& p : j.at("normalized_parts")) {
        a.normalized_parts.emplace_back(p.at(0).get<std::string>(), parse_region(p.at(1).get<std::string>()));
    }
    a.unrecognized_parts = j.at("unrecognized_parts").get<std::vector<std::string>>();
    return a;
}

}  // namespace elena
