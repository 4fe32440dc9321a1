#pragma once

#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "elena/types.hpp"

namespace elena {

// --- JSON extraction ------------------------------------------------------

enum class Repair { FenceStripped, ProseTrimmed, TrailingCommaRemoved };
std::string_view to_string(Repair r);

struct ExtractedJson {
    Json doc;
    std::vector<Repair> repairs;
};

// Returns the first syntactically valid JSON object in `raw`. Tolerates
// markdown fences, surrounding prose and trailing commas; nothing else is
// repaired. Throws NoJsonFound when there is no object at all and
// UnrepairableJson when candidates exist but none parse.
ExtractedJson extract_json(std::string_view raw);

// --- ELENA parsing --------------------------------------------------------

// Maps normalized response keys ("emotion", "body parts", ...) onto ElenaOutput
// field names.
class KeyAliases {
public:
    static KeyAliases from_tsv(std::string_view text);
    static const KeyAliases& builtin();

    // Key normalization: trimmed, lower-cased, spaces and hyphens to '_'.
    static std::string normalize(std::string_view key);
    std::optional<std::string> field_for(std::string_view raw_key) const;

private:
    std::map<std::string, std::string> aliases_;
};

// Throws MissingField when "label" or "narrative" is absent and propagates
// UnknownLabel. VAD is set only when all three scores are present.
ElenaOutput parse_elena(const Json& doc, const KeyAliases& aliases = KeyAliases::builtin(),
                        const LabelSynonyms& synonyms = LabelSynonyms::builtin());

// Label-only answers (naive prompt, two-step parse stage).
EkmanLabel parse_label_answer(const Json& doc, const KeyAliases& aliases = KeyAliases::builtin(),
                              const LabelSynonyms& synonyms = LabelSynonyms::builtin());

// Two-step describe stage: every ELENA field except the label.
ElenaOutput parse_description(const Json& doc, const KeyAliases& aliases = KeyAliases::builtin());

// --- Body-part anatomization ---------------------------------------------

enum class BodyRegion { HeadFace, Limbs, Torso, InternalConceptual, Other };
inline constexpr std::array<BodyRegion, 5> kAllRegions = {BodyRegion::HeadFace, BodyRegion::Limbs, BodyRegion::Torso,
                                                          BodyRegion::InternalConceptual, BodyRegion::Other};
std::string_view to_string(BodyRegion r);
// Display name used in report tables, e.g. "Head/Face".
std::string_view display_name(BodyRegion r);
BodyRegion parse_region(std::string_view raw);

class BodyPartLexicon {
public:
    // Rows: term <tab> region [<tab> aliases...]; alias cells may hold
    // comma-separated lists.
    static BodyPartLexicon from_tsv(std::string_view text);
    static const BodyPartLexicon& builtin();

    // Exact term or alias first, then the last word of a multi-word phrase
    // ("left hand" -> hand).
    std::optional<std::pair<std::string, BodyRegion>> lookup(std::string_view surface) const;

    const std::map<std::string, BodyRegion>& entries() const { return entries_; }
    const std::map<std::string, std::string>& aliases() const { return aliases_; }

private:
    std::optional<std::pair<std::string, BodyRegion>> exact(const std::string& key) const;

    std::map<std::string, BodyRegion> entries_;
    std::map<std::string, std::string> aliases_;
};

struct AnatomizedResponse {
    ElenaOutput output;
    std::vector<std::pair<std::string, BodyRegion>> normalized_parts;
    std::vector<std::string> unrecognized_parts;
};

// Lower-cases, trims, singularizes through the alias table and assigns a
// region. Mentions are de-duplicated per response; unmatched ones are kept in
// unrecognized_parts.
AnatomizedResponse anatomize(const ElenaOutput& output, const BodyPartLexicon& lexicon = BodyPartLexicon::builtin());

// Normalized surface form used for de-duplication of unrecognized mentions.
std::string normalize_mention(std::string_view surface);

Json to_json(const AnatomizedResponse& a);
AnatomizedResponse anatomized_from_json(const Json& j);

}  // namespace elena
