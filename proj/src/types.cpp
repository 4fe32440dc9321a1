#include "elena/types.hpp"

#include <algorithm>

#include "elena/assets.hpp"
#include "elena/error.hpp"

namespace elena {

namespace {

template <typename Enum, std::size_t N>
Enum parse_enum(std::string_view raw, const std::array<std::pair<std::string_view, Enum>, N>& names,
                std::string_view what) {
    // "two_step_parse", "TwoStepParse" and "two-step-parse" all match.
    auto fold = [](std::string_view s) {
        std::string out;
        for (char c : to_lower(trim(s))) {
            if (c != '_' && c != '-') out += c;
        }
        return out;
    };
    const std::string key = fold(raw);
    for (const auto& [name, value] : names) {
        if (fold(name) == key) return value;
    }
    fail(ErrorCode::InvalidArgument, "unknown " + std::string(what) + ": '" + std::string(raw) + "'");
}

constexpr std::array<std::pair<std::string_view, SourceTaxonomy>, 4> kTaxonomyNames = {{
    {"BESST", SourceTaxonomy::BESST},
    {"HECO", SourceTaxonomy::HECO},
    {"EMOTIC", SourceTaxonomy::EMOTIC},
    {"GENERIC", SourceTaxonomy::GENERIC},
}};

constexpr std::array<std::pair<std::string_view, Condition>, 2> kConditionNames = {{
    {"Normal", Condition::Normal},
    {"Masked", Condition::Masked},
}};

constexpr std::array<std::pair<std::string_view, PromptKind>, 4> kPromptKindNames = {{
    {"Naive", PromptKind::Naive},
    {"Elena", PromptKind::Elena},
    {"TwoStepDescribe", PromptKind::TwoStepDescribe},
    {"TwoStepParse", PromptKind::TwoStepParse},
}};

constexpr std::array<std::pair<std::string_view, FailureKind>, 5> kFailureNames = {{
    {"Refusal", FailureKind::Refusal},
    {"Timeout", FailureKind::Timeout},
    {"RateLimited", FailureKind::RateLimited},
    {"MalformedResponse", FailureKind::MalformedResponse},
    {"TransportError", FailureKind::TransportError},
}};

template <typename Enum, std::size_t N>
std::string_view enum_name(Enum v, const std::array<std::pair<std::string_view, Enum>, N>& names) {
    for (const auto& [name, value] : names) {
        if (value == v) return name;
    }
    return "?";
}

const std::string& require_string(const Json& j, const char* key) {
    if (!j.contains(key) || !j.at(key).is_string()) {
        fail(ErrorCode::Schema, std::string("missing string field '") + key + "'");
    }
    return j.at(key).get_ref<const std::string&>();
}

}  // namespace

std::string_view to_string(EkmanLabel label) {
    switch (label) {
        case EkmanLabel::Happiness: return "Happiness";
        case EkmanLabel::Sadness: return "Sadness";
        case EkmanLabel::Anger: return "Anger";
        case EkmanLabel::Fear: return "Fear";
        case EkmanLabel::Disgust: return "Disgust";
        case EkmanLabel::Surprise: return "Surprise";
        case EkmanLabel::Neutral: return "Neutral";
    }
    return "?";
}

LabelSynonyms LabelSynonyms::from_tsv(std::string_view text) {
    LabelSynonyms table;
    // Canonical names always resolve, whatever the table says.
    for (auto label : kAllLabels) table.entries_[to_lower(to_string(label))] = label;
    for (const auto& row : parse_tsv(text)) {
        if (row.size() < 2) fail(ErrorCode::Parse, "synonym row needs two columns: " + row.front());
        const auto key = to_lower(row[0]);
        std::optional<EkmanLabel> target;
        for (auto label : kAllLabels) {
            if (to_lower(to_string(label)) == to_lower(row[1])) target = label;
        }
        if (!target) fail(ErrorCode::Parse, "synonym target is not a canonical label: " + row[1]);
        table.entries_[key] = *target;
    }
    return table;
}

const LabelSynonyms& LabelSynonyms::builtin() {
    static const LabelSynonyms table = from_tsv(*embedded_asset("config/label_synonyms.tsv"));
    return table;
}

std::optional<EkmanLabel> LabelSynonyms::find(std::string_view normalized) const {
    auto it = entries_.find(std::string(normalized));
    if (it == entries_.end()) return std::nullopt;
    return it->second;
}

EkmanLabel parse_label(std::string_view raw, const LabelSynonyms& synonyms) {
    const auto key = to_lower(trim(raw));
    if (auto label = synonyms.find(key)) return *label;
    fail(ErrorCode::UnknownLabel, "unknown emotion label: '" + std::string(raw) + "'");
}

bool ValidationReport::has_hard() const {
    return std::any_of(violations.begin(), violations.end(),
                       [](const Violation& v) { return v.severity == Severity::Hard; });
}

bool ValidationReport::contains(std::string_view code) const {
    return std::any_of(violations.begin(), violations.end(),
                       [&](const Violation& v) { return v.code == code; });
}

ValidationReport validate_output(const ElenaOutput& o, const VadRange& range) {
    ValidationReport report;
    auto add = [&](std::string code, Severity s, std::string msg) {
        report.violations.push_back({std::move(code), s, std::move(msg)});
    };
    if (trim(o.narrative).empty()) add("MissingNarrative", Severity::Hard, "narrative is empty");
    if (trim(o.explicit_desc).empty()) add("EmptyExplicit", Severity::Warning, "explicit description is empty");
    if (trim(o.implicit_desc).empty()) add("EmptyImplicit", Severity::Warning, "implicit description is empty");
    if (o.body_parts.empty() && o.label != EkmanLabel::Neutral) {
        add("EmptyBodyParts", Severity::Warning, "no body parts listed for an emotional label");
    }
    if (o.vad) {
        auto check = [&](double v, const char* name) {
            if (!(v >= range.low && v <= range.high)) {
                add("VadOutOfRange", Severity::Hard,
                    std::string(name) + " " + std::to_string(v) + " outside [" + std::to_string(range.low) + ", " +
                        std::to_string(range.high) + "]");
            }
        };
        check(o.vad->valence, "valence");
        check(o.vad->arousal, "arousal");
        check(o.vad->dominance, "dominance");
    }
    return report;
}

Rect intersect(const Rect& a, const Rect& b) {
    const int x0 = std::max(a.x, b.x);
    const int y0 = std::max(a.y, b.y);
    const int x1 = std::min(a.x + a.w, b.x + b.w);
    const int y1 = std::min(a.y + a.h, b.y + b.h);
    if (x1 <= x0 || y1 <= y0) return {x0, y0, 0, 0};
    return {x0, y0, x1 - x0, y1 - y0};
}

double iou(const Rect& a, const Rect& b) {
    const long long inter = intersect(a, b).area();
    const long long uni = a.area() + b.area() - inter;
    if (uni <= 0) return 0.0;
    return static_cast<double>(inter) / static_cast<double>(uni);
}

std::string_view to_string(SourceTaxonomy t) { return enum_name(t, kTaxonomyNames); }
SourceTaxonomy parse_taxonomy(std::string_view raw) { return parse_enum(raw, kTaxonomyNames, "taxonomy"); }
std::string_view to_string(Condition c) { return enum_name(c, kConditionNames); }
Condition parse_condition(std::string_view raw) { return parse_enum(raw, kConditionNames, "condition"); }
std::string_view to_string(PromptKind k) { return enum_name(k, kPromptKindNames); }
PromptKind parse_prompt_kind(std::string_view raw) { return parse_enum(raw, kPromptKindNames, "prompt kind"); }
std::string_view to_string(FailureKind k) { return enum_name(k, kFailureNames); }
FailureKind parse_failure_kind(std::string_view raw) { return parse_enum(raw, kFailureNames, "failure kind"); }

const std::vector<std::string>& elena_field_names() {
    static const std::vector<std::string> names = {"label",     "explicit", "implicit", "narrative",
                                                   "body_parts", "valence",  "arousal",  "dominance"};
    return names;
}

Json to_json(const VadScores& v) {
    return Json{{"valence", v.valence}, {"arousal", v.arousal}, {"dominance", v.dominance}};
}

Json to_json(const ElenaOutput& o) {
    Json j = {
        {"label", std::string(to_string(o.label))},
        {"explicit", o.explicit_desc},
        {"implicit", o.implicit_desc},
        {"narrative", o.narrative},
        {"body_parts", o.body_parts},
    };
    if (o.vad) j.update(to_json(*o.vad));
    return j;
}

ElenaOutput elena_from_canonical_json(const Json& j) {
    ElenaOutput o;
    o.label = parse_label(require_string(j, "label"));
    o.explicit_desc = j.value("explicit", "");
    o.implicit_desc = j.value("implicit", "");
    o.narrative = j.value("narrative", "");
    if (j.contains("body_parts")) o.body_parts = j.at("body_parts").get<std::vector<std::string>>();
    if (j.contains("valence") && j.contains("arousal") && j.contains("dominance")) {
        o.vad = VadScores{j.at("valence").get<double>(), j.at("arousal").get<double>(),
                          j.at("dominance").get<double>()};
    }
    return o;
}

Json to_json(const Rect& r) { return Json{{"x", r.x}, {"y", r.y}, {"w", r.w}, {"h", r.h}}; }

Rect rect_from_json(const Json& j) {
    if (j.is_array()) {
        if (j.size() != 4) fail(ErrorCode::Schema, "rectangle array needs 4 entries");
        return {j[0].get<int>(), j[1].get<int>(), j[2].get<int>(), j[3].get<int>()};
    }
    for (const char* k : {"x", "y", "w", "h"}) {
        if (!j.contains(k) || !j.at(k).is_number()) {
            fail(ErrorCode::Schema, std::string("rectangle missing numeric '") + k + "'");
        }
    }
    return {j.at("x").get<int>(), j.at("y").get<int>(), j.at("w").get<int>(), j.at("h").get<int>()};
}

Json to_json(const DatasetRecord& r) {
    Json j = {
        {"record_id", r.record_id},
        {"image_ref", r.image_ref},
        {"gold_labels", r.gold_labels},
        {"source_taxonomy", std::string(to_string(r.source_taxonomy))},
    };
    if (r.person_box) j["person_box"] = to_json(*r.person_box);
    if (!r.attributes.empty()) j["attributes"] = r.attributes;
    return j;
}

DatasetRecord record_from_json(const Json& j) {
    if (!j.is_object()) fail(ErrorCode::Schema, "record must be a JSON object");
    DatasetRecord r;
    r.record_id = require_string(j, "record_id");
    if (r.record_id.empty()) fail(ErrorCode::Schema, "record_id is empty");
    r.image_ref = require_string(j, "image_ref");
    if (j.contains("person_box") && !j.at("person_box").is_null()) {
        r.person_box = rect_from_json(j.at("person_box"));
        if (r.person_box->w <= 0 || r.person_box->h <= 0) {
            fail(ErrorCode::Schema, "person_box must have positive width and height");
        }
    }
    if (!j.contains("gold_labels") || !j.at("gold_labels").is_array()) {
        fail(ErrorCode::Schema, "missing array field 'gold_labels'");
    }
    for (const auto& label : j.at("gold_labels")) {
        if (!label.is_string()) fail(ErrorCode::Schema, "gold_labels entries must be strings");
        r.gold_labels.push_back(label.get<std::string>());
    }
    if (r.gold_labels.empty()) fail(ErrorCode::Schema, "gold_labels is empty");
    r.source_taxonomy = j.contains("source_taxonomy") ? parse_taxonomy(require_string(j, "source_taxonomy"))
                                                      : SourceTaxonomy::GENERIC;
    if (j.contains("attributes")) r.attributes = j.at("attributes").get<std::map<std::string, std::string>>();
    return r;
}

Json to_json(const FailureOutcome& f) {
    return Json{{"kind", std::string(to_string(f.kind))}, {"detail", f.detail}, {"retry_count", f.retry_count}};
}

FailureOutcome failure_from_json(const Json& j) {
    return {parse_failure_kind(require_string(j, "kind")), j.value("detail", ""), j.value("retry_count", 0)};
}

Json to_json(const PredictionRecord& p) {
    Json j = {
        {"record_id", p.record_id},
        {"condition", std::string(to_string(p.condition))},
        {"prompt_kind", std::string(to_string(p.prompt_kind))},
        {"raw_response", p.raw_response},
        {"provider_id", p.provider_id},
        {"latency_ms", p.latency_ms},
        {"retry_count", p.retry_count},
    };
    if (const auto* o = p.elena()) j["output"] = to_json(*o);
    if (const auto* f = p.failure()) j["failure"] = to_json(*f);
    return j;
}

PredictionRecord prediction_from_json(const Json& j) {
    PredictionRecord p;
    p.record_id = require_string(j, "record_id");
    p.condition = parse_condition(require_string(j, "condition"));
    p.prompt_kind = parse_prompt_kind(require_string(j, "prompt_kind"));
    p.raw_response = j.value("raw_response", "");
    p.provider_id = j.value("provider_id", "");
    p.latency_ms = j.value("latency_ms", std::int64_t{0});
    if (p.latency_ms < 0) fail(ErrorCode::Schema, "latency_ms must be nonnegative");
    p.retry_count = j.value("retry_count", 0);
    const bool has_output = j.contains("output");
    const bool has_failure = j.contains("failure");
    if (has_output && has_failure) fail(ErrorCode::Schema, "record has both output and failure");
    if (has_output) p.output = elena_from_canonical_json(j.at("output"));
    if (has_failure) p.output = failure_from_json(j.at("failure"));
    return p;
}

}  // namespace elena
