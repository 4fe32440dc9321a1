#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

namespace elena {

using Json = nlohmann::json;

// The seven-label prediction space: Ekman's six basic emotions plus Neutral.
// Declaration order is the canonical order used for matrices and tie-breaks.
enum class EkmanLabel : std::uint8_t { Happiness, Sadness, Anger, Fear, Disgust, Surprise, Neutral };

inline constexpr std::size_t kLabelCount = 7;
inline constexpr std::array<EkmanLabel, kLabelCount> kAllLabels = {
    EkmanLabel::Happiness, EkmanLabel::Sadness, EkmanLabel::Anger, EkmanLabel::Fear,
    EkmanLabel::Disgust,   EkmanLabel::Surprise, EkmanLabel::Neutral};

constexpr std::size_t index_of(EkmanLabel l) { return static_cast<std::size_t>(l); }
std::string_view to_string(EkmanLabel label);

// Surface-form table used by parse_label. Lookup is on the trimmed,
// lower-cased input.
class LabelSynonyms {
public:
    static LabelSynonyms from_tsv(std::string_view text);
    static const LabelSynonyms& builtin();

    std::optional<EkmanLabel> find(std::string_view normalized) const;
    const std::map<std::string, EkmanLabel>& entries() const { return entries_; }

private:
    std::map<std::string, EkmanLabel> entries_;
};

// Throws Error(UnknownLabel) when no canonical name or synonym matches.
EkmanLabel parse_label(std::string_view raw, const LabelSynonyms& synonyms = LabelSynonyms::builtin());

struct VadScores {
    double valence = 0;
    double arousal = 0;
    double dominance = 0;
    bool operator==(const VadScores&) const = default;
};

struct VadRange {
    double low = 1.0;
    double high = 9.0;
};

struct ElenaOutput {
    EkmanLabel label = EkmanLabel::Neutral;
    std::string explicit_desc;
    std::string implicit_desc;
    std::string narrative;
    std::vector<std::string> body_parts;
    std::optional<VadScores> vad;
    bool operator==(const ElenaOutput&) const = default;
};

enum class Severity { Warning, Hard };

struct Violation {
    std::string code;
    Severity severity;
    std::string message;
};

struct ValidationReport {
    std::vector<Violation> violations;
    bool empty() const { return violations.empty(); }
    bool has_hard() const;
    bool contains(std::string_view code) const;
};

ValidationReport validate_output(const ElenaOutput& output, const VadRange& range = {});

struct Rect {
    int x = 0;
    int y = 0;
    int w = 0;
    int h = 0;
    bool operator==(const Rect&) const = default;
    long long area() const { return static_cast<long long>(w) * h; }
    bool contains(double px, double py) const { return px >= x && px < x + w && py >= y && py < y + h; }
};

double iou(const Rect& a, const Rect& b);
Rect intersect(const Rect& a, const Rect& b);

enum class SourceTaxonomy { BESST, HECO, EMOTIC, GENERIC };
std::string_view to_string(SourceTaxonomy t);
SourceTaxonomy parse_taxonomy(std::string_view raw);

struct DatasetRecord {
    std::string record_id;
    std::string image_ref;
    std::optional<Rect> person_box;
    std::vector<std::string> gold_labels;
    SourceTaxonomy source_taxonomy = SourceTaxonomy::GENERIC;
    // Adapter metadata such as the BESST view; serialized only when non-empty.
    std::map<std::string, std::string> attributes;
    bool operator==(const DatasetRecord&) const = default;
};

enum class Condition { Normal, Masked };
enum class PromptKind { Naive, Elena, TwoStepDescribe, TwoStepParse };

std::string_view to_string(Condition c);
std::string_view to_string(PromptKind k);
Condition parse_condition(std::string_view raw);
PromptKind parse_prompt_kind(std::string_view raw);

enum class FailureKind { Refusal, Timeout, RateLimited, MalformedResponse, TransportError };
std::string_view to_string(FailureKind k);
FailureKind parse_failure_kind(std::string_view raw);

struct FailureOutcome {
    FailureKind kind = FailureKind::TransportError;
    std::string detail;
    int retry_count = 0;
    bool operator==(const FailureOutcome&) const = default;
};

struct PredictionRecord {
    std::string record_id;
    Condition condition = Condition::Normal;
    PromptKind prompt_kind = PromptKind::Elena;
    // Empty monostate only while a capture awaits parsing.
    std::variant<std::monostate, ElenaOutput, FailureOutcome> output;
    std::string raw_response;
    std::string provider_id;
    std::int64_t latency_ms = 0;
    int retry_count = 0;

    const ElenaOutput* elena() const { return std::get_if<ElenaOutput>(&output); }
    const FailureOutcome* failure() const { return std::get_if<FailureOutcome>(&output); }
};

// Canonical JSON. Field names for ElenaOutput are "label", "explicit",
// "implicit", "narrative", "body_parts", "valence", "arousal", "dominance".
Json to_json(const ElenaOutput& o);
ElenaOutput elena_from_canonical_json(const Json& j);
Json to_json(const VadScores& v);
Json to_json(const Rect& r);
Rect rect_from_json(const Json& j);
Json to_json(const DatasetRecord& r);
DatasetRecord record_from_json(const Json& j);
Json to_json(const FailureOutcome& f);
FailureOutcome failure_from_json(const Json& j);
Json to_json(const PredictionRecord& p);
PredictionRecord prediction_from_json(const Json& j);

// JSON field names an ELENA response must carry.
const std::vector<std::string>& elena_field_names();

}  // namespace elena
