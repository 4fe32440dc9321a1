#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "elena/anatomizer.hpp"
#include "elena/types.hpp"

namespace elena {

using Grid7 = std::array<std::array<long long, kLabelCount>, kLabelCount>;

// Rows are gold labels, columns predictions, both in canonical label order.
struct ConfusionMatrix {
    Grid7 counts{};
    std::array<long long, kLabelCount> unanswered{};

    long long answered() const;
    long long total() const;
    bool operator==(const ConfusionMatrix&) const = default;
};

using Outcome = std::variant<EkmanLabel, FailureOutcome>;

struct ScoredItem {
    EkmanLabel gold;
    Outcome prediction;
};

// Failures land in unanswered[gold] rather than being dropped.
ConfusionMatrix build_confusion(std::span<const ScoredItem> items);

struct ClassMetrics {
    double precision = 0;
    double recall = 0;
    double f1 = 0;
    long long support = 0;
};

struct MetricsReport {
    std::array<ClassMetrics, kLabelCount> per_class{};
    double macro_precision = 0;
    double macro_recall = 0;
    double macro_f1 = 0;
    double accuracy = 0;
};

// precision = TP/(TP+FP), recall = TP/(TP+FN) with unanswered records counted
// as false negatives of their gold class; 0/0 := 0; macro values average all
// seven classes. Throws EmptyMatrix when nothing was evaluated.
MetricsReport compute_metrics(const ConfusionMatrix& cm);

struct DistributionReport {
    Condition condition = Condition::Normal;
    std::size_t total_mentions = 0;
    // Sorted by descending count, then term.
    std::vector<std::pair<std::string, double>> part_percentages;
    std::map<std::string, std::size_t> part_counts;
    std::array<double, 5> region_percentages{};
    std::array<std::size_t, 5> region_counts{};
};

// Counts each response's de-duplicated mentions; unrecognized mentions count
// toward their own term and roll up into Other.
DistributionReport build_distribution(std::span<const AnatomizedResponse> responses, Condition condition);

// Side-by-side top-N terms and region rollup for two runs.
std::string render_distribution_table(const DistributionReport& normal, const DistributionReport& masked,
                                      std::size_t top_n = 10);

struct VadSummary {
    std::map<EkmanLabel, VadScores> per_label_means;
    std::map<EkmanLabel, std::size_t> per_label_counts;
};

// Means per predicted label over outputs that carry VAD scores. Labels with no
// samples are absent.
VadSummary summarize_vad(std::span<const ElenaOutput> outputs);

struct EvaluationReport {
    std::string run_id;
    std::string provider_id;
    PromptKind prompt_kind = PromptKind::Elena;
    Condition condition = Condition::Normal;
    bool exclude_failures = false;
    std::size_t records_in_manifest = 0;
    std::size_t records_evaluated = 0;
    std::size_t records_missing = 0;        // no parsed prediction yet
    std::size_t records_not_dominant = 0;   // other agents of multi-person images
    std::size_t dominant_fallbacks = 0;     // no face overlap; largest body box used
    std::map<std::string, std::size_t> failures_by_kind;
    std::map<std::string, std::size_t> validation_warnings;
    ConfusionMatrix confusion;
    MetricsReport metrics;
    std::array<long long, kLabelCount> predicted_counts{};
    DistributionReport distribution;
    VadSummary vad;
};

Json to_json(const ConfusionMatrix& cm);
Json to_json(const MetricsReport& m);
Json to_json(const DistributionReport& d);
Json to_json(const VadSummary& v);
Json to_json(const EvaluationReport& r);
EvaluationReport evaluation_report_from_json(const Json& j);

std::string render_text_summary(const EvaluationReport& r);

// report.json, report.txt and plots/{confusion,per_category,radar_counts,vad,
// body_parts,regions}.csv under `dir`. Identical inputs give identical bytes.
void emit_report(const EvaluationReport& report, const std::filesystem::path& dir);

struct ComparisonRow {
    std::string metric;
    double a = 0;
    double b = 0;
    double delta = 0;  // b - a, percentage points
};

struct Comparison {
    std::string run_a;
    std::string run_b;
    std::vector<ComparisonRow> rows;
    std::string body_part_table;  // two-condition layout when conditions differ
};

Comparison compare_reports(const EvaluationReport& a, const EvaluationReport& b);
std::string render_comparison(const Comparison& c);
std::string comparison_csv(const Comparison& c);

std::string format_fixed(double v, int decimals);

}  // namespace elena
