#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "elena/eval.hpp"
#include "elena/face_masker.hpp"
#include "elena/gateway.hpp"
#include "elena/types.hpp"

namespace elena {

// Process-level settings from the TOML config plus defaults. Relative paths
// in the file resolve against the file's directory.
struct AppConfig {
    std::filesystem::path base_dir = ".";
    std::filesystem::path output_root = "runs";
    std::optional<std::filesystem::path> assets_dir;
    std::string prompt_version = "v1";
    int concurrency = 1;
    double iou_threshold = 0.5;
    MaskSpec mask;
    std::optional<std::filesystem::path> detector_model;
    DetectorOptions detector;
    double overlay_alpha = 0.5;
    std::map<std::string, ProviderConfig> providers;
    Json matrix = Json::array();  // [[matrix]] entries, unresolved
};

AppConfig app_config_from_json(const Json& doc, const std::filesystem::path& base_dir);
AppConfig load_app_config(const std::optional<std::filesystem::path>& path);
const ProviderConfig& find_provider(const AppConfig& cfg, const std::string& provider_id);

struct CommandResult {
    int status = 0;  // 0 complete, 1 partial (some records failed or were not reached)
    std::vector<std::string> warnings;
    Json summary = Json::object();
};

// ---------------------------------------------------------------- mask

struct MaskOptions {
    std::filesystem::path manifest;
    std::filesystem::path out_dir;
    MaskSpec spec;
    std::optional<std::filesystem::path> detector_model;
    DetectorOptions detector;
    // Directory of <record_id>.json external box files; used instead of the
    // detector when set.
    std::optional<std::filesystem::path> boxes_dir;
};

// Writes <out>/<record_id>.masked.png and <out>/detections.jsonl (manifest
// order). Zero faces: unmodified copy plus a warning. Detector failures are
// skipped and logged.
CommandResult cmd_mask(const MaskOptions& options);

// ---------------------------------------------------------------- ingest

struct IngestOptions {
    std::string source;  // emotic | heco | besst | generic
    std::filesystem::path annotations;
    std::filesystem::path images_root;
    std::filesystem::path out;
};

CommandResult cmd_ingest(const IngestOptions& options);

// ---------------------------------------------------------------- run

struct RunConfig {
    std::string run_id;
    std::filesystem::path manifest;
    std::string provider;
    PromptKind prompt_kind = PromptKind::Elena;
    Condition condition = Condition::Normal;
    MaskSpec mask_spec;
    double iou_threshold = 0.5;
    int concurrency = 1;
    std::string prompt_version = "v1";
    // Output of `mask`; empty means the manifest images are used as-is
    // (datasets such as BESST ship pre-masked).
    std::filesystem::path masked_dir;
    std::filesystem::path output_root = "runs";
};

Json to_json(const RunConfig& c);
RunConfig run_config_from_json(const Json& j);

// SHA-256 over the result-affecting fields and the provider settings.
// Concurrency and output_root are excluded: they do not change outputs.
std::string config_hash(const RunConfig& c, const ProviderConfig& provider);

struct RunOptions {
    RunConfig config;
    ProviderConfig provider;
    std::optional<std::filesystem::path> assets_dir;
    // Stop after starting this many new records (simulated interruption).
    std::optional<std::size_t> limit;
    // Test hooks.
    Provider* provider_override = nullptr;
    Clock* clock = nullptr;
};

std::filesystem::path run_directory(const RunConfig& c);

// Single-pass run (Naive or Elena). Two-step kinds are routed to
// cmd_two_step. Throws ConfigMismatch when resuming with a different config.
CommandResult cmd_run(const RunOptions& options);
CommandResult cmd_two_step(const RunOptions& options);

// Re-derives <run>/parsed.jsonl from the capture store.
std::size_t rebuild_parsed(const std::filesystem::path& run_dir, const RunConfig& config,
                           const std::optional<std::filesystem::path>& assets_dir = std::nullopt);

// Parses one single-pass capture into an output or a MalformedResponse.
std::variant<ElenaOutput, FailureOutcome> parse_capture(std::string_view raw, PromptKind kind);

// ---------------------------------------------------------------- evaluate

struct EvaluateOptions {
    std::filesystem::path run_dir;
    std::optional<std::filesystem::path> manifest;    // defaults to the run's manifest
    std::optional<std::filesystem::path> detections;  // defaults to <masked_dir>/detections.jsonl
    std::optional<std::filesystem::path> out_dir;     // defaults to <run>/report
    std::optional<std::filesystem::path> assets_dir;
    double iou_threshold = 0.5;
    bool exclude_failures = false;
};

// Throws MissingRun and EmptyMatrix.
EvaluationReport evaluate_run(const EvaluateOptions& options, std::vector<std::string>* warnings = nullptr);
CommandResult cmd_evaluate(const EvaluateOptions& options);

// ---------------------------------------------------------------- compare

struct CompareOptions {
    std::filesystem::path a;  // report.json or a run directory
    std::filesystem::path b;
    std::optional<std::filesystem::path> out_dir;
};

CommandResult cmd_compare(const CompareOptions& options);

// ---------------------------------------------------------------- attention

struct AttentionOptions {
    std::filesystem::path manifest;
    std::filesystem::path detections;  // DetectionSet JSONL keyed by record_id
    std::optional<std::filesystem::path> normal_dir;  // <record_id>.attn
    std::optional<std::filesystem::path> masked_dir;
    std::filesystem::path out_dir;
    std::optional<int> overlay_layer;  // render overlays for this layer
    double overlay_alpha = 0.5;
};

CommandResult cmd_attention_analyze(const AttentionOptions& options);

// ---------------------------------------------------------------- report

struct RenderOptions {
    std::filesystem::path report;  // report.json or a directory holding it
    std::optional<std::filesystem::path> out_dir;
};

// PNG charts (confusion heatmap, per-category bars, region bars) next to the
// CSV plot data.
CommandResult cmd_report_render(const RenderOptions& options);

// ---------------------------------------------------------------- batch

struct BatchOptions {
    std::filesystem::path config;
    bool evaluate = true;
    std::optional<std::size_t> limit;
};

// Runs every [[matrix]] entry of the config, then evaluates each run.
CommandResult cmd_batch(const BatchOptions& options);

// JSON request decoding used by the C API. Missing keys fall back to `app`.
MaskOptions mask_options_from_json(const Json& j, const AppConfig& app);
IngestOptions ingest_options_from_json(const Json& j);
RunOptions run_options_from_json(const Json& j, const AppConfig& app);
EvaluateOptions evaluate_options_from_json(const Json& j, const AppConfig& app);
CompareOptions compare_options_from_json(const Json& j);
AttentionOptions attention_options_from_json(const Json& j, const AppConfig& app);
RenderOptions render_options_from_json(const Json& j);
BatchOptions batch_options_from_json(const Json& j);

}  // namespace elena
