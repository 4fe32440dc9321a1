// elena: command-line front end over the C API.
#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include "elena/elena.h"

using nlohmann::json;

namespace {

using CommandFn = elena_status (*)(elena_context*, const char*, char**);

int exit_code(elena_status s) {
    if (s == ELENA_OK) return 0;
    if (s == ELENA_PARTIAL) return 1;
    return 2;
}

int invoke(const std::string& config, CommandFn fn, const json& request, bool quiet) {
    elena_context* ctx = nullptr;
    if (auto s = elena_context_new(config.empty() ? nullptr : config.c_str(), &ctx); s != ELENA_OK) {
        std::cerr << "error: " << elena_last_error() << "\n";
        return 2;
    }
    char* raw = nullptr;
    const auto status = fn(ctx, request.dump().c_str(), &raw);
    if (status != ELENA_OK && status != ELENA_PARTIAL) {
        std::cerr << "error: " << elena_last_error() << "\n";
        elena_context_free(ctx);
        return 2;
    }
    auto result = json::parse(raw ? raw : "{}");
    elena_string_free(raw);
    elena_context_free(ctx);

    for (const auto& w : result.value("warnings", json::array())) std::cerr << "warning: " << w.get<std::string>() << "\n";
    if (!quiet) {
        if (result.contains("text")) {
            std::cout << result["text"].get<std::string>();
            result.erase("text");
        }
        result.erase("warnings");
        std::cout << result.dump(2) << "\n";
    }
    return exit_code(status);
}

template <typename T>
void put(json& j, const char* key, const std::optional<T>& v) {
    if (v) j[key] = *v;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Embodied-emotion evaluation pipeline for vision-language models"};
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string(elena_version()));
    std::string config;
    bool quiet = false;
    app.add_option("-c,--config", config, "TOML config file")->check(CLI::ExistingFile);
    app.add_flag("-q,--quiet", quiet, "Print warnings only");

    json request = json::object();
    CommandFn fn = nullptr;

    // ingest
    auto* ingest = app.add_subcommand("ingest", "Convert dataset annotations to a manifest");
    std::string source, annotations, images_root, out;
    ingest->add_option("--source", source, "emotic | heco | besst | generic")->required();
    ingest->add_option("--annotations", annotations, "Annotation file")->required()->check(CLI::ExistingFile);
    ingest->add_option("--images-root", images_root, "Image directory (defaults to the annotation directory)");
    ingest->add_option("-o,--out", out, "Output manifest (JSONL)")->required();
    ingest->callback([&] {
        request = {{"source", source}, {"annotations", annotations}, {"out", out}};
        if (!images_root.empty()) request["images_root"] = images_root;
        fn = elena_ingest;
    });

    // mask
    auto* mask = app.add_subcommand("mask", "Detect and mask faces");
    std::string manifest, out_dir, detector_model, boxes_dir;
    std::optional<double> threshold;
    std::optional<int> max_faces, margin;
    std::vector<int> color;
    mask->add_option("-m,--manifest", manifest, "Manifest (JSONL)")->required()->check(CLI::ExistingFile);
    mask->add_option("-o,--out", out_dir, "Output directory")->required();
    mask->add_option("--model", detector_model, "ONNX face detector")->check(CLI::ExistingFile);
    mask->add_option("--boxes-dir", boxes_dir, "Directory of <record_id>.json external boxes")->check(CLI::ExistingDirectory);
    mask->add_option("--threshold", threshold, "Detector confidence threshold");
    mask->add_option("--max-faces", max_faces, "Faces kept per image");
    mask->add_option("--margin", margin, "Box margin in pixels");
    mask->add_option("--color", color, "Mask color as R G B")->expected(3);
    mask->callback([&] {
        request = {{"manifest", manifest}, {"out_dir", out_dir}};
        if (!detector_model.empty()) request["detector_model"] = detector_model;
        if (!boxes_dir.empty()) request["boxes_dir"] = boxes_dir;
        put(request, "confidence_threshold", threshold);
        put(request, "max_faces", max_faces);
        put(request, "box_margin", margin);
        if (!color.empty()) request["mask_color"] = color;
        fn = elena_mask;
    });

    // run / two-step share their options
    std::string run_id, provider = "mock", prompt_kind = "elena", condition = "normal", masked_dir, mock_script,
                output_root;
    std::optional<int> concurrency;
    std::optional<std::size_t> limit;
    std::optional<double> iou;
    auto run_flags = [&](CLI::App* sub, bool with_kind) {
        sub->add_option("--run-id", run_id, "Run identifier")->required();
        sub->add_option("-m,--manifest", manifest, "Manifest (JSONL)")->required()->check(CLI::ExistingFile);
        sub->add_option("--provider", provider, "Provider id from the config");
        if (with_kind) sub->add_option("--prompt", prompt_kind, "naive | elena");
        sub->add_option("--condition", condition, "normal | masked");
        sub->add_option("--masked-dir", masked_dir, "Output of `mask` for the masked condition");
        sub->add_option("--mock-script", mock_script, "Scripted responses (mock provider without a config)");
        sub->add_option("--output-root", output_root, "Directory holding runs");
        sub->add_option("--concurrency", concurrency, "Parallel requests");
        sub->add_option("--iou", iou, "Face/body IoU threshold");
        sub->add_option("--limit", limit, "Stop after starting this many new records");
    };
    auto run_request = [&] {
        json r = {{"run_id", run_id}, {"manifest", manifest}, {"provider", provider},
                  {"prompt_kind", prompt_kind}, {"condition", condition}};
        if (!masked_dir.empty()) r["masked_dir"] = masked_dir;
        if (!mock_script.empty()) r["mock_script"] = mock_script;
        if (!output_root.empty()) r["output_root"] = output_root;
        put(r, "concurrency", concurrency);
        put(r, "iou_threshold", iou);
        put(r, "limit", limit);
        return r;
    };
    auto* run = app.add_subcommand("run", "Prompt a provider over a manifest (resumable)");
    run_flags(run, true);
    run->callback([&] {
        request = run_request();
        fn = elena_run;
    });
    auto* two_step = app.add_subcommand("two-step", "Describe-then-classify baseline");
    run_flags(two_step, false);
    two_step->callback([&] {
        prompt_kind = "two_step_parse";
        request = run_request();
        fn = elena_two_step;
    });

    // evaluate
    auto* evaluate = app.add_subcommand("evaluate", "Score a run and write its report bundle");
    std::string run_dir, detections, eval_manifest;
    bool exclude_failures = false;
    evaluate->add_option("--run-dir", run_dir, "Run directory")->check(CLI::ExistingDirectory);
    evaluate->add_option("--run-id", run_id, "Run id under the configured output root");
    evaluate->add_option("--manifest", eval_manifest, "Override the run's manifest")->check(CLI::ExistingFile);
    evaluate->add_option("--detections", detections, "DetectionSet JSONL for dominant-agent selection")
        ->check(CLI::ExistingFile);
    evaluate->add_option("-o,--out", out_dir, "Report directory (default <run>/report)");
    evaluate->add_option("--iou", iou, "Face/body IoU threshold");
    evaluate->add_flag("--exclude-failures", exclude_failures, "Drop failed records instead of counting them unanswered");
    evaluate->callback([&] {
        if (run_dir.empty() && run_id.empty()) throw CLI::ValidationError("evaluate", "--run-dir or --run-id is required");
        request = {{"exclude_failures", exclude_failures}};
        if (!run_dir.empty()) request["run_dir"] = run_dir;
        if (!run_id.empty()) request["run_id"] = run_id;
        if (!eval_manifest.empty()) request["manifest"] = eval_manifest;
        if (!detections.empty()) request["detections"] = detections;
        if (!out_dir.empty()) request["out_dir"] = out_dir;
        put(request, "iou_threshold", iou);
        fn = elena_evaluate;
    });

    // compare
    auto* compare = app.add_subcommand("compare", "Delta table between two reports");
    std::string a, b;
    compare->add_option("a", a, "Baseline report.json or run directory")->required()->check(CLI::ExistingPath);
    compare->add_option("b", b, "Other report.json or run directory")->required()->check(CLI::ExistingPath);
    compare->add_option("-o,--out", out_dir, "Write comparison.txt and comparison.csv here");
    compare->callback([&] {
        request = {{"a", a}, {"b", b}};
        if (!out_dir.empty()) request["out_dir"] = out_dir;
        fn = elena_compare;
    });

    // attention analyze
    auto* attention = app.add_subcommand("attention", "Cross-attention grid analysis");
    attention->require_subcommand(1);
    auto* analyze = attention->add_subcommand("analyze", "Region mass per layer and normal/masked deltas");
    std::string normal_dir, masked_grid_dir;
    std::optional<int> overlay_layer;
    std::optional<double> alpha;
    analyze->add_option("-m,--manifest", manifest, "Manifest (JSONL)")->required()->check(CLI::ExistingFile);
    analyze->add_option("--detections", detections, "DetectionSet JSONL")->required()->check(CLI::ExistingFile);
    analyze->add_option("--normal", normal_dir, "Directory of <record_id>.attn for normal images")
        ->check(CLI::ExistingDirectory);
    analyze->add_option("--masked", masked_grid_dir, "Directory of <record_id>.attn for masked images")
        ->check(CLI::ExistingDirectory);
    analyze->add_option("-o,--out", out_dir, "Output directory")->required();
    analyze->add_option("--overlay-layer", overlay_layer, "Render overlays for this layer");
    analyze->add_option("--alpha", alpha, "Overlay opacity");
    analyze->callback([&] {
        request = {{"manifest", manifest}, {"detections", detections}, {"out_dir", out_dir}};
        if (!normal_dir.empty()) request["normal_dir"] = normal_dir;
        if (!masked_grid_dir.empty()) request["masked_dir"] = masked_grid_dir;
        put(request, "overlay_layer", overlay_layer);
        put(request, "overlay_alpha", alpha);
        fn = elena_attention_analyze;
    });

    // report render
    auto* report = app.add_subcommand("report", "Report utilities");
    report->require_subcommand(1);
    auto* render = report->add_subcommand("render", "Draw PNG charts for a report bundle");
    std::string report_path;
    render->add_option("report", report_path, "report.json or its directory")->required()->check(CLI::ExistingPath);
    render->add_option("-o,--out", out_dir, "Chart directory (default: plots/ next to report.json)");
    render->callback([&] {
        request = {{"report", report_path}};
        if (!out_dir.empty()) request["out_dir"] = out_dir;
        fn = elena_report_render;
    });

    // batch
    auto* batch = app.add_subcommand("batch", "Run and evaluate every [[matrix]] entry of the config");
    bool no_eval = false;
    batch->add_flag("--no-evaluate", no_eval, "Skip evaluation");
    batch->add_option("--limit", limit, "Per-run limit on new records");
    batch->callback([&] {
        if (config.empty()) throw CLI::ValidationError("batch", "--config is required");
        request = {{"config", config}, {"evaluate", !no_eval}};
        put(request, "limit", limit);
        fn = elena_batch;
    });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }
    if (!fn) return 2;
    return invoke(config, fn, request, quiet);
}
