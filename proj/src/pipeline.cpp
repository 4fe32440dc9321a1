#include "elena/pipeline.hpp"

#include <openssl/evp.h>
#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <atomic>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "elena/anatomizer.hpp"
#include "elena/assets.hpp"
#include "elena/attention.hpp"
#include "elena/capture_store.hpp"
#include "elena/charts.hpp"
#include "elena/config.hpp"
#include "elena/dataset.hpp"
#include "elena/error.hpp"
#include "elena/image.hpp"
#include "elena/label_atlas.hpp"
#include "elena/prompt_forge.hpp"

namespace elena {

namespace fs = std::filesystem;

namespace {

fs::path resolve_against(const fs::path& base, const fs::path& p) {
    if (p.empty() || p.is_absolute()) return p;
    return base / p;
}

AssetStore assets_for(const std::optional<fs::path>& dir) { return dir ? AssetStore(*dir) : AssetStore(); }

std::string describe(const Error& e) { return std::string(error_code_name(e.code())) + ": " + e.what(); }

Rgb rgb_from_json(const Json& j) {
    if (!j.is_array() || j.size() != 3) fail(ErrorCode::InvalidArgument, "mask_color must be [r, g, b]");
    auto channel = [&](std::size_t i) {
        const int v = j.at(i).get<int>();
        if (v < 0 || v > 255) fail(ErrorCode::InvalidArgument, "mask_color channels must lie in [0, 255]");
        return static_cast<std::uint8_t>(v);
    };
    return {channel(0), channel(1), channel(2)};
}

void apply_mask_json(MaskSpec& spec, const Json& j) {
    if (j.contains("mask_color")) spec.mask_color = rgb_from_json(j["mask_color"]);
    spec.confidence_threshold = j.value("confidence_threshold", spec.confidence_threshold);
    spec.max_faces = j.value("max_faces", spec.max_faces);
    spec.box_margin = j.value("box_margin", spec.box_margin);
}

Json mask_to_json(const MaskSpec& s) {
    return Json{{"mask_color", {s.mask_color.r, s.mask_color.g, s.mask_color.b}},
                {"confidence_threshold", s.confidence_threshold},
                {"max_faces", s.max_faces},
                {"box_margin", s.box_margin}};
}

std::string sha256_hex(std::string_view text) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(text.data(), text.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
        fail(ErrorCode::InvalidArgument, "SHA-256 failed");
    }
    std::ostringstream out;
    for (unsigned int i = 0; i < len; ++i) out << std::hex << std::setw(2) << std::setfill('0') << int(digest[i]);
    return out.str();
}

Json report_json_path_or_dir(const fs::path& p, fs::path& resolved) {
    resolved = p;
    if (fs::is_directory(p)) {
        resolved = fs::exists(p / "report.json") ? p / "report.json" : p / "report" / "report.json";
    }
    if (!fs::exists(resolved)) fail(ErrorCode::MissingRun, "no report.json at " + p.string());
    return Json::parse(read_text_file(resolved));
}

std::map<std::string, DetectionSet> load_detections(const fs::path& path) {
    std::map<std::string, DetectionSet> out;
    for (const auto& j : read_jsonl(path)) {
        auto d = detection_from_json(j, path.string());
        out[d.image_id] = std::move(d);
    }
    return out;
}

}  // namespace

// ---------------------------------------------------------------- config

AppConfig app_config_from_json(const Json& doc, const fs::path& base_dir) {
    AppConfig cfg;
    cfg.base_dir = base_dir;
    try {
        if (doc.contains("run")) {
            const auto& r = doc["run"];
            cfg.output_root = resolve_against(base_dir, r.value("output_root", cfg.output_root.string()));
            if (r.contains("assets_dir")) cfg.assets_dir = resolve_against(base_dir, r["assets_dir"].get<std::string>());
            cfg.prompt_version = r.value("prompt_version", cfg.prompt_version);
            cfg.concurrency = r.value("concurrency", cfg.concurrency);
            cfg.iou_threshold = r.value("iou_threshold", cfg.iou_threshold);
        } else {
            cfg.output_root = resolve_against(base_dir, cfg.output_root);
        }
        if (doc.contains("mask")) {
            const auto& m = doc["mask"];
            apply_mask_json(cfg.mask, m);
            if (m.contains("detector_model")) {
                cfg.detector_model = resolve_against(base_dir, m["detector_model"].get<std::string>());
            }
            cfg.detector.input_width = m.value("input_width", cfg.detector.input_width);
            cfg.detector.input_height = m.value("input_height", cfg.detector.input_height);
            cfg.detector.nms_iou_threshold = m.value("nms_iou_threshold", cfg.detector.nms_iou_threshold);
        }
        if (doc.contains("attention")) cfg.overlay_alpha = doc["attention"].value("overlay_alpha", cfg.overlay_alpha);
        if (doc.contains("providers")) {
            for (const auto& [id, p] : doc["providers"].items()) {
                Json pj = p;
                pj["provider_id"] = id;
                auto pc = provider_from_json(pj);
                if (!pc.mock_script.empty()) pc.mock_script = resolve_against(base_dir, pc.mock_script);
                pc.validate();
                cfg.providers[id] = std::move(pc);
            }
        }
        if (doc.contains("matrix")) cfg.matrix = doc["matrix"];
    } catch (const Json::exception& e) {
        fail(ErrorCode::InvalidArgument, std::string("config: ") + e.what());
    }
    if (cfg.concurrency < 1) fail(ErrorCode::InvalidArgument, "config: concurrency must be >= 1");
    cfg.mask.validate();
    return cfg;
}

AppConfig load_app_config(const std::optional<fs::path>& path) {
    if (!path) return app_config_from_json(Json::object(), fs::current_path());
    const auto doc = load_toml(*path);
    return app_config_from_json(doc, fs::absolute(*path).parent_path());
}

const ProviderConfig& find_provider(const AppConfig& cfg, const std::string& provider_id) {
    auto it = cfg.providers.find(provider_id);
    if (it == cfg.providers.end()) {
        std::string known;
        for (const auto& [id, _] : cfg.providers) known += (known.empty() ? "" : ", ") + id;
        fail(ErrorCode::InvalidArgument,
             "unknown provider '" + provider_id + "'" + (known.empty() ? " (no providers configured)" : "; known: " + known));
    }
    return it->second;
}

// ---------------------------------------------------------------- mask

CommandResult cmd_mask(const MaskOptions& options) {
    options.spec.validate();
    const auto manifest = load_generic(options.manifest, LoadOptions{false});
    std::optional<FaceDetector> detector;
    if (!options.boxes_dir) {
        if (!options.detector_model) {
            fail(ErrorCode::InvalidArgument, "mask needs a detector model or a directory of external boxes");
        }
        detector.emplace(*options.detector_model, options.detector);
    }
    fs::create_directories(options.out_dir);

    CommandResult result;
    std::vector<Json> lines;
    std::size_t masked = 0, zero_face = 0, skipped = 0;
    for (const auto& rec : manifest.records) {
        try {
            const Image image = read_image(resolve_image(manifest, rec));
            DetectionSet det;
            if (options.boxes_dir) {
                const auto box_file = *options.boxes_dir / (rec.record_id + ".json");
                if (fs::exists(box_file)) {
                    det = load_external_boxes(box_file);
                } else {
                    det.detector_id = "external";
                    result.warnings.push_back("record " + rec.record_id + ": no box file " + box_file.string());
                }
                det.image_id = rec.record_id;
            } else {
                det = detector->detect(image, options.spec, rec.record_id);
            }
            if (det.faces.empty()) {
                ++zero_face;
                result.warnings.push_back("record " + rec.record_id + ": no faces detected; writing an unmodified copy");
                write_png(options.out_dir / (rec.record_id + ".masked.png"), image);
            } else {
                ++masked;
                write_png(options.out_dir / (rec.record_id + ".masked.png"), mask_image(image, det, options.spec));
            }
            lines.push_back(to_json(det));
        } catch (const Error& e) {
            ++skipped;
            result.warnings.push_back("record " + rec.record_id + ": skipped: " + describe(e));
        }
    }
    write_jsonl_atomic(options.out_dir / "detections.jsonl", lines);
    result.status = skipped ? 1 : 0;
    result.summary = {{"records", manifest.records.size()},
                      {"masked", masked},
                      {"zero_face", zero_face},
                      {"skipped", skipped},
                      {"out_dir", options.out_dir.string()}};
    return result;
}

// ---------------------------------------------------------------- ingest

CommandResult cmd_ingest(const IngestOptions& options) {
    const auto source = to_lower(options.source);
    Manifest m;
    if (source == "emotic") {
        m = adapt_emotic(options.annotations, options.images_root);
    } else if (source == "heco") {
        m = adapt_heco(options.annotations, options.images_root);
    } else if (source == "besst") {
        m = adapt_besst(options.annotations, options.images_root);
    } else if (source == "generic") {
        m = load_generic(options.annotations);
    } else {
        fail(ErrorCode::InvalidArgument, "unknown source '" + options.source + "' (emotic, heco, besst, generic)");
    }
    write_manifest(options.out, m);
    CommandResult result;
    result.warnings = m.report.warnings;
    result.summary = to_json(m.report);
    result.summary["out"] = options.out.string();
    return result;
}

// ---------------------------------------------------------------- run config

Json to_json(const RunConfig& c) {
    return Json{{"run_id", c.run_id},
                {"manifest", c.manifest.string()},
                {"provider", c.provider},
                {"prompt_kind", to_string(c.prompt_kind)},
                {"condition", to_string(c.condition)},
                {"mask_spec", mask_to_json(c.mask_spec)},
                {"iou_threshold", c.iou_threshold},
                {"concurrency", c.concurrency},
                {"prompt_version", c.prompt_version},
                {"masked_dir", c.masked_dir.string()},
                {"output_root", c.output_root.string()}};
}

RunConfig run_config_from_json(const Json& j) {
    RunConfig c;
    try {
        c.run_id = j.at("run_id").get<std::string>();
        c.manifest = j.at("manifest").get<std::string>();
        c.provider = j.at("provider").get<std::string>();
        c.prompt_kind = parse_prompt_kind(j.value("prompt_kind", "elena"));
        c.condition = parse_condition(j.value("condition", "normal"));
        if (j.contains("mask_spec")) apply_mask_json(c.mask_spec, j["mask_spec"]);
        c.iou_threshold = j.value("iou_threshold", c.iou_threshold);
        c.concurrency = j.value("concurrency", c.concurrency);
        c.prompt_version = j.value("prompt_version", c.prompt_version);
        c.masked_dir = j.value("masked_dir", "");
        c.output_root = j.value("output_root", c.output_root.string());
    } catch (const Json::exception& e) {
        fail(ErrorCode::InvalidArgument, std::string("run config: ") + e.what());
    }
    return c;
}

std::string config_hash(const RunConfig& c, const ProviderConfig& provider) {
    Json j = to_json(c);
    j.erase("concurrency");
    j.erase("output_root");
    j["provider_settings"] = to_json(provider);
    return sha256_hex(j.dump());
}

fs::path run_directory(const RunConfig& c) { return c.output_root / c.run_id; }

namespace {

void check_run_id(const std::string& run_id) {
    if (run_id.empty() || sanitize_id(run_id) != run_id) {
        fail(ErrorCode::InvalidArgument, "run_id must be non-empty and use only [A-Za-z0-9._-]");
    }
}

// Creates the run directory or verifies that a resumed run matches.
fs::path prepare_run(const RunOptions& options) {
    const auto& cfg = options.config;
    check_run_id(cfg.run_id);
    if (cfg.concurrency < 1) fail(ErrorCode::InvalidArgument, "concurrency must be >= 1");
    cfg.mask_spec.validate();
    options.provider.validate();
    if (cfg.condition == Condition::Masked && !cfg.masked_dir.empty() && !fs::is_directory(cfg.masked_dir)) {
        fail(ErrorCode::InvalidArgument, "masked image directory " + cfg.masked_dir.string() + " does not exist; run `mask` first");
    }
    const auto dir = run_directory(cfg);
    const auto hash = config_hash(cfg, options.provider);
    const auto cfg_file = dir / "run_config.json";
    if (fs::exists(cfg_file)) {
        const auto stored = Json::parse(read_text_file(cfg_file), nullptr, false);
        const std::string stored_hash = stored.is_object() ? stored.value("hash", "") : "";
        if (stored_hash != hash) {
            fail(ErrorCode::ConfigMismatch, "run '" + cfg.run_id + "' already exists with a different configuration (stored " +
                                                stored_hash.substr(0, 12) + ", requested " + hash.substr(0, 12) + ")");
        }
    } else {
        fs::create_directories(dir);
        Json doc{{"config", to_json(cfg)}, {"provider", to_json(options.provider)}, {"hash", hash}};
        write_text_file(cfg_file, doc.dump(2) + "\n");
    }
    return dir;
}

RunConfig read_run_config(const fs::path& run_dir) {
    const auto cfg_file = run_dir / "run_config.json";
    if (!fs::exists(cfg_file)) fail(ErrorCode::MissingRun, "no run at " + run_dir.string() + " (run_config.json missing)");
    const auto doc = Json::parse(read_text_file(cfg_file), nullptr, false);
    if (!doc.is_object() || !doc.contains("config")) fail(ErrorCode::MissingRun, cfg_file.string() + " is unreadable");
    return run_config_from_json(doc["config"]);
}

std::string stage_one_description(const ElenaOutput& d) {
    std::string out;
    for (const auto* part : {&d.explicit_desc, &d.implicit_desc, &d.narrative}) {
        if (part->empty()) continue;
        if (!out.empty()) out += "\n";
        out += *part;
    }
    return out;
}

fs::path image_for(const Manifest& manifest, const DatasetRecord& rec, const RunConfig& cfg) {
    if (cfg.condition == Condition::Masked && !cfg.masked_dir.empty()) {
        return cfg.masked_dir / (rec.record_id + ".masked.png");
    }
    return resolve_image(manifest, rec);
}

// Shared machinery for single-pass and two-step runs.
class RunSession {
public:
    explicit RunSession(const RunOptions& options)
        : options_(options),
          cfg_(options.config),
          run_dir_(prepare_run(options)),
          manifest_(load_generic(cfg_.manifest, LoadOptions{false})),
          assets_(assets_for(options.assets_dir)),
          clock_(options.clock ? options.clock : &system_clock_),
          limiter_(options.provider.requests_per_minute, *clock_),
          attempts_log_(run_dir_ / "attempts.jsonl", std::ios::app | std::ios::binary) {
        if (options.provider_override) {
            provider_ = options.provider_override;
        } else {
            owned_provider_ = make_provider(options.provider);
            provider_ = owned_provider_.get();
        }
        store_.emplace(run_dir_ / "captures.jsonl");
        if (store_->recovered_torn_line()) warn("captures.jsonl: dropped a torn final line from an interrupted run");
    }

    const Manifest& manifest() const { return manifest_; }
    CaptureStore& store() { return *store_; }
    const fs::path& run_dir() const { return run_dir_; }

    void warn(std::string msg) {
        std::lock_guard lock(mu_);
        warnings_.push_back(std::move(msg));
    }

    // False once the simulated interruption point has been reached.
    bool claim_start() {
        if (!options_.limit) return true;
        const auto n = started_.fetch_add(1);
        if (n >= *options_.limit) {
            interrupted_ = true;
            return false;
        }
        return true;
    }

    PromptBundle bundle(PromptKind kind, const DatasetRecord& rec, const fs::path* image_path,
                        const std::string& description) {
        PromptContext ctx;
        ctx.description = description;
        if (rec.person_box && image_path) {
            const auto img = read_image(*image_path);
            ctx.person_box_normalized = normalize_box(rec.person_box, img.width, img.height);
        }
        return instantiate_prompt(build_prompt(kind, cfg_.condition, assets_, cfg_.prompt_version), ctx);
    }

    PredictionRecord dispatch_and_capture(const DatasetRecord& rec, PromptKind kind, const RequestEnvelope& env,
                                          std::span<const std::uint8_t> image) {
        DispatchContext ctx;
        ctx.clock = clock_;
        ctx.limiter = &limiter_;
        ctx.on_attempt = [this](const AttemptLog& log) {
            std::lock_guard lock(mu_);
            attempts_log_ << to_json(log).dump() << '\n';
            attempts_log_.flush();
        };
        auto r = dispatch(*provider_, env, image, options_.provider, ctx);
        ++dispatched_;
        PredictionRecord p;
        p.record_id = rec.record_id;
        p.condition = cfg_.condition;
        p.prompt_kind = kind;
        p.raw_response = r.raw_text;
        p.provider_id = provider_->id();
        p.latency_ms = r.latency_ms;
        p.retry_count = r.retry_count;
        if (const auto* f = r.failure()) p.output = *f;
        // Persist before any parsing.
        store_->append(p);
        return p;
    }

    template <typename Fn>
    void for_each_record(Fn fn) {
        const auto& records = manifest_.records;
        std::atomic<std::size_t> next{0};
        auto worker = [&] {
            for (;;) {
                const auto i = next.fetch_add(1);
                if (i >= records.size() || interrupted_) return;
                try {
                    fn(records[i]);
                } catch (const Error& e) {
                    ++prepare_failures_;
                    warn("record " + records[i].record_id + ": " + describe(e));
                } catch (const std::exception& e) {
                    ++prepare_failures_;
                    warn("record " + records[i].record_id + ": " + e.what());
                }
            }
        };
        const int n = std::max(1, std::min<int>(cfg_.concurrency, static_cast<int>(records.size())));
        std::vector<std::thread> pool;
        for (int t = 1; t < n; ++t) pool.emplace_back(worker);
        worker();
        for (auto& t : pool) t.join();
    }

    CommandResult finish() {
        store_.reset();
        attempts_log_.close();
        const auto parsed = rebuild_parsed(run_dir_, cfg_, options_.assets_dir);
        std::size_t failures = 0;
        for (const auto& j : read_jsonl(run_dir_ / "parsed.jsonl")) failures += j.contains("failure") ? 1 : 0;
        const std::size_t total = manifest_.records.size();
        CommandResult result;
        result.warnings = warnings_;
        std::sort(result.warnings.begin(), result.warnings.end());
        result.summary = {{"run_id", cfg_.run_id},
                          {"run_dir", run_dir_.string()},
                          {"records", total},
                          {"dispatched", dispatched_.load()},
                          {"parsed", parsed},
                          {"failures", failures},
                          {"unprocessed", total - parsed},
                          {"record_errors", prepare_failures_.load()},
                          {"interrupted", interrupted_.load()}};
        result.status = (failures > 0 || parsed < total) ? 1 : 0;
        return result;
    }

private:
    const RunOptions& options_;
    const RunConfig& cfg_;
    fs::path run_dir_;
    Manifest manifest_;
    AssetStore assets_;
    SystemClock system_clock_;
    Clock* clock_;
    RateLimiter limiter_;
    std::ofstream attempts_log_;
    std::unique_ptr<Provider> owned_provider_;
    Provider* provider_ = nullptr;
    std::optional<CaptureStore> store_;
    std::mutex mu_;
    std::vector<std::string> warnings_;
    std::atomic<std::size_t> started_{0};
    std::atomic<std::size_t> dispatched_{0};
    std::atomic<std::size_t> prepare_failures_{0};
    std::atomic<bool> interrupted_{false};
};

FailureOutcome malformed(const Error& e, int retry_count) {
    return FailureOutcome{FailureKind::MalformedResponse, describe(e), retry_count};
}

}  // namespace

std::variant<ElenaOutput, FailureOutcome> parse_capture(std::string_view raw, PromptKind kind) {
    try {
        switch (kind) {
            case PromptKind::Elena: {
                auto out = parse_elena(extract_json(raw).doc);
                const auto report = validate_output(out);
                if (report.has_hard()) {
                    std::string codes;
                    for (const auto& v : report.violations) {
                        if (v.severity == Severity::Hard) codes += (codes.empty() ? "" : ",") + v.code;
                    }
                    return FailureOutcome{FailureKind::MalformedResponse, "Schema: " + codes, 0};
                }
                return out;
            }
            case PromptKind::TwoStepDescribe:
                return parse_description(extract_json(raw).doc);
            case PromptKind::Naive:
            case PromptKind::TwoStepParse: {
                ElenaOutput out;
                try {
                    out.label = parse_label_answer(extract_json(raw).doc);
                } catch (const Error& e) {
                    if (e.code() != ErrorCode::NoJsonFound) throw;
                    // A bare label such as "Happiness." is accepted as well.
                    std::string bare = trim(raw);
                    while (!bare.empty() && std::string_view(".!\"'`").find(bare.back()) != std::string_view::npos) bare.pop_back();
                    while (!bare.empty() && std::string_view("\"'`").find(bare.front()) != std::string_view::npos) bare.erase(0, 1);
                    if (bare.empty()) throw;
                    out.label = parse_label(bare);
                }
                return out;
            }
        }
    } catch (const Error& e) {
        return malformed(e, 0);
    }
    return FailureOutcome{FailureKind::MalformedResponse, "unsupported prompt kind", 0};
}

std::size_t rebuild_parsed(const fs::path& run_dir, const RunConfig& config, const std::optional<fs::path>&) {
    const auto manifest = load_generic(config.manifest, LoadOptions{false});
    const CaptureStore store(run_dir / "captures.jsonl");
    std::vector<Json> lines;
    const bool two_step = config.prompt_kind == PromptKind::TwoStepDescribe || config.prompt_kind == PromptKind::TwoStepParse;

    auto emit = [&](PredictionRecord p, const std::optional<ValidationReport>& validation) {
        Json line = to_json(p);
        if (validation) {
            Json codes = Json::array();
            for (const auto& v : validation->violations) codes.push_back(v.code);
            line["validation"] = codes;
        }
        lines.push_back(std::move(line));
    };

    for (const auto& rec : manifest.records) {
        if (!two_step) {
            auto cap = store.find(rec.record_id, config.prompt_kind);
            if (!cap) continue;
            if (cap->failure()) {
                emit(*cap, std::nullopt);
                continue;
            }
            auto parsed = parse_capture(cap->raw_response, config.prompt_kind);
            if (auto* f = std::get_if<FailureOutcome>(&parsed)) {
                f->retry_count = cap->retry_count;
                cap->output = *f;
                emit(*cap, std::nullopt);
            } else {
                const auto& out = std::get<ElenaOutput>(parsed);
                cap->output = out;
                std::optional<ValidationReport> validation;
                if (config.prompt_kind == PromptKind::Elena) validation = validate_output(out);
                emit(*cap, validation);
            }
            continue;
        }

        const auto s1 = store.find(rec.record_id, PromptKind::TwoStepDescribe);
        if (!s1) continue;
        PredictionRecord p = *s1;
        p.prompt_kind = PromptKind::TwoStepParse;
        if (const auto* f = s1->failure()) {
            p.output = FailureOutcome{f->kind, "stage two_step_describe: " + f->detail, f->retry_count};
            emit(p, std::nullopt);
            continue;
        }
        auto d = parse_capture(s1->raw_response, PromptKind::TwoStepDescribe);
        if (auto* f = std::get_if<FailureOutcome>(&d)) {
            p.output = FailureOutcome{f->kind, "stage two_step_describe: " + f->detail, s1->retry_count};
            emit(p, std::nullopt);
            continue;
        }
        const auto s2 = store.find(rec.record_id, PromptKind::TwoStepParse);
        if (!s2) continue;
        p.raw_response = s2->raw_response;
        p.latency_ms = s1->latency_ms + s2->latency_ms;
        p.retry_count = s1->retry_count + s2->retry_count;
        if (const auto* f = s2->failure()) {
            p.output = FailureOutcome{f->kind, "stage two_step_parse: " + f->detail, p.retry_count};
            emit(p, std::nullopt);
            continue;
        }
        auto l = parse_capture(s2->raw_response, PromptKind::TwoStepParse);
        if (auto* f = std::get_if<FailureOutcome>(&l)) {
            p.output = FailureOutcome{f->kind, "stage two_step_parse: " + f->detail, p.retry_count};
            emit(p, std::nullopt);
            continue;
        }
        ElenaOutput merged = std::get<ElenaOutput>(d);
        merged.label = std::get<ElenaOutput>(l).label;  // stage two decides the label
        p.output = merged;
        Json line = to_json(p);
        line["describe_raw_response"] = s1->raw_response;
        Json codes = Json::array();
        for (const auto& v : validate_output(merged).violations) codes.push_back(v.code);
        line["validation"] = codes;
        lines.push_back(std::move(line));
    }
    write_jsonl_atomic(run_dir / "parsed.jsonl", lines);
    return lines.size();
}

CommandResult cmd_run(const RunOptions& options) {
    const auto kind = options.config.prompt_kind;
    if (kind == PromptKind::TwoStepDescribe || kind == PromptKind::TwoStepParse) return cmd_two_step(options);

    RunSession session(options);
    session.for_each_record([&](const DatasetRecord& rec) {
        if (session.store().contains(rec.record_id, kind)) return;
        if (!session.claim_start()) return;
        const auto image_path = image_for(session.manifest(), rec, options.config);
        const auto bundle = session.bundle(kind, rec, &image_path, {});
        const auto env = render_for_provider(bundle, image_path, rec.record_id);
        const auto bytes = read_bytes(image_path);
        session.dispatch_and_capture(rec, kind, env, bytes);
    });
    return session.finish();
}

CommandResult cmd_two_step(const RunOptions& options) {
    RunOptions adjusted = options;
    adjusted.config.prompt_kind = PromptKind::TwoStepParse;
    RunSession session(adjusted);
    session.for_each_record([&](const DatasetRecord& rec) {
        bool started = false;
        auto start = [&] {
            if (started) return true;
            started = session.claim_start();
            return started;
        };
        auto s1 = session.store().find(rec.record_id, PromptKind::TwoStepDescribe);
        if (!s1) {
            if (!start()) return;
            const auto image_path = image_for(session.manifest(), rec, adjusted.config);
            const auto bundle = session.bundle(PromptKind::TwoStepDescribe, rec, &image_path, {});
            const auto env = render_for_provider(bundle, image_path, rec.record_id);
            const auto bytes = read_bytes(image_path);
            s1 = session.dispatch_and_capture(rec, PromptKind::TwoStepDescribe, env, bytes);
        }
        if (s1->failure()) return;  // no stage two after a failed stage one
        const auto described = parse_capture(s1->raw_response, PromptKind::TwoStepDescribe);
        if (std::holds_alternative<FailureOutcome>(described)) return;
        if (session.store().contains(rec.record_id, PromptKind::TwoStepParse)) return;
        if (!start()) return;
        const auto bundle =
            session.bundle(PromptKind::TwoStepParse, rec, nullptr, stage_one_description(std::get<ElenaOutput>(described)));
        const auto env = render_for_provider(bundle, std::nullopt, rec.record_id);
        session.dispatch_and_capture(rec, PromptKind::TwoStepParse, env, {});
    });
    return session.finish();
}

// ---------------------------------------------------------------- evaluate

EvaluationReport evaluate_run(const EvaluateOptions& options, std::vector<std::string>* warnings) {
    const auto cfg = read_run_config(options.run_dir);
    const auto parsed_path = options.run_dir / "parsed.jsonl";
    if (!fs::exists(parsed_path)) fail(ErrorCode::MissingRun, "run " + cfg.run_id + " has no parsed.jsonl");
    const auto assets = assets_for(options.assets_dir);
    const auto manifest = load_generic(options.manifest.value_or(cfg.manifest), LoadOptions{false});
    const auto taxonomy = TaxonomyMap::load(manifest.source_taxonomy, assets);
    const auto& lexicon = options.assets_dir
                              ? BodyPartLexicon::from_tsv(assets.read("config/body_lexicon.tsv"))
                              : BodyPartLexicon::builtin();

    std::map<std::string, PredictionRecord> predictions;
    std::string provider_id;
    for (const auto& j : read_jsonl(parsed_path)) {
        auto p = prediction_from_json(j);
        if (provider_id.empty()) provider_id = p.provider_id;
        predictions[p.record_id] = std::move(p);
    }

    std::map<std::string, DetectionSet> detections;
    if (options.detections) {
        detections = load_detections(*options.detections);
    } else if (!cfg.masked_dir.empty() && fs::exists(cfg.masked_dir / "detections.jsonl")) {
        detections = load_detections(cfg.masked_dir / "detections.jsonl");
    }

    EvaluationReport report;
    report.run_id = cfg.run_id;
    report.provider_id = provider_id.empty() ? cfg.provider : provider_id;
    report.prompt_kind = cfg.prompt_kind == PromptKind::TwoStepDescribe ? PromptKind::TwoStepParse : cfg.prompt_kind;
    report.condition = cfg.condition;
    report.exclude_failures = options.exclude_failures;
    report.records_in_manifest = manifest.records.size();

    // Multi-person images score only their dominant agent.
    std::map<std::string, std::vector<DatasetRecord>> by_image;
    for (const auto& rec : manifest.records) by_image[rec.image_ref].push_back(rec);
    std::map<std::string, EkmanLabel> gold;
    for (const auto& [image, agents] : by_image) {
        if (agents.size() == 1) {
            gold[agents[0].record_id] = modal_label(agents[0].gold_labels, taxonomy);
            continue;
        }
        DetectionSet faces;
        for (const auto& a : agents) {
            if (auto it = detections.find(a.record_id); it != detections.end()) {
                faces = it->second;
                break;
            }
        }
        const auto choice = dominant_emotion(agents, faces, taxonomy, options.iou_threshold);
        if (!choice.matched) ++report.dominant_fallbacks;
        gold[agents[choice.agent_index].record_id] = choice.label;
        report.records_not_dominant += agents.size() - 1;
    }

    std::vector<ScoredItem> items;
    std::vector<AnatomizedResponse> anatomized;
    std::vector<ElenaOutput> outputs;
    for (const auto& rec : manifest.records) {
        auto g = gold.find(rec.record_id);
        if (g == gold.end()) continue;
        auto p = predictions.find(rec.record_id);
        if (p == predictions.end()) {
            ++report.records_missing;
            continue;
        }
        if (const auto* f = p->second.failure()) {
            ++report.failures_by_kind[std::string(to_string(f->kind))];
            if (options.exclude_failures) continue;
            items.push_back({g->second, *f});
            continue;
        }
        const auto* out = p->second.elena();
        if (!out) {
            ++report.records_missing;
            continue;
        }
        items.push_back({g->second, out->label});
        ++report.predicted_counts[index_of(out->label)];
        outputs.push_back(*out);
        if (report.prompt_kind != PromptKind::Naive) {
            for (const auto& v : validate_output(*out).violations) ++report.validation_warnings[v.code];
            anatomized.push_back(anatomize(*out, lexicon));
        }
    }
    if (warnings && report.records_missing) {
        warnings->push_back(std::to_string(report.records_missing) + " record(s) have no parsed prediction");
    }
    report.records_evaluated = items.size();
    report.confusion = build_confusion(items);
    report.metrics = compute_metrics(report.confusion);
    report.distribution = build_distribution(anatomized, cfg.condition);
    report.vad = summarize_vad(outputs);
    return report;
}

CommandResult cmd_evaluate(const EvaluateOptions& options) {
    CommandResult result;
    const auto report = evaluate_run(options, &result.warnings);
    const auto out = options.out_dir.value_or(options.run_dir / "report");
    emit_report(report, out);
    result.status = report.records_missing ? 1 : 0;
    result.summary = {{"run_id", report.run_id},
                      {"report_dir", out.string()},
                      {"records_evaluated", report.records_evaluated},
                      {"macro_f1", report.metrics.macro_f1},
                      {"accuracy", report.metrics.accuracy},
                      {"text", render_text_summary(report)}};
    return result;
}

// ---------------------------------------------------------------- compare

CommandResult cmd_compare(const CompareOptions& options) {
    fs::path pa, pb;
    const auto a = evaluation_report_from_json(report_json_path_or_dir(options.a, pa));
    const auto b = evaluation_report_from_json(report_json_path_or_dir(options.b, pb));
    const auto cmp = compare_reports(a, b);
    const auto text = render_comparison(cmp);
    CommandResult result;
    if (options.out_dir) {
        write_text_file(*options.out_dir / "comparison.txt", text);
        write_text_file(*options.out_dir / "comparison.csv", comparison_csv(cmp));
        result.summary["out_dir"] = options.out_dir->string();
    }
    result.summary["text"] = text;
    result.summary["run_a"] = cmp.run_a;
    result.summary["run_b"] = cmp.run_b;
    return result;
}

// ---------------------------------------------------------------- attention

CommandResult cmd_attention_analyze(const AttentionOptions& options) {
    if (!options.normal_dir && !options.masked_dir) {
        fail(ErrorCode::InvalidArgument, "attention analyze needs --normal and/or --masked grid directories");
    }
    const auto manifest = load_generic(options.manifest, LoadOptions{false});
    const auto detections = load_detections(options.detections);
    fs::create_directories(options.out_dir);
    CommandResult result;

    auto analyze = [&](const fs::path& dir, const std::string& condition) {
        std::vector<LayerMass> masses;
        std::ostringstream csv;
        csv << "record_id,layer,face,body,background\n";
        for (const auto& rec : manifest.records) {
            const auto file = dir / (rec.record_id + ".attn");
            if (!fs::exists(file)) {
                result.warnings.push_back(condition + ": no grid file for " + rec.record_id);
                continue;
            }
            const auto grids = load_grids(file);
            const auto image = read_image(resolve_image(manifest, rec));
            DetectionSet faces;
            if (auto it = detections.find(rec.record_id); it != detections.end()) faces = it->second;
            for (const auto& g : grids.grids) {
                RegionMass m;
                try {
                    m = region_mass(g, faces, rec.person_box, image.width, image.height);
                } catch (const Error& e) {
                    result.warnings.push_back(condition + " " + rec.record_id + " layer " + std::to_string(g.layer_index) +
                                              ": " + describe(e));
                    continue;
                }
                masses.push_back({rec.record_id, g.layer_index, m});
                csv << rec.record_id << ',' << g.layer_index << ',' << format_fixed(m.face, 6) << ','
                    << format_fixed(m.body, 6) << ',' << format_fixed(m.background, 6) << '\n';
                if (options.overlay_layer && *options.overlay_layer == g.layer_index) {
                    cv::Mat src(image.height, image.width, CV_8UC3, const_cast<std::uint8_t*>(image.rgb.data()));
                    cv::Mat resized;
                    cv::resize(src, resized, {g.image_side, g.image_side}, 0, 0, cv::INTER_AREA);
                    Image square(g.image_side, g.image_side);
                    std::copy(resized.data, resized.data + square.rgb.size(), square.rgb.begin());
                    write_png(options.out_dir / "overlays" /
                                  (rec.record_id + "." + condition + ".L" + std::to_string(g.layer_index) + ".png"),
                              render_overlay(g, square, OverlayStyle{options.overlay_alpha}));
                }
            }
        }
        write_text_file(options.out_dir / ("region_mass_" + condition + ".csv"), csv.str());
        return masses;
    };

    std::vector<LayerMass> normal, masked;
    if (options.normal_dir) normal = analyze(*options.normal_dir, "normal");
    if (options.masked_dir) masked = analyze(*options.masked_dir, "masked");
    result.summary = {{"normal_entries", normal.size()}, {"masked_entries", masked.size()}};
    if (options.normal_dir && options.masked_dir) {
        const auto rows = compare_conditions(normal, masked);
        write_text_file(options.out_dir / "layer_comparison.csv", layer_comparison_csv(rows));
        Json layers = Json::array();
        for (const auto& r : rows) {
            layers.push_back({{"layer", r.layer_index},
                              {"pairs", r.pairs},
                              {"delta_face", r.delta.face},
                              {"delta_body", r.delta.body},
                              {"delta_background", r.delta.background}});
        }
        result.summary["layers"] = layers;
    }
    result.status = result.warnings.empty() ? 0 : 1;
    return result;
}

// ---------------------------------------------------------------- report render

CommandResult cmd_report_render(const RenderOptions& options) {
    fs::path resolved;
    const auto report = evaluation_report_from_json(report_json_path_or_dir(options.report, resolved));
    const auto out = options.out_dir.value_or(resolved.parent_path() / "plots");
    write_png(out / "confusion.png", confusion_chart(report));
    write_png(out / "per_category.png", per_category_chart(report));
    write_png(out / "regions.png", region_chart(report));
    CommandResult result;
    result.summary = {{"out_dir", out.string()},
                      {"charts", Json::array({"confusion.png", "per_category.png", "regions.png"})}};
    return result;
}

// ---------------------------------------------------------------- batch

CommandResult cmd_batch(const BatchOptions& options) {
    const auto app = load_app_config(options.config);
    if (!app.matrix.is_array() || app.matrix.empty()) {
        fail(ErrorCode::InvalidArgument, options.config.string() + " has no [[matrix]] entries");
    }
    CommandResult result;
    Json runs = Json::array();
    for (const auto& entry : app.matrix) {
        Json req = entry;
        for (const char* key : {"manifest", "masked_dir", "mock_script"}) {
            if (req.contains(key)) req[key] = resolve_against(app.base_dir, req[key].get<std::string>()).string();
        }
        if (options.limit) req["limit"] = *options.limit;
        auto run = run_options_from_json(req, app);
        auto r = cmd_run(run);
        Json item{{"run_id", run.config.run_id}, {"status", r.status}, {"run", r.summary}};
        for (auto& w : r.warnings) result.warnings.push_back(run.config.run_id + ": " + w);
        if (options.evaluate) {
            EvaluateOptions ev;
            ev.run_dir = run_directory(run.config);
            ev.assets_dir = app.assets_dir;
            ev.iou_threshold = run.config.iou_threshold;
            try {
                auto e = cmd_evaluate(ev);
                item["evaluate"] = e.summary;
                r.status = std::max(r.status, e.status);
            } catch (const Error& err) {
                result.warnings.push_back(run.config.run_id + ": evaluate: " + describe(err));
                r.status = 1;
            }
        }
        result.status = std::max(result.status, r.status);
        runs.push_back(std::move(item));
    }
    result.summary = {{"runs", runs}};
    return result;
}

// ---------------------------------------------------------------- JSON requests

namespace {

fs::path required_path(const Json& j, const char* key) {
    if (!j.contains(key) || !j[key].is_string() || j[key].get<std::string>().empty()) {
        fail(ErrorCode::InvalidArgument, std::string("missing required option '") + key + "'");
    }
    return j[key].get<std::string>();
}

std::optional<fs::path> optional_path(const Json& j, const char* key) {
    if (!j.contains(key) || j[key].is_null()) return std::nullopt;
    const auto s = j[key].get<std::string>();
    if (s.empty()) return std::nullopt;
    return fs::path(s);
}

template <typename Fn>
auto decode(const char* what, Fn fn) {
    try {
        return fn();
    } catch (const Json::exception& e) {
        fail(ErrorCode::InvalidArgument, std::string(what) + " options: " + e.what());
    }
}

}  // namespace

MaskOptions mask_options_from_json(const Json& j, const AppConfig& app) {
    return decode("mask", [&] {
        MaskOptions o;
        o.manifest = required_path(j, "manifest");
        o.out_dir = required_path(j, "out_dir");
        o.spec = app.mask;
        apply_mask_json(o.spec, j);
        o.detector = app.detector;
        o.detector_model = optional_path(j, "detector_model");
        if (!o.detector_model) o.detector_model = app.detector_model;
        o.boxes_dir = optional_path(j, "boxes_dir");
        return o;
    });
}

IngestOptions ingest_options_from_json(const Json& j) {
    return decode("ingest", [&] {
        IngestOptions o;
        o.source = j.value("source", "");
        o.annotations = required_path(j, "annotations");
        o.images_root = j.value("images_root", o.annotations.parent_path().string());
        o.out = required_path(j, "out");
        return o;
    });
}

RunOptions run_options_from_json(const Json& j, const AppConfig& app) {
    return decode("run", [&] {
        RunOptions o;
        auto& c = o.config;
        c.run_id = j.value("run_id", "");
        c.manifest = required_path(j, "manifest");
        c.provider = j.value("provider", "mock");
        c.prompt_kind = parse_prompt_kind(j.value("prompt_kind", "elena"));
        c.condition = parse_condition(j.value("condition", "normal"));
        c.mask_spec = app.mask;
        apply_mask_json(c.mask_spec, j);
        c.iou_threshold = j.value("iou_threshold", app.iou_threshold);
        c.concurrency = j.value("concurrency", app.concurrency);
        c.prompt_version = j.value("prompt_version", app.prompt_version);
        c.masked_dir = j.value("masked_dir", "");
        c.output_root = j.value("output_root", app.output_root.string());
        if (auto script = optional_path(j, "mock_script")) {
            o.provider.provider_id = c.provider;
            o.provider.kind = "mock";
            o.provider.mock_script = *script;
            o.provider.backoff_base_ms = j.value("backoff_base_ms", 0);
            o.provider.requests_per_minute = j.value("requests_per_minute", 6000);
        } else {
            o.provider = find_provider(app, c.provider);
        }
        o.assets_dir = app.assets_dir;
        if (j.contains("limit") && !j["limit"].is_null()) o.limit = j["limit"].get<std::size_t>();
        return o;
    });
}

EvaluateOptions evaluate_options_from_json(const Json& j, const AppConfig& app) {
    return decode("evaluate", [&] {
        EvaluateOptions o;
        if (j.contains("run_dir")) {
            o.run_dir = required_path(j, "run_dir");
        } else {
            o.run_dir = app.output_root / j.value("run_id", "");
            if (j.value("run_id", "").empty()) fail(ErrorCode::InvalidArgument, "missing required option 'run_id'");
        }
        o.manifest = optional_path(j, "manifest");
        o.detections = optional_path(j, "detections");
        o.out_dir = optional_path(j, "out_dir");
        o.assets_dir = app.assets_dir;
        o.iou_threshold = j.value("iou_threshold", app.iou_threshold);
        o.exclude_failures = j.value("exclude_failures", false);
        return o;
    });
}

CompareOptions compare_options_from_json(const Json& j) {
    return decode("compare", [&] {
        CompareOptions o;
        o.a = required_path(j, "a");
        o.b = required_path(j, "b");
        o.out_dir = optional_path(j, "out_dir");
        return o;
    });
}

AttentionOptions attention_options_from_json(const Json& j, const AppConfig& app) {
    return decode("attention", [&] {
        AttentionOptions o;
        o.manifest = required_path(j, "manifest");
        o.detections = required_path(j, "detections");
        o.normal_dir = optional_path(j, "normal_dir");
        o.masked_dir = optional_path(j, "masked_dir");
        o.out_dir = required_path(j, "out_dir");
        if (j.contains("overlay_layer") && !j["overlay_layer"].is_null()) o.overlay_layer = j["overlay_layer"].get<int>();
        o.overlay_alpha = j.value("overlay_alpha", app.overlay_alpha);
        return o;
    });
}

RenderOptions render_options_from_json(const Json& j) {
    return decode("report render", [&] {
        RenderOptions o;
        o.report = required_path(j, "report");
        o.out_dir = optional_path(j, "out_dir");
        return o;
    });
}

BatchOptions batch_options_from_json(const Json& j) {
    return decode("batch", [&] {
        BatchOptions o;
        o.config = required_path(j, "config");
        o.evaluate = j.value("evaluate", true);
        if (j.contains("limit") && !j["limit"].is_null()) o.limit = j["limit"].get<std::size_t>();
        return o;
    });
}

}  // namespace elena
