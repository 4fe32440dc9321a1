#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "elena/assets.hpp"
#include "elena/capture_store.hpp"
#include "elena/dataset.hpp"
#include "elena/image.hpp"
#include "elena/pipeline.hpp"
#include "test_support.hpp"

using namespace elena;
using elena_test::code_of;
namespace fs = std::filesystem;

namespace {

ProviderConfig mock_provider(const fs::path& script) {
    ProviderConfig p;
    p.provider_id = "mock";
    p.kind = "mock";
    p.mock_script = script;
    p.backoff_base_ms = 100;
    p.max_retries = 3;
    return p;
}

RunOptions run_options(const fs::path& root, const std::string& run_id, const fs::path& manifest, const fs::path& script,
                       PromptKind kind = PromptKind::Elena) {
    RunOptions o;
    o.config.run_id = run_id;
    o.config.manifest = manifest;
    o.config.provider = "mock";
    o.config.prompt_kind = kind;
    o.config.output_root = root;
    o.provider = mock_provider(script);
    return o;
}

// First n records of the e2e manifest, written with absolute image paths.
fs::path manifest_prefix(const fs::path& dir, std::size_t n) {
    auto m = load_generic(elena_test::fixture("e2e/manifest.jsonl"));
    m.records.resize(n);
    const auto path = dir / "manifest.jsonl";
    write_manifest(path, m);
    return path;
}

void write(const fs::path& p, const std::string& text) { std::ofstream(p, std::ios::binary) << text; }

}  // namespace

TEST(Run, ResumeDispatchesOnlyTheRemainder) {
    elena_test::TempDir dir;
    const auto manifest = manifest_prefix(dir.path(), 5);
    const auto script = elena_test::fixture("e2e/mock_script.json");
    auto mock = MockProvider::from_file(script);
    ManualClock clock;

    auto o = run_options(dir / "runs", "resume", manifest, script);
    o.provider_override = mock.get();
    o.clock = &clock;
    o.limit = 3;
    const auto first = cmd_run(o);
    EXPECT_EQ(first.status, 1);
    EXPECT_EQ(first.summary["dispatched"], 3);
    EXPECT_EQ(first.summary["interrupted"], true);
    EXPECT_EQ(mock->dispatch_count(), 3u);
    EXPECT_EQ(read_jsonl(dir / "runs/resume/parsed.jsonl").size(), 3u);

    // A crash mid-append leaves a torn line behind.
    std::ofstream(dir / "runs/resume/captures.jsonl", std::ios::app) << R"({"record_id":"r04","raw)";

    o.limit.reset();
    const auto second = cmd_run(o);
    EXPECT_EQ(second.summary["dispatched"], 2);
    EXPECT_EQ(mock->dispatch_count(), 5u);
    for (const auto* id : {"r01", "r02", "r03", "r04", "r05"}) EXPECT_EQ(mock->dispatch_count(id), 1u) << id;
    ASSERT_FALSE(second.warnings.empty());
    EXPECT_NE(second.warnings[0].find("torn"), std::string::npos);
    EXPECT_EQ(second.status, 0);
    EXPECT_EQ(CaptureStore(dir / "runs/resume/captures.jsonl").size(), 5u);

    // A third pass has nothing left to do.
    EXPECT_EQ(cmd_run(o).summary["dispatched"], 0);
    EXPECT_EQ(mock->dispatch_count(), 5u);
}

TEST(Run, ChangedConfigurationIsRejected) {
    elena_test::TempDir dir;
    const auto manifest = manifest_prefix(dir.path(), 2);
    const auto script = elena_test::fixture("e2e/mock_script.json");
    auto o = run_options(dir / "runs", "x", manifest, script);
    cmd_run(o);

    auto other = o;
    other.config.prompt_kind = PromptKind::Naive;
    EXPECT_EQ(code_of([&] { cmd_run(other); }), ErrorCode::ConfigMismatch);
    other = o;
    other.provider.max_retries = 5;
    EXPECT_EQ(code_of([&] { cmd_run(other); }), ErrorCode::ConfigMismatch);
    // Concurrency and output location do not affect results.
    other = o;
    other.config.concurrency = 4;
    EXPECT_NO_THROW(cmd_run(other));
    EXPECT_NE(config_hash(o.config, o.provider), config_hash(o.config, other.provider = mock_provider("y.json")));

    auto bad = o;
    bad.config.run_id = "../escape";
    EXPECT_EQ(code_of([&] { cmd_run(bad); }), ErrorCode::InvalidArgument);
}

TEST(Run, CapturesArePersistedVerbatim) {
    elena_test::TempDir dir;
    const auto manifest = manifest_prefix(dir.path(), 7);
    const auto script_path = elena_test::fixture("e2e/mock_script.json");
    const auto script = Json::parse(read_text_file(script_path));
    auto o = run_options(dir / "runs", "raw", manifest, script_path);
    cmd_run(o);
    const CaptureStore store(dir / "runs/raw/captures.jsonl");
    EXPECT_EQ(store.find("r03", PromptKind::Elena)->raw_response, script["r03"].get<std::string>());
    // The refusal is captured with its text and classified.
    const auto r07 = store.find("r07", PromptKind::Elena);
    EXPECT_EQ(r07->raw_response, script["r07"].get<std::string>());
    ASSERT_NE(r07->failure(), nullptr);
    EXPECT_EQ(r07->failure()->kind, FailureKind::Refusal);

    // parsed.jsonl can be rebuilt from captures alone.
    fs::remove(dir / "runs/raw/parsed.jsonl");
    EXPECT_EQ(rebuild_parsed(dir / "runs/raw", o.config), 7u);
    const auto parsed = read_jsonl(dir / "runs/raw/parsed.jsonl");
    EXPECT_EQ(parsed[4]["output"]["label"], "Anger");  // trailing-comma reply repaired
}

TEST(Run, TwoStepPipeline) {
    elena_test::TempDir dir;
    const auto manifest = manifest_prefix(dir.path(), 3);
    write(dir / "script.json", R"({
      "r01": {"two_step_describe": "{\"explicit\": \"Arms up.\", \"narrative\": \"A runner wins.\", \"body_parts\": [\"arms\"]}",
              "two_step_parse": "{\"label\": \"Happiness\"}"},
      "r02": {"two_step_describe": "I'm sorry, but I can't help with that."},
      "r03": {"two_step_describe": "{\"narrative\": \"A man waits.\", \"body_parts\": []}",
              "two_step_parse": {"fail_first": ["Timeout"], "text": "Sadness"}}
    })");
    auto mock = MockProvider::from_file(dir / "script.json");
    ManualClock clock;
    auto o = run_options(dir / "runs", "two", manifest, dir / "script.json", PromptKind::TwoStepDescribe);
    o.provider_override = mock.get();
    o.clock = &clock;
    const auto result = cmd_run(o);
    EXPECT_EQ(result.summary["dispatched"], 5);  // r02 stops after stage one
    EXPECT_EQ(mock->dispatch_count("r02"), 1u);

    const auto parsed = read_jsonl(dir / "runs/two/parsed.jsonl");
    ASSERT_EQ(parsed.size(), 3u);
    const auto p1 = prediction_from_json(parsed[0]);
    ASSERT_NE(p1.elena(), nullptr);
    EXPECT_EQ(p1.elena()->label, EkmanLabel::Happiness);
    EXPECT_EQ(p1.elena()->narrative, "A runner wins.");
    EXPECT_EQ(p1.prompt_kind, PromptKind::TwoStepParse);
    const auto p2 = prediction_from_json(parsed[1]);
    ASSERT_NE(p2.failure(), nullptr);
    EXPECT_EQ(p2.failure()->kind, FailureKind::Refusal);
    const auto p3 = prediction_from_json(parsed[2]);
    EXPECT_EQ(p3.elena()->label, EkmanLabel::Sadness);
    EXPECT_EQ(p3.retry_count, 1);
}

TEST(Mask, ExternalBoxesProduceMaskedCopies) {
    elena_test::TempDir dir;
    MaskOptions m;
    m.manifest = elena_test::fixture("e2e/manifest.jsonl");
    m.out_dir = dir / "masked";
    m.boxes_dir = elena_test::fixture("e2e/boxes");
    m.spec.mask_color = {255, 0, 255};
    const auto r = cmd_mask(m);
    EXPECT_EQ(r.status, 0);
    EXPECT_EQ(r.summary["masked"], 4);
    EXPECT_EQ(r.summary["zero_face"], 16);
    EXPECT_EQ(read_jsonl(dir / "masked/detections.jsonl").size(), 20u);

    const auto orig = read_image(elena_test::fixture("e2e/images/img01.png"));
    const auto masked = read_image(dir / "masked/r01.masked.png");
    // r01's box is {16, 4, 14, 14}.
    const auto oracle = elena_test::masked_pixels_oracle(orig.width, orig.height, {{16, 4, 14, 14}}, 0);
    for (int y = 0; y < orig.height; ++y) {
        for (int x = 0; x < orig.width; ++x) {
            const auto px = masked.at(x, y);
            if (oracle.count({x, y})) {
                ASSERT_EQ(px, (Rgb{255, 0, 255})) << x << "," << y;
            } else {
                ASSERT_EQ(px, orig.at(x, y)) << x << "," << y;
            }
        }
    }
    EXPECT_EQ(read_image(dir / "masked/r02.masked.png"), read_image(elena_test::fixture("e2e/images/img02.png")));

    MaskOptions none = m;
    none.boxes_dir.reset();
    EXPECT_EQ(code_of([&] { cmd_mask(none); }), ErrorCode::InvalidArgument);
}

TEST(Evaluate, FixtureRunMatchesHandDerivedOutcome) {
    elena_test::TempDir dir;
    const auto script = elena_test::fixture("e2e/mock_script.json");
    auto o = run_options(dir / "runs", "golden", elena_test::fixture("e2e/manifest.jsonl"), script);
    ManualClock clock;
    o.clock = &clock;
    const auto run = cmd_run(o);
    EXPECT_EQ(run.summary["failures"], 2);

    EvaluateOptions e;
    e.run_dir = dir / "runs/golden";
    const auto report = evaluate_run(e);
    const auto expected = elena_test::e2e_expected_confusion();
    EXPECT_EQ(report.confusion, expected);
    const auto oracle = elena_test::metrics_oracle(expected);
    EXPECT_NEAR(report.metrics.macro_f1, oracle.macro_f1, 1e-12);
    EXPECT_NEAR(report.metrics.accuracy, 13.0 / 19.0, 1e-12);
    EXPECT_EQ(report.records_evaluated, 19u);
    EXPECT_EQ(report.records_not_dominant, 1u);
    EXPECT_EQ(report.dominant_fallbacks, 1u);
    EXPECT_EQ(report.failures_by_kind.at("Refusal"), 1u);
    EXPECT_EQ(report.failures_by_kind.at("MalformedResponse"), 1u);

    // Excluding failures drops the two unanswered records.
    e.exclude_failures = true;
    const auto excluded = evaluate_run(e);
    EXPECT_EQ(excluded.records_evaluated, 17u);
    EXPECT_NEAR(excluded.metrics.accuracy, 13.0 / 17.0, 1e-12);
    e.exclude_failures = false;

    const auto cmd = cmd_evaluate(e);
    EXPECT_EQ(cmd.status, 0);
    const auto golden = read_text_file(elena_test::fixture("e2e/golden/report.json"));
    EXPECT_EQ(read_text_file(dir / "runs/golden/report/report.json"), golden);
    // The committed file agrees with the oracle too.
    const auto g = evaluation_report_from_json(Json::parse(golden));
    EXPECT_EQ(g.confusion, expected);
}

TEST(Evaluate, MissingRunAndEmptyRun) {
    elena_test::TempDir dir;
    EvaluateOptions e;
    e.run_dir = dir / "nothing";
    EXPECT_EQ(code_of([&] { evaluate_run(e); }), ErrorCode::MissingRun);

    const auto manifest = manifest_prefix(dir.path(), 2);
    auto o = run_options(dir / "runs", "empty", manifest, elena_test::fixture("e2e/mock_script.json"));
    o.limit = 0;
    cmd_run(o);
    e.run_dir = dir / "runs/empty";
    EXPECT_EQ(code_of([&] { evaluate_run(e); }), ErrorCode::EmptyMatrix);
}

TEST(Compare, NormalVersusMasked) {
    elena_test::TempDir dir;
    MaskOptions m;
    m.manifest = elena_test::fixture("e2e/manifest.jsonl");
    m.out_dir = dir / "masked";
    m.boxes_dir = elena_test::fixture("e2e/boxes");
    cmd_mask(m);

    const auto script = elena_test::fixture("e2e/mock_script.json");
    ManualClock clock;
    auto normal = run_options(dir / "runs", "n", m.manifest, script);
    normal.clock = &clock;
    auto masked = normal;
    masked.config.run_id = "m";
    masked.config.condition = Condition::Masked;
    masked.config.masked_dir = m.out_dir;
    cmd_run(normal);
    cmd_run(masked);
    EvaluateOptions e;
    e.run_dir = dir / "runs/n";
    cmd_evaluate(e);
    e.run_dir = dir / "runs/m";
    cmd_evaluate(e);

    CompareOptions c;
    c.a = dir / "runs/n";
    c.b = dir / "runs/m";
    c.out_dir = dir / "cmp";
    const auto r = cmd_compare(c);
    EXPECT_EQ(r.status, 0);
    EXPECT_TRUE(fs::exists(dir / "cmp/comparison.csv"));
    // Same scripted answers in both conditions: every delta is zero.
    std::istringstream csv(read_text_file(dir / "cmp/comparison.csv"));
    std::string line;
    std::getline(csv, line);
    int rows = 0;
    while (std::getline(csv, line)) {
        const auto delta = std::stod(line.substr(line.rfind(',') + 1));
        EXPECT_EQ(delta, 0.0) << line;
        ++rows;
    }
    EXPECT_EQ(rows, 11);

    auto missing = masked;
    missing.config.run_id = "m2";
    missing.config.masked_dir = dir / "not-there";
    EXPECT_EQ(code_of([&] { cmd_run(missing); }), ErrorCode::InvalidArgument);
}
