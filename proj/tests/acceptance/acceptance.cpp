// Acceptance checks: one PASS/FAIL line per criterion, exit status 1 if any
// fails. Tolerances and time budgets are pinned below.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>
#include <string>

#include "elena/anatomizer.hpp"
#include "elena/assets.hpp"
#include "elena/dataset.hpp"
#include "elena/eval.hpp"
#include "elena/face_masker.hpp"
#include "elena/label_atlas.hpp"
#include "elena/pipeline.hpp"
#include "test_support.hpp"

using namespace elena;
namespace fs = std::filesystem;

namespace {

constexpr double kMetricTol = 1e-9;
constexpr double kMassSumTol = 1e-6;
constexpr double kQuarterTol = 1.0 / 1600.0;
constexpr double kRegionSumTol = 0.01;

// Thrown by check() to fail a criterion with a reason.
struct Miss {
    std::string why;
};

void check(bool ok, const std::string& why) {
    if (!ok) throw Miss{why};
}

int failures = 0;

void criterion(const char* name, double budget_s, const std::function<void()>& body) {
    const auto t0 = std::chrono::steady_clock::now();
    std::string why;
    try {
        body();
    } catch (const Miss& m) {
        why = m.why;
    } catch (const std::exception& e) {
        why = std::string("exception: ") + e.what();
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (why.empty() && secs >= budget_s) {
        char buf[96];
        std::snprintf(buf, sizeof buf, "took %.2f s, budget %.0f s", secs, budget_s);
        why = buf;
    }
    if (why.empty()) {
        std::printf("PASS  %-28s %7.3f s\n", name, secs);
    } else {
        ++failures;
        std::printf("FAIL  %-28s %7.3f s  %s\n", name, secs, why.c_str());
    }
    std::fflush(stdout);
}

Rect random_rect(std::mt19937& rng, int w, int h) {
    std::uniform_int_distribution<int> x(0, w - 1), y(0, h - 1);
    const int x0 = x(rng), y0 = y(rng);
    std::uniform_int_distribution<int> rw(1, w - x0), rh(1, h - y0);
    return {x0, y0, rw(rng), rh(rng)};
}

AnatomizedResponse response_with(std::vector<std::string> parts) {
    ElenaOutput o;
    o.narrative = "n";
    o.body_parts = std::move(parts);
    return anatomize(o);
}

// ---------------------------------------------------------------------------

void masking_exactness() {
    std::mt19937 rng(20240501);
    std::uniform_int_distribution<int> dim(1, 64), count(0, 5), byte(0, 255);
    for (int trial = 0; trial < 60; ++trial) {
        const int w = dim(rng), h = dim(rng);
        const auto img = elena_test::random_image(rng, w, h);
        std::vector<Rect> rects;
        for (int k = count(rng); k > 0; --k) rects.push_back(random_rect(rng, w, h));
        MaskSpec spec;
        spec.mask_color = {static_cast<std::uint8_t>(byte(rng)), static_cast<std::uint8_t>(byte(rng)),
                           static_cast<std::uint8_t>(byte(rng))};
        const auto out = mask_image(img, elena_test::detections_of(rects), spec);
        const auto oracle = elena_test::masked_pixels_oracle(w, h, rects, 0);
        check(out.width == w && out.height == h, "output geometry changed");
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                const bool in = oracle.count({x, y}) > 0;
                check(out.at(x, y) == (in ? spec.mask_color : img.at(x, y)),
                      "pixel (" + std::to_string(x) + "," + std::to_string(y) + ") trial " + std::to_string(trial));
            }
        }
    }
}

void masking_idempotence() {
    std::mt19937 rng(7);
    for (int trial = 0; trial < 20; ++trial) {
        const auto img = elena_test::random_image(rng, 48, 40);
        const auto det = elena_test::detections_of({random_rect(rng, 48, 40), random_rect(rng, 48, 40)});
        const MaskSpec spec;
        const auto once = mask_image(img, det, spec);
        check(mask_image(once, det, spec) == once, "double masking differs");
        check(encode_png(mask_image(img, elena_test::detections_of({}), spec)) == encode_png(img),
              "empty detections changed the bytes");
    }
}

void metric_oracle() {
    std::mt19937 rng(1234);
    std::uniform_int_distribution<int> cell(0, 15), gate(0, 3);
    int checked = 0;
    while (checked < 1000) {
        ConfusionMatrix cm;
        for (auto& row : cm.counts) {
            for (auto& c : row) c = gate(rng) ? cell(rng) : 0;
        }
        for (auto& u : cm.unanswered) u = gate(rng) == 0 ? cell(rng) : 0;
        if (cm.total() == 0) continue;
        const auto m = compute_metrics(cm);
        const auto o = elena_test::metrics_oracle(cm);
        for (std::size_t c = 0; c < kLabelCount; ++c) {
            check(std::abs(m.per_class[c].precision - o.precision[c]) <= kMetricTol, "precision");
            check(std::abs(m.per_class[c].recall - o.recall[c]) <= kMetricTol, "recall");
            check(std::abs(m.per_class[c].f1 - o.f1[c]) <= kMetricTol, "f1");
        }
        check(std::abs(m.macro_precision - o.macro_p) <= kMetricTol, "macro precision");
        check(std::abs(m.macro_recall - o.macro_r) <= kMetricTol, "macro recall");
        check(std::abs(m.macro_f1 - o.macro_f1) <= kMetricTol, "macro f1");
        check(std::abs(m.accuracy - o.accuracy) <= kMetricTol, "accuracy");
        ++checked;
    }
    ConfusionMatrix perfect;
    for (std::size_t c = 0; c < kLabelCount; ++c) perfect.counts[c][c] = static_cast<long long>(c + 1);
    const auto p = compute_metrics(perfect);
    for (const auto& k : p.per_class) check(k.precision == 1.0 && k.recall == 1.0 && k.f1 == 1.0, "perfect class");
    check(p.macro_precision == 1.0 && p.macro_recall == 1.0 && p.macro_f1 == 1.0 && p.accuracy == 1.0, "perfect macro");
}

void taxonomy_coverage() {
    const std::vector<std::string> emotic = {
        "Affection", "Anger", "Annoyance", "Anticipation", "Aversion", "Confidence", "Disapproval",
        "Disconnection", "Disquietment", "Doubt/Confusion", "Embarrassment", "Engagement", "Esteem",
        "Excitement", "Fatigue", "Fear", "Happiness", "Pain", "Peace", "Pleasure", "Sadness",
        "Sensitivity", "Suffering", "Surprise", "Sympathy", "Yearning"};
    const auto map = TaxonomyMap::load(SourceTaxonomy::EMOTIC);
    for (const auto& label : emotic) {
        try {
            map.map(label);
        } catch (const Error&) {
            throw Miss{"unmapped " + label};
        }
    }
    check(map.map("Affection") == EkmanLabel::Happiness, "Affection");
    check(map.map("Fatigue") == EkmanLabel::Sadness, "Fatigue");
    check(map.map("Disquietment") == EkmanLabel::Fear, "Disquietment");
    check(map.map("Annoyance") == EkmanLabel::Anger, "Annoyance");
    check(map.map("Doubt/Confusion") == EkmanLabel::Neutral, "Doubt/Confusion");
}

void parser_robustness() {
    std::ifstream in(elena_test::fixture("parser_corpus/cases.jsonl"));
    std::size_t cases = 0;
    for (std::string line; std::getline(in, line);) {
        if (trim(line).empty()) continue;
        const auto c = Json::parse(line);
        const auto id = c.at("id").get<std::string>();
        const auto parsed = parse_capture(c.at("raw").get<std::string>(), parse_prompt_kind(c.at("kind").get<std::string>()));
        const auto& expect = c.at("expect");
        if (expect.contains("failure")) {
            const auto* f = std::get_if<FailureOutcome>(&parsed);
            check(f && f->detail.rfind(expect["failure"].get<std::string>() + ":", 0) == 0, "case " + id);
        } else {
            const auto* o = std::get_if<ElenaOutput>(&parsed);
            check(o != nullptr, "case " + id + " did not parse");
            check(to_string(o->label) == expect.at("label").get<std::string>(), "case " + id + " label");
            if (expect.contains("body_parts")) {
                check(o->body_parts == expect["body_parts"].get<std::vector<std::string>>(), "case " + id + " parts");
            }
        }
        ++cases;
    }
    check(cases >= 30, "corpus has only " + std::to_string(cases) + " cases");

    std::mt19937 rng(99);
    std::uniform_int_distribution<int> label(0, 6), nparts(0, 4), wrap(0, 2);
    std::uniform_real_distribution<double> score(1.0, 9.0);
    for (int i = 0; i < 1000; ++i) {
        ElenaOutput o;
        o.label = kAllLabels[static_cast<std::size_t>(label(rng))];
        o.explicit_desc = "explicit \"" + std::to_string(rng()) + "\" {x}";
        o.narrative = "story " + std::to_string(rng()) + "\n, [done]";
        for (int k = nparts(rng); k > 0; --k) o.body_parts.push_back("part " + std::to_string(rng() % 40));
        if (rng() % 2) o.vad = VadScores{score(rng), score(rng), score(rng)};
        std::string raw = to_json(o).dump();
        if (wrap(rng) == 1) raw = "```json\n" + raw + "\n```";
        if (wrap(rng) == 2) raw = "Here you go:\n" + raw + "\nHope that helps.";
        const auto back = parse_capture(raw, PromptKind::Elena);
        const auto* b = std::get_if<ElenaOutput>(&back);
        check(b && *b == o, "round trip " + std::to_string(i));
    }
}

void distribution_correctness() {
    const std::vector<AnatomizedResponse> normal = {
        response_with({"hands", "Hand", "shoulders", "heartbeat"}),
        response_with({"left hand", "eyes", "aura"}),
        response_with({"chest", "breathing", "whole body", "Aura."}),
    };
    const auto d = build_distribution(normal, Condition::Normal);
    // Counted by hand: 10 mentions; hand 2, aura 2, the rest 1 each.
    const std::vector<std::pair<std::string, double>> expected = {
        {"aura", 20}, {"hand", 20}, {"body", 10}, {"breath", 10}, {"chest", 10}, {"eye", 10}, {"heart", 10}, {"shoulder", 10}};
    check(d.part_percentages == expected, "part percentages");
    const std::array<double, 5> regions = {10, 30, 10, 20, 30};
    check(d.region_percentages == regions, "region percentages");
    double sum = 0;
    for (double p : d.region_percentages) sum += p;
    check(std::abs(sum - 100.0) <= kRegionSumTol, "regions sum to " + std::to_string(sum));

    const auto masked = build_distribution(std::vector<AnatomizedResponse>{response_with({"heart", "arms", "arm"})},
                                           Condition::Masked);
    double msum = 0;
    for (double p : masked.region_percentages) msum += p;
    check(std::abs(msum - 100.0) <= kRegionSumTol, "masked regions sum");
    const auto table = render_distribution_table(d, masked);
    std::istringstream lines(table);
    std::string header, rule, first;
    std::getline(lines, header);
    std::getline(lines, rule);
    std::getline(lines, first);
    check(header.rfind("Normal Images", 0) == 0 && header.find("| Face-Masked Images") != std::string::npos, "header");
    check(rule == std::string(64, '-'), "rule");
    check(first.rfind("aura", 0) == 0 && first.find("arm") != std::string::npos, "first row: " + first);
    check(table.find("Anatomical Regions") != std::string::npos, "region section");
}

void end_to_end() {
    elena_test::TempDir dir("elena-accept");
    const auto manifest = elena_test::fixture("e2e/manifest.jsonl");
    const auto script = elena_test::fixture("e2e/mock_script.json");
    const auto golden = read_text_file(elena_test::fixture("e2e/golden/report.json"));

    auto report_for = [&](const fs::path& root, std::optional<std::size_t> interrupt_at, int concurrency) {
        RunOptions o;
        o.config.run_id = "golden";
        o.config.manifest = manifest;
        o.config.provider = "mock";
        o.config.output_root = root;
        o.config.concurrency = concurrency;
        o.provider.provider_id = "mock";
        o.provider.kind = "mock";
        o.provider.mock_script = script;
        o.provider.backoff_base_ms = 5;
        if (interrupt_at) {
            o.limit = interrupt_at;
            const auto partial = cmd_run(o);
            check(partial.summary["dispatched"] == *interrupt_at, "interrupted run dispatched the wrong count");
            o.limit.reset();
        }
        cmd_run(o);
        EvaluateOptions e;
        e.run_dir = root / "golden";
        cmd_evaluate(e);
        return read_text_file(root / "golden/report/report.json");
    };
    check(report_for(dir / "a", std::nullopt, 1) == golden, "first run differs from golden");
    check(report_for(dir / "b", std::nullopt, 4) == golden, "repeat run differs from golden");
    check(report_for(dir / "c", 7, 2) == golden, "interrupt-resume differs from golden");

    // The golden numbers agree with the hand-derived outcome.
    const auto g = evaluation_report_from_json(Json::parse(golden));
    const auto expected = elena_test::e2e_expected_confusion();
    check(g.confusion == expected, "golden confusion");
    check(std::abs(g.metrics.macro_f1 - elena_test::metrics_oracle(expected).macro_f1) <= kMetricTol, "golden macro F1");
    check(g.failures_by_kind.at("Refusal") == 1 && g.failures_by_kind.at("MalformedResponse") == 1, "golden failures");
}

void region_mass_correctness() {
    std::mt19937 rng(31337);
    std::uniform_int_distribution<int> side(1, 8), patch(1, 16), dim(4, 200), weight(0, 500), nf(0, 3);
    for (int trial = 0; trial < 2000; ++trial) {
        AttentionGrid g;
        g.grid_side = side(rng);
        g.patch_side = patch(rng);
        g.image_side = g.grid_side * g.patch_side;
        g.cells.resize(static_cast<std::size_t>(g.grid_side * g.grid_side));
        for (auto& c : g.cells) c = static_cast<float>(weight(rng));
        g.cells[0] += 1;
        const int w = dim(rng), h = dim(rng);
        std::vector<Rect> faces;
        for (int k = nf(rng); k > 0; --k) faces.push_back(random_rect(rng, w, h));
        std::optional<Rect> body;
        if (rng() % 3) body = random_rect(rng, w, h);
        const auto m = region_mass(g, elena_test::detections_of(faces), body, w, h);
        const auto o = elena_test::region_mass_oracle(g, faces, body, w, h);
        check(m.face == o.face && m.body == o.body && m.background == o.background,
              "grid trial " + std::to_string(trial));
        check(std::abs(m.face + m.body + m.background - 1.0) <= kMassSumTol, "fractions sum");
    }
    std::uniform_real_distribution<float> u(0.0f, 1.0f);
    for (int trial = 0; trial < 50; ++trial) {
        AttentionGrid g;
        g.cells.resize(1600);
        for (auto& c : g.cells) c = u(rng);
        const auto m = region_mass(g, elena_test::detections_of({random_rect(rng, 640, 480)}), random_rect(rng, 640, 480),
                                   640, 480);
        check(std::abs(m.face + m.body + m.background - 1.0) <= kMassSumTol, "40x40 fractions sum");
    }
    AttentionGrid uniform;
    uniform.cells.assign(1600, 1.0f);
    const auto q = region_mass(uniform, elena_test::detections_of({{0, 0, 280, 280}}), std::nullopt, 560, 560);
    check(std::abs(q.face - 0.25) <= kQuarterTol, "quarter face " + std::to_string(q.face));
}

void dominant_selection() {
    const auto map = TaxonomyMap::load(SourceTaxonomy::EMOTIC);
    auto agent = [](std::string id, Rect box, std::vector<std::string> labels) {
        DatasetRecord r;
        r.record_id = std::move(id);
        r.image_ref = "group.png";
        r.person_box = box;
        r.gold_labels = std::move(labels);
        return r;
    };
    // Three people side by side; the face sits in the middle person's upper
    // third {40, 0, 30, 30} with IoU 25*25 / 900 > 0.5.
    std::vector<DatasetRecord> agents = {agent("p0", {0, 0, 30, 90}, {"Peace"}),
                                         agent("p1", {40, 0, 30, 90}, {"Pain", "Suffering", "Anger"}),
                                         agent("p2", {80, 0, 40, 100}, {"Fear"})};
    auto c = dominant_emotion(agents, elena_test::detections_of({{42, 2, 25, 25}}), map, 0.5);
    check(c.matched && agents[c.agent_index].record_id == "p1", "face match");
    check(c.label == EkmanLabel::Sadness, "modal label of p1");

    // No face overlap: the largest body (p2) wins.
    c = dominant_emotion(agents, elena_test::detections_of({{0, 80, 5, 5}}), map, 0.5);
    check(!c.matched && agents[c.agent_index].record_id == "p2" && c.label == EkmanLabel::Fear, "largest body");

    // Equal IoU on two agents: the smaller record_id wins, in any order.
    std::vector<DatasetRecord> twins = {agent("b", {0, 0, 30, 90}, {"Excitement", "Anticipation"}),
                                        agent("a", {40, 0, 30, 90}, {"Anger", "Fear"})};
    const auto faces = elena_test::detections_of({{0, 0, 30, 30}, {40, 0, 30, 30}});
    for (int pass = 0; pass < 2; ++pass) {
        c = dominant_emotion(twins, faces, map, 0.5);
        check(twins[c.agent_index].record_id == "a", "tie on IoU");
        // Anger vs Fear tie resolves to the earlier canonical label.
        check(c.label == EkmanLabel::Anger, "modal tie-break");
        std::reverse(twins.begin(), twins.end());
    }
    // Happiness vs Neutral tie for agent b.
    const std::vector<std::string> b_labels = {"Excitement", "Anticipation"};
    check(modal_label(b_labels, map) == EkmanLabel::Happiness, "Happiness/Neutral tie");
}

}  // namespace

int main() {
    criterion("masking-exactness", 5, masking_exactness);
    criterion("masking-idempotence", 1, masking_idempotence);
    criterion("metric-oracle", 10, metric_oracle);
    criterion("taxonomy-coverage", 1, taxonomy_coverage);
    criterion("parser-robustness", 10, parser_robustness);
    criterion("distribution-correctness", 1, distribution_correctness);
    criterion("end-to-end-determinism", 30, end_to_end);
    criterion("region-mass", 5, region_mass_correctness);
    criterion("dominant-selection", 1, dominant_selection);
    std::printf("%s: %d failing\n", failures ? "FAIL" : "PASS", failures);
    return failures ? 1 : 0;
}
