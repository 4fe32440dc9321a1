#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <random>

#include "elena/assets.hpp"
#include "elena/attention.hpp"
#include "test_support.hpp"

using namespace elena;
using elena_test::code_of;

namespace {

AttentionHeader small_header(int grid = 4, int patch = 14, std::vector<int> layers = {0}) {
    AttentionHeader h;
    h.model_ref = "m";
    h.prompt_text = "p";
    h.image_side = grid * patch;
    h.patch_side = patch;
    h.grid_side = grid;
    h.layer_indices = std::move(layers);
    return h;
}

AttentionGrid grid_of(int side, int patch, std::vector<float> cells, int layer = 0) {
    AttentionGrid g;
    g.layer_index = layer;
    g.grid_side = side;
    g.patch_side = patch;
    g.image_side = side * patch;
    g.cells = std::move(cells);
    return g;
}

std::vector<std::uint8_t> raw_file(const std::string& header_line, std::size_t floats) {
    std::vector<std::uint8_t> out(header_line.begin(), header_line.end());
    out.resize(out.size() + floats * 4, 0);
    return out;
}

// Rects whose edges often coincide with patch centres.
Rect edgy_rect(std::mt19937& rng, int w, int h, int patch_px) {
    std::uniform_int_distribution<int> pick(0, 2 * w / patch_px);
    auto snap = [&](int v) { return v * patch_px / 2; };
    int x0 = snap(pick(rng)), x1 = snap(pick(rng)), y0 = snap(pick(rng)), y1 = snap(pick(rng));
    if (x1 < x0) std::swap(x0, x1);
    if (y1 < y0) std::swap(y0, y1);
    return {x0, y0, std::max(1, x1 - x0), std::max(1, std::min(h, y1) - y0)};
}

}  // namespace

TEST(AttnFile, ReadsPythonWrittenFixture) {
    const auto f = load_grids(elena_test::fixture("attn/sample.attn"));
    EXPECT_EQ(f.header.model_ref, "llava-1.5-7b-hf");
    EXPECT_EQ(f.header.prompt_text, "Describe the emotion.");
    EXPECT_EQ(f.header.layer_indices, (std::vector<int>{10, 20}));
    EXPECT_EQ(f.header.extra.at("note"), "kept verbatim");
    ASSERT_EQ(f.grids.size(), 2u);
    EXPECT_EQ(f.grids[0].layer_index, 10);
    EXPECT_EQ(f.grids[0].at(0, 0), 1.0f);
    EXPECT_EQ(f.grids[0].at(3, 2), 15.0f);
    EXPECT_EQ(f.grids[1].at(2, 2), 1.0f);
}

TEST(AttnFile, RegionMassMatchesNumpyOracle) {
    const auto f = load_grids(elena_test::fixture("attn/sample.attn"));
    const auto expected = Json::parse(read_text_file(elena_test::fixture("attn/expected.json")));
    const auto faces = elena_test::detections_of({rect_from_json(Json{{"x", 0}, {"y", 0}, {"w", 56}, {"h", 56}})});
    const Rect body{0, 0, 112, 84};
    for (std::size_t i = 0; i < f.grids.size(); ++i) {
        const auto& e = expected.at("layers").at(i);
        const auto m = region_mass(f.grids[i], faces, body, expected.at("image_w"), expected.at("image_h"));
        EXPECT_NEAR(m.face, e.at("face").get<double>(), 1e-12);
        EXPECT_NEAR(m.body, e.at("body").get<double>(), 1e-12);
        EXPECT_NEAR(m.background, e.at("background").get<double>(), 1e-12);
    }
}

TEST(AttnFile, RoundTripPreservesEverything) {
    auto h = small_header(2, 7, {3, 5});
    h.extra["seed"] = 17;
    const std::vector<AttentionGrid> grids = {grid_of(2, 7, {0.1f, 0.2f, 0.3f, 0.4f}, 3),
                                              grid_of(2, 7, {1, 0, 0, 1e-30f}, 5)};
    const auto bytes = serialize_grids(h, grids);
    const auto back = parse_grids(bytes);
    EXPECT_EQ(back.header.extra.at("seed"), 17);
    ASSERT_EQ(back.grids.size(), 2u);
    EXPECT_EQ(back.grids[0].cells, grids[0].cells);
    EXPECT_EQ(back.grids[1].cells, grids[1].cells);
    EXPECT_EQ(back.grids[1].layer_index, 5);
    // little-endian on disk regardless of host
    float first;
    std::memcpy(&first, bytes.data() + (bytes.size() - 8 * 4), 4);
    const std::uint8_t* p = bytes.data() + (bytes.size() - 8 * 4);
    const std::uint32_t le = p[0] | (p[1] << 8) | (p[2] << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
    std::uint32_t want;
    const float v = 0.1f;
    std::memcpy(&want, &v, 4);
    EXPECT_EQ(le, want);

    elena_test::TempDir dir;
    write_grids(dir / "x.attn", h, grids);
    EXPECT_EQ(load_grids(dir / "x.attn").grids[0].cells, grids[0].cells);
}

TEST(AttnFile, Errors) {
    const std::string good = R"({"model_ref":"m","prompt_text":"p","image_side":28,"patch_side":14,"grid_side":2,"layer_indices":[0],"dtype":"f32"})";
    EXPECT_NO_THROW(parse_grids(raw_file(good + "\n", 4)));
    EXPECT_EQ(code_of([&] { parse_grids(raw_file(good + "\n", 3)); }), ErrorCode::TruncatedFile);
    EXPECT_EQ(code_of([&] { parse_grids(raw_file(good, 0)); }), ErrorCode::TruncatedFile);
    EXPECT_EQ(code_of([&] { parse_grids(raw_file(good + "\n", 5)); }), ErrorCode::HeaderMismatch);
    auto swap = [&](const std::string& from, const std::string& to) {
        auto s = good;
        s.replace(s.find(from), from.size(), to);
        return s + "\n";
    };
    EXPECT_EQ(code_of([&] { parse_grids(raw_file(swap("\"f32\"", "\"f16\""), 4)); }), ErrorCode::HeaderMismatch);
    EXPECT_EQ(code_of([&] { parse_grids(raw_file(swap("\"grid_side\":2", "\"grid_side\":3"), 9)); }),
              ErrorCode::HeaderMismatch);
    EXPECT_EQ(code_of([&] { parse_grids(raw_file(swap("\"image_side\":28", "\"image_side\":30"), 4)); }),
              ErrorCode::HeaderMismatch);
    EXPECT_EQ(code_of([&] { parse_grids(raw_file(swap("[0]", "[]"), 0)); }), ErrorCode::HeaderMismatch);
    EXPECT_EQ(code_of([&] { parse_grids(raw_file("[1,2]\n", 0)); }), ErrorCode::HeaderMismatch);

    for (float bad : {-1.0f, std::numeric_limits<float>::quiet_NaN(), std::numeric_limits<float>::infinity()}) {
        const auto bytes = serialize_grids(small_header(2, 14), std::vector<AttentionGrid>{grid_of(2, 14, {0, 0, 0, 0})});
        auto copy = bytes;
        std::memcpy(copy.data() + copy.size() - 4, &bad, 4);
        EXPECT_EQ(code_of([&] { parse_grids(copy); }), ErrorCode::HeaderMismatch);
    }
    EXPECT_EQ(code_of([] { load_grids("/no/such.attn"); }), ErrorCode::Io);
}

TEST(RegionMass, SmallGridsMatchMembershipOracleExactly) {
    std::mt19937 rng(5);
    std::uniform_int_distribution<int> side(1, 8), patch(1, 16), dim(8, 300), weight(0, 1000), nfaces(0, 3);
    for (int trial = 0; trial < 3000; ++trial) {
        const int g = side(rng), p = patch(rng), w = dim(rng), h = dim(rng);
        std::vector<float> cells(static_cast<std::size_t>(g * g));
        for (auto& c : cells) c = static_cast<float>(weight(rng));  // integers: sums are exact
        cells[0] += 1;
        const auto grid = grid_of(g, p, cells);
        // Edges snapped to multiples of half a patch (in original pixels) hit centres often.
        const int step = std::max(1, p * w / (g * p));
        std::vector<Rect> faces;
        for (int k = nfaces(rng); k > 0; --k) faces.push_back(edgy_rect(rng, w, h, step));
        std::optional<Rect> body;
        if (rng() % 4) body = edgy_rect(rng, w, h, step);

        const auto m = region_mass(grid, elena_test::detections_of(faces), body, w, h);
        const auto o = elena_test::region_mass_oracle(grid, faces, body, w, h);
        ASSERT_EQ(m.face, o.face) << "trial " << trial;
        ASSERT_EQ(m.body, o.body) << "trial " << trial;
        ASSERT_EQ(m.background, o.background) << "trial " << trial;
    }
}

TEST(RegionMass, FractionsSumToOne) {
    std::mt19937 rng(8);
    std::uniform_real_distribution<float> v(0.0f, 1.0f);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<float> cells(1600);
        for (auto& c : cells) c = v(rng) * v(rng);
        const auto grid = grid_of(40, 14, cells);
        const auto m = region_mass(grid, elena_test::detections_of({{100, 50, 200, 180}}), Rect{40, 30, 400, 500}, 640, 480);
        EXPECT_NEAR(m.face + m.body + m.background, 1.0, 1e-6);
    }
}

TEST(RegionMass, UniformQuarterFace) {
    const auto grid = grid_of(40, 14, std::vector<float>(1600, 0.5f));
    // Face covers the top-left quadrant of a 1000x1000 original.
    const auto m = region_mass(grid, elena_test::detections_of({{0, 0, 500, 500}}), std::nullopt, 1000, 1000);
    EXPECT_NEAR(m.face, 0.25, 1.0 / 1600);
    EXPECT_NEAR(m.background, 0.75, 1.0 / 1600);
    EXPECT_EQ(m.body, 0.0);
}

TEST(RegionMass, FacePrecedesBodyAndZeroMassThrows) {
    const auto grid = grid_of(2, 10, {1, 1, 1, 1});
    const auto m = region_mass(grid, elena_test::detections_of({{0, 0, 10, 10}}), Rect{0, 0, 20, 20}, 20, 20);
    EXPECT_DOUBLE_EQ(m.face, 0.25);
    EXPECT_DOUBLE_EQ(m.body, 0.75);
    EXPECT_DOUBLE_EQ(m.background, 0.0);
    const auto zero = grid_of(2, 10, {0, 0, 0, 0});
    EXPECT_EQ(code_of([&] { region_mass(zero, elena_test::detections_of({}), std::nullopt, 20, 20); }),
              ErrorCode::ZeroMassGrid);
}

TEST(Overlay, JetAnchors) {
    EXPECT_EQ(jet_color(0.0), (Rgb{0, 0, 128}));
    EXPECT_EQ(jet_color(0.5), (Rgb{128, 255, 128}));
    EXPECT_EQ(jet_color(1.0), (Rgb{128, 0, 0}));
    EXPECT_EQ(jet_color(0.25), (Rgb{0, 128, 255}));
    EXPECT_EQ(jet_color(-3), jet_color(0));
}

TEST(Overlay, NormalizeAndBlend) {
    EXPECT_EQ(min_max_normalize(std::vector<float>{2, 4, 6}), (std::vector<float>{0, 0.5f, 1}));
    EXPECT_EQ(min_max_normalize(std::vector<float>{3, 3}), (std::vector<float>{0, 0}));

    const auto grid = grid_of(2, 2, {0, 1, 2, 4});
    std::mt19937 rng(1);
    const auto img = elena_test::random_image(rng, 4, 4);
    EXPECT_EQ(render_overlay(grid, img, {0.0}), img);
    const auto full = render_overlay(grid, img, {1.0});
    EXPECT_EQ(full.at(0, 0), jet_color(0.0));
    EXPECT_EQ(full.at(3, 0), jet_color(0.25));
    EXPECT_EQ(full.at(3, 3), jet_color(1.0));
    const auto half = render_overlay(grid, img, {});
    const auto src = img.at(2, 2), heat = jet_color(0.5);
    EXPECT_EQ(half.at(2, 2).r, static_cast<std::uint8_t>(std::lround(0.5 * src.r + 0.5 * heat.r)));
    EXPECT_EQ(code_of([&] { render_overlay(grid, elena_test::random_image(rng, 5, 4)); }), ErrorCode::GeometryMismatch);
}

TEST(Compare, PairsByRecordAndLayer) {
    const std::vector<LayerMass> normal = {{"a", 1, {0.5, 0.3, 0.2}}, {"b", 1, {0.3, 0.3, 0.4}}, {"a", 2, {0.1, 0.1, 0.8}}};
    const std::vector<LayerMass> masked = {{"b", 1, {0.1, 0.5, 0.4}}, {"a", 2, {0.0, 0.2, 0.8}}, {"a", 1, {0.1, 0.6, 0.3}}};
    const auto rows = compare_conditions(normal, masked);
    ASSERT_EQ(rows.size(), 2u);
    EXPECT_EQ(rows[0].layer_index, 1);
    EXPECT_EQ(rows[0].pairs, 2u);
    EXPECT_NEAR(rows[0].normal.face, 0.4, 1e-12);
    EXPECT_NEAR(rows[0].masked.face, 0.1, 1e-12);
    EXPECT_NEAR(rows[0].delta.face, -0.3, 1e-12);
    EXPECT_NEAR(rows[0].delta.body, 0.25, 1e-12);
    EXPECT_NEAR(rows[1].delta.face, -0.1, 1e-12);

    const auto csv = layer_comparison_csv(rows);
    EXPECT_EQ(csv.substr(0, csv.find('\n')),
              "layer,pairs,normal_face,normal_body,normal_background,masked_face,masked_body,masked_background,"
              "delta_face,delta_body,delta_background");
    EXPECT_NE(csv.find("\n1,2,0.400000,0.300000,0.300000,0.100000,0.550000,0.350000,-0.300000,0.250000,0.050000\n"),
              std::string::npos)
        << csv;
}

TEST(Compare, MismatchesThrow) {
    const std::vector<LayerMass> one = {{"a", 1, {1, 0, 0}}};
    const std::vector<LayerMass> other = {{"b", 1, {1, 0, 0}}};
    const std::vector<LayerMass> dup = {{"a", 1, {1, 0, 0}}, {"a", 1, {1, 0, 0}}};
    EXPECT_EQ(code_of([&] { compare_conditions(one, other); }), ErrorCode::PairingMismatch);
    EXPECT_EQ(code_of([&] { compare_conditions(one, std::vector<LayerMass>{}); }), ErrorCode::PairingMismatch);
    EXPECT_EQ(code_of([&] { compare_conditions(dup, one); }), ErrorCode::PairingMismatch);
}
