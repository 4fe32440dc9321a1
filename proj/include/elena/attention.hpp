#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "elena/face_masker.hpp"
#include "elena/image.hpp"
#include "elena/types.hpp"

namespace elena {

// `.attn` container: one line of JSON header terminated by '\n', followed by
// row-major little-endian float32 grids in layer_indices order.
struct AttentionHeader {
    std::string model_ref;
    std::string prompt_text;
    int image_side = 560;
    int patch_side = 14;
    int grid_side = 40;
    std::vector<int> layer_indices;
    std::string dtype = "f32";
    Json extra = Json::object();  // unrecognized header keys, preserved
};

struct AttentionGrid {
    int layer_index = 0;
    int image_side = 560;
    int patch_side = 14;
    int grid_side = 40;
    std::vector<float> cells;  // grid_side * grid_side, row-major

    float at(int row, int col) const { return cells[static_cast<std::size_t>(row) * grid_side + col]; }
};

struct AttentionFile {
    AttentionHeader header;
    std::vector<AttentionGrid> grids;
};

// Throws HeaderMismatch (bad header, geometry, dtype, trailing bytes, or a
// negative / non-finite cell) and TruncatedFile.
AttentionFile load_grids(const std::filesystem::path& path);
AttentionFile parse_grids(std::span<const std::uint8_t> bytes, const std::string& source = "<buffer>");
std::vector<std::uint8_t> serialize_grids(const AttentionHeader& header, std::span<const AttentionGrid> grids);
void write_grids(const std::filesystem::path& path, const AttentionHeader& header,
                 std::span<const AttentionGrid> grids);

struct RegionMass {
    double face = 0;
    double body = 0;
    double background = 0;
};

// Each cell's normalized mass goes to Face when its patch centre, mapped to
// the original image_w x image_h frame, lies in any face rect; else Body when
// inside body_rect; else Background. Throws ZeroMassGrid.
RegionMass region_mass(const AttentionGrid& grid, const DetectionSet& faces, const std::optional<Rect>& body_rect,
                       int image_w, int image_h);

// Min-max normalizes the grid (zero range -> all zero), upsamples it by
// nearest neighbour and alpha-blends a jet colormap over the image. The image
// must be image_side x image_side.
struct OverlayStyle {
    double alpha = 0.5;
};
Image render_overlay(const AttentionGrid& grid, const Image& image, const OverlayStyle& style = {});
std::vector<float> min_max_normalize(std::span<const float> cells);
Rgb jet_color(double t);

struct LayerMass {
    std::string record_id;
    int layer_index = 0;
    RegionMass mass;
};

struct LayerComparison {
    int layer_index = 0;
    std::size_t pairs = 0;
    RegionMass normal;  // means
    RegionMass masked;
    RegionMass delta;   // masked - normal
};

// Pairs entries by (record_id, layer). Throws PairingMismatch when either
// side has an entry the other lacks.
std::vector<LayerComparison> compare_conditions(std::span<const LayerMass> normal, std::span<const LayerMass> masked);
std::string layer_comparison_csv(std::span<const LayerComparison> rows);

}  // namespace elena
