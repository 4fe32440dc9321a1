#include "elena/attention.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <map>
#include <sstream>

#include "elena/assets.hpp"
#include "elena/error.hpp"
#include "elena/eval.hpp"

namespace elena {

namespace {

float load_f32_le(const std::uint8_t* p) {
    std::uint32_t bits = static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
                         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
    return std::bit_cast<float>(bits);
}

void store_f32_le(float v, std::vector<std::uint8_t>& out) {
    const auto bits = std::bit_cast<std::uint32_t>(v);
    for (int shift = 0; shift < 32; shift += 8) out.push_back(static_cast<std::uint8_t>((bits >> shift) & 0xFF));
}

Json header_to_json(const AttentionHeader& h) {
    Json j = h.extra.is_object() ? h.extra : Json::object();
    j["model_ref"] = h.model_ref;
    j["prompt_text"] = h.prompt_text;
    j["image_side"] = h.image_side;
    j["patch_side"] = h.patch_side;
    j["grid_side"] = h.grid_side;
    j["layer_indices"] = h.layer_indices;
    j["dtype"] = h.dtype;
    return j;
}

}  // namespace

AttentionFile parse_grids(std::span<const std::uint8_t> bytes, const std::string& source) {
    const auto* begin = bytes.data();
    const auto* newline = std::find(begin, begin + bytes.size(), static_cast<std::uint8_t>('\n'));
    if (newline == begin + bytes.size()) fail(ErrorCode::TruncatedFile, source + ": header line not terminated");
    const std::string header_text(reinterpret_cast<const char*>(begin), static_cast<std::size_t>(newline - begin));
    const auto j = Json::parse(header_text, nullptr, false);
    if (j.is_discarded() || !j.is_object()) fail(ErrorCode::HeaderMismatch, source + ": header is not a JSON object");

    AttentionFile file;
    auto& h = file.header;
    try {
        h.model_ref = j.value("model_ref", "");
        h.prompt_text = j.value("prompt_text", "");
        h.image_side = j.at("image_side").get<int>();
        h.patch_side = j.at("patch_side").get<int>();
        h.grid_side = j.at("grid_side").get<int>();
        h.layer_indices = j.at("layer_indices").get<std::vector<int>>();
        h.dtype = j.at("dtype").get<std::string>();
    } catch (const Json::exception& e) {
        fail(ErrorCode::HeaderMismatch, source + ": " + e.what());
    }
    for (const auto& [key, value] : j.items()) {
        static const std::vector<std::string> known = {"model_ref", "prompt_text", "image_side", "patch_side",
                                                       "grid_side", "layer_indices", "dtype"};
        if (std::find(known.begin(), known.end(), key) == known.end()) h.extra[key] = value;
    }
    if (h.dtype != "f32") fail(ErrorCode::HeaderMismatch, source + ": unsupported dtype " + h.dtype);
    if (h.image_side <= 0 || h.patch_side <= 0 || h.image_side % h.patch_side != 0) {
        fail(ErrorCode::HeaderMismatch, source + ": image_side must be a positive multiple of patch_side");
    }
    if (h.grid_side != h.image_side / h.patch_side) {
        fail(ErrorCode::HeaderMismatch, source + ": grid_side " + std::to_string(h.grid_side) + " != image_side/patch_side " +
                                            std::to_string(h.image_side / h.patch_side));
    }
    if (h.layer_indices.empty()) fail(ErrorCode::HeaderMismatch, source + ": no layers listed");

    const std::size_t cells = static_cast<std::size_t>(h.grid_side) * h.grid_side;
    const std::size_t expected = h.layer_indices.size() * cells * 4;
    const std::size_t available = bytes.size() - static_cast<std::size_t>(newline - begin) - 1;
    if (available < expected) {
        fail(ErrorCode::TruncatedFile, source + ": payload has " + std::to_string(available) + " bytes, expected " +
                                           std::to_string(expected));
    }
    if (available > expected) fail(ErrorCode::HeaderMismatch, source + ": trailing bytes after the last grid");

    const auto* p = newline + 1;
    for (int layer : h.layer_indices) {
        AttentionGrid g{layer, h.image_side, h.patch_side, h.grid_side, std::vector<float>(cells)};
        for (std::size_t i = 0; i < cells; ++i, p += 4) {
            const float v = load_f32_le(p);
            if (!std::isfinite(v) || v < 0.0f) {
                fail(ErrorCode::HeaderMismatch, source + ": layer " + std::to_string(layer) +
                                                    " has a negative or non-finite cell");
            }
            g.cells[i] = v;
        }
        file.grids.push_back(std::move(g));
    }
    return file;
}

AttentionFile load_grids(const std::filesystem::path& path) {
    const auto bytes = read_bytes(path);
    return parse_grids(bytes, path.string());
}

std::vector<std::uint8_t> serialize_grids(const AttentionHeader& header, std::span<const AttentionGrid> grids) {
    AttentionHeader h = header;
    h.layer_indices.clear();
    for (const auto& g : grids) {
        if (g.grid_side != h.grid_side || g.cells.size() != static_cast<std::size_t>(h.grid_side) * h.grid_side) {
            fail(ErrorCode::InvalidArgument, "grid geometry does not match the header");
        }
        h.layer_indices.push_back(g.layer_index);
    }
    const std::string text = header_to_json(h).dump();
    std::vector<std::uint8_t> out(text.begin(), text.end());
    out.push_back('\n');
    for (const auto& g : grids) {
        for (float v : g.cells) store_f32_le(v, out);
    }
    return out;
}

void write_grids(const std::filesystem::path& path, const AttentionHeader& header,
                 std::span<const AttentionGrid> grids) {
    const auto bytes = serialize_grids(header, grids);
    write_text_file(path, std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
}

RegionMass region_mass(const AttentionGrid& grid, const DetectionSet& faces, const std::optional<Rect>& body_rect,
                       int image_w, int image_h) {
    if (image_w <= 0 || image_h <= 0) fail(ErrorCode::InvalidArgument, "image size must be positive");
    // Centre = (2c + 1) * patch * W / (2 * side): one rounding, so centres
    // landing exactly on a box edge are classified exactly.
    const double denom = 2.0 * grid.image_side;
    auto centre = [&](int i, int extent) {
        return static_cast<double>((2LL * i + 1) * grid.patch_side * extent) / denom;
    };
    double face = 0, body = 0, total = 0;
    for (int r = 0; r < grid.grid_side; ++r) {
        const double cy = centre(r, image_h);
        for (int c = 0; c < grid.grid_side; ++c) {
            const double cx = centre(c, image_w);
            const double v = grid.at(r, c);
            total += v;
            const bool in_face = std::any_of(faces.faces.begin(), faces.faces.end(),
                                             [&](const FaceRegion& f) { return f.rect.contains(cx, cy); });
            if (in_face) {
                face += v;
            } else if (body_rect && body_rect->contains(cx, cy)) {
                body += v;
            }
        }
    }
    if (!(total > 0.0)) fail(ErrorCode::ZeroMassGrid, "attention grid for layer " + std::to_string(grid.layer_index) + " has zero mass");
    RegionMass m;
    m.face = face / total;
    m.body = body / total;
    m.background = (total - face - body) / total;
    return m;
}

std::vector<float> min_max_normalize(std::span<const float> cells) {
    std::vector<float> out(cells.size(), 0.0f);
    if (cells.empty()) return out;
    const auto [lo, hi] = std::minmax_element(cells.begin(), cells.end());
    const float range = *hi - *lo;
    if (!(range > 0.0f)) return out;
    for (std::size_t i = 0; i < cells.size(); ++i) out[i] = (cells[i] - *lo) / range;
    return out;
}

Rgb jet_color(double t) {
    t = std::clamp(t, 0.0, 1.0);
    auto channel = [&](double centre) {
        const double v = std::clamp(1.5 - std::abs(4.0 * t - centre), 0.0, 1.0);
        return static_cast<std::uint8_t>(std::lround(v * 255.0));
    };
    return {channel(3.0), channel(2.0), channel(1.0)};
}

Image render_overlay(const AttentionGrid& grid, const Image& image, const OverlayStyle& style) {
    if (image.width != grid.image_side || image.height != grid.image_side) {
        fail(ErrorCode::GeometryMismatch, "overlay image is " + std::to_string(image.width) + "x" +
                                              std::to_string(image.height) + ", grid expects " +
                                              std::to_string(grid.image_side) + " square");
    }
    const auto norm = min_max_normalize(grid.cells);
    const double alpha = std::clamp(style.alpha, 0.0, 1.0);
    Image out(image.width, image.height);
    for (int y = 0; y < image.height; ++y) {
        const int r = y / grid.patch_side;
        for (int x = 0; x < image.width; ++x) {
            const int c = x / grid.patch_side;
            const Rgb heat = jet_color(norm[static_cast<std::size_t>(r) * grid.grid_side + c]);
            const Rgb src = image.at(x, y);
            auto blend = [&](std::uint8_t s, std::uint8_t h) {
                return static_cast<std::uint8_t>(std::lround((1.0 - alpha) * s + alpha * h));
            };
            out.set(x, y, {blend(src.r, heat.r), blend(src.g, heat.g), blend(src.b, heat.b)});
        }
    }
    return out;
}

std::vector<LayerComparison> compare_conditions(std::span<const LayerMass> normal, std::span<const LayerMass> masked) {
    using Key = std::pair<std::string, int>;
    auto index = [](std::span<const LayerMass> side, const char* name) {
        std::map<Key, RegionMass> out;
        for (const auto& m : side) {
            if (!out.emplace(Key{m.record_id, m.layer_index}, m.mass).second) {
                fail(ErrorCode::PairingMismatch, std::string("duplicate ") + name + " entry for " + m.record_id +
                                                     " layer " + std::to_string(m.layer_index));
            }
        }
        return out;
    };
    const auto a = index(normal, "normal");
    const auto b = index(masked, "masked");
    for (const auto& [key, _] : a) {
        if (!b.count(key)) {
            fail(ErrorCode::PairingMismatch, "masked side lacks " + key.first + " layer " + std::to_string(key.second));
        }
    }
    for (const auto& [key, _] : b) {
        if (!a.count(key)) {
            fail(ErrorCode::PairingMismatch, "normal side lacks " + key.first + " layer " + std::to_string(key.second));
        }
    }
    std::map<int, LayerComparison> layers;
    for (const auto& [key, n] : a) {
        const auto& m = b.at(key);
        auto& row = layers[key.second];
        row.layer_index = key.second;
        ++row.pairs;
        row.normal.face += n.face;
        row.normal.body += n.body;
        row.normal.background += n.background;
        row.masked.face += m.face;
        row.masked.body += m.body;
        row.masked.background += m.background;
    }
    std::vector<LayerComparison> out;
    for (auto& [layer, row] : layers) {
        const double k = static_cast<double>(row.pairs);
        for (auto* side : {&row.normal, &row.masked}) {
            side->face /= k;
            side->body /= k;
            side->background /= k;
        }
        row.delta = {row.masked.face - row.normal.face, row.masked.body - row.normal.body,
                     row.masked.background - row.normal.background};
        out.push_back(row);
    }
    return out;
}

std::string layer_comparison_csv(std::span<const LayerComparison> rows) {
    std::ostringstream out;
    out << "layer,pairs,normal_face,normal_body,normal_background,masked_face,masked_body,masked_background,"
           "delta_face,delta_body,delta_background\n";
    for (const auto& r : rows) {
        out << r.layer_index << ',' << r.pairs;
        for (double v : {r.normal.face, r.normal.body, r.normal.background, r.masked.face, r.masked.body,
                         r.masked.background, r.delta.face, r.delta.body, r.delta.background}) {
            out << ',' << format_fixed(v, 6);
        }
        out << '\n';
    }
    return out.str();
}

}  // namespace elena
