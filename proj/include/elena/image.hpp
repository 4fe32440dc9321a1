#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace elena {

struct Rgb {
    std::uint8_t r = 0;
    std::uint8_t g = 0;
    std::uint8_t b = 0;
    bool operator==(const Rgb&) const = default;
};

// Interleaved 8-bit RGB raster, row-major.
struct Image {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> rgb;

    Image() = default;
    Image(int w, int h, Rgb fill = {});

    bool empty() const { return width == 0 || height == 0; }
    Rgb at(int x, int y) const;
    void set(int x, int y, Rgb c);
    bool operator==(const Image&) const = default;
};

Image read_image(const std::filesystem::path& path);
Image decode_image(std::span<const std::uint8_t> bytes);
// Lossless PNG with fixed compression settings so identical rasters give
// identical bytes.
std::vector<std::uint8_t> encode_png(const Image& image);
void write_png(const std::filesystem::path& path, const Image& image);
std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path);

}  // namespace elena
