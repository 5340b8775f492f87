#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "geodiff/errors.hpp"
#include "geodiff/hsi.hpp"

namespace geodiff {

struct Rgb8 {
    std::uint8_t r = 0, g = 0, b = 0;
};

// Fixed 16-entry palette; entry 0 (black) renders unlabeled pixels.
inline const std::array<Rgb8, 16>& class_palette() {
    static const std::array<Rgb8, 16> p = {{
        {0, 0, 0},        // 0 unlabeled
        {230, 25, 75},    // 1
        {60, 180, 75},    // 2
        {255, 225, 25},   // 3
        {0, 130, 200},    // 4
        {245, 130, 48},   // 5
        {145, 30, 180},   // 6
        {70, 240, 240},   // 7
        {240, 50, 230},   // 8
        {210, 245, 60},   // 9
        {170, 110, 40},   // 10
        {255, 250, 200},  // 11
        {0, 128, 128},    // 12
        {220, 190, 255},  // 13
        {128, 0, 0},      // 14
        {128, 128, 128},  // 15
    }};
    return p;
}

// Binary PPM (P6), 8 bits per channel.
inline void write_ppm(const std::string& path, std::size_t h, std::size_t w,
                      const std::vector<Rgb8>& pixels) {
    if (pixels.size() != h * w) throw DimensionError("write_ppm: pixel count does not match extent");
    if (h == 0 || w == 0) throw DimensionError("write_ppm: empty image");
    std::ofstream os(path, std::ios::binary);
    if (!os) throw FormatError("cannot open '" + path + "' for writing");
    os << "P6\n" << w << " " << h << "\n255\n";
    for (const Rgb8& px : pixels) {
        const char buf[3] = {char(px.r), char(px.g), char(px.b)};
        os.write(buf, 3);
    }
    if (!os) throw FormatError("short write to '" + path + "'");
}

// Class-id map -> palette colours. Ids above the palette are rejected.
inline void render_labels(const std::string& path, const LabelMap& labels) {
    const auto& pal = class_palette();
    std::vector<Rgb8> pixels(labels.h * labels.w);
    for (std::size_t i = 0; i < pixels.size(); ++i) {
        const std::uint16_t id = labels.labels[i];
        if (id >= pal.size())
            throw RangeError("class id " + std::to_string(id) + " has no palette entry (max " +
                             std::to_string(pal.size() - 1) + ")");
        pixels[i] = pal[id];
    }
    write_ppm(path, labels.h, labels.w, pixels);
}

// Cluster assignments (0-based) -> palette colours, skipping the black
// unlabeled entry.
inline void render_clusters(const std::string& path, std::size_t h, std::size_t w,
                            const std::vector<int>& assignment) {
    if (assignment.size() != h * w)
        throw DimensionError("render_clusters: assignment does not match extent");
    const auto& pal = class_palette();
    std::vector<Rgb8> pixels(h * w);
    for (std::size_t i = 0; i < pixels.size(); ++i) {
        const int id = assignment[i];
        if (id < 0 || std::size_t(id) + 1 >= pal.size())
            throw RangeError("cluster id " + std::to_string(id) + " has no palette entry (max " +
                             std::to_string(pal.size() - 2) + ")");
        pixels[i] = pal[std::size_t(id) + 1];
    }
    write_ppm(path, h, w, pixels);
}

// Pseudo-colour image ([-1,1] floats) -> 8-bit render.
inline void render_rgb(const std::string& path, const RgbImage& img) {
    std::vector<Rgb8> pixels(img.h * img.w);
    for (std::size_t i = 0; i < pixels.size(); ++i) {
        const auto to8 = [&](float v) {
            const double u = (double(v) + 1.0) * 0.5;
            return std::uint8_t(std::clamp(u, 0.0, 1.0) * 255.0 + 0.5);
        };
        pixels[i] = {to8(img.data[i * 3]), to8(img.data[i * 3 + 1]), to8(img.data[i * 3 + 2])};
    }
    write_ppm(path, img.h, img.w, pixels);
}

}  // namespace geodiff
