#pragma once

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <numbers>
#include <string>
#include <vector>

#include "geodiff/errors.hpp"
#include "geodiff/io_binary.hpp"
#include "geodiff/rng.hpp"
#include "geodiff/tensor.hpp"

namespace geodiff {

// ---------------------------------------------------------------------------
// In-memory scene types and their on-disk containers.
//
// HSIC cube file (little-endian):
//   magic "HSIC" | H u32 | W u32 | B u32 | H*W*B float32
// values are row-major and band-interleaved by pixel: index(r,c,b) =
// (r*W + c)*B + b. Trailing bytes are rejected.
//
// LBLM label file (little-endian):
//   magic "LBLM" | H u32 | W u32 | C u32 | H*W uint16 class ids
// id 0 means unlabeled; ids run 1..C.
// ---------------------------------------------------------------------------

struct HsiCube {
    std::size_t h = 0, w = 0, bands = 0;
    std::vector<float> data;  // h*w*bands

    float& at(std::size_t r, std::size_t c, std::size_t b) { return data[(r * w + c) * bands + b]; }
    float at(std::size_t r, std::size_t c, std::size_t b) const { return data[(r * w + c) * bands + b]; }
    std::size_t pixels() const { return h * w; }
};

struct LabelMap {
    std::size_t h = 0, w = 0;
    std::uint32_t classes = 0;
    std::vector<std::uint16_t> labels;  // h*w, 0 = unlabeled

    std::uint16_t at(std::size_t r, std::size_t c) const { return labels[r * w + c]; }
    std::uint16_t& at(std::size_t r, std::size_t c) { return labels[r * w + c]; }
};

// Pseudo-colour view of a cube, 3 channels per pixel scaled to [-1, 1].
struct RgbImage {
    std::size_t h = 0, w = 0;
    std::vector<float> data;  // h*w*3

    float at(std::size_t r, std::size_t c, std::size_t ch) const { return data[(r * w + c) * 3 + ch]; }
};

inline void save_cube(const std::string& path, const HsiCube& cube) {
    if (cube.data.size() != cube.h * cube.w * cube.bands)
        throw DimensionError("save_cube: payload does not match header dimensions");
    std::ofstream os(path, std::ios::binary);
    if (!os) throw FormatError("cannot open '" + path + "' for writing");
    os.write("HSIC", 4);
    io::write_u32(os, std::uint32_t(cube.h));
    io::write_u32(os, std::uint32_t(cube.w));
    io::write_u32(os, std::uint32_t(cube.bands));
    for (float v : cube.data) io::write_f32(os, v);
    if (!os) throw FormatError("short write to '" + path + "'");
}

inline HsiCube load_cube(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("cannot open '" + path + "'");
    io::Reader r{is, 0, path};
    r.expect_magic("HSIC");
    HsiCube cube;
    cube.h = r.u32("header");
    cube.w = r.u32("header");
    cube.bands = r.u32("header");
    if (cube.h == 0 || cube.w == 0 || cube.bands == 0)
        throw FormatError(path + ": zero extent in header at byte 4");
    cube.data.resize(cube.h * cube.w * cube.bands);
    for (std::size_t i = 0; i < cube.data.size(); ++i) {
        const std::uint64_t at = r.offset;
        const float v = r.f32("payload");
        if (!std::isfinite(v))
            throw FormatError(path + ": non-finite value at byte " + std::to_string(at));
        cube.data[i] = v;
    }
    r.expect_eof();
    return cube;
}

inline void save_labels(const std::string& path, const LabelMap& map) {
    if (map.labels.size() != map.h * map.w)
        throw DimensionError("save_labels: payload does not match header dimensions");
    std::ofstream os(path, std::ios::binary);
    if (!os) throw FormatError("cannot open '" + path + "' for writing");
    os.write("LBLM", 4);
    io::write_u32(os, std::uint32_t(map.h));
    io::write_u32(os, std::uint32_t(map.w));
    io::write_u32(os, map.classes);
    for (std::uint16_t v : map.labels) io::write_u16(os, v);
    if (!os) throw FormatError("short write to '" + path + "'");
}

inline LabelMap load_labels(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("cannot open '" + path + "'");
    io::Reader r{is, 0, path};
    r.expect_magic("LBLM");
    LabelMap map;
    map.h = r.u32("header");
    map.w = r.u32("header");
    map.classes = r.u32("header");
    if (map.h == 0 || map.w == 0)
        throw FormatError(path + ": zero extent in header at byte 4");
    map.labels.resize(map.h * map.w);
    for (std::size_t i = 0; i < map.labels.size(); ++i) {
        const std::uint64_t at = r.offset;
        map.labels[i] = r.u16("payload");
        if (map.labels[i] > map.classes)
            throw FormatError(path + ": class id " + std::to_string(map.labels[i]) +
                              " exceeds declared class count at byte " + std::to_string(at));
    }
    r.expect_eof();
    return map;
}

// ---------------------------------------------------------------------------
// Pseudo-RGB band selection
// ---------------------------------------------------------------------------

enum class BandPreset { berlin, augsburg };

inline std::array<std::size_t, 3> rgb_bands(BandPreset p) {
    switch (p) {
        case BandPreset::berlin: return {40, 30, 15};
        case BandPreset::augsburg: return {21, 11, 6};
    }
    throw ConfigError("unknown band preset");
}

// Per-band min-max scaling of three chosen bands to [-1, 1] over the whole
// scene. A constant band maps to all zeros.
inline RgbImage select_pseudo_rgb(const HsiCube& cube, const std::array<std::size_t, 3>& bands) {
    for (std::size_t b : bands)
        if (b >= cube.bands)
            throw RangeError("pseudo-rgb band index " + std::to_string(b) + " past cube depth " +
                             std::to_string(cube.bands));
    RgbImage img;
    img.h = cube.h;
    img.w = cube.w;
    img.data.assign(cube.pixels() * 3, 0.0f);
    for (std::size_t ch = 0; ch < 3; ++ch) {
        const std::size_t b = bands[ch];
        float lo = std::numeric_limits<float>::infinity();
        float hi = -std::numeric_limits<float>::infinity();
        for (std::size_t p = 0; p < cube.pixels(); ++p) {
            const float v = cube.data[p * cube.bands + b];
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
        if (hi > lo) {
            const double span = double(hi) - double(lo);
            for (std::size_t p = 0; p < cube.pixels(); ++p) {
                const double v = double(cube.data[p * cube.bands + b]);
                img.data[p * 3 + ch] = float(-1.0 + 2.0 * (v - double(lo)) / span);
            }
        }
    }
    return img;
}

// ---------------------------------------------------------------------------
// Spectrum standardisation
// ---------------------------------------------------------------------------

struct BandStats {
    std::vector<float> mean;
    std::vector<float> stddev;

    bool empty() const { return mean.empty(); }
};

// Population statistics per band over a pixel subset (row-major pixel ids).
inline BandStats compute_band_stats(const HsiCube& cube, const std::vector<std::size_t>& pixels) {
    if (pixels.empty()) throw DataError("band statistics need at least one pixel");
    BandStats st;
    st.mean.assign(cube.bands, 0.0f);
    st.stddev.assign(cube.bands, 0.0f);
    for (std::size_t b = 0; b < cube.bands; ++b) {
        double m = 0;
        for (std::size_t p : pixels) m += double(cube.data[p * cube.bands + b]);
        m /= double(pixels.size());
        double var = 0;
        for (std::size_t p : pixels) {
            const double d = double(cube.data[p * cube.bands + b]) - m;
            var += d * d;
        }
        var /= double(pixels.size());
        st.mean[b] = float(m);
        st.stddev[b] = var > 1e-24 ? float(std::sqrt(var)) : 1.0f;
    }
    return st;
}

template <typename T>
inline void z_score_row(const BandStats& st, const float* spectrum, T* out, std::size_t bands) {
    for (std::size_t b = 0; b < bands; ++b)
        out[b] = T((double(spectrum[b]) - double(st.mean[b])) / double(st.stddev[b]));
}

// ---------------------------------------------------------------------------
// Synthetic scenes
// ---------------------------------------------------------------------------

struct SynthSpec {
    std::size_t h = 64, w = 64, bands = 16;
    std::size_t classes = 4;
    double noise = 0.05;
    // When set, class identity is decodable only from the spectra: the three
    // pseudo-RGB bands (0,1,2) carry a class-independent pattern and classes
    // are scattered per pixel instead of forming regions.
    bool spectral_only = false;
};

struct SynthData {
    HsiCube cube;
    LabelMap train;
    LabelMap test;
    std::vector<std::vector<float>> prototypes;  // classes x bands
};

namespace detail {

// Walsh sign: +1/-1 depending on the parity of popcount(a & b).
inline int walsh_sign(std::size_t a, std::size_t b) {
    return (std::popcount(a & b) & 1) ? -1 : 1;
}

inline std::size_t next_pow2(std::size_t n) {
    std::size_t p = 1;
    while (p < n) p <<= 1;
    return p;
}

}  // namespace detail

// Class spectra are mutually distant sign patterns around a 0.5 baseline, so
// nearest-prototype assignment is exact at zero noise and robust at the
// default noise level.
inline std::vector<std::vector<float>> synth_prototypes(std::size_t classes, std::size_t bands) {
    const std::size_t period = detail::next_pow2(std::max(bands + 2, classes + 2));
    std::vector<std::vector<float>> protos(classes, std::vector<float>(bands));
    for (std::size_t c = 0; c < classes; ++c)
        for (std::size_t b = 0; b < bands; ++b)
            protos[c][b] = 0.5f + 0.35f * float(detail::walsh_sign(c + 1, (b + 1) % period));
    return protos;
}

inline SynthData synth_dataset(const SynthSpec& spec, std::uint64_t seed) {
    if (spec.classes < 2) throw ConfigError("synthetic scene needs at least two classes");
    if (spec.h * spec.w < 4 * spec.classes)
        throw ConfigError("synthetic scene too small for the requested class count");
    if (spec.bands < 3 || (spec.spectral_only && spec.bands < 4))
        throw ConfigError("synthetic scene needs at least 3 bands (4 in spectral-only mode)");
    if (spec.noise < 0) throw ConfigError("noise level must be non-negative");
    if (spec.classes > 15) throw ConfigError("synthetic scenes support at most 15 classes");

    SynthData out;
    out.prototypes = synth_prototypes(spec.classes, spec.bands);
    Rng rng(Rng::mix(seed, 0x5359f357ull));

    // class layout: contiguous regions by default, per-pixel scatter when the
    // scene must not be decodable from spatial structure
    std::vector<std::uint16_t> cls(spec.h * spec.w);
    if (spec.spectral_only) {
        for (auto& c : cls) c = std::uint16_t(1 + rng.index(spec.classes));
    } else {
        std::size_t g = 1;
        while (g * g < spec.classes) ++g;
        const bool grid = spec.h >= g && spec.w >= g;
        for (std::size_t r = 0; r < spec.h; ++r)
            for (std::size_t c = 0; c < spec.w; ++c) {
                std::size_t id;
                if (grid) {
                    const std::size_t gy = r * g / spec.h, gx = c * g / spec.w;
                    id = std::min(gy * g + gx, spec.classes - 1);
                } else {
                    id = (r * spec.w + c) * spec.classes / (spec.h * spec.w);
                }
                cls[r * spec.w + c] = std::uint16_t(1 + id);
            }
    }

    out.cube.h = spec.h;
    out.cube.w = spec.w;
    out.cube.bands = spec.bands;
    out.cube.data.resize(spec.h * spec.w * spec.bands);
    for (std::size_t p = 0; p < spec.h * spec.w; ++p) {
        const auto& proto = out.prototypes[cls[p] - 1];
        const std::size_t r = p / spec.w, c = p % spec.w;
        for (std::size_t b = 0; b < spec.bands; ++b) {
            double v = proto[b];
            if (spec.spectral_only && b < 3)
                v = 0.5 + 0.3 * std::sin(2.0 * std::numbers::pi *
                                         (double(r) / double(spec.h) + double(c) / double(spec.w) + 0.37 * double(b)));
            out.cube.data[p * spec.bands + b] = float(v + spec.noise * rng.normal());
        }
    }

    // sparse stratified train subsample (about 5 %, at least one pixel per
    // class); the remainder becomes the test set, disjoint by construction
    out.train.h = out.test.h = spec.h;
    out.train.w = out.test.w = spec.w;
    out.train.classes = out.test.classes = std::uint32_t(spec.classes);
    out.train.labels.assign(spec.h * spec.w, 0);
    out.test.labels = cls;
    std::vector<std::vector<std::size_t>> per_class(spec.classes);
    for (std::size_t p = 0; p < cls.size(); ++p) per_class[cls[p] - 1].push_back(p);
    for (std::size_t k = 0; k < spec.classes; ++k) {
        auto& pixels = per_class[k];
        if (pixels.empty())
            throw ConfigError("synthetic layout lost class " + std::to_string(k + 1));
        rng.shuffle(pixels.begin(), pixels.end());
        const std::size_t take = std::max<std::size_t>(1, pixels.size() / 20);
        for (std::size_t i = 0; i < take; ++i) {
            out.train.labels[pixels[i]] = std::uint16_t(k + 1);
            out.test.labels[pixels[i]] = 0;
        }
    }
    return out;
}

}  // namespace geodiff
