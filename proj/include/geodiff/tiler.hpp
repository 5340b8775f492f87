#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "geodiff/errors.hpp"
#include "geodiff/hsi.hpp"
#include "geodiff/tensor.hpp"

namespace geodiff {

// Overlapping tile grid over a scene. The scene is padded (bottom/right only,
// mirror reflection without repeating the edge pixel) to the smallest extent
// that a whole number of strides covers, then patches start at every multiple
// of the stride.
struct TilePlan {
    std::size_t patch = 64;
    std::size_t stride = 32;
    std::size_t src_h = 0, src_w = 0;
    std::size_t padded_h = 0, padded_w = 0;
    std::vector<std::pair<std::size_t, std::size_t>> origins;  // (row, col), row-major

    bool has_origin(std::size_t r, std::size_t c) const {
        for (const auto& o : origins)
            if (o.first == r && o.second == c) return true;
        return false;
    }
};

namespace detail {

inline std::size_t padded_extent(std::size_t d, std::size_t patch, std::size_t stride) {
    if (d <= patch) return patch;
    const std::size_t k = (d - patch + stride - 1) / stride;  // ceil
    return stride * k + patch;
}

}  // namespace detail

inline TilePlan plan_tiles(std::size_t h, std::size_t w, std::size_t patch, std::size_t stride) {
    if (h == 0 || w == 0) throw DataError("plan_tiles: empty scene");
    if (patch == 0 || stride == 0) throw ConfigError("plan_tiles: patch and stride must be positive");
    if (stride > patch) throw ConfigError("plan_tiles: stride must not exceed the patch size");
    TilePlan plan;
    plan.patch = patch;
    plan.stride = stride;
    plan.src_h = h;
    plan.src_w = w;
    plan.padded_h = detail::padded_extent(h, patch, stride);
    plan.padded_w = detail::padded_extent(w, patch, stride);
    for (std::size_t r = 0; r + patch <= plan.padded_h; r += stride)
        for (std::size_t c = 0; c + patch <= plan.padded_w; c += stride)
            plan.origins.emplace_back(r, c);
    return plan;
}

// Maps a padded coordinate into the source extent by mirror reflection about
// the last pixel, without repeating the edge: n=4 maps 0,1,2,3,4,5,... to
// 0,1,2,3,2,1,...
inline std::size_t mirror_index(std::size_t i, std::size_t n) {
    if (n == 1) return 0;
    const std::size_t period = 2 * n - 2;
    i %= period;
    return i < n ? i : period - i;
}

// Extracts one patch x patch x C crop at a plan origin. Coordinates past the
// source extent are filled by reflection.
template <typename T>
Tensor<T> extract_patch(const RgbImage& img, std::size_t origin_r, std::size_t origin_c,
                        const TilePlan& plan) {
    if (!plan.has_origin(origin_r, origin_c))
        throw PlanError("patch origin (" + std::to_string(origin_r) + "," + std::to_string(origin_c) +
                        ") is not part of the tile plan");
    if (img.h != plan.src_h || img.w != plan.src_w)
        throw DimensionError("extract_patch: image extent does not match the plan");
    const std::size_t P = plan.patch;
    Tensor<T> out({P, P, 3});
    for (std::size_t r = 0; r < P; ++r) {
        const std::size_t sr = mirror_index(origin_r + r, img.h);
        for (std::size_t c = 0; c < P; ++c) {
            const std::size_t sc = mirror_index(origin_c + c, img.w);
            const float* px = img.data.data() + (sr * img.w + sc) * 3;
            T* dst = out.data.data() + (r * P + c) * 3;
            dst[0] = T(px[0]);
            dst[1] = T(px[1]);
            dst[2] = T(px[2]);
        }
    }
    return out;
}

// Number of patches covering each source pixel.
inline std::vector<std::uint32_t> coverage_count(const TilePlan& plan) {
    std::vector<std::uint32_t> cover(plan.src_h * plan.src_w, 0);
    for (const auto& [orow, ocol] : plan.origins) {
        const std::size_t rend = std::min(orow + plan.patch, plan.src_h);
        const std::size_t cend = std::min(ocol + plan.patch, plan.src_w);
        for (std::size_t r = orow; r < rend; ++r)
            for (std::size_t c = ocol; c < cend; ++c) ++cover[r * plan.src_w + c];
    }
    return cover;
}

}  // namespace geodiff
