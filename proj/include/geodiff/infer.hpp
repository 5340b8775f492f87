#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "geodiff/checkpoint.hpp"
#include "geodiff/errors.hpp"
#include "geodiff/hsi.hpp"
#include "geodiff/rng.hpp"
#include "geodiff/schedule.hpp"
#include "geodiff/tiler.hpp"
#include "geodiff/unet.hpp"

namespace geodiff {

enum class Aggregation { max_vote, mean_logit };

inline std::string to_string(Aggregation a) {
    return a == Aggregation::max_vote ? "max_vote" : "mean_logit";
}

inline Aggregation aggregation_from(const std::string& name) {
    if (name == "max_vote") return Aggregation::max_vote;
    if (name == "mean_logit") return Aggregation::mean_logit;
    throw ConfigError("unknown aggregation '" + name + "'");
}

// Per-patch classification result. `ids` holds one 1-based class id per patch
// pixel in row-major order; `logits` is populated only when the caller asked
// for logit aggregation.
template <typename T = float>
struct PatchPrediction {
    std::size_t origin_index = 0;
    std::vector<std::uint16_t> ids;
    Tensor<T> logits;
};

// Classifies every patch in the plan. Noise is drawn from a substream keyed by
// (seed, origin index, t) so the same patch sees the same perturbation no
// matter which decoder layer is tapped.
template <typename T>
std::vector<PatchPrediction<T>> predict_patches(const FrozenUNet<T>& net, const NoiseSchedule& sched,
                                                std::size_t t, int layer, const PixelModel<T>& model,
                                                const RgbImage& rgb, const HsiCube* cube,
                                                const TilePlan& plan, std::uint64_t seed,
                                                bool keep_logits = false) {
    if (model.variant == Variant::geodiffnet_f) {
        if (!cube) throw StateError("fused inference needs the spectral cube");
        if (cube->h != rgb.h || cube->w != rgb.w)
            throw DimensionError("cube extent does not match the rendered image");
        if (cube->bands != model.bands)
            throw DimensionError("cube depth does not match the model's band count");
    }
    if (model.backbone_hash != 0 && model.backbone_hash != net.checksum())
        throw StateError("backbone parameters do not match the trained checkpoint");

    const std::size_t P = plan.patch;
    std::vector<PatchPrediction<T>> out;
    out.reserve(plan.origins.size());
    for (std::size_t oi = 0; oi < plan.origins.size(); ++oi) {
        const auto [orow, ocol] = plan.origins[oi];
        const Tensor<T> patch = extract_patch<T>(rgb, orow, ocol, plan);
        Rng rng(Rng::mix(seed, oi, t));
        const FeatureMap<T> fm = extract_features(net, patch, t, layer, sched, rng);
        if (fm.d != model.feature_dim)
            throw DimensionError("feature width " + std::to_string(fm.d) +
                                 " does not match the model's " + std::to_string(model.feature_dim));
        Tensor<T> features({P * P, fm.d}, fm.data);

        Prediction<T> pred;
        if (model.variant == Variant::geodiffnet) {
            pred = model.predict(features, nullptr);
        } else {
            Tensor<T> spectra({P * P, cube->bands});
            for (std::size_t r = 0; r < P; ++r) {
                const std::size_t sr = mirror_index(orow + r, cube->h);
                for (std::size_t c = 0; c < P; ++c) {
                    const std::size_t sc = mirror_index(ocol + c, cube->w);
                    const float* px = cube->data.data() + (sr * cube->w + sc) * cube->bands;
                    T* dst = spectra.data.data() + (r * P + c) * cube->bands;
                    for (std::size_t b = 0; b < cube->bands; ++b) dst[b] = T(px[b]);
                }
            }
            pred = model.predict(features, &spectra);
        }

        PatchPrediction<T> pp;
        pp.origin_index = oi;
        pp.ids = std::move(pred.ids);
        if (keep_logits) pp.logits = std::move(pred.logits);
        out.push_back(std::move(pp));
    }
    return out;
}

// Majority vote across overlapping patches. Votes cast into the padded margin
// are discarded; ties resolve to the lowest class id. Every plan origin must
// be represented exactly once.
template <typename T>
LabelMap max_vote(const std::vector<PatchPrediction<T>>& patches, const TilePlan& plan,
                  std::size_t classes, std::vector<std::uint32_t>* vote_counts = nullptr) {
    if (classes == 0) throw ConfigError("max_vote needs at least one class");
    std::vector<const PatchPrediction<T>*> by_origin(plan.origins.size(), nullptr);
    for (const auto& p : patches) {
        if (p.origin_index >= plan.origins.size())
            throw AggregationError("patch prediction for origin " + std::to_string(p.origin_index) +
                                   " is outside the plan");
        if (by_origin[p.origin_index])
            throw AggregationError("duplicate prediction for origin " +
                                   std::to_string(p.origin_index));
        by_origin[p.origin_index] = &p;
    }
    for (std::size_t oi = 0; oi < by_origin.size(); ++oi)
        if (!by_origin[oi])
            throw AggregationError("no prediction for plan origin " + std::to_string(oi));

    const std::size_t P = plan.patch;
    std::vector<std::uint32_t> votes(plan.src_h * plan.src_w * classes, 0);
    for (std::size_t oi = 0; oi < by_origin.size(); ++oi) {
        const auto [orow, ocol] = plan.origins[oi];
        const auto& ids = by_origin[oi]->ids;
        if (ids.size() != P * P)
            throw AggregationError("patch prediction for origin " + std::to_string(oi) +
                                   " has the wrong pixel count");
        for (std::size_t r = 0; r < P; ++r) {
            const std::size_t tr = orow + r;
            if (tr >= plan.src_h) break;
            for (std::size_t c = 0; c < P; ++c) {
                const std::size_t tc = ocol + c;
                if (tc >= plan.src_w) break;
                const std::uint16_t id = ids[r * P + c];
                if (id == 0 || id > classes)
                    throw AggregationError("vote for class " + std::to_string(id) +
                                           " is outside 1.." + std::to_string(classes));
                ++votes[(tr * plan.src_w + tc) * classes + (id - 1)];
            }
        }
    }

    LabelMap out;
    out.h = plan.src_h;
    out.w = plan.src_w;
    out.classes = std::uint32_t(classes);
    out.labels.assign(out.h * out.w, 0);
    for (std::size_t px = 0; px < out.h * out.w; ++px) {
        const std::uint32_t* v = votes.data() + px * classes;
        std::size_t best = 0;
        for (std::size_t k = 1; k < classes; ++k)
            if (v[k] > v[best]) best = k;
        if (v[best] == 0) throw AggregationError("pixel " + std::to_string(px) + " received no votes");
        out.labels[px] = std::uint16_t(best + 1);
    }
    if (vote_counts) *vote_counts = std::move(votes);
    return out;
}

// Alternative aggregation: per-pixel mean of patch logits, then argmax
// (ties resolve to the lowest class id). Requires kept logits.
template <typename T>
LabelMap mean_logit_vote(const std::vector<PatchPrediction<T>>& patches, const TilePlan& plan,
                         std::size_t classes) {
    if (classes == 0) throw ConfigError("mean_logit_vote needs at least one class");
    std::vector<const PatchPrediction<T>*> by_origin(plan.origins.size(), nullptr);
    for (const auto& p : patches) {
        if (p.origin_index >= plan.origins.size())
            throw AggregationError("patch prediction for origin " + std::to_string(p.origin_index) +
                                   " is outside the plan");
        if (by_origin[p.origin_index])
            throw AggregationError("duplicate prediction for origin " +
                                   std::to_string(p.origin_index));
        by_origin[p.origin_index] = &p;
    }
    const std::size_t P = plan.patch;
    std::vector<double> sums(plan.src_h * plan.src_w * classes, 0.0);
    std::vector<std::uint32_t> hits(plan.src_h * plan.src_w, 0);
    for (std::size_t oi = 0; oi < by_origin.size(); ++oi) {
        if (!by_origin[oi])
            throw AggregationError("no prediction for plan origin " + std::to_string(oi));
        const auto [orow, ocol] = plan.origins[oi];
        const Tensor<T>& lg = by_origin[oi]->logits;
        if (lg.size() != P * P * classes)
            throw AggregationError("origin " + std::to_string(oi) +
                                   " carries no logits for mean aggregation");
        for (std::size_t r = 0; r < P; ++r) {
            const std::size_t tr = orow + r;
            if (tr >= plan.src_h) break;
            for (std::size_t c = 0; c < P; ++c) {
                const std::size_t tc = ocol + c;
                if (tc >= plan.src_w) break;
                const T* row = lg.data.data() + (r * P + c) * classes;
                double* acc = sums.data() + (tr * plan.src_w + tc) * classes;
                for (std::size_t k = 0; k < classes; ++k) acc[k] += double(row[k]);
                ++hits[tr * plan.src_w + tc];
            }
        }
    }
    LabelMap out;
    out.h = plan.src_h;
    out.w = plan.src_w;
    out.classes = std::uint32_t(classes);
    out.labels.assign(out.h * out.w, 0);
    for (std::size_t px = 0; px < out.h * out.w; ++px) {
        if (hits[px] == 0) throw AggregationError("pixel " + std::to_string(px) + " received no votes");
        const double* acc = sums.data() + px * classes;
        std::size_t best = 0;
        for (std::size_t k = 1; k < classes; ++k)
            if (acc[k] > acc[best]) best = k;
        out.labels[px] = std::uint16_t(best + 1);
    }
    return out;
}

// Full scene pass: tile, classify every patch, aggregate.
template <typename T>
LabelMap predict_scene(const FrozenUNet<T>& net, const NoiseSchedule& sched, std::size_t t, int layer,
                       const PixelModel<T>& model, const RgbImage& rgb, const HsiCube* cube,
                       const TilePlan& plan, std::uint64_t seed,
                       Aggregation agg = Aggregation::max_vote) {
    const bool keep = agg == Aggregation::mean_logit;
    auto patches = predict_patches(net, sched, t, layer, model, rgb, cube, plan, seed, keep);
    if (agg == Aggregation::max_vote) return max_vote(patches, plan, model.classes);
    return mean_logit_vote(patches, plan, model.classes);
}

}  // namespace geodiff
