#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <vector>

#include "geodiff/errors.hpp"
#include "geodiff/rng.hpp"
#include "geodiff/unet.hpp"

namespace geodiff {

struct KMeansResult {
    std::vector<int> assignment;     // per pixel, 0..k-1
    std::vector<double> centers;     // k x d
    std::vector<double> objective;   // within-cluster sum of squares per iteration
    std::size_t iterations = 0;
};

// Lloyd iterations with kmeans++ seeding over the pixels of a feature map.
// Ties in assignment go to the lowest center id; an emptied cluster is
// re-seeded on the point farthest from its own center, so every step keeps
// the objective non-increasing up to that deterministic repair.
template <typename T>
KMeansResult kmeans_cluster(const FeatureMap<T>& fm, std::size_t k, std::uint64_t seed,
                            std::size_t max_iters = 64) {
    const std::size_t n = fm.h * fm.w, d = fm.d;
    if (k == 0) throw ConfigError("k-means needs at least one cluster");
    if (k > n) throw ConfigError("k-means cluster count exceeds the pixel count");

    const auto point = [&](std::size_t i) { return fm.data.data() + i * d; };
    const auto dist2 = [&](const T* p, const double* c) {
        double s = 0;
        for (std::size_t j = 0; j < d; ++j) {
            const double diff = double(p[j]) - c[j];
            s += diff * diff;
        }
        return s;
    };

    KMeansResult res;
    res.centers.assign(k * d, 0.0);
    Rng rng(Rng::mix(seed, 0x6b6d6e73ull));

    // kmeans++ seeding
    std::vector<double> best(n, std::numeric_limits<double>::infinity());
    {
        const std::size_t first = rng.index(n);
        for (std::size_t j = 0; j < d; ++j) res.centers[j] = double(point(first)[j]);
        for (std::size_t c = 1; c < k; ++c) {
            double total = 0;
            for (std::size_t i = 0; i < n; ++i) {
                best[i] = std::min(best[i], dist2(point(i), res.centers.data() + (c - 1) * d));
                total += best[i];
            }
            std::size_t chosen = 0;
            if (total > 0) {
                const double target = rng.uniform() * total;
                double acc = 0;
                for (std::size_t i = 0; i < n; ++i) {
                    acc += best[i];
                    if (acc >= target) {
                        chosen = i;
                        break;
                    }
                }
            } else {
                chosen = rng.index(n);
            }
            for (std::size_t j = 0; j < d; ++j) res.centers[c * d + j] = double(point(chosen)[j]);
        }
    }

    res.assignment.assign(n, -1);
    std::vector<std::size_t> counts(k);
    for (std::size_t it = 0; it < max_iters; ++it) {
        bool changed = false;
        double wcss = 0;
        for (std::size_t i = 0; i < n; ++i) {
            int arg = 0;
            double bd = dist2(point(i), res.centers.data());
            for (std::size_t c = 1; c < k; ++c) {
                const double dd = dist2(point(i), res.centers.data() + c * d);
                if (dd < bd) {
                    bd = dd;
                    arg = int(c);
                }
            }
            wcss += bd;
            if (res.assignment[i] != arg) {
                res.assignment[i] = arg;
                changed = true;
            }
        }
        res.objective.push_back(wcss);
        res.iterations = it + 1;
        if (!changed) break;

        std::fill(counts.begin(), counts.end(), 0);
        std::vector<double> sums(k * d, 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            const std::size_t c = std::size_t(res.assignment[i]);
            ++counts[c];
            const T* p = point(i);
            for (std::size_t j = 0; j < d; ++j) sums[c * d + j] += double(p[j]);
        }
        for (std::size_t c = 0; c < k; ++c) {
            if (counts[c] == 0) {
                // deterministic repair: steal the point farthest from its center
                std::size_t far = 0;
                double fd = -1;
                for (std::size_t i = 0; i < n; ++i) {
                    const double dd =
                        dist2(point(i), res.centers.data() + std::size_t(res.assignment[i]) * d);
                    if (dd > fd) {
                        fd = dd;
                        far = i;
                    }
                }
                for (std::size_t j = 0; j < d; ++j) res.centers[c * d + j] = double(point(far)[j]);
            } else {
                for (std::size_t j = 0; j < d; ++j)
                    res.centers[c * d + j] = sums[c * d + j] / double(counts[c]);
            }
        }
    }
    return res;
}

}  // namespace geodiff
