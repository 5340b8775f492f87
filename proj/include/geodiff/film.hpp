#pragma once

#include <cstddef>
#include <vector>

#include "geodiff/errors.hpp"
#include "geodiff/nn.hpp"
#include "geodiff/tensor.hpp"

namespace geodiff {

// Maps a raw spectrum (b bands, z-scored upstream) to a compact embedding.
template <typename T>
struct SpectralEncoder {
    nn::Mlp<T> net;  // b -> hidden (relu) -> embedding

    static SpectralEncoder seeded(std::size_t bands, std::size_t hidden, std::size_t embedding,
                                  Rng& rng) {
        SpectralEncoder e;
        e.net.layers.push_back(nn::Dense<T>::seeded(bands, hidden, nn::Activation::relu, rng));
        e.net.layers.push_back(nn::Dense<T>::seeded(hidden, embedding, nn::Activation::identity, rng));
        return e;
    }

    std::size_t bands() const { return net.in_width(); }
    std::size_t embedding_dim() const { return net.out_width(); }

    Tensor<T> forward(const Tensor<T>& spectra) const { return net.forward(spectra); }
};

// Per-pixel feature modulation parameters.
template <typename T>
struct FilmParams {
    std::vector<T> gamma;
    std::vector<T> beta;
};

// Regresses modulation parameters from a spectral embedding. The raw output
// has width 2d and is split exactly in half; gamma = 1 + first half so a
// freshly constructed regressor (zero-initialised head) is the identity
// modulation.
template <typename T>
struct FilmRegressor {
    nn::Mlp<T> net;  // embedding -> hidden (relu) -> 2d
    std::size_t feature_dim = 0;

    // The hidden layer starts 10x louder than its seeded scale. The zero head
    // keeps the initial modulation exactly identity either way, but gradient
    // reaching the head is proportional to the hidden activations, and with a
    // damped classifier head downstream the default scale learns too slowly
    // to wake the modulation branch within a short training budget.
    static constexpr double kHiddenScale = 10.0;

    static FilmRegressor seeded(std::size_t embedding, std::size_t hidden, std::size_t feature_dim,
                                Rng& rng) {
        FilmRegressor r;
        r.feature_dim = feature_dim;
        r.net.layers.push_back(nn::Dense<T>::seeded(embedding, hidden, nn::Activation::relu, rng));
        for (T& v : r.net.layers.back().w.data) v *= T(kHiddenScale);
        r.net.layers.push_back(nn::Dense<T>::zeros(hidden, 2 * feature_dim, nn::Activation::identity));
        return r;
    }

    std::size_t embedding_dim() const { return net.in_width(); }
};

template <typename T>
FilmParams<T> regress_film(const FilmRegressor<T>& reg, const Tensor<T>& embedding) {
    if (embedding.size() != reg.embedding_dim())
        throw DimensionError("film regression: embedding width does not match");
    const Tensor<T> raw = reg.net.forward(embedding);
    const std::size_t d = reg.feature_dim;
    FilmParams<T> p;
    p.gamma.resize(d);
    p.beta.resize(d);
    for (std::size_t i = 0; i < d; ++i) {
        p.gamma[i] = T(1) + raw.data[i];
        p.beta[i] = raw.data[d + i];
    }
    return p;
}

// f_hat = gamma * f + beta, element-wise.
template <typename T>
std::vector<T> film_modulate(const std::vector<T>& f, const FilmParams<T>& p) {
    if (f.size() != p.gamma.size() || f.size() != p.beta.size())
        throw DimensionError("film modulation: parameter width does not match the feature");
    std::vector<T> out(f.size());
    for (std::size_t i = 0; i < f.size(); ++i) out[i] = p.gamma[i] * f[i] + p.beta[i];
    return out;
}

namespace film_detail {

// Batched modulation from the raw 2d regressor output: rows of features
// modulated by the matching rows of raw. Returns f_hat and, through the
// gradient entry points below, the pieces needed for reverse mode.
template <typename T>
Tensor<T> modulate_rows(const Tensor<T>& features, const Tensor<T>& raw) {
    const std::size_t d = features.shape.back();
    if (raw.shape.back() != 2 * d)
        throw DimensionError("film modulation: raw output width must be twice the feature width");
    const std::size_t n = features.size() / d;
    if (raw.size() != n * 2 * d) throw DimensionError("film modulation: row counts differ");
    Tensor<T> out = features;
    for (std::size_t r = 0; r < n; ++r) {
        const T* fr = features.data.data() + r * d;
        const T* rr = raw.data.data() + r * 2 * d;
        T* po = out.data.data() + r * d;
        for (std::size_t i = 0; i < d; ++i) po[i] = (T(1) + rr[i]) * fr[i] + rr[d + i];
    }
    return out;
}

// dL/draw given dL/df_hat: dgamma = g * f (raw half 1), dbeta = g (half 2).
template <typename T>
Tensor<T> modulate_backward_raw(const Tensor<T>& features, const Tensor<T>& upstream) {
    const std::size_t d = features.shape.back();
    const std::size_t n = features.size() / d;
    Tensor<T> draw({n, 2 * d});
    for (std::size_t r = 0; r < n; ++r) {
        const T* fr = features.data.data() + r * d;
        const T* gr = upstream.data.data() + r * d;
        T* dr = draw.data.data() + r * 2 * d;
        for (std::size_t i = 0; i < d; ++i) {
            dr[i] = gr[i] * fr[i];
            dr[d + i] = gr[i];
        }
    }
    return draw;
}

}  // namespace film_detail

}  // namespace geodiff
