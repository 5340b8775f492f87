#pragma once

#include <cstdint>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "geodiff/classifier.hpp"
#include "geodiff/errors.hpp"
#include "geodiff/film.hpp"
#include "geodiff/hsi.hpp"
#include "geodiff/io_binary.hpp"
#include "geodiff/tensor_file.hpp"

namespace geodiff {

// Per-column mean/stddev of an n x width row matrix; degenerate columns get
// stddev 1 so standardization maps them to zero, matching compute_band_stats.
template <typename T>
inline BandStats column_stats(const Tensor<T>& rows, std::size_t width) {
    if (width == 0 || rows.size() == 0 || rows.size() % width != 0)
        throw DimensionError("column statistics need a non-empty n x width matrix");
    const std::size_t n = rows.size() / width;
    BandStats st;
    st.mean.assign(width, 0.0f);
    st.stddev.assign(width, 0.0f);
    for (std::size_t c = 0; c < width; ++c) {
        double m = 0;
        for (std::size_t r = 0; r < n; ++r) m += double(rows.data[r * width + c]);
        m /= double(n);
        double var = 0;
        for (std::size_t r = 0; r < n; ++r) {
            const double d = double(rows.data[r * width + c]) - m;
            var += d * d;
        }
        var /= double(n);
        st.mean[c] = float(m);
        st.stddev[c] = var > 1e-24 ? float(std::sqrt(var)) : 1.0f;
    }
    return st;
}

// Z-scores each row of an n x width matrix in place with the given statistics.
template <typename T>
inline void standardize_rows(const BandStats& st, Tensor<T>& rows, std::size_t width) {
    if (st.mean.size() != width) throw DimensionError("statistics width mismatch");
    const std::size_t n = rows.size() / width;
    for (std::size_t r = 0; r < n; ++r) {
        T* row = rows.data.data() + r * width;
        for (std::size_t c = 0; c < width; ++c)
            row[c] = T((double(row[c]) - double(st.mean[c])) / double(st.stddev[c]));
    }
}

// Trained pixel model: classifier plus, for the fused variant, the spectral
// encoder/regressor. Carries the z-score statistics of the training spectra
// (fused only) and of the training features (both variants); the classifier
// and the modulation networks always see standardized inputs.
//
// GDNF checkpoint file (little-endian):
//   magic "GDNF" | variant u32 (0 plain, 1 fused) | fusion u32 (0 film,
//   1 concat) | d u32 | bands u32 | classes u32 | enc hidden u32 |
//   embedding u32 | reg hidden u32 | clf hidden u32 | backbone hash u64 |
//   bands f32 means | bands f32 stddevs | d f32 means | d f32 stddevs |
//   tensor count u32 | named tensors
template <typename T = float>
struct PixelModel {
    Variant variant = Variant::geodiffnet;
    Fusion fusion = Fusion::film;
    std::size_t feature_dim = 0;
    std::size_t bands = 0;
    std::size_t classes = 0;
    std::uint64_t backbone_hash = 0;
    BandStats stats;          // spectral statistics; empty for the plain variant
    BandStats feature_stats;  // backbone feature statistics, both variants
    std::optional<SpectralEncoder<T>> encoder;
    std::optional<FilmRegressor<T>> regressor;
    PixelClassifier<T> classifier;

    // Z-scores raw spectra rows with the stored training statistics.
    Tensor<T> standardize(const Tensor<T>& spectra) const {
        if (stats.empty()) throw StateError("model carries no spectral statistics");
        if (spectra.shape.back() != bands)
            throw DimensionError("spectrum width does not match the model");
        Tensor<T> out = spectra;
        standardize_rows(stats, out, bands);
        return out;
    }

    // Z-scores raw backbone feature rows with the stored training statistics.
    Tensor<T> standardize_features(const Tensor<T>& features) const {
        if (feature_stats.empty()) throw StateError("model carries no feature statistics");
        if (features.shape.back() != feature_dim)
            throw DimensionError("feature width does not match the model");
        Tensor<T> out = features;
        standardize_rows(feature_stats, out, feature_dim);
        return out;
    }

    // features: n x d raw backbone features; spectra: n x bands raw values
    // (ignored by the plain variant).
    Prediction<T> predict(const Tensor<T>& features, const Tensor<T>* spectra) const {
        const Tensor<T> f = standardize_features(features);
        if (variant == Variant::geodiffnet) return predict_pixels(classifier, f);
        if (!spectra) throw StateError("fused model needs spectra for prediction");
        const Tensor<T> z = standardize(*spectra);
        if (fusion == Fusion::film) return predict_pixels_f(*encoder, *regressor, classifier, f, z);
        const std::size_t d = feature_dim, n = f.size() / d;
        Tensor<T> joined({n, d + bands});
        for (std::size_t r = 0; r < n; ++r) {
            std::copy_n(f.data.data() + r * d, d, joined.data.data() + r * (d + bands));
            std::copy_n(z.data.data() + r * bands, bands, joined.data.data() + r * (d + bands) + d);
        }
        return predict_pixels(classifier, joined);
    }

    std::vector<std::pair<std::string, const Tensor<T>*>> named_parameters() const {
        std::vector<std::pair<std::string, const Tensor<T>*>> out;
        const auto mlp = [&](const std::string& prefix, const nn::Mlp<T>& net) {
            for (std::size_t i = 0; i < net.layers.size(); ++i) {
                out.emplace_back(prefix + ".fc" + std::to_string(i + 1) + ".w", &net.layers[i].w);
                out.emplace_back(prefix + ".fc" + std::to_string(i + 1) + ".b", &net.layers[i].b);
            }
        };
        if (encoder) mlp("encoder", encoder->net);
        if (regressor) mlp("regressor", regressor->net);
        mlp("classifier", classifier.net);
        return out;
    }
};

template <typename T>
void save_checkpoint(const std::string& path, const PixelModel<T>& model) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw FormatError("cannot open '" + path + "' for writing");
    os.write("GDNF", 4);
    io::write_u32(os, model.variant == Variant::geodiffnet ? 0u : 1u);
    io::write_u32(os, model.fusion == Fusion::film ? 0u : 1u);
    io::write_u32(os, std::uint32_t(model.feature_dim));
    io::write_u32(os, std::uint32_t(model.bands));
    io::write_u32(os, std::uint32_t(model.classes));
    const std::size_t enc_hidden = model.encoder ? model.encoder->net.layers[0].out_width() : 0;
    const std::size_t embedding = model.encoder ? model.encoder->net.layers[1].out_width() : 0;
    const std::size_t reg_hidden = model.regressor ? model.regressor->net.layers[0].out_width() : 0;
    io::write_u32(os, std::uint32_t(enc_hidden));
    io::write_u32(os, std::uint32_t(embedding));
    io::write_u32(os, std::uint32_t(reg_hidden));
    io::write_u32(os, std::uint32_t(model.classifier.net.layers[0].out_width()));
    io::write_u64(os, model.backbone_hash);
    for (std::size_t b = 0; b < model.bands; ++b)
        io::write_f32(os, model.stats.empty() ? 0.0f : model.stats.mean[b]);
    for (std::size_t b = 0; b < model.bands; ++b)
        io::write_f32(os, model.stats.empty() ? 1.0f : model.stats.stddev[b]);
    if (!model.feature_stats.empty() && model.feature_stats.mean.size() != model.feature_dim)
        throw StateError("feature statistics width does not match the model");
    for (std::size_t c = 0; c < model.feature_dim; ++c)
        io::write_f32(os, model.feature_stats.empty() ? 0.0f : model.feature_stats.mean[c]);
    for (std::size_t c = 0; c < model.feature_dim; ++c)
        io::write_f32(os, model.feature_stats.empty() ? 1.0f : model.feature_stats.stddev[c]);
    const auto params = model.named_parameters();
    io::write_u32(os, std::uint32_t(params.size()));
    for (const auto& [name, tensor] : params) io::write_named_tensor(os, name, *tensor);
    if (!os) throw FormatError("short write to '" + path + "'");
}

template <typename T = float>
PixelModel<T> load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("cannot open '" + path + "'");
    io::Reader r{is, 0, path};
    r.expect_magic("GDNF");
    PixelModel<T> model;
    model.variant = r.u32("variant") == 0 ? Variant::geodiffnet : Variant::geodiffnet_f;
    model.fusion = r.u32("fusion") == 0 ? Fusion::film : Fusion::concat;
    model.feature_dim = r.u32("feature dim");
    model.bands = r.u32("bands");
    model.classes = r.u32("classes");
    const std::size_t enc_hidden = r.u32("encoder hidden");
    const std::size_t embedding = r.u32("embedding dim");
    const std::size_t reg_hidden = r.u32("regressor hidden");
    const std::size_t clf_hidden = r.u32("classifier hidden");
    model.backbone_hash = r.u64("backbone hash");
    model.stats.mean.resize(model.bands);
    model.stats.stddev.resize(model.bands);
    for (auto& v : model.stats.mean) v = r.f32("band mean");
    for (auto& v : model.stats.stddev) v = r.f32("band stddev");
    if (model.variant == Variant::geodiffnet) model.stats = BandStats{};
    model.feature_stats.mean.resize(model.feature_dim);
    model.feature_stats.stddev.resize(model.feature_dim);
    for (auto& v : model.feature_stats.mean) v = r.f32("feature mean");
    for (auto& v : model.feature_stats.stddev) v = r.f32("feature stddev");

    const bool fused_film = model.variant == Variant::geodiffnet_f && model.fusion == Fusion::film;
    if (fused_film) {
        Rng dummy(0);
        model.encoder = SpectralEncoder<T>::seeded(model.bands, enc_hidden, embedding, dummy);
        model.regressor = FilmRegressor<T>::seeded(embedding, reg_hidden, model.feature_dim, dummy);
    }
    const std::size_t clf_in = model.variant == Variant::geodiffnet_f && model.fusion == Fusion::concat
                                   ? model.feature_dim + model.bands
                                   : model.feature_dim;
    {
        Rng dummy(0);
        model.classifier = PixelClassifier<T>::seeded(clf_in, clf_hidden, model.classes, dummy);
    }

    std::vector<std::pair<std::string, Tensor<T>*>> slots;
    const auto mlp = [&](const std::string& prefix, nn::Mlp<T>& net) {
        for (std::size_t i = 0; i < net.layers.size(); ++i) {
            slots.emplace_back(prefix + ".fc" + std::to_string(i + 1) + ".w", &net.layers[i].w);
            slots.emplace_back(prefix + ".fc" + std::to_string(i + 1) + ".b", &net.layers[i].b);
        }
    };
    if (model.encoder) mlp("encoder", model.encoder->net);
    if (model.regressor) mlp("regressor", model.regressor->net);
    mlp("classifier", model.classifier.net);

    const std::uint32_t count = r.u32("tensor count");
    if (count != slots.size())
        throw FormatError(path + ": tensor count " + std::to_string(count) + " does not match " +
                          std::to_string(slots.size()));
    for (std::uint32_t i = 0; i < count; ++i) {
        auto [name, tensor] = io::read_named_tensor<T>(r);
        if (name != slots[i].first)
            throw FormatError(path + ": unexpected tensor '" + name + "' (wanted '" + slots[i].first +
                              "')");
        if (tensor.shape != slots[i].second->shape)
            throw FormatError(path + ": shape mismatch for tensor '" + name + "'");
        slots[i].second->data = std::move(tensor.data);
    }
    r.expect_eof();
    return model;
}

}  // namespace geodiff
