#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "geodiff/errors.hpp"
#include "geodiff/film.hpp"
#include "geodiff/hsi.hpp"
#include "geodiff/nn.hpp"
#include "geodiff/rng.hpp"
#include "geodiff/tensor.hpp"

namespace geodiff {

// Sub-stream tags for component seeding. Every trained component draws its
// init from its own stream of the experiment seed, so the classifier starts
// with identical weights in both variants: a freshly constructed fused graph
// (identity modulation) then produces bit-identical logits to the plain one.
inline constexpr std::uint64_t kSeedTagClassifier = 0x636c6673ull;
inline constexpr std::uint64_t kSeedTagEncoder = 0x656e6373ull;
inline constexpr std::uint64_t kSeedTagRegressor = 0x72656773ull;
inline constexpr std::uint64_t kSeedTagSplit = 0x73706c74ull;

// The classifier's output layer starts at 3% of its seeded scale: fresh
// logits then sit near zero (initial loss ~ln C) and the short fixed-budget
// training spends its steps separating classes instead of unlearning the
// init's random confident predictions.
inline constexpr double kClassifierHeadScale = 0.03;

// Backbone features are z-scored per dimension with training statistics and
// then scaled to this stddev before they reach the modulation and classifier
// networks. With a fixed learning rate and a budget of a few dozen steps the
// input amplitude sets the effective step size; unit variance is too timid.
inline constexpr double kFeatureGain = 4.0;

// Two-layer pixel classifier over per-pixel feature vectors.
template <typename T>
struct PixelClassifier {
    nn::Mlp<T> net;  // d -> hidden (relu) -> classes (logits)

    static PixelClassifier seeded(std::size_t features, std::size_t hidden, std::size_t classes,
                                  Rng& rng) {
        PixelClassifier c;
        c.net.layers.push_back(nn::Dense<T>::seeded(features, hidden, nn::Activation::relu, rng));
        c.net.layers.push_back(nn::Dense<T>::seeded(hidden, classes, nn::Activation::identity, rng));
        for (T& v : c.net.layers.back().w.data) v *= T(kClassifierHeadScale);
        return c;
    }

    std::size_t feature_dim() const { return net.in_width(); }
    std::size_t classes() const { return net.out_width(); }
};

enum class Variant { geodiffnet, geodiffnet_f };
enum class Fusion { film, concat };

inline const char* to_string(Variant v) {
    return v == Variant::geodiffnet ? "geodiffnet" : "geodiffnet-f";
}

inline const char* to_string(Fusion f) { return f == Fusion::film ? "film" : "concat"; }

inline Variant variant_from(const std::string& name) {
    if (name == "geodiffnet") return Variant::geodiffnet;
    if (name == "geodiffnet-f" || name == "geodiffnet_f") return Variant::geodiffnet_f;
    throw ConfigError("unknown variant '" + name + "'");
}

inline Fusion fusion_from(const std::string& name) {
    if (name == "film") return Fusion::film;
    if (name == "concat") return Fusion::concat;
    throw ConfigError("unknown fusion mode '" + name + "'");
}

enum class Optimizer { sgd, adam };

inline const char* to_string(Optimizer o) { return o == Optimizer::sgd ? "sgd" : "adam"; }

inline Optimizer optimizer_from(const std::string& name) {
    if (name == "sgd") return Optimizer::sgd;
    if (name == "adam") return Optimizer::adam;
    throw ConfigError("unknown optimizer '" + name + "'");
}

struct TrainConfig {
    double learning_rate = 0.003;
    std::size_t batch_size = 64;
    std::size_t max_epochs = 10;
    std::size_t patience = 1000;       // iterations without a strictly better validation OA
    double validation_fraction = 0.1;  // carved from the train pixels, stratified by class
    Optimizer optimizer = Optimizer::sgd;
    std::uint64_t seed = 0;
    std::size_t classifier_hidden = 128;
    std::size_t encoder_hidden = 128;
    std::size_t embedding_dim = 64;
    std::size_t regressor_hidden = 128;
    Fusion fusion = Fusion::film;
};

enum class StopReason { epochs_exhausted, early_stopped };

struct TrainReport {
    std::vector<double> loss_trace;          // one entry per iteration
    std::vector<double> val_accuracy_trace;  // one entry per iteration
    double best_val_accuracy = 0.0;
    std::size_t best_iteration = 0;
    std::size_t iterations = 0;
    StopReason stop_reason = StopReason::epochs_exhausted;
};

namespace train_detail {

inline void check_labels(const std::vector<std::uint16_t>& labels, std::size_t classes, std::size_t rows) {
    if (labels.size() != rows) throw DimensionError("training: label count does not match feature rows");
    std::vector<bool> seen(classes + 1, false);
    for (std::uint16_t l : labels) {
        if (l == 0 || l > classes) throw DataError("training: class id out of range");
        seen[l] = true;
    }
    std::size_t present = 0;
    for (std::size_t c = 1; c <= classes; ++c) present += seen[c] ? 1 : 0;
    if (present < 2) throw DataError("training: fewer than two classes present");
}

// Seeded stratified split; roughly val_fraction per class, at least one
// validation pixel overall.
inline void split_train_val(const std::vector<std::uint16_t>& labels, std::size_t classes,
                            double val_fraction, Rng& rng, std::vector<std::size_t>& train_idx,
                            std::vector<std::size_t>& val_idx) {
    std::vector<std::vector<std::size_t>> per_class(classes);
    for (std::size_t i = 0; i < labels.size(); ++i) per_class[labels[i] - 1].push_back(i);
    train_idx.clear();
    val_idx.clear();
    std::size_t largest = 0;
    for (std::size_t c = 0; c < classes; ++c) {
        auto& ids = per_class[c];
        if (ids.size() > per_class[largest].size()) largest = c;
        rng.shuffle(ids.begin(), ids.end());
        const std::size_t take = std::size_t(double(ids.size()) * val_fraction);
        for (std::size_t i = 0; i < ids.size(); ++i)
            (i < take ? val_idx : train_idx).push_back(ids[i]);
    }
    if (val_idx.empty() && per_class[largest].size() > 1) {
        const std::size_t moved = per_class[largest].back();
        val_idx.push_back(moved);
        train_idx.erase(std::find(train_idx.begin(), train_idx.end(), moved));
    }
    std::sort(train_idx.begin(), train_idx.end());
    std::sort(val_idx.begin(), val_idx.end());
}

template <typename T>
Tensor<T> gather_rows(const Tensor<T>& m, const std::vector<std::size_t>& rows) {
    const std::size_t width = m.shape.back();
    Tensor<T> out({rows.size(), width});
    for (std::size_t r = 0; r < rows.size(); ++r)
        std::copy_n(m.data.data() + rows[r] * width, width, out.data.data() + r * width);
    return out;
}

template <typename T>
struct AdamState {
    std::vector<std::vector<double>> m, v;
    double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    std::size_t step = 0;

    void init(const std::vector<Tensor<T>*>& params) {
        m.clear();
        v.clear();
        for (const auto* p : params) {
            m.emplace_back(p->size(), 0.0);
            v.emplace_back(p->size(), 0.0);
        }
    }
};

// Generic minibatch loop shared by both variants. The callbacks close over
// the concrete model graph:
//   batch_loss(rows) -> loss, with gradients accumulated into grads
//   val_accuracy()   -> overall accuracy on the held-out rows
template <typename T, typename BatchLoss, typename ValAcc>
TrainReport run_loop(const TrainConfig& cfg, std::size_t train_rows,
                     const std::vector<std::size_t>& train_idx, std::vector<Tensor<T>*> params,
                     std::vector<Tensor<T>*> grads, BatchLoss&& batch_loss, ValAcc&& val_accuracy,
                     Rng& rng) {
    if (cfg.batch_size == 0) throw ConfigError("batch size must be positive");
    if (cfg.learning_rate <= 0) throw ConfigError("learning rate must be positive");
    (void)train_rows;

    TrainReport report;
    AdamState<T> adam;
    if (cfg.optimizer == Optimizer::adam) adam.init(params);

    std::vector<std::vector<T>> best_params;
    best_params.reserve(params.size());
    for (const auto* p : params) best_params.push_back(p->data);
    double best_val = -1.0;
    std::size_t best_iter = 0;

    std::vector<std::size_t> order = train_idx;
    bool stopped = false;
    for (std::size_t epoch = 0; epoch < cfg.max_epochs && !stopped; ++epoch) {
        rng.shuffle(order.begin(), order.end());
        for (std::size_t start = 0; start < order.size() && !stopped; start += cfg.batch_size) {
            const std::size_t end = std::min(start + cfg.batch_size, order.size());
            const std::vector<std::size_t> batch(order.begin() + std::ptrdiff_t(start),
                                                 order.begin() + std::ptrdiff_t(end));
            for (auto* g : grads) g->fill(T(0));
            const double loss = batch_loss(batch);
            ++report.iterations;
            if (!std::isfinite(loss))
                throw DivergenceError("training loss diverged at iteration " +
                                      std::to_string(report.iterations));

            if (cfg.optimizer == Optimizer::sgd) {
                for (std::size_t p = 0; p < params.size(); ++p) {
                    T* w = params[p]->data.data();
                    const T* g = grads[p]->data.data();
                    const std::size_t n = params[p]->size();
                    for (std::size_t i = 0; i < n; ++i) w[i] -= T(cfg.learning_rate) * g[i];
                }
            } else {
                ++adam.step;
                const double c1 = 1.0 - std::pow(adam.b1, double(adam.step));
                const double c2 = 1.0 - std::pow(adam.b2, double(adam.step));
                for (std::size_t p = 0; p < params.size(); ++p) {
                    T* w = params[p]->data.data();
                    const T* g = grads[p]->data.data();
                    const std::size_t n = params[p]->size();
                    for (std::size_t i = 0; i < n; ++i) {
                        adam.m[p][i] = adam.b1 * adam.m[p][i] + (1 - adam.b1) * double(g[i]);
                        adam.v[p][i] = adam.b2 * adam.v[p][i] + (1 - adam.b2) * double(g[i]) * double(g[i]);
                        const double mh = adam.m[p][i] / c1, vh = adam.v[p][i] / c2;
                        w[i] -= T(cfg.learning_rate * mh / (std::sqrt(vh) + adam.eps));
                    }
                }
            }

            const double val = val_accuracy();
            report.loss_trace.push_back(loss);
            report.val_accuracy_trace.push_back(val);
            if (val > best_val) {
                best_val = val;
                best_iter = report.iterations;
                for (std::size_t p = 0; p < params.size(); ++p) best_params[p] = params[p]->data;
            } else if (report.iterations - best_iter >= cfg.patience) {
                report.stop_reason = StopReason::early_stopped;
                stopped = true;
            }
        }
    }
    if (!stopped) report.stop_reason = StopReason::epochs_exhausted;

    // hand back the weights from the best-validation iteration
    for (std::size_t p = 0; p < params.size(); ++p) params[p]->data = best_params[p];
    report.best_val_accuracy = best_val;
    report.best_iteration = best_iter;
    return report;
}

template <typename T>
std::vector<std::uint16_t> argmax_rows(const Tensor<T>& logits) {
    const std::size_t classes = logits.shape.back();
    const std::size_t n = logits.size() / classes;
    std::vector<std::uint16_t> ids(n);
    for (std::size_t r = 0; r < n; ++r) {
        const T* row = logits.data.data() + r * classes;
        std::size_t arg = 0;
        for (std::size_t c = 1; c < classes; ++c)
            if (row[c] > row[arg]) arg = c;  // ties keep the lowest class id
        ids[r] = std::uint16_t(arg + 1);
    }
    return ids;
}

template <typename T>
double accuracy_against(const Tensor<T>& logits, const std::vector<std::uint16_t>& labels,
                        const std::vector<std::size_t>& rows_src,
                        const std::vector<std::uint16_t>& ids) {
    if (ids.empty()) return 0.0;
    std::size_t hit = 0;
    for (std::size_t i = 0; i < ids.size(); ++i) hit += ids[i] == labels[rows_src[i]] ? 1 : 0;
    (void)logits;
    return double(hit) / double(ids.size());
}

}  // namespace train_detail

// ---------------------------------------------------------------------------
// Prediction
// ---------------------------------------------------------------------------

template <typename T>
struct Prediction {
    std::vector<std::uint16_t> ids;  // 1-based class ids
    Tensor<T> logits;                // n x classes
};

/// Plain variant: classifier over raw feature rows. Ties resolve to the
// lowest class id.
template <typename T>
Prediction<T> predict_pixels(const PixelClassifier<T>& clf, const Tensor<T>& features) {
    Prediction<T> p;
    p.logits = clf.net.forward(features);
    p.ids = train_detail::argmax_rows(p.logits);
    return p;
}

// Fused variant: features modulated by the spectrum-conditioned parameters
// before classification. Spectra are expected already z-scored.
template <typename T>
Prediction<T> predict_pixels_f(const SpectralEncoder<T>& enc, const FilmRegressor<T>& reg,
                               const PixelClassifier<T>& clf, const Tensor<T>& features,
                               const Tensor<T>& spectra) {
    const std::size_t d = features.shape.back();
    if (features.size() / d != spectra.size() / spectra.shape.back())
        throw DimensionError("fused prediction: feature and spectrum row counts differ");
    const Tensor<T> raw = reg.net.forward(enc.forward(spectra));
    const Tensor<T> fused = film_detail::modulate_rows(features, raw);
    return predict_pixels(clf, fused);
}

// ---------------------------------------------------------------------------
// Training entry points
// ---------------------------------------------------------------------------

template <typename T>
struct PlainTrainResult {
    PixelClassifier<T> classifier;
    TrainReport report;
};

// Trains the plain variant on per-pixel features. Labels are 1-based class
// ids aligned with the feature rows.
template <typename T>
PlainTrainResult<T> train_geodiffnet(const Tensor<T>& features, const std::vector<std::uint16_t>& labels,
                                     std::size_t classes, const TrainConfig& cfg) {
    using namespace train_detail;
    const std::size_t d = features.shape.back();
    const std::size_t rows = features.size() / d;
    check_labels(labels, classes, rows);
    if (!features.all_finite()) throw DataError("training: non-finite feature values");

    Rng clf_rng(Rng::mix(cfg.seed, kSeedTagClassifier));
    PlainTrainResult<T> out;
    out.classifier = PixelClassifier<T>::seeded(d, cfg.classifier_hidden, classes, clf_rng);

    Rng rng(Rng::mix(cfg.seed, kSeedTagSplit));
    std::vector<std::size_t> train_idx, val_idx;
    split_train_val(labels, classes, cfg.validation_fraction, rng, train_idx, val_idx);

    nn::GradTape<T> tape = nn::GradTape<T>::like(out.classifier.net.layers);
    std::vector<Tensor<T>*> params = out.classifier.net.parameters();
    std::vector<Tensor<T>*> grads;
    for (std::size_t i = 0; i < out.classifier.net.layers.size(); ++i) {
        grads.push_back(&tape.dw[i]);
        grads.push_back(&tape.db[i]);
    }

    const Tensor<T> val_feat = gather_rows(features, val_idx);

    auto batch_loss = [&](const std::vector<std::size_t>& batch) {
        const Tensor<T> x = gather_rows(features, batch);
        std::vector<std::size_t> y(batch.size());
        for (std::size_t i = 0; i < batch.size(); ++i) y[i] = std::size_t(labels[batch[i]]) - 1;
        nn::MlpCache<T> cache;
        const Tensor<T> logits = out.classifier.net.forward_cached(x, cache);
        Tensor<T> dlogits;
        const T loss = nn::softmax_xent(logits, y, &dlogits);
        out.classifier.net.backward(cache, dlogits, tape);
        return double(loss);
    };
    auto val_acc = [&]() {
        if (val_idx.empty()) return 0.0;
        const Tensor<T> logits = out.classifier.net.forward(val_feat);
        return accuracy_against(logits, labels, val_idx, argmax_rows(logits));
    };
    out.report = run_loop<T>(cfg, rows, train_idx, params, grads, batch_loss, val_acc, rng);
    return out;
}

template <typename T>
struct FusedTrainResult {
    SpectralEncoder<T> encoder;
    FilmRegressor<T> regressor;
    PixelClassifier<T> classifier;
    TrainReport report;
};

// Trains the fused variant jointly: spectral encoder, modulation regressor
// and classifier. Spectra must be z-scored and row-aligned with features.
// With fusion = concat the encoder/regressor stay untouched and the
// classifier reads the concatenation of feature and spectrum instead.
template <typename T>
FusedTrainResult<T> train_geodiffnet_f(const Tensor<T>& features, const Tensor<T>& spectra,
                                       const std::vector<std::uint16_t>& labels, std::size_t classes,
                                       const TrainConfig& cfg) {
    using namespace train_detail;
    const std::size_t d = features.shape.back();
    const std::size_t rows = features.size() / d;
    const std::size_t bands = spectra.shape.back();
    if (spectra.size() / bands != rows)
        throw DimensionError("training: spectrum rows do not match feature rows");
    check_labels(labels, classes, rows);
    if (!features.all_finite() || !spectra.all_finite())
        throw DataError("training: non-finite input values");

    Rng enc_rng(Rng::mix(cfg.seed, kSeedTagEncoder));
    Rng reg_rng(Rng::mix(cfg.seed, kSeedTagRegressor));
    Rng clf_rng(Rng::mix(cfg.seed, kSeedTagClassifier));
    FusedTrainResult<T> out{
        SpectralEncoder<T>::seeded(bands, cfg.encoder_hidden, cfg.embedding_dim, enc_rng),
        FilmRegressor<T>::seeded(cfg.embedding_dim, cfg.regressor_hidden, d, reg_rng),
        PixelClassifier<T>(),
        {}};
    const std::size_t clf_in = cfg.fusion == Fusion::concat ? d + bands : d;
    out.classifier = PixelClassifier<T>::seeded(clf_in, cfg.classifier_hidden, classes, clf_rng);

    Rng rng(Rng::mix(cfg.seed, kSeedTagSplit));
    std::vector<std::size_t> train_idx, val_idx;
    split_train_val(labels, classes, cfg.validation_fraction, rng, train_idx, val_idx);

    nn::GradTape<T> enc_tape = nn::GradTape<T>::like(out.encoder.net.layers);
    nn::GradTape<T> reg_tape = nn::GradTape<T>::like(out.regressor.net.layers);
    nn::GradTape<T> clf_tape = nn::GradTape<T>::like(out.classifier.net.layers);

    std::vector<Tensor<T>*> params;
    std::vector<Tensor<T>*> grads;
    const bool film = cfg.fusion == Fusion::film;
    if (film) {
        for (auto* p : out.encoder.net.parameters()) params.push_back(p);
        for (std::size_t i = 0; i < out.encoder.net.layers.size(); ++i) {
            grads.push_back(&enc_tape.dw[i]);
            grads.push_back(&enc_tape.db[i]);
        }
        for (auto* p : out.regressor.net.parameters()) params.push_back(p);
        for (std::size_t i = 0; i < out.regressor.net.layers.size(); ++i) {
            grads.push_back(&reg_tape.dw[i]);
            grads.push_back(&reg_tape.db[i]);
        }
    }
    for (auto* p : out.classifier.net.parameters()) params.push_back(p);
    for (std::size_t i = 0; i < out.classifier.net.layers.size(); ++i) {
        grads.push_back(&clf_tape.dw[i]);
        grads.push_back(&clf_tape.db[i]);
    }

    const auto fuse_rows = [&](const std::vector<std::size_t>& rows_sel, Tensor<T>* f_out,
                               Tensor<T>* s_out) {
        *f_out = gather_rows(features, rows_sel);
        *s_out = gather_rows(spectra, rows_sel);
    };

    const auto forward_infer = [&](const Tensor<T>& f, const Tensor<T>& s) {
        if (!film) {
            Tensor<T> joined({f.size() / d, d + bands});
            const std::size_t n = f.size() / d;
            for (std::size_t r = 0; r < n; ++r) {
                std::copy_n(f.data.data() + r * d, d, joined.data.data() + r * (d + bands));
                std::copy_n(s.data.data() + r * bands, bands, joined.data.data() + r * (d + bands) + d);
            }
            return out.classifier.net.forward(joined);
        }
        const Tensor<T> raw = out.regressor.net.forward(out.encoder.net.forward(s));
        return out.classifier.net.forward(film_detail::modulate_rows(f, raw));
    };

    Tensor<T> val_feat, val_spec;
    fuse_rows(val_idx, &val_feat, &val_spec);

    auto batch_loss = [&](const std::vector<std::size_t>& batch) {
        Tensor<T> f, s;
        fuse_rows(batch, &f, &s);
        std::vector<std::size_t> y(batch.size());
        for (std::size_t i = 0; i < batch.size(); ++i) y[i] = std::size_t(labels[batch[i]]) - 1;

        nn::MlpCache<T> clf_cache;
        Tensor<T> dlogits;
        double loss;
        if (film) {
            nn::MlpCache<T> enc_cache, reg_cache;
            const Tensor<T> emb = out.encoder.net.forward_cached(s, enc_cache);
            const Tensor<T> raw = out.regressor.net.forward_cached(emb, reg_cache);
            const Tensor<T> fused = film_detail::modulate_rows(f, raw);
            const Tensor<T> logits = out.classifier.net.forward_cached(fused, clf_cache);
            loss = double(nn::softmax_xent(logits, y, &dlogits));
            const Tensor<T> dfused = out.classifier.net.backward(clf_cache, dlogits, clf_tape);
            const Tensor<T> draw = film_detail::modulate_backward_raw(f, dfused);
            const Tensor<T> demb = out.regressor.net.backward(reg_cache, draw, reg_tape);
            out.encoder.net.backward(enc_cache, demb, enc_tape);
        } else {
            const std::size_t n = batch.size();
            Tensor<T> joined({n, d + bands});
            for (std::size_t r = 0; r < n; ++r) {
                std::copy_n(f.data.data() + r * d, d, joined.data.data() + r * (d + bands));
                std::copy_n(s.data.data() + r * bands, bands, joined.data.data() + r * (d + bands) + d);
            }
            const Tensor<T> logits = out.classifier.net.forward_cached(joined, clf_cache);
            loss = double(nn::softmax_xent(logits, y, &dlogits));
            out.classifier.net.backward(clf_cache, dlogits, clf_tape);
        }
        return loss;
    };
    auto val_acc = [&]() {
        if (val_idx.empty()) return 0.0;
        const Tensor<T> logits = forward_infer(val_feat, val_spec);
        return accuracy_against(logits, labels, val_idx, argmax_rows(logits));
    };

    out.report = run_loop<T>(cfg, rows, train_idx, params, grads, batch_loss, val_acc, rng);
    return out;
}

}  // namespace geodiff
