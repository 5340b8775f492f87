#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "geodiff/checkpoint.hpp"
#include "geodiff/config.hpp"
#include "geodiff/infer.hpp"
#include "geodiff/kmeans.hpp"
#include "geodiff/metrics.hpp"
#include "geodiff/render.hpp"

namespace geodiff {

// Assigns every source pixel to the covering patch whose centre is nearest in
// Chebyshev distance; ties go to the earliest origin in plan order. Training
// features are read from this patch so a pixel's feature rows are reproducible
// regardless of how many patches overlap it.
inline std::vector<std::size_t> assign_pixels_to_patches(const TilePlan& plan) {
    std::vector<std::size_t> owner(plan.src_h * plan.src_w, std::size_t(-1));
    std::vector<double> best(plan.src_h * plan.src_w, std::numeric_limits<double>::infinity());
    const double half = (double(plan.patch) - 1.0) / 2.0;
    for (std::size_t oi = 0; oi < plan.origins.size(); ++oi) {
        const auto [orow, ocol] = plan.origins[oi];
        const double cr = double(orow) + half, cc = double(ocol) + half;
        const std::size_t rend = std::min(orow + plan.patch, plan.src_h);
        const std::size_t cend = std::min(ocol + plan.patch, plan.src_w);
        for (std::size_t r = orow; r < rend; ++r) {
            for (std::size_t c = ocol; c < cend; ++c) {
                const double d = std::max(std::abs(double(r) - cr), std::abs(double(c) - cc));
                const std::size_t px = r * plan.src_w + c;
                if (d < best[px]) {
                    best[px] = d;
                    owner[px] = oi;
                }
            }
        }
    }
    return owner;
}

// Feature rows for every labeled training pixel, one per requested decoder
// layer, plus the matching raw spectra and class ids.
template <typename T>
struct TrainingSet {
    std::vector<std::uint16_t> labels;
    std::vector<std::size_t> pixel_ids;  // row-major source pixel indices
    Tensor<T> spectra;                   // n x bands, raw values
    std::map<int, Tensor<T>> features;   // layer -> n x d_layer
};

template <typename T>
TrainingSet<T> collect_training_set(const FrozenUNet<T>& net, const NoiseSchedule& sched,
                                    std::size_t t, const std::vector<int>& layers,
                                    const RgbImage& rgb, const HsiCube& cube,
                                    const LabelMap& train_labels, const TilePlan& plan,
                                    std::uint64_t seed) {
    if (train_labels.h != plan.src_h || train_labels.w != plan.src_w)
        throw DimensionError("training labels do not match the tile plan extent");
    if (cube.h != plan.src_h || cube.w != plan.src_w)
        throw DimensionError("cube does not match the tile plan extent");

    const auto owner = assign_pixels_to_patches(plan);
    std::map<std::size_t, std::vector<std::size_t>> by_origin;  // origin -> pixel ids
    for (std::size_t px = 0; px < train_labels.labels.size(); ++px)
        if (train_labels.labels[px] != 0) by_origin[owner[px]].push_back(px);
    if (by_origin.empty()) throw DataError("no labeled training pixels");

    std::size_t n = 0;
    for (const auto& [oi, pixels] : by_origin) n += pixels.size();

    TrainingSet<T> set;
    set.labels.reserve(n);
    set.pixel_ids.reserve(n);
    set.spectra = Tensor<T>({n, cube.bands});
    for (int layer : layers) set.features.emplace(layer, Tensor<T>({n, 0}));

    std::size_t row = 0;
    for (const auto& [oi, pixels] : by_origin) {
        const auto [orow, ocol] = plan.origins[oi];
        const Tensor<T> patch = extract_patch<T>(rgb, orow, ocol, plan);
        Rng rng(Rng::mix(seed, oi, t));
        auto maps = extract_feature_layers(net, patch, t, layers, sched, rng);
        for (auto& [layer, fm] : maps) {
            Tensor<T>& dst = set.features.at(layer);
            if (dst.shape[1] == 0) {
                dst = Tensor<T>({n, fm.d});
            } else if (dst.shape[1] != fm.d) {
                throw DimensionError("feature width changed between patches");
            }
        }
        for (std::size_t px : pixels) {
            const std::size_t r = px / plan.src_w, c = px % plan.src_w;
            set.labels.push_back(train_labels.labels[px]);
            set.pixel_ids.push_back(px);
            for (std::size_t b = 0; b < cube.bands; ++b)
                set.spectra.at(row, b) = T(cube.data[px * cube.bands + b]);
            for (auto& [layer, fm] : maps) {
                const T* src = fm.row(r - orow, c - ocol);
                Tensor<T>& dst = set.features.at(layer);
                std::copy_n(src, fm.d, dst.data.data() + row * fm.d);
            }
            ++row;
        }
    }
    return set;
}

template <typename T = float>
struct ExperimentResult {
    PixelModel<T> model;
    TrainReport report;
    LabelMap predicted;
    ConfusionMatrix matrix{1};
    MetricsSummary metrics;
};

namespace harness_detail {

inline std::string fmt6(double v) {
    if (std::isnan(v)) return "nan";
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return std::string(buf);
}

inline std::string hex16(std::uint64_t v) {
    char buf[20];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return std::string(buf);
}

inline void write_text(const std::string& path, const std::string& body) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw FormatError("cannot open '" + path + "' for writing");
    os << body;
    if (!os) throw FormatError("short write to '" + path + "'");
}

inline std::string metrics_text(const MetricsSummary& s) {
    std::ostringstream os;
    os << "oa " << fmt6(s.oa) << "\n";
    os << "aa " << fmt6(s.aa) << "\n";
    os << "kappa " << fmt6(s.kappa) << "\n";
    os << "mean_iou " << fmt6(s.mean_iou) << "\n";
    os << "mean_f1 " << fmt6(s.mean_f1) << "\n";
    for (std::size_t k = 0; k < s.recall.size(); ++k)
        os << "recall_" << (k + 1) << " " << (s.recall[k] ? fmt6(*s.recall[k]) : "nan") << "\n";
    return os.str();
}

inline std::string metrics_csv(const MetricsSummary& s) {
    std::ostringstream os;
    os << "metric,value\n";
    os << "oa," << fmt6(s.oa) << "\n";
    os << "aa," << fmt6(s.aa) << "\n";
    os << "kappa," << fmt6(s.kappa) << "\n";
    os << "mean_iou," << fmt6(s.mean_iou) << "\n";
    os << "mean_f1," << fmt6(s.mean_f1) << "\n";
    for (std::size_t k = 0; k < s.recall.size(); ++k)
        os << "recall_" << (k + 1) << "," << (s.recall[k] ? fmt6(*s.recall[k]) : "nan") << "\n";
    return os.str();
}

inline std::string train_log_text(const TrainReport& rep) {
    std::ostringstream os;
    os << "iteration loss val_oa\n";
    for (std::size_t i = 0; i < rep.loss_trace.size(); ++i)
        os << (i + 1) << " " << fmt6(rep.loss_trace[i]) << " " << fmt6(rep.val_accuracy_trace[i])
           << "\n";
    os << "stop_reason "
       << (rep.stop_reason == StopReason::early_stopped ? "early_stopped" : "epochs_exhausted")
       << "\n";
    os << "best_iteration " << rep.best_iteration << "\n";
    os << "best_val_accuracy " << fmt6(rep.best_val_accuracy) << "\n";
    return os.str();
}

inline std::uint64_t digest_cube(const HsiCube& cube) {
    std::uint64_t h = io::fnv1a(&cube.h, sizeof cube.h);
    h = io::fnv1a(&cube.w, sizeof cube.w, h);
    h = io::fnv1a(&cube.bands, sizeof cube.bands, h);
    return io::fnv1a(cube.data.data(), cube.data.size() * sizeof(float), h);
}

inline std::uint64_t digest_labels(const LabelMap& m) {
    std::uint64_t h = io::fnv1a(&m.h, sizeof m.h);
    h = io::fnv1a(&m.w, sizeof m.w, h);
    h = io::fnv1a(&m.classes, sizeof m.classes, h);
    return io::fnv1a(m.labels.data(), m.labels.size() * sizeof(std::uint16_t), h);
}

}  // namespace harness_detail

// Trains one (variant, layer, timestep) cell from pre-collected feature rows.
template <typename T>
ExperimentResult<T> train_cell(const ExperimentConfig& cfg, const TrainingSet<T>& set, int layer,
                               const HsiCube& cube, std::size_t classes,
                               std::uint64_t backbone_checksum) {
    TrainConfig tc = cfg.training;
    tc.seed = cfg.seed;
    tc.fusion = cfg.fusion;

    ExperimentResult<T> out;
    out.model.variant = cfg.variant;
    out.model.fusion = cfg.fusion;
    out.model.feature_dim = set.features.at(layer).shape[1];
    out.model.bands = cube.bands;
    out.model.classes = classes;
    out.model.backbone_hash = backbone_checksum;

    // Classifier inputs are z-scored per feature dimension with training
    // statistics, then scaled to stddev kFeatureGain; the combined scale is
    // folded into the stored statistics so inference applies the identical
    // transform.
    out.model.feature_stats = column_stats(set.features.at(layer), out.model.feature_dim);
    for (float& s : out.model.feature_stats.stddev) s /= float(kFeatureGain);
    Tensor<T> f = set.features.at(layer);
    standardize_rows(out.model.feature_stats, f, out.model.feature_dim);

    if (cfg.variant == Variant::geodiffnet) {
        auto trained = train_geodiffnet(f, set.labels, classes, tc);
        out.model.classifier = std::move(trained.classifier);
        out.report = std::move(trained.report);
        return out;
    }

    out.model.stats = compute_band_stats(cube, set.pixel_ids);
    Tensor<T> z = set.spectra;
    standardize_rows(out.model.stats, z, cube.bands);
    auto trained = train_geodiffnet_f(f, z, set.labels, classes, tc);
    if (cfg.fusion == Fusion::film) {
        out.model.encoder = std::move(trained.encoder);
        out.model.regressor = std::move(trained.regressor);
    }
    out.model.classifier = std::move(trained.classifier);
    out.report = std::move(trained.report);
    return out;
}

// Writes the artifact set for one finished experiment into `dir`.
template <typename T>
void write_experiment_artifacts(const std::string& dir, const ExperimentConfig& cfg,
                                const ExperimentResult<T>& res, const HsiCube& cube,
                                const LabelMap& train_labels, const LabelMap& test_labels,
                                std::size_t train_pixels) {
    namespace fs = std::filesystem;
    using harness_detail::fmt6;
    using harness_detail::hex16;
    fs::create_directories(dir);
    const std::string base = dir.empty() ? std::string() : dir + "/";

    save_checkpoint(base + "checkpoint.gdnf", res.model);
    save_labels(base + "predicted.lblm", res.predicted);
    render_labels(base + "predicted.ppm", res.predicted);
    harness_detail::write_text(base + "metrics.txt", harness_detail::metrics_text(res.metrics));
    harness_detail::write_text(base + "metrics.csv", harness_detail::metrics_csv(res.metrics));
    harness_detail::write_text(base + "train_log.txt", harness_detail::train_log_text(res.report));

    std::ostringstream man;
    man << "config_hash " << hex16(cfg.hash()) << "\n";
    man << "backbone_checksum " << hex16(res.model.backbone_hash) << "\n";
    man << "cube_digest " << hex16(harness_detail::digest_cube(cube)) << "\n";
    man << "train_labels_digest " << hex16(harness_detail::digest_labels(train_labels)) << "\n";
    man << "test_labels_digest " << hex16(harness_detail::digest_labels(test_labels)) << "\n";
    man << "train_pixels " << train_pixels << "\n";
    man << "iterations " << res.report.iterations << "\n";
    man << "best_iteration " << res.report.best_iteration << "\n";
    man << "best_val_accuracy " << fmt6(res.report.best_val_accuracy) << "\n";
    man << "artifacts checkpoint.gdnf predicted.lblm predicted.ppm metrics.txt metrics.csv"
        << " train_log.txt\n";
    man << "--- config ---\n";
    man << cfg.canonical_text();
    harness_detail::write_text(base + "manifest.txt", man.str());
}

// End-to-end run: collect training features, fit the pixel model, classify
// the scene, evaluate against held-out labels, and (optionally) write the
// artifact set into out_dir.
template <typename T = float>
ExperimentResult<T> run_experiment(const ExperimentConfig& cfg, const FrozenUNet<T>& net,
                                   const NoiseSchedule& sched, const HsiCube& cube,
                                   const LabelMap& train_labels, const LabelMap& test_labels,
                                   const std::string& out_dir = "") {
    cfg.validate();
    if (cfg.timestep > sched.steps)
        throw ConfigError("timestep exceeds the schedule length");
    const TilePlan plan = plan_tiles(cube.h, cube.w, cfg.patch, cfg.stride);
    const RgbImage rgb = select_pseudo_rgb(cube, cfg.resolve_bands(cube.bands));
    const std::size_t classes = std::max(train_labels.classes, test_labels.classes);

    const auto set = collect_training_set(net, sched, cfg.timestep, {cfg.layer}, rgb, cube,
                                          train_labels, plan, cfg.seed);
    ExperimentResult<T> res =
        train_cell(cfg, set, cfg.layer, cube, classes, net.checksum());

    const HsiCube* cube_ptr = cfg.variant == Variant::geodiffnet_f ? &cube : nullptr;
    res.predicted = predict_scene(net, sched, cfg.timestep, cfg.layer, res.model, rgb, cube_ptr,
                                  plan, cfg.seed, cfg.aggregation);
    res.matrix = confusion(res.predicted, test_labels);
    res.metrics = summarize(res.matrix);

    if (!out_dir.empty())
        write_experiment_artifacts(out_dir, cfg, res, cube, train_labels, test_labels,
                                   set.labels.size());
    return res;
}

template <typename T = float>
ExperimentResult<T> run_experiment(const ExperimentConfig& cfg, const HsiCube& cube,
                                   const LabelMap& train_labels, const LabelMap& test_labels,
                                   const std::string& out_dir = "") {
    const auto net = FrozenUNet<T>::seeded(cfg.backbone(), cfg.backbone_seed);
    const auto sched = build_schedule(cfg.schedule_steps, cfg.schedule_kind);
    return run_experiment(cfg, net, sched, cube, train_labels, test_labels, out_dir);
}

// ---------------------------------------------------------------------------
// Layer x timestep sweep
// ---------------------------------------------------------------------------

struct SweepSpec {
    std::vector<int> layers;
    std::vector<std::size_t> timesteps;
    std::vector<Variant> variants{Variant::geodiffnet};
};

struct SweepCell {
    Variant variant = Variant::geodiffnet;
    int layer = 0;
    std::size_t timestep = 0;
    MetricsSummary metrics;
};

namespace harness_detail {

inline std::string cell_dir_name(Variant v, int layer, std::size_t t) {
    std::ostringstream os;
    os << to_string(v) << "_L" << layer << "_t" << t;
    return os.str();
}

// One table per (variant, timestep): metric rows, one column per layer.
inline std::string sweep_table(const std::vector<SweepCell>& cells, Variant v, std::size_t t,
                               const std::vector<int>& layers, std::size_t classes) {
    const auto cell = [&](int layer) -> const SweepCell& {
        for (const auto& c : cells)
            if (c.variant == v && c.timestep == t && c.layer == layer) return c;
        throw StateError("sweep table references a missing cell");
    };
    std::ostringstream os;
    os << "metric";
    for (int l : layers) os << " L" << l;
    os << "\n";
    const auto row = [&](const std::string& name, auto getter) {
        os << name;
        for (int l : layers) os << " " << fmt6(getter(cell(l).metrics));
        os << "\n";
    };
    row("oa", [](const MetricsSummary& m) { return m.oa; });
    row("aa", [](const MetricsSummary& m) { return m.aa; });
    row("kappa", [](const MetricsSummary& m) { return m.kappa; });
    row("mean_iou", [](const MetricsSummary& m) { return m.mean_iou; });
    row("mean_f1", [](const MetricsSummary& m) { return m.mean_f1; });
    for (std::size_t k = 0; k < classes; ++k) {
        os << "recall_" << (k + 1);
        for (int l : layers) {
            const auto& rec = cell(l).metrics.recall;
            const bool have = k < rec.size() && rec[k].has_value();
            os << " " << (have ? fmt6(*rec[k]) : std::string("nan"));
        }
        os << "\n";
    }
    return os.str();
}

}  // namespace harness_detail

// Grid evaluation over decoder layers and noise timesteps. Features are
// extracted once per (patch, timestep) and shared by every layer and variant;
// per-cell artifact sets land in out_dir/<variant>_L<layer>_t<t>/ and each
// (variant, timestep) pair gets a metric table with one column per layer.
template <typename T = float>
std::vector<SweepCell> run_sweep(const ExperimentConfig& base, const SweepSpec& spec,
                                 const HsiCube& cube, const LabelMap& train_labels,
                                 const LabelMap& test_labels, const std::string& out_dir = "") {
    if (spec.layers.empty()) throw ConfigError("sweep needs at least one layer");
    if (spec.timesteps.empty()) throw ConfigError("sweep needs at least one timestep");
    if (spec.variants.empty()) throw ConfigError("sweep needs at least one variant");
    {
        std::set<int> seen;
        for (int l : spec.layers) {
            if (l < 1 || l > 12) throw ConfigError("sweep layer must be in 1..12");
            if (!seen.insert(l).second) throw ConfigError("duplicate sweep layer " + std::to_string(l));
        }
    }

    const auto net = FrozenUNet<T>::seeded(base.backbone(), base.backbone_seed);
    const auto sched = build_schedule(base.schedule_steps, base.schedule_kind);
    const TilePlan plan = plan_tiles(cube.h, cube.w, base.patch, base.stride);
    const RgbImage rgb = select_pseudo_rgb(cube, base.resolve_bands(cube.bands));
    const std::size_t classes = std::max(train_labels.classes, test_labels.classes);
    const std::uint64_t checksum = net.checksum();

    std::vector<SweepCell> cells;
    for (std::size_t t : spec.timesteps) {
        if (t > sched.steps) throw ConfigError("sweep timestep exceeds the schedule length");
        const auto set =
            collect_training_set(net, sched, t, spec.layers, rgb, cube, train_labels, plan, base.seed);

        struct Pending {
            ExperimentConfig cfg;
            ExperimentResult<T> res;
            std::vector<PatchPrediction<T>> patches;
        };
        std::vector<Pending> pending;
        for (Variant v : spec.variants) {
            for (int layer : spec.layers) {
                ExperimentConfig cfg = base;
                cfg.variant = v;
                cfg.layer = layer;
                cfg.timestep = t;
                Pending p{cfg, train_cell(cfg, set, layer, cube, classes, checksum), {}};
                p.res.model.backbone_hash = checksum;
                pending.push_back(std::move(p));
            }
        }

        // Shared inference sweep: one feature extraction per patch feeds
        // every (variant, layer) cell at this timestep.
        const std::size_t P = plan.patch;
        for (std::size_t oi = 0; oi < plan.origins.size(); ++oi) {
            const auto [orow, ocol] = plan.origins[oi];
            const Tensor<T> patch = extract_patch<T>(rgb, orow, ocol, plan);
            Rng rng(Rng::mix(base.seed, oi, t));
            auto maps = extract_feature_layers(net, patch, t, spec.layers, sched, rng);

            Tensor<T> spectra({P * P, cube.bands});
            for (std::size_t r = 0; r < P; ++r) {
                const std::size_t sr = mirror_index(orow + r, cube.h);
                for (std::size_t c = 0; c < P; ++c) {
                    const std::size_t sc = mirror_index(ocol + c, cube.w);
                    std::copy_n(cube.data.data() + (sr * cube.w + sc) * cube.bands, cube.bands,
                                spectra.data.data() + (r * P + c) * cube.bands);
                }
            }

            for (auto& p : pending) {
                const FeatureMap<T>& fm = maps.at(p.cfg.layer);
                Tensor<T> features({P * P, fm.d}, fm.data);
                const Tensor<T>* sp =
                    p.cfg.variant == Variant::geodiffnet_f ? &spectra : nullptr;
                Prediction<T> pred = p.res.model.predict(features, sp);
                PatchPrediction<T> pp;
                pp.origin_index = oi;
                pp.ids = std::move(pred.ids);
                if (p.cfg.aggregation == Aggregation::mean_logit) pp.logits = std::move(pred.logits);
                p.patches.push_back(std::move(pp));
            }
        }

        for (auto& p : pending) {
            p.res.predicted = p.cfg.aggregation == Aggregation::max_vote
                                  ? max_vote(p.patches, plan, classes)
                                  : mean_logit_vote(p.patches, plan, classes);
            p.res.matrix = confusion(p.res.predicted, test_labels);
            p.res.metrics = summarize(p.res.matrix);
            if (!out_dir.empty()) {
                const std::string dir =
                    out_dir + "/" + harness_detail::cell_dir_name(p.cfg.variant, p.cfg.layer, t);
                write_experiment_artifacts(dir, p.cfg, p.res, cube, train_labels, test_labels,
                                           set.labels.size());
            }
            cells.push_back({p.cfg.variant, p.cfg.layer, t, p.res.metrics});
        }
    }

    if (!out_dir.empty()) {
        for (Variant v : spec.variants) {
            for (std::size_t t : spec.timesteps) {
                const std::string name = std::string("table_") + to_string(v) + "_t" +
                                         std::to_string(t) + ".txt";
                harness_detail::write_text(
                    out_dir + "/" + name,
                    harness_detail::sweep_table(cells, v, t, spec.layers, classes));
            }
        }
        std::ostringstream csv;
        csv << "variant,layer,timestep,oa,aa,kappa,mean_iou,mean_f1\n";
        for (const auto& c : cells) {
            csv << to_string(c.variant) << "," << c.layer << "," << c.timestep << ","
                << harness_detail::fmt6(c.metrics.oa) << "," << harness_detail::fmt6(c.metrics.aa)
                << "," << harness_detail::fmt6(c.metrics.kappa) << ","
                << harness_detail::fmt6(c.metrics.mean_iou) << ","
                << harness_detail::fmt6(c.metrics.mean_f1) << "\n";
        }
        harness_detail::write_text(out_dir + "/sweep_summary.csv", csv.str());
    }
    return cells;
}

// ---------------------------------------------------------------------------
// Qualitative feature visualization
// ---------------------------------------------------------------------------

// Clusters per-pixel backbone features (k-means) and renders the assignment
// for each (layer, timestep) pair as out_dir/viz_L<layer>_t<t>.ppm. Cluster
// ids carry no meaning across plots.
template <typename T = float>
void visualize_features(const ExperimentConfig& cfg, const HsiCube& cube,
                        const std::vector<int>& layers, const std::vector<std::size_t>& timesteps,
                        std::size_t k, const std::string& out_dir) {
    if (layers.empty() || timesteps.empty()) throw ConfigError("nothing to visualize");
    std::filesystem::create_directories(out_dir);
    const auto net = FrozenUNet<T>::seeded(cfg.backbone(), cfg.backbone_seed);
    const auto sched = build_schedule(cfg.schedule_steps, cfg.schedule_kind);
    const TilePlan plan = plan_tiles(cube.h, cube.w, cfg.patch, cfg.stride);
    const RgbImage rgb = select_pseudo_rgb(cube, cfg.resolve_bands(cube.bands));
    const auto owner = assign_pixels_to_patches(plan);

    std::map<std::size_t, std::vector<std::size_t>> by_origin;
    for (std::size_t px = 0; px < owner.size(); ++px) by_origin[owner[px]].push_back(px);

    for (std::size_t t : timesteps) {
        if (t > sched.steps) throw ConfigError("visualization timestep exceeds the schedule length");
        std::map<int, FeatureMap<T>> scene;
        for (const auto& [oi, pixels] : by_origin) {
            const auto [orow, ocol] = plan.origins[oi];
            const Tensor<T> patch = extract_patch<T>(rgb, orow, ocol, plan);
            Rng rng(Rng::mix(cfg.seed, oi, t));
            auto maps = extract_feature_layers(net, patch, t, layers, sched, rng);
            for (auto& [layer, fm] : maps) {
                FeatureMap<T>& dst = scene[layer];
                if (dst.data.empty()) {
                    dst.h = cube.h;
                    dst.w = cube.w;
                    dst.d = fm.d;
                    dst.data.assign(cube.h * cube.w * fm.d, T(0));
                }
                for (std::size_t px : pixels) {
                    const std::size_t r = px / cube.w, c = px % cube.w;
                    std::copy_n(fm.row(r - orow, c - ocol), fm.d, dst.data.data() + px * fm.d);
                }
            }
        }
        for (auto& [layer, fm] : scene) {
            const auto clusters = kmeans_cluster(fm, k, Rng::mix(cfg.seed, std::uint64_t(layer), t));
            const std::string name =
                out_dir + "/viz_L" + std::to_string(layer) + "_t" + std::to_string(t) + ".ppm";
            render_clusters(name, cube.h, cube.w, clusters.assignment);
        }
    }
}

}  // namespace geodiff
