// Command-line front end for the pipeline: synthetic data generation, feature
// extraction, training, inference, evaluation, layer/timestep sweeps, feature
// visualization, and rendering.
//
// Exit codes: 0 success, 2 configuration problem, 3 data problem,
// 4 training divergence, 1 anything else.

#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "geodiff/geodiff.hpp"

namespace gd = geodiff;

namespace {

// Settings shared by the pipeline subcommands: a config file plus individual
// overrides that win over the file.
struct CommonOpts {
    std::string config_path;
    std::string variant, fusion, schedule, bands_mode, aggregation, optimizer;
    int layer = 0;
    std::uint64_t timestep = 0, seed = 0, backbone_seed = 0;
    std::uint64_t schedule_steps = 0, channel_scale = 0, patch = 0, stride = 0;

    CLI::Option *o_variant = nullptr, *o_fusion = nullptr, *o_schedule = nullptr;
    CLI::Option *o_bands = nullptr, *o_aggregation = nullptr, *o_optimizer = nullptr;
    CLI::Option *o_layer = nullptr, *o_timestep = nullptr, *o_seed = nullptr;
    CLI::Option *o_backbone_seed = nullptr, *o_steps = nullptr, *o_scale = nullptr;
    CLI::Option *o_patch = nullptr, *o_stride = nullptr;

    void attach(CLI::App* cmd) {
        cmd->add_option("--config", config_path, "experiment config file");
        o_variant = cmd->add_option("--variant", variant, "geodiffnet | geodiffnet-f");
        o_fusion = cmd->add_option("--fusion", fusion, "film | concat");
        o_layer = cmd->add_option("--layer", layer, "decoder layer (1..12)");
        o_timestep = cmd->add_option("--timestep", timestep, "noise timestep");
        o_schedule = cmd->add_option("--schedule", schedule, "linear | cosine");
        o_steps = cmd->add_option("--schedule-steps", schedule_steps, "diffusion steps");
        o_scale = cmd->add_option("--channel-scale", channel_scale, "backbone width divisor");
        o_patch = cmd->add_option("--patch", patch, "patch side");
        o_stride = cmd->add_option("--stride", stride, "tiling stride");
        o_seed = cmd->add_option("--seed", seed, "experiment seed");
        o_backbone_seed = cmd->add_option("--backbone-seed", backbone_seed, "frozen weight seed");
        o_bands = cmd->add_option("--bands", bands_mode, "auto | berlin | augsburg | custom");
        o_aggregation = cmd->add_option("--aggregation", aggregation, "max_vote | mean_logit");
        o_optimizer = cmd->add_option("--optimizer", optimizer, "sgd | adam");
    }

    gd::ExperimentConfig resolve() const {
        gd::ExperimentConfig cfg = config_path.empty()
                                       ? gd::ExperimentConfig{}
                                       : gd::ExperimentConfig::from_file(config_path);
        if (o_variant->count()) cfg.variant = gd::variant_from(variant);
        if (o_fusion->count()) cfg.fusion = gd::fusion_from(fusion);
        if (o_layer->count()) cfg.layer = layer;
        if (o_timestep->count()) cfg.timestep = timestep;
        if (o_schedule->count()) cfg.schedule_kind = gd::schedule_kind_from(schedule);
        if (o_steps->count()) cfg.schedule_steps = schedule_steps;
        if (o_scale->count()) cfg.channel_scale = channel_scale;
        if (o_patch->count()) cfg.patch = patch;
        if (o_stride->count()) cfg.stride = stride;
        if (o_seed->count()) cfg.seed = seed;
        if (o_backbone_seed->count()) cfg.backbone_seed = backbone_seed;
        if (o_bands->count()) cfg.band_mode = gd::band_mode_from(bands_mode);
        if (o_aggregation->count()) cfg.aggregation = gd::aggregation_from(aggregation);
        if (o_optimizer->count()) cfg.training.optimizer = gd::optimizer_from(optimizer);
        cfg.training.seed = cfg.seed;
        cfg.training.fusion = cfg.fusion;
        cfg.validate();
        return cfg;
    }
};

std::vector<int> parse_int_list(const std::string& csv, const char* what) {
    std::vector<int> out;
    std::stringstream ss(csv);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            std::size_t used = 0;
            const int v = std::stoi(item, &used);
            if (used != item.size()) throw std::invalid_argument(item);
            out.push_back(v);
        } catch (const std::exception&) {
            throw gd::ConfigError(std::string("bad ") + what + " list entry '" + item + "'");
        }
    }
    if (out.empty()) throw gd::ConfigError(std::string("empty ") + what + " list");
    return out;
}

std::vector<std::size_t> parse_size_list(const std::string& csv, const char* what) {
    std::vector<std::size_t> out;
    for (int v : parse_int_list(csv, what)) {
        if (v < 0) throw gd::ConfigError(std::string("negative ") + what + " entry");
        out.push_back(std::size_t(v));
    }
    return out;
}

void print_metrics(const gd::MetricsSummary& m) {
    std::cout << gd::harness_detail::metrics_text(m);
}

// Scene-level feature container written by `extract`:
//   magic "FMAP" | h u32 | w u32 | d u32 | layer u32 | timestep u32 |
//   h*w*d f32 payload (row-major, channels last)
void write_feature_map(const std::string& path, const gd::FeatureMap<float>& fm, int layer,
                       std::size_t timestep) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw gd::FormatError("cannot open '" + path + "' for writing");
    os.write("FMAP", 4);
    gd::io::write_u32(os, std::uint32_t(fm.h));
    gd::io::write_u32(os, std::uint32_t(fm.w));
    gd::io::write_u32(os, std::uint32_t(fm.d));
    gd::io::write_u32(os, std::uint32_t(layer));
    gd::io::write_u32(os, std::uint32_t(timestep));
    for (float v : fm.data) gd::io::write_f32(os, v);
    if (!os) throw gd::FormatError("short write to '" + path + "'");
}

int run(int argc, char** argv) {
    CLI::App app{"diffusion-feature pixel classification pipeline"};
    app.require_subcommand(1);

    // ---- synth ----
    auto* synth = app.add_subcommand("synth", "generate a synthetic labeled scene");
    std::string synth_out;
    gd::SynthSpec spec;
    std::uint64_t synth_seed = 0;
    synth->add_option("--out", synth_out, "output directory")->required();
    synth->add_option("--height", spec.h, "scene height");
    synth->add_option("--width", spec.w, "scene width");
    synth->add_option("--bands", spec.bands, "spectral bands");
    synth->add_option("--classes", spec.classes, "class count");
    synth->add_option("--noise", spec.noise, "additive noise level");
    synth->add_flag("--spectral-only", spec.spectral_only,
                    "classes carry spectral signal only (no spatial regions)");
    synth->add_option("--seed", synth_seed, "generator seed");

    // ---- extract ----
    auto* extract = app.add_subcommand("extract", "write scene features to a .fmap file");
    std::string ex_cube, ex_out;
    CommonOpts ex_opts;
    extract->add_option("--cube", ex_cube, "input .hsic cube")->required();
    extract->add_option("--out", ex_out, "output .fmap path")->required();
    ex_opts.attach(extract);

    // ---- train ----
    auto* train = app.add_subcommand("train", "train a pixel model and evaluate it");
    std::string tr_cube, tr_train, tr_test, tr_out;
    CommonOpts tr_opts;
    train->add_option("--cube", tr_cube, "input .hsic cube")->required();
    train->add_option("--train-labels", tr_train, "training .lblm labels")->required();
    train->add_option("--test-labels", tr_test, "held-out .lblm labels")->required();
    train->add_option("--out", tr_out, "artifact directory")->required();
    tr_opts.attach(train);

    // ---- infer ----
    auto* infer = app.add_subcommand("infer", "classify a scene with a trained checkpoint");
    std::string in_cube, in_ckpt, in_out;
    CommonOpts in_opts;
    infer->add_option("--cube", in_cube, "input .hsic cube")->required();
    infer->add_option("--checkpoint", in_ckpt, "trained .gdnf checkpoint")->required();
    infer->add_option("--out", in_out, "output directory")->required();
    in_opts.attach(infer);

    // ---- eval ----
    auto* eval = app.add_subcommand("eval", "score a prediction against reference labels");
    std::string ev_pred, ev_truth, ev_out;
    eval->add_option("--pred", ev_pred, "predicted .lblm labels")->required();
    eval->add_option("--truth", ev_truth, "reference .lblm labels")->required();
    eval->add_option("--out", ev_out, "optional directory for metrics.txt/metrics.csv");

    // ---- sweep ----
    auto* sweep = app.add_subcommand("sweep", "grid-evaluate decoder layers x timesteps");
    std::string sw_cube, sw_train, sw_test, sw_out, sw_layers, sw_steps, sw_variants;
    CommonOpts sw_opts;
    sweep->add_option("--cube", sw_cube, "input .hsic cube")->required();
    sweep->add_option("--train-labels", sw_train, "training .lblm labels")->required();
    sweep->add_option("--test-labels", sw_test, "held-out .lblm labels")->required();
    sweep->add_option("--out", sw_out, "artifact directory")->required();
    sweep->add_option("--layers", sw_layers, "comma-separated decoder layers")->required();
    sweep->add_option("--timesteps", sw_steps, "comma-separated timesteps")->required();
    sweep->add_option("--variants", sw_variants, "comma-separated variant names");
    sw_opts.attach(sweep);

    // ---- viz ----
    auto* viz = app.add_subcommand("viz", "k-means cluster renders of backbone features");
    std::string vz_cube, vz_out, vz_layers, vz_steps;
    std::size_t vz_k = 6;
    CommonOpts vz_opts;
    viz->add_option("--cube", vz_cube, "input .hsic cube")->required();
    viz->add_option("--out", vz_out, "output directory")->required();
    viz->add_option("--layers", vz_layers, "comma-separated decoder layers")->required();
    viz->add_option("--timesteps", vz_steps, "comma-separated timesteps")->required();
    viz->add_option("--clusters", vz_k, "cluster count");
    vz_opts.attach(viz);

    // ---- render ----
    auto* render = app.add_subcommand("render", "rasterize labels or a cube to PPM");
    std::string rd_labels, rd_cube, rd_out, rd_bands;
    render->add_option("--labels", rd_labels, "input .lblm labels");
    render->add_option("--cube", rd_cube, "input .hsic cube (pseudo-colour render)");
    render->add_option("--bands", rd_bands, "auto | berlin | augsburg | custom");
    render->add_option("--out", rd_out, "output .ppm path")->required();

    CLI11_PARSE(app, argc, argv);

    if (synth->parsed()) {
        auto data = gd::synth_dataset(spec, synth_seed);
        std::filesystem::create_directories(synth_out);
        gd::save_cube(synth_out + "/cube.hsic", data.cube);
        gd::save_labels(synth_out + "/train.lblm", data.train);
        gd::save_labels(synth_out + "/test.lblm", data.test);
        gd::LabelMap full = data.train;
        for (std::size_t i = 0; i < full.labels.size(); ++i)
            if (full.labels[i] == 0) full.labels[i] = data.test.labels[i];
        gd::save_labels(synth_out + "/full.lblm", full);
        gd::render_labels(synth_out + "/full.ppm", full);
        std::cout << "wrote " << synth_out << "/cube.hsic (" << data.cube.h << "x" << data.cube.w
                  << "x" << data.cube.bands << "), train/test/full label maps\n";
        return 0;
    }

    if (extract->parsed()) {
        const auto cfg = ex_opts.resolve();
        const auto cube = gd::load_cube(ex_cube);
        const auto net = gd::FrozenUNet<float>::seeded(cfg.backbone(), cfg.backbone_seed);
        const auto sched = gd::build_schedule(cfg.schedule_steps, cfg.schedule_kind);
        const auto plan = gd::plan_tiles(cube.h, cube.w, cfg.patch, cfg.stride);
        const auto rgb = gd::select_pseudo_rgb(cube, cfg.resolve_bands(cube.bands));
        const auto owner = gd::assign_pixels_to_patches(plan);

        std::map<std::size_t, std::vector<std::size_t>> by_origin;
        for (std::size_t px = 0; px < owner.size(); ++px) by_origin[owner[px]].push_back(px);

        gd::FeatureMap<float> scene;
        for (const auto& [oi, pixels] : by_origin) {
            const auto [orow, ocol] = plan.origins[oi];
            const auto patch = gd::extract_patch<float>(rgb, orow, ocol, plan);
            gd::Rng rng(gd::Rng::mix(cfg.seed, oi, cfg.timestep));
            const auto fm =
                gd::extract_features(net, patch, cfg.timestep, cfg.layer, sched, rng);
            if (scene.data.empty()) {
                scene.h = cube.h;
                scene.w = cube.w;
                scene.d = fm.d;
                scene.data.assign(cube.h * cube.w * fm.d, 0.0f);
            }
            for (std::size_t px : pixels) {
                const std::size_t r = px / cube.w, c = px % cube.w;
                std::copy_n(fm.row(r - orow, c - ocol), fm.d, scene.data.data() + px * fm.d);
            }
        }
        write_feature_map(ex_out, scene, cfg.layer, cfg.timestep);
        std::cout << "wrote " << ex_out << " (" << scene.h << "x" << scene.w << "x" << scene.d
                  << ", layer " << cfg.layer << ", t " << cfg.timestep << ")\n";
        return 0;
    }

    if (train->parsed()) {
        const auto cfg = tr_opts.resolve();
        const auto cube = gd::load_cube(tr_cube);
        const auto train_labels = gd::load_labels(tr_train);
        const auto test_labels = gd::load_labels(tr_test);
        const auto res = gd::run_experiment<float>(cfg, cube, train_labels, test_labels, tr_out);
        print_metrics(res.metrics);
        std::cout << "artifacts in " << tr_out << "\n";
        return 0;
    }

    if (infer->parsed()) {
        const auto cfg = in_opts.resolve();
        const auto cube = gd::load_cube(in_cube);
        const auto model = gd::load_checkpoint<float>(in_ckpt);
        const auto net = gd::FrozenUNet<float>::seeded(cfg.backbone(), cfg.backbone_seed);
        const auto sched = gd::build_schedule(cfg.schedule_steps, cfg.schedule_kind);
        const auto plan = gd::plan_tiles(cube.h, cube.w, cfg.patch, cfg.stride);
        const auto rgb = gd::select_pseudo_rgb(cube, cfg.resolve_bands(cube.bands));
        const gd::HsiCube* cube_ptr =
            model.variant == gd::Variant::geodiffnet_f ? &cube : nullptr;
        const auto predicted = gd::predict_scene(net, sched, cfg.timestep, cfg.layer, model, rgb,
                                                 cube_ptr, plan, cfg.seed, cfg.aggregation);
        std::filesystem::create_directories(in_out);
        gd::save_labels(in_out + "/predicted.lblm", predicted);
        gd::render_labels(in_out + "/predicted.ppm", predicted);
        std::cout << "wrote " << in_out << "/predicted.lblm and predicted.ppm\n";
        return 0;
    }

    if (eval->parsed()) {
        const auto pred = gd::load_labels(ev_pred);
        const auto truth = gd::load_labels(ev_truth);
        const auto m = gd::summarize(gd::confusion(pred, truth));
        print_metrics(m);
        if (!ev_out.empty()) {
            std::filesystem::create_directories(ev_out);
            gd::harness_detail::write_text(ev_out + "/metrics.txt",
                                           gd::harness_detail::metrics_text(m));
            gd::harness_detail::write_text(ev_out + "/metrics.csv",
                                           gd::harness_detail::metrics_csv(m));
        }
        return 0;
    }

    if (sweep->parsed()) {
        const auto cfg = sw_opts.resolve();
        gd::SweepSpec sspec;
        sspec.layers = parse_int_list(sw_layers, "layer");
        sspec.timesteps = parse_size_list(sw_steps, "timestep");
        if (!sw_variants.empty()) {
            sspec.variants.clear();
            std::stringstream ss(sw_variants);
            std::string item;
            while (std::getline(ss, item, ',')) sspec.variants.push_back(gd::variant_from(item));
        }
        const auto cube = gd::load_cube(sw_cube);
        const auto train_labels = gd::load_labels(sw_train);
        const auto test_labels = gd::load_labels(sw_test);
        const auto cells = gd::run_sweep<float>(cfg, sspec, cube, train_labels, test_labels, sw_out);
        std::cout << "variant layer timestep oa\n";
        for (const auto& c : cells)
            std::cout << gd::to_string(c.variant) << " " << c.layer << " " << c.timestep << " "
                      << gd::harness_detail::fmt6(c.metrics.oa) << "\n";
        std::cout << "artifacts in " << sw_out << "\n";
        return 0;
    }

    if (viz->parsed()) {
        const auto cfg = vz_opts.resolve();
        const auto cube = gd::load_cube(vz_cube);
        gd::visualize_features<float>(cfg, cube, parse_int_list(vz_layers, "layer"),
                                      parse_size_list(vz_steps, "timestep"), vz_k, vz_out);
        std::cout << "cluster renders in " << vz_out << "\n";
        return 0;
    }

    if (render->parsed()) {
        if (rd_labels.empty() == rd_cube.empty())
            throw gd::ConfigError("render needs exactly one of --labels or --cube");
        if (!rd_labels.empty()) {
            gd::render_labels(rd_out, gd::load_labels(rd_labels));
        } else {
            const auto cube = gd::load_cube(rd_cube);
            gd::ExperimentConfig cfg;
            if (!rd_bands.empty()) cfg.band_mode = gd::band_mode_from(rd_bands);
            gd::render_rgb(rd_out, gd::select_pseudo_rgb(cube, cfg.resolve_bands(cube.bands)));
        }
        std::cout << "wrote " << rd_out << "\n";
        return 0;
    }

    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const gd::DivergenceError& e) {
        std::cerr << "divergence: " << e.what() << "\n";
        return 4;
    } catch (const gd::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const gd::DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
