#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <sys/wait.h>
#include <vector>

#include "geodiff/geodiff.hpp"

using namespace geodiff;

namespace {

namespace fs = std::filesystem;

fs::path temp_root() {
    static const fs::path dir = [] {
        fs::path d = fs::temp_directory_path() / "geodiff_harness_tests";
        fs::remove_all(d);
        fs::create_directories(d);
        return d;
    }();
    return dir;
}

std::string temp_dir(const std::string& name) {
    const fs::path d = temp_root() / name;
    fs::create_directories(d);
    return d.string();
}

std::string read_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    REQUIRE(is);
    std::ostringstream os;
    os << is.rdbuf();
    return os.str();
}

// Runs the tool with the given arguments, returning its exit status; stdout
// and stderr are appended to `log` when one is given.
int run_cli(const std::string& args, const std::string& log = "") {
    std::string cmd = std::string("'") + GEODIFF_CLI_PATH + "' " + args;
    cmd += log.empty() ? " >/dev/null 2>&1" : " >'" + log + "' 2>&1";
    const int status = std::system(cmd.c_str());
    if (status == -1) return -1;
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

bool contains(const std::string& hay, const std::string& needle) {
    return hay.find(needle) != std::string::npos;
}

void require_config_error(const std::string& text, const std::string& fragment,
                          const std::string& origin = "demo.ini") {
    try {
        ConfigMap::parse_string(text, origin);
        FAIL("expected a parse failure for: " << text);
    } catch (const ConfigError& e) {
        INFO(e.what());
        REQUIRE(contains(e.what(), fragment));
    }
}

const char* kSmallRunConfig =
    "[experiment]\n"
    "layer = 12\n"
    "seed = 3\n"
    "[training]\n"
    "max_epochs = 3\n"
    "batch_size = 32\n";

ExperimentConfig small_run_config() {
    return ExperimentConfig::from_map(ConfigMap::parse_string(kSmallRunConfig));
}

}  // namespace

// ---------------------------------------------------------------------------
// Config file parsing
// ---------------------------------------------------------------------------

TEST_CASE("config text parses sections, comments, and scoped keys", "[config]") {
    const std::string text =
        "# top-of-file comment\n"
        "\n"
        "top = 1\n"
        "[experiment]\n"
        "layer = 5\n"
        "seed=9\n"
        "  [ training ]  \n"
        "batch_size = 16\n";
    const ConfigMap m = ConfigMap::parse_string(text);
    REQUIRE(m.items().size() == 4);
    REQUIRE(m.has("top"));
    REQUIRE(m.get("top") == "1");
    REQUIRE(m.get("experiment.layer") == "5");
    REQUIRE(m.get("experiment.seed") == "9");
    REQUIRE(m.get("training.batch_size") == "16");
    REQUIRE_FALSE(m.has("experiment.batch_size"));
}

TEST_CASE("config parse failures name the file and line", "[config]") {
    require_config_error("[oops\nlayer = 1\n", "demo.ini:1");
    require_config_error("[oops\nlayer = 1\n", "malformed section header");
    require_config_error("[]\n", "demo.ini:1");
    require_config_error("layer 5\n", "expected 'key = value'");
    require_config_error("ok = 1\n = 4\n", "demo.ini:2");
    require_config_error("ok = 1\n = 4\n", "empty key");
    require_config_error("a = 1\na = 2\n", "duplicate key 'a'");
    require_config_error("[s]\nk = 1\nk = 2\n", "duplicate key 's.k'");

    // The same short key under two sections is two distinct full keys.
    const ConfigMap m = ConfigMap::parse_string("[a]\nk = 1\n[b]\nk = 2\n");
    REQUIRE(m.get("a.k") == "1");
    REQUIRE(m.get("b.k") == "2");

    REQUIRE_THROWS_AS(ConfigMap::parse_file(temp_dir("nocfg") + "/missing.ini"), ConfigError);
}

TEST_CASE("typed config getters convert values and reject junk", "[config]") {
    const ConfigMap m = ConfigMap::parse_string(
        "u = 12\n"
        "i = -3\n"
        "d = 2.5e-2\n"
        "b1 = yes\n"
        "b2 = Off\n"
        "junk = 12x\n"
        "word = maybe\n");

    REQUIRE(m.get_u64("u", 0) == 12);
    REQUIRE(m.get_u64("absent", 7) == 7);
    REQUIRE_THROWS_AS(m.get_u64("junk", 0), ConfigError);
    REQUIRE_THROWS_AS(m.get_u64("i", 0), ConfigError);  // negative is not unsigned

    REQUIRE(m.get_i64("i", 0) == -3);
    REQUIRE_THROWS_AS(m.get_i64("d", 0), ConfigError);

    REQUIRE(m.get_double("d", 0.0) == Catch::Approx(0.025));
    REQUIRE(m.get_double("absent", 1.5) == 1.5);
    REQUIRE_THROWS_AS(m.get_double("word", 0.0), ConfigError);
    REQUIRE_THROWS_AS(m.get_double("junk", 0.0), ConfigError);

    REQUIRE(m.get_bool("b1", false));
    REQUIRE_FALSE(m.get_bool("b2", true));
    REQUIRE(m.get_bool("absent", true));
    REQUIRE_THROWS_AS(m.get_bool("word", false), ConfigError);

    REQUIRE(m.get_or("word", "x") == "maybe");
    REQUIRE(m.get_or("absent", "x") == "x");
    REQUIRE_THROWS_AS(m.get("absent"), ConfigError);

    REQUIRE_NOTHROW(m.ensure_only({"u", "i", "d", "b1", "b2", "junk", "word"}));
    REQUIRE_THROWS_AS(m.ensure_only({"u", "i"}), ConfigError);
}

// ---------------------------------------------------------------------------
// Experiment configuration
// ---------------------------------------------------------------------------

TEST_CASE("experiment defaults come from an empty config", "[config]") {
    const ExperimentConfig c = ExperimentConfig::from_map(ConfigMap::parse_string(""));
    REQUIRE(c.variant == Variant::geodiffnet);
    REQUIRE(c.fusion == Fusion::film);
    REQUIRE(c.layer == 10);
    REQUIRE(c.timestep == 0);
    REQUIRE(c.aggregation == Aggregation::max_vote);
    REQUIRE(c.seed == 0);
    REQUIRE(c.schedule_steps == 1000);
    REQUIRE(c.schedule_kind == ScheduleKind::linear);
    REQUIRE(c.channel_scale == 8);
    REQUIRE(c.attention_heads == 4);
    REQUIRE(c.time_embed_width == 64);
    REQUIRE(c.backbone_seed == 17);
    REQUIRE(c.patch == 64);
    REQUIRE(c.stride == 32);
    REQUIRE(c.band_mode == BandMode::automatic);
    REQUIRE(c.custom_bands == std::array<std::size_t, 3>{0, 1, 2});
    REQUIRE(c.training.learning_rate == Catch::Approx(0.003));
    REQUIRE(c.training.batch_size == 64);
    REQUIRE(c.training.max_epochs == 10);
    REQUIRE(c.training.patience == 1000);
    REQUIRE(c.training.validation_fraction == Catch::Approx(0.1));
    REQUIRE(c.training.optimizer == Optimizer::sgd);
    REQUIRE(c.training.classifier_hidden == 128);
    REQUIRE(c.training.encoder_hidden == 128);
    REQUIRE(c.training.embedding_dim == 64);
    REQUIRE(c.training.regressor_hidden == 128);
    REQUIRE(c.training.seed == c.seed);
    REQUIRE(c.training.fusion == c.fusion);
}

TEST_CASE("experiment settings flow from file text into the run plan", "[config]") {
    const std::string text =
        "[experiment]\n"
        "variant = geodiffnet-f\n"
        "fusion = concat\n"
        "layer = 4\n"
        "timestep = 250\n"
        "aggregation = mean_logit\n"
        "seed = 42\n"
        "[schedule]\n"
        "steps = 500\n"
        "kind = cosine\n"
        "[backbone]\n"
        "channel_scale = 16\n"
        "attention_heads = 4\n"
        "time_embed_width = 32\n"
        "seed = 99\n"
        "[tiling]\n"
        "patch = 64\n"
        "stride = 16\n"
        "[bands]\n"
        "mode = custom\n"
        "r = 5\n"
        "g = 3\n"
        "b = 1\n"
        "[training]\n"
        "learning_rate = 0.01\n"
        "batch_size = 8\n"
        "max_epochs = 4\n"
        "patience = 12\n"
        "validation_fraction = 0.25\n"
        "optimizer = adam\n"
        "classifier_hidden = 32\n"
        "encoder_hidden = 16\n"
        "embedding_dim = 8\n"
        "regressor_hidden = 24\n";
    const ExperimentConfig c = ExperimentConfig::from_map(ConfigMap::parse_string(text));
    REQUIRE(c.variant == Variant::geodiffnet_f);
    REQUIRE(c.fusion == Fusion::concat);
    REQUIRE(c.layer == 4);
    REQUIRE(c.timestep == 250);
    REQUIRE(c.aggregation == Aggregation::mean_logit);
    REQUIRE(c.seed == 42);
    REQUIRE(c.schedule_steps == 500);
    REQUIRE(c.schedule_kind == ScheduleKind::cosine);
    REQUIRE(c.channel_scale == 16);
    REQUIRE(c.time_embed_width == 32);
    REQUIRE(c.backbone_seed == 99);
    REQUIRE(c.stride == 16);
    REQUIRE(c.band_mode == BandMode::custom);
    REQUIRE(c.custom_bands == std::array<std::size_t, 3>{5, 3, 1});
    REQUIRE(c.training.learning_rate == Catch::Approx(0.01));
    REQUIRE(c.training.batch_size == 8);
    REQUIRE(c.training.optimizer == Optimizer::adam);
    REQUIRE(c.training.encoder_hidden == 16);
    // Training copies the experiment-level seed and fusion mode.
    REQUIRE(c.training.seed == 42);
    REQUIRE(c.training.fusion == Fusion::concat);

    // The backbone view mirrors the tiling and width settings.
    const UNetConfig u = c.backbone();
    REQUIRE(u.input_side == 64);
    REQUIRE(u.channel_scale == 16);
    REQUIRE(u.time_embed_width == 32);
    REQUIRE(u.attention_heads == 4);

    REQUIRE_THROWS_AS(
        ExperimentConfig::from_map(ConfigMap::parse_string("[experiment]\nlayr = 5\n")),
        ConfigError);
}

TEST_CASE("experiment validation rejects out-of-range settings", "[config]") {
    const auto broken = [](auto mutate) {
        ExperimentConfig c;
        mutate(c);
        return c;
    };
    REQUIRE_NOTHROW(ExperimentConfig{}.validate());
    REQUIRE_THROWS_AS(broken([](auto& c) { c.layer = 0; }).validate(), ConfigError);
    REQUIRE_THROWS_AS(broken([](auto& c) { c.layer = 13; }).validate(), ConfigError);
    REQUIRE_THROWS_AS(broken([](auto& c) { c.timestep = 1001; }).validate(), ConfigError);
    REQUIRE_THROWS_AS(broken([](auto& c) { c.stride = 0; }).validate(), ConfigError);
    REQUIRE_THROWS_AS(broken([](auto& c) { c.stride = 65; }).validate(), ConfigError);
    REQUIRE_THROWS_AS(broken([](auto& c) { c.training.learning_rate = 0.0; }).validate(),
                      ConfigError);
    REQUIRE_THROWS_AS(broken([](auto& c) { c.training.batch_size = 0; }).validate(), ConfigError);
    REQUIRE_THROWS_AS(broken([](auto& c) { c.training.max_epochs = 0; }).validate(), ConfigError);
    REQUIRE_THROWS_AS(broken([](auto& c) { c.training.validation_fraction = 0.0; }).validate(),
                      ConfigError);
    REQUIRE_THROWS_AS(broken([](auto& c) { c.training.validation_fraction = 1.0; }).validate(),
                      ConfigError);
    // Backbone constraints surface through the same entry point.
    REQUIRE_THROWS_AS(broken([](auto& c) { c.patch = 32; c.stride = 16; }).validate(),
                      ConfigError);
    REQUIRE_THROWS_AS(broken([](auto& c) { c.channel_scale = 5; }).validate(), ConfigError);
    REQUIRE_THROWS_AS(broken([](auto& c) { c.attention_heads = 5; }).validate(), ConfigError);
    REQUIRE_THROWS_AS(broken([](auto& c) { c.time_embed_width = 63; }).validate(), ConfigError);
}

TEST_CASE("canonical text round-trips through the parser and pins the hash", "[config]") {
    ExperimentConfig c;
    c.seed = 21;
    c.layer = 6;
    c.training.learning_rate = 0.0125;
    const std::string text = c.canonical_text();

    // Every emitted line is an accepted key, so the text is itself a config.
    const ExperimentConfig back = ExperimentConfig::from_map(ConfigMap::parse_string(text));
    REQUIRE(back.canonical_text() == text);
    REQUIRE(back.hash() == c.hash());

    std::size_t lines = 0;
    for (char ch : text) lines += ch == '\n';
    REQUIRE(lines == 28);

    REQUIRE(c.hash() == io::fnv1a_str(text));
    ExperimentConfig other = c;
    other.seed = 22;
    REQUIRE(other.canonical_text() != text);
    REQUIRE(other.hash() != c.hash());
}

TEST_CASE("automatic band selection follows the cube depth", "[config]") {
    ExperimentConfig c;
    REQUIRE(c.resolve_bands(244) == std::array<std::size_t, 3>{40, 30, 15});
    REQUIRE(c.resolve_bands(41) == std::array<std::size_t, 3>{40, 30, 15});
    REQUIRE(c.resolve_bands(40) == std::array<std::size_t, 3>{21, 11, 6});
    REQUIRE(c.resolve_bands(22) == std::array<std::size_t, 3>{21, 11, 6});
    REQUIRE(c.resolve_bands(21) == std::array<std::size_t, 3>{2, 1, 0});
    REQUIRE(c.resolve_bands(4) == std::array<std::size_t, 3>{2, 1, 0});
    REQUIRE(c.resolve_bands(3) == std::array<std::size_t, 3>{2, 1, 0});
    REQUIRE_THROWS_AS(c.resolve_bands(2), ConfigError);  // band 2 past a 2-band cube

    c.band_mode = BandMode::berlin;
    REQUIRE(c.resolve_bands(41) == std::array<std::size_t, 3>{40, 30, 15});
    REQUIRE_THROWS_AS(c.resolve_bands(20), ConfigError);

    c.band_mode = BandMode::augsburg;
    REQUIRE(c.resolve_bands(22) == std::array<std::size_t, 3>{21, 11, 6});

    c.band_mode = BandMode::custom;
    c.custom_bands = {9, 2, 7};
    REQUIRE(c.resolve_bands(10) == std::array<std::size_t, 3>{9, 2, 7});
    REQUIRE_THROWS_AS(c.resolve_bands(9), ConfigError);
}

// ---------------------------------------------------------------------------
// Pixel ownership
// ---------------------------------------------------------------------------

TEST_CASE("every pixel is owned by its nearest covering patch", "[harness][oracle]") {
    const struct { std::size_t h, w, patch, stride; } cases[] = {
        {12, 12, 8, 4}, {20, 13, 8, 4}, {7, 9, 4, 2}, {5, 5, 8, 4},
    };
    for (const auto& tc : cases) {
        const TilePlan plan = plan_tiles(tc.h, tc.w, tc.patch, tc.stride);
        const auto owner = assign_pixels_to_patches(plan);
        REQUIRE(owner.size() == tc.h * tc.w);
        const double half = (double(tc.patch) - 1.0) / 2.0;
        for (std::size_t r = 0; r < tc.h; ++r) {
            for (std::size_t c = 0; c < tc.w; ++c) {
                const std::size_t px = r * tc.w + c;
                // Exhaustively find the nearest covering patch centre.
                std::size_t best_oi = std::size_t(-1);
                double best_d = 1e300;
                for (std::size_t oi = 0; oi < plan.origins.size(); ++oi) {
                    const auto [orow, ocol] = plan.origins[oi];
                    if (r < orow || r >= orow + tc.patch) continue;
                    if (c < ocol || c >= ocol + tc.patch) continue;
                    const double d = std::max(std::abs(double(r) - (double(orow) + half)),
                                              std::abs(double(c) - (double(ocol) + half)));
                    if (d < best_d) {
                        best_d = d;
                        best_oi = oi;
                    }
                }
                INFO("scene " << tc.h << "x" << tc.w << " pixel (" << r << "," << c << ")");
                REQUIRE(owner[px] == best_oi);
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Training-set collection
// ---------------------------------------------------------------------------

TEST_CASE("training rows align with labels, spectra, and patch features", "[harness]") {
    SynthSpec spec;
    spec.h = 24;
    spec.w = 24;
    spec.bands = 4;
    spec.classes = 3;
    spec.noise = 0.05;
    const auto data = synth_dataset(spec, 9);

    const ExperimentConfig cfg;
    const auto net = FrozenUNet<float>::seeded(cfg.backbone(), cfg.backbone_seed);
    const auto sched = build_schedule(cfg.schedule_steps, cfg.schedule_kind);
    const TilePlan plan = plan_tiles(24, 24, cfg.patch, cfg.stride);
    const RgbImage rgb = select_pseudo_rgb(data.cube, cfg.resolve_bands(4));
    REQUIRE(plan.origins.size() == 1);  // the scene fits one mirrored patch

    const auto both = collect_training_set(net, sched, 0, {11, 12}, rgb, data.cube, data.train,
                                           plan, 5);
    const auto single = collect_training_set(net, sched, 0, {12}, rgb, data.cube, data.train,
                                             plan, 5);

    std::size_t labeled = 0;
    for (auto v : data.train.labels) labeled += v != 0;
    REQUIRE(labeled > 0);
    REQUIRE(both.labels.size() == labeled);
    REQUIRE(both.pixel_ids.size() == labeled);
    REQUIRE(both.spectra.shape == std::vector<std::size_t>{labeled, 4});
    REQUIRE(both.features.at(11).shape == std::vector<std::size_t>{labeled, 48});
    REQUIRE(both.features.at(12).shape == std::vector<std::size_t>{labeled, 24});

    for (std::size_t i = 0; i < labeled; ++i) {
        const std::size_t px = both.pixel_ids[i];
        if (i > 0) REQUIRE(px > both.pixel_ids[i - 1]);  // single patch keeps scene order
        REQUIRE(both.labels[i] == data.train.labels[px]);
        for (std::size_t b = 0; b < 4; ++b)
            REQUIRE(both.spectra.at(i, b) == data.cube.data[px * 4 + b]);
    }

    // A one-layer request reads the identical feature rows: the extraction
    // noise depends on the patch and timestep, not on which taps are kept.
    REQUIRE(single.features.at(12).data == both.features.at(12).data);
    REQUIRE(single.pixel_ids == both.pixel_ids);

    const auto rerun = collect_training_set(net, sched, 0, {12}, rgb, data.cube, data.train,
                                            plan, 5);
    REQUIRE(rerun.features.at(12).data == single.features.at(12).data);

    LabelMap wrong = data.train;
    wrong.h = 10;
    wrong.labels.resize(10 * 24);
    REQUIRE_THROWS_AS(
        collect_training_set(net, sched, 0, {12}, rgb, data.cube, wrong, plan, 5),
        DimensionError);

    HsiCube small;
    small.h = 10;
    small.w = 24;
    small.bands = 4;
    small.data.assign(10 * 24 * 4, 0.5f);
    REQUIRE_THROWS_AS(
        collect_training_set(net, sched, 0, {12}, rgb, small, data.train, plan, 5),
        DimensionError);

    LabelMap empty = data.train;
    std::fill(empty.labels.begin(), empty.labels.end(), std::uint16_t(0));
    REQUIRE_THROWS_AS(
        collect_training_set(net, sched, 0, {12}, rgb, data.cube, empty, plan, 5), DataError);
}

// ---------------------------------------------------------------------------
// Cell training
// ---------------------------------------------------------------------------

TEST_CASE("feature scaling is folded into the stored statistics", "[harness]") {
    // Hand-built training set over a tiny cube; every even pixel is a row.
    HsiCube cube;
    cube.h = 4;
    cube.w = 6;
    cube.bands = 2;
    cube.data.resize(24 * 2);
    for (std::size_t px = 0; px < 24; ++px)
        for (std::size_t b = 0; b < 2; ++b) cube.data[px * 2 + b] = 0.1f * float(px) + float(b);

    const std::size_t n = 8, d = 3;
    TrainingSet<float> set;
    set.spectra = Tensor<float>({n, 2});
    set.features.emplace(7, Tensor<float>({n, d}));
    Rng jitter(404);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t px = 2 * i;
        set.pixel_ids.push_back(px);
        set.labels.push_back(std::uint16_t(1 + i % 2));
        for (std::size_t b = 0; b < 2; ++b) set.spectra.at(i, b) = cube.data[px * 2 + b];
        set.features.at(7).at(i, 0) = (i % 2 == 0) ? 1.0f : 3.0f;  // mean 2, stddev 1
        set.features.at(7).at(i, 1) = 5.0f;                        // degenerate column
        set.features.at(7).at(i, 2) = float(i) + float(jitter.uniform(-0.2, 0.2));
    }

    ExperimentConfig cfg;
    cfg.training.max_epochs = 2;
    cfg.training.batch_size = 8;

    const auto plain = train_cell(cfg, set, 7, cube, 2, 0xabcull);
    REQUIRE(plain.model.feature_dim == d);
    REQUIRE(plain.model.bands == 2);
    REQUIRE(plain.model.classes == 2);
    REQUIRE(plain.model.backbone_hash == 0xabcull);
    REQUIRE(plain.model.variant == Variant::geodiffnet);
    REQUIRE(plain.model.stats.mean.empty());  // no spectral branch
    REQUIRE(plain.report.iterations > 0);

    // Stored stddevs are the population values divided by the feature gain,
    // so standardizing with them bakes the gain into the classifier input.
    const BandStats raw = column_stats(set.features.at(7), d);
    REQUIRE(plain.model.feature_stats.mean.size() == d);
    for (std::size_t j = 0; j < d; ++j) {
        REQUIRE(plain.model.feature_stats.mean[j] == raw.mean[j]);
        REQUIRE(plain.model.feature_stats.stddev[j] == Catch::Approx(raw.stddev[j] / 4.0));
    }
    REQUIRE(raw.stddev[0] == Catch::Approx(1.0));
    REQUIRE(raw.stddev[1] == 1.0f);  // constant column falls back to unit scale
    REQUIRE(plain.model.feature_stats.stddev[0] == Catch::Approx(0.25));

    ExperimentConfig fcfg = cfg;
    fcfg.variant = Variant::geodiffnet_f;
    const auto fused = train_cell(fcfg, set, 7, cube, 2, 0xabcull);
    REQUIRE(fused.model.variant == Variant::geodiffnet_f);

    // Spectral statistics cover exactly the training pixels (the even ones).
    REQUIRE(fused.model.stats.mean.size() == 2);
    for (std::size_t b = 0; b < 2; ++b) {
        REQUIRE(fused.model.stats.mean[b] == Catch::Approx(0.7 + double(b)));
        REQUIRE(fused.model.stats.stddev[b] == Catch::Approx(std::sqrt(0.21)));
    }
}

// ---------------------------------------------------------------------------
// Whole experiments
// ---------------------------------------------------------------------------

TEST_CASE("one experiment writes the full artifact set and reruns byte-identically",
          "[harness][slow]") {
    SynthSpec spec;
    spec.h = 24;
    spec.w = 24;
    spec.bands = 4;
    spec.classes = 3;
    spec.noise = 0.05;
    const auto data = synth_dataset(spec, 11);

    const ExperimentConfig cfg = small_run_config();
    const std::string dir_a = temp_dir("exp_a");
    const std::string dir_b = temp_dir("exp_b");
    const auto res_a = run_experiment<float>(cfg, data.cube, data.train, data.test, dir_a);
    const auto res_b = run_experiment<float>(cfg, data.cube, data.train, data.test, dir_b);

    const char* names[] = {"checkpoint.gdnf", "predicted.lblm", "predicted.ppm",
                           "metrics.txt",     "metrics.csv",    "train_log.txt",
                           "manifest.txt"};
    for (const char* name : names) {
        INFO(name);
        REQUIRE(fs::exists(fs::path(dir_a) / name));
        REQUIRE(read_file(dir_a + "/" + name) == read_file(dir_b + "/" + name));
    }

    REQUIRE(res_a.predicted.h == 24);
    REQUIRE(res_a.predicted.w == 24);
    REQUIRE(res_a.predicted.classes == 3);
    REQUIRE(res_a.metrics.oa >= 0.0);
    REQUIRE(res_a.metrics.oa <= 1.0);
    REQUIRE(res_a.metrics.oa == res_b.metrics.oa);

    const std::string metrics = read_file(dir_a + "/metrics.txt");
    REQUIRE(metrics.rfind("oa " + harness_detail::fmt6(res_a.metrics.oa) + "\n", 0) == 0);

    const std::string manifest = read_file(dir_a + "/manifest.txt");
    REQUIRE(contains(manifest, "config_hash " + harness_detail::hex16(cfg.hash())));
    REQUIRE(contains(manifest, "backbone_checksum " +
                                   harness_detail::hex16(res_a.model.backbone_hash)));
    REQUIRE(contains(manifest, "train_pixels "));
    REQUIRE(contains(manifest, "--- config ---\n" + cfg.canonical_text()));

    const auto model = load_checkpoint<float>(dir_a + "/checkpoint.gdnf");
    REQUIRE(model.feature_dim == 24);
    REQUIRE(model.classes == 3);
    REQUIRE(model.backbone_hash == res_a.model.backbone_hash);

    const LabelMap pred = load_labels(dir_a + "/predicted.lblm");
    REQUIRE(pred.labels == res_a.predicted.labels);
    for (auto id : pred.labels) {
        REQUIRE(id >= 1);
        REQUIRE(id <= 3);
    }

    // The fused variant runs the same pipeline with the spectral branch on.
    ExperimentConfig fcfg = cfg;
    fcfg.variant = Variant::geodiffnet_f;
    fcfg.training.max_epochs = 2;
    const auto fused = run_experiment<float>(fcfg, data.cube, data.train, data.test);
    REQUIRE(fused.model.stats.mean.size() == 4);
    REQUIRE(std::isfinite(fused.metrics.oa));
}

TEST_CASE("layer sweeps share features and tabulate each cell", "[harness][slow]") {
    SynthSpec spec;
    spec.h = 24;
    spec.w = 24;
    spec.bands = 4;
    spec.classes = 3;
    spec.noise = 0.05;
    const auto data = synth_dataset(spec, 11);

    const ExperimentConfig base = small_run_config();
    SweepSpec sweep;
    sweep.layers = {11, 12};
    sweep.timesteps = {0};

    const std::string dir = temp_dir("sweep");
    const auto cells = run_sweep<float>(base, sweep, data.cube, data.train, data.test, dir);
    REQUIRE(cells.size() == 2);
    REQUIRE(cells[0].layer == 11);
    REQUIRE(cells[1].layer == 12);
    REQUIRE(cells[0].timestep == 0);
    REQUIRE(cells[0].variant == Variant::geodiffnet);

    for (const char* cell : {"geodiffnet_L11_t0", "geodiffnet_L12_t0"}) {
        for (const char* name : {"checkpoint.gdnf", "predicted.lblm", "metrics.txt",
                                 "manifest.txt"}) {
            INFO(cell << "/" << name);
            REQUIRE(fs::exists(fs::path(dir) / cell / name));
        }
    }

    const std::string table = read_file(dir + "/table_geodiffnet_t0.txt");
    REQUIRE(table.rfind("metric L11 L12\n", 0) == 0);
    REQUIRE(contains(table, "oa " + harness_detail::fmt6(cells[0].metrics.oa) + " " +
                                harness_detail::fmt6(cells[1].metrics.oa)));
    REQUIRE(contains(table, "recall_3"));

    const std::string csv = read_file(dir + "/sweep_summary.csv");
    REQUIRE(csv.rfind("variant,layer,timestep,oa,aa,kappa,mean_iou,mean_f1\n", 0) == 0);
    REQUIRE(contains(csv, "geodiffnet,12,0," + harness_detail::fmt6(cells[1].metrics.oa)));

    // A sweep cell is the same run as a standalone experiment at that layer.
    ExperimentConfig cfg12 = base;
    cfg12.layer = 12;
    const auto solo = run_experiment<float>(cfg12, data.cube, data.train, data.test);
    REQUIRE(solo.metrics.oa == cells[1].metrics.oa);
    REQUIRE(solo.metrics.kappa == cells[1].metrics.kappa);
    const LabelMap cell_pred = load_labels(dir + "/geodiffnet_L12_t0/predicted.lblm");
    REQUIRE(cell_pred.labels == solo.predicted.labels);
    const std::string cell_manifest = read_file(dir + "/geodiffnet_L12_t0/manifest.txt");
    REQUIRE(contains(cell_manifest, "config_hash " + harness_detail::hex16(cfg12.hash())));

    const auto bad = [&](auto mutate) {
        SweepSpec s = sweep;
        mutate(s);
        return run_sweep<float>(base, s, data.cube, data.train, data.test);
    };
    REQUIRE_THROWS_AS(bad([](auto& s) { s.layers.clear(); }), ConfigError);
    REQUIRE_THROWS_AS(bad([](auto& s) { s.layers = {0}; }), ConfigError);
    REQUIRE_THROWS_AS(bad([](auto& s) { s.layers = {13}; }), ConfigError);
    REQUIRE_THROWS_AS(bad([](auto& s) { s.layers = {11, 11}; }), ConfigError);
    REQUIRE_THROWS_AS(bad([](auto& s) { s.timesteps.clear(); }), ConfigError);
    REQUIRE_THROWS_AS(bad([](auto& s) { s.timesteps = {1001}; }), ConfigError);
    REQUIRE_THROWS_AS(bad([](auto& s) { s.variants.clear(); }), ConfigError);
}

TEST_CASE("cluster renders land one file per layer and timestep", "[harness][slow]") {
    SynthSpec spec;
    spec.h = 16;
    spec.w = 16;
    spec.bands = 3;
    spec.classes = 3;
    spec.noise = 0.05;
    const auto data = synth_dataset(spec, 4);

    ExperimentConfig cfg;
    cfg.seed = 4;
    const std::string dir = temp_dir("viz");
    visualize_features<float>(cfg, data.cube, {11, 12}, {0}, 3, dir);

    for (const char* name : {"viz_L11_t0.ppm", "viz_L12_t0.ppm"}) {
        INFO(name);
        const std::string body = read_file(dir + "/" + name);
        const std::string header = "P6\n16 16\n255\n";
        REQUIRE(body.rfind(header, 0) == 0);
        REQUIRE(body.size() == header.size() + 16 * 16 * 3);
    }

    REQUIRE_THROWS_AS(visualize_features<float>(cfg, data.cube, {}, {0}, 3, dir), ConfigError);
    REQUIRE_THROWS_AS(visualize_features<float>(cfg, data.cube, {12}, {1001}, 3, dir),
                      ConfigError);
}

// ---------------------------------------------------------------------------
// Command-line tool
// ---------------------------------------------------------------------------

TEST_CASE("cli builds a dataset and scores predictions", "[cli]") {
    const std::string dir = temp_dir("cli_data");
    const std::string log = dir + "/log.txt";
    REQUIRE(run_cli("synth --out '" + dir + "' --height 24 --width 24 --bands 4 --classes 3"
                    " --noise 0.05 --seed 11", log) == 0);
    REQUIRE(contains(read_file(log), "wrote"));

    const HsiCube cube = load_cube(dir + "/cube.hsic");
    REQUIRE(cube.h == 24);
    REQUIRE(cube.w == 24);
    REQUIRE(cube.bands == 4);

    const LabelMap train = load_labels(dir + "/train.lblm");
    const LabelMap test = load_labels(dir + "/test.lblm");
    const LabelMap full = load_labels(dir + "/full.lblm");
    REQUIRE(train.classes == 3);
    for (std::size_t i = 0; i < full.labels.size(); ++i) {
        REQUIRE(full.labels[i] != 0);  // train and test partition the scene
        REQUIRE(full.labels[i] == (train.labels[i] ? train.labels[i] : test.labels[i]));
    }
    REQUIRE(fs::exists(dir + "/full.ppm"));

    // Scoring the reference against itself is a perfect run.
    const std::string evaldir = dir + "/eval";
    REQUIRE(run_cli("eval --pred '" + dir + "/full.lblm' --truth '" + dir +
                    "/test.lblm' --out '" + evaldir + "'", log) == 0);
    REQUIRE(read_file(evaldir + "/metrics.txt").rfind("oa 1.000000\n", 0) == 0);
    REQUIRE(read_file(evaldir + "/metrics.csv").rfind("metric,value\noa,1.000000\n", 0) == 0);
    REQUIRE(contains(read_file(log), "oa 1.000000"));

    REQUIRE(run_cli("eval --pred '" + dir + "/missing.lblm' --truth '" + dir +
                    "/test.lblm'") == 3);

    REQUIRE(run_cli("render --labels '" + dir + "/train.lblm' --out '" + dir + "/t.ppm'") == 0);
    REQUIRE(read_file(dir + "/t.ppm").rfind("P6\n24 24\n255\n", 0) == 0);
    REQUIRE(run_cli("render --cube '" + dir + "/cube.hsic' --out '" + dir + "/c.ppm'") == 0);
    REQUIRE(fs::exists(dir + "/c.ppm"));
    REQUIRE(run_cli("render --out '" + dir + "/x.ppm'") == 2);
    REQUIRE(run_cli("render --labels '" + dir + "/train.lblm' --cube '" + dir +
                    "/cube.hsic' --out '" + dir + "/x.ppm'") == 2);

    REQUIRE(run_cli("synth --out '" + dir + "/bad' --classes 1") == 2);
}

TEST_CASE("cli extracts features and trains both model variants", "[cli][slow]") {
    const std::string dir = temp_dir("cli_run");
    const std::string log = dir + "/log.txt";
    REQUIRE(run_cli("synth --out '" + dir + "' --height 24 --width 24 --bands 4 --classes 3"
                    " --noise 0.05 --seed 11") == 0);
    const std::string ini = dir + "/cfg.ini";
    harness_detail::write_text(ini, kSmallRunConfig);

    const std::string common = " --cube '" + dir + "/cube.hsic' --config '" + ini + "'";

    // Feature extraction: header fields echo the request, payload is finite.
    REQUIRE(run_cli("extract" + common + " --out '" + dir + "/feat.fmap'", log) == 0);
    {
        std::ifstream is(dir + "/feat.fmap", std::ios::binary);
        REQUIRE(is);
        io::Reader r{is, 0, "feat.fmap"};
        r.expect_magic("FMAP");
        REQUIRE(r.u32("h") == 24);
        REQUIRE(r.u32("w") == 24);
        REQUIRE(r.u32("d") == 24);
        REQUIRE(r.u32("layer") == 12);
        REQUIRE(r.u32("timestep") == 0);
        double magnitude = 0;
        for (std::size_t i = 0; i < 24 * 24 * 24; ++i) {
            const float v = r.f32("payload");
            REQUIRE(std::isfinite(v));
            magnitude += std::abs(double(v));
        }
        r.expect_eof();
        REQUIRE(magnitude > 0.0);
    }

    const std::string labels =
        " --train-labels '" + dir + "/train.lblm' --test-labels '" + dir + "/test.lblm'";
    const std::string run_a = dir + "/runA";
    REQUIRE(run_cli("train" + common + labels + " --out '" + run_a + "'", log) == 0);
    for (const char* name : {"checkpoint.gdnf", "predicted.lblm", "predicted.ppm", "metrics.txt",
                             "metrics.csv", "train_log.txt", "manifest.txt"}) {
        INFO(name);
        REQUIRE(fs::exists(fs::path(run_a) / name));
    }

    // The tool is a thin shell over the library: an in-process run with the
    // same config file reproduces its prediction and metrics exactly.
    const auto cube = load_cube(dir + "/cube.hsic");
    const auto train = load_labels(dir + "/train.lblm");
    const auto test = load_labels(dir + "/test.lblm");
    const auto res = run_experiment<float>(ExperimentConfig::from_file(ini), cube, train, test);
    REQUIRE(load_labels(run_a + "/predicted.lblm").labels == res.predicted.labels);
    const std::string metrics = read_file(run_a + "/metrics.txt");
    REQUIRE(metrics.rfind("oa " + harness_detail::fmt6(res.metrics.oa) + "\n", 0) == 0);
    REQUIRE(contains(read_file(log), "oa " + harness_detail::fmt6(res.metrics.oa)));

    // Re-classifying with the saved checkpoint reproduces the prediction.
    const std::string inferdir = dir + "/infer";
    REQUIRE(run_cli("infer" + common + " --checkpoint '" + run_a +
                    "/checkpoint.gdnf' --out '" + inferdir + "'", log) == 0);
    REQUIRE(read_file(inferdir + "/predicted.lblm") == read_file(run_a + "/predicted.lblm"));

    // A different frozen backbone fails the checkpoint's identity check.
    REQUIRE(run_cli("infer" + common + " --checkpoint '" + run_a +
                    "/checkpoint.gdnf' --out '" + dir + "/bad' --backbone-seed 99") == 3);

    const std::string run_f = dir + "/runF";
    REQUIRE(run_cli("train" + common + labels + " --out '" + run_f +
                    "' --variant geodiffnet-f", log) == 0);
    const auto fused = load_checkpoint<float>(run_f + "/checkpoint.gdnf");
    REQUIRE(fused.variant == Variant::geodiffnet_f);
    REQUIRE(fused.stats.mean.size() == 4);

    REQUIRE(run_cli("train" + common + labels + " --out '" + dir + "/bad' --layer 13") == 2);
    REQUIRE(run_cli("train" + common + labels + " --out '" + dir + "/bad' --variant vgg") == 2);
    REQUIRE(run_cli("train --cube '" + dir + "/nope.hsic'" + labels + " --out '" + dir +
                    "/bad' --config '" + ini + "'") == 3);

    const std::string badini = dir + "/bad.ini";
    harness_detail::write_text(badini, "[experiment]\nlayr = 12\n");
    REQUIRE(run_cli("train --cube '" + dir + "/cube.hsic'" + labels + " --out '" + dir +
                    "/bad' --config '" + badini + "'") == 2);

    const std::string divini = dir + "/div.ini";
    harness_detail::write_text(divini,
                               "[experiment]\nlayer = 12\nseed = 3\n"
                               "[training]\nlearning_rate = 1e30\nmax_epochs = 3\n");
    REQUIRE(run_cli("train --cube '" + dir + "/cube.hsic'" + labels + " --out '" + dir +
                    "/bad' --config '" + divini + "'", log) == 4);
    REQUIRE(contains(read_file(log), "divergence"));
}

TEST_CASE("cli sweeps the layer grid and renders feature clusters", "[cli][slow]") {
    const std::string dir = temp_dir("cli_sweep");
    const std::string log = dir + "/log.txt";
    REQUIRE(run_cli("synth --out '" + dir + "' --height 20 --width 20 --bands 4 --classes 3"
                    " --noise 0.05 --seed 6") == 0);
    const std::string ini = dir + "/cfg.ini";
    harness_detail::write_text(ini,
                               "[experiment]\nseed = 3\n"
                               "[training]\nmax_epochs = 2\nbatch_size = 32\n");

    const std::string common = " --cube '" + dir + "/cube.hsic' --config '" + ini + "'";
    const std::string labels =
        " --train-labels '" + dir + "/train.lblm' --test-labels '" + dir + "/test.lblm'";

    const std::string swdir = dir + "/sweep";
    REQUIRE(run_cli("sweep" + common + labels + " --out '" + swdir +
                    "' --layers 11,12 --timesteps 0 --variants geodiffnet", log) == 0);
    const std::string out = read_file(log);
    REQUIRE(contains(out, "variant layer timestep oa"));
    REQUIRE(contains(out, "geodiffnet 11 0 "));
    REQUIRE(contains(out, "geodiffnet 12 0 "));
    REQUIRE(fs::exists(swdir + "/sweep_summary.csv"));
    REQUIRE(fs::exists(swdir + "/table_geodiffnet_t0.txt"));
    REQUIRE(fs::exists(swdir + "/geodiffnet_L11_t0/checkpoint.gdnf"));
    REQUIRE(fs::exists(swdir + "/geodiffnet_L12_t0/metrics.csv"));

    REQUIRE(run_cli("sweep" + common + labels + " --out '" + dir +
                    "/bad' --layers 11,11 --timesteps 0") == 2);
    REQUIRE(run_cli("sweep" + common + labels + " --out '" + dir +
                    "/bad' --layers abc --timesteps 0") == 2);
    REQUIRE(run_cli("sweep" + common + labels + " --out '" + dir +
                    "/bad' --layers 12 --timesteps ''") == 2);

    const std::string vzdir = dir + "/viz";
    REQUIRE(run_cli("viz" + common + " --out '" + vzdir +
                    "' --layers 12 --timesteps 0 --clusters 3", log) == 0);
    const std::string ppm = read_file(vzdir + "/viz_L12_t0.ppm");
    REQUIRE(ppm.rfind("P6\n20 20\n255\n", 0) == 0);
}
