#include "test_support.hpp"

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "hazeforge/checkpoint.hpp"
#include "hazeforge/config.hpp"
#include "hazeforge/io.hpp"
#include "hazeforge/pipeline.hpp"

namespace {

using namespace hazeforge;

// Scoped override of one environment variable; restores the prior state.
class EnvGuard {
  public:
    EnvGuard(const char* name, const char* value) : name_(name) {
        if (const char* old = std::getenv(name))
            old_ = old;
        ::setenv(name, value, 1);
    }
    ~EnvGuard() {
        if (old_)
            ::setenv(name_, old_->c_str(), 1);
        else
            ::unsetenv(name_);
    }

  private:
    const char* name_;
    std::optional<std::string> old_;
};

// A self-consistent source pair: smooth clean image plus a physically hazed
// counterpart, so the estimator sees plausible input.
HazePair make_source_pair(const std::string& id, int size, std::uint64_t seed) {
    const Image clean = testsupport::smooth_image(size, size, seed);
    const DensityMap beta(Grid(size, size, 3, 0.8));
    Grid ramp(size, size, 1);
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x)
            ramp.at(y, x, 0) = size > 1 ? 1.0 - static_cast<double>(y) / (size - 1) : 1.0;
    const DepthMap depth(std::move(ramp));
    const AtmosphericMap atmo(Grid(size, size, 1, 0.75));
    const Image hazy = render_haze(clean, compute_transmission(beta, depth), atmo);
    return HazePair{hazy, clean, id, std::nullopt};
}

std::string save_toy_checkpoint(const std::string& path, std::uint64_t seed, ModelToggles toggles) {
    AugmenterModel model(MapperConfig::toy_defaults(seed), toggles, /*trainable=*/false);
    save_checkpoint(path, model, nullptr, 0, seed, 0.0);
    return checkpoint_id(path);
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    REQUIRE(out.good());
    out << text;
}

std::map<std::string, int> entries_per_source(const Manifest& m) {
    std::map<std::string, int> counts;
    for (const auto& e : m.entries)
        ++counts[e.source_pair_id];
    return counts;
}

} // namespace

TEST_CASE("config files parse sections, comments, and typed values", "[pipeline]") {
    const std::string text =
        "top = bare\n"
        "[model]\n"
        "# full-line comment\n"
        "name = wide net   ; trailing comment\n"
        "channels = 21\n"
        "rate=0.125\n"
        "  big   =   18446744073709551615\n"
        "\n"
        "[flags]\n"
        "a = true\n"
        "b = 0\n"
        "c = yes\n"
        "d = off\n";
    const ConfigFile cfg = ConfigFile::parse(text);

    CHECK(cfg.has("top"));
    CHECK(cfg.get_string("top", "") == "bare");
    CHECK(cfg.get_string("model.name", "") == "wide net");
    CHECK(cfg.get_int("model.channels", 0) == 21);
    CHECK(cfg.get_double("model.rate", 0.0) == 0.125);
    CHECK(cfg.get_u64("model.big", 0) == 18446744073709551615ull);
    CHECK(cfg.get_bool("flags.a", false));
    CHECK_FALSE(cfg.get_bool("flags.b", true));
    CHECK(cfg.get_bool("flags.c", false));
    CHECK_FALSE(cfg.get_bool("flags.d", true));

    CHECK_FALSE(cfg.has("model.rate "));
    CHECK(cfg.get_string("missing.key", "fallback") == "fallback");
    CHECK(cfg.get_int("missing.key", -3) == -3);
    CHECK(cfg.get_double("missing.key", 2.5) == 2.5);
    CHECK(cfg.get_bool("missing.key", true));
}

TEST_CASE("config files reject malformed input", "[pipeline]") {
    CHECK_THROWS_AS(ConfigFile::parse("[section\nk = v\n"), UsageError);
    CHECK_THROWS_AS(ConfigFile::parse("just a line without equals\n"), UsageError);
    CHECK_THROWS_AS(ConfigFile::parse(" = 5\n"), UsageError);

    const ConfigFile cfg = ConfigFile::parse("k = abc\nn = 5x\nb = maybe\n");
    CHECK_THROWS_AS(cfg.get_double("k", 0.0), UsageError);
    CHECK_THROWS_AS(cfg.get_int("n", 0), UsageError);
    CHECK_THROWS_AS(cfg.get_u64("n", 0), UsageError);
    CHECK_THROWS_AS(cfg.get_bool("b", false), UsageError);

    CHECK_THROWS_AS(ConfigFile::parse_file("/nonexistent/config.ini"), IoError);
}

TEST_CASE("pipeline config defaults to the toy setup and echoes overrides", "[pipeline]") {
    const PipelineConfig defaults = load_pipeline_config(ConfigFile::parse(""));
    CHECK(defaults.mapper.variant == "toy");
    CHECK(defaults.mapper.base_channels == 8);
    CHECK(defaults.mapper.depth_levels == 2);
    CHECK(defaults.toggles.use_dhr);
    CHECK(defaults.toggles.use_drm);
    CHECK(defaults.train.lr_init == 5e-5);
    CHECK(defaults.train.lr_final == 1e-7);
    CHECK(defaults.train.epochs == 270);
    CHECK(defaults.depth.kind == "ramp");
    CHECK(defaults.policy.w_scale == 0.4);
    CHECK(defaults.policy.haze_free_threshold == 0.9);

    const std::string text =
        "[mapper]\n"
        "variant = paper\n"
        "seed = 77\n"
        "[toggles]\n"
        "use_dhr = false\n"
        "use_drm = false\n"
        "[train]\n"
        "lr_init = 0.002\n"
        "lr_final = 0.00001\n"
        "epochs = 40\n"
        "batch_size = 1\n"
        "crop = 32\n"
        "lambda_perc = 0\n"
        "seed = 9\n"
        "[depth]\n"
        "kind = file\n"
        "source = /maps\n"
        "[policy]\n"
        "w_scale = 1\n"
        "w_reverse = 0\n"
        "w_interpolate = 0\n"
        "w_compose = 0\n"
        "alpha_lo = 0.75\n"
        "alpha_hi = 1.5\n"
        "fill_lo = 0.7\n"
        "fill_hi = 1.1\n"
        "haze_free_threshold = 0.85\n";
    const PipelineConfig cfg = load_pipeline_config(ConfigFile::parse(text));
    CHECK(cfg.mapper.variant == "paper");
    CHECK(cfg.mapper.base_channels == 21);
    CHECK(cfg.mapper.depth_levels == 3);
    CHECK(cfg.mapper.seed == 77);
    CHECK_FALSE(cfg.toggles.use_dhr);
    CHECK_FALSE(cfg.toggles.use_drm);
    CHECK(cfg.train.lr_init == 0.002);
    CHECK(cfg.train.epochs == 40);
    CHECK(cfg.train.batch_size == 1);
    CHECK(cfg.train.crop == 32);
    CHECK(cfg.train.lambda_perc == 0.0);
    CHECK(cfg.train.seed == 9);
    CHECK(cfg.depth.kind == "file");
    CHECK(cfg.depth.source == "/maps");
    CHECK(cfg.policy.w_scale == 1.0);
    CHECK(cfg.policy.w_reverse == 0.0);
    CHECK(cfg.policy.alpha_range.lo == 0.75);
    CHECK(cfg.policy.alpha_range.hi == 1.5);
    CHECK(cfg.policy.fill_range.lo == 0.7);
    CHECK(cfg.policy.fill_range.hi == 1.1);
    CHECK(cfg.policy.haze_free_threshold == 0.85);
}

TEST_CASE("pipeline config propagates validation failures", "[pipeline]") {
    CHECK_THROWS_AS(load_pipeline_config(ConfigFile::parse("[mapper]\nvariant = banana\n")),
                    UsageError);
    CHECK_THROWS_AS(load_pipeline_config(ConfigFile::parse("[mapper]\nbase_channels = 0\n")),
                    ValidationError);
    CHECK_THROWS_AS(load_pipeline_config(ConfigFile::parse("[train]\ncrop = 6\n")), ValidationError);
    CHECK_THROWS_AS(load_pipeline_config(ConfigFile::parse("[train]\nepochs = 0\n")),
                    ValidationError);
    CHECK_THROWS_AS(
        load_pipeline_config(ConfigFile::parse("[policy]\nhaze_free_threshold = 1.0\n")),
        ValidationError);
    CHECK_THROWS_AS(load_pipeline_config(ConfigFile::parse(
                        "[policy]\nw_scale = 0\nw_reverse = 0\nw_interpolate = 0\nw_compose = 0\n")),
                    ValidationError);
}

TEST_CASE("manifests round trip through JSON byte for byte", "[pipeline]") {
    Manifest m;
    m.checkpoint_id = "abc123";
    m.checkpoint_path = "/tmp/model.hfck";
    m.depth.kind = "file";
    m.depth.source = "/maps";
    m.toggles.use_dhr = true;
    m.toggles.use_drm = false;
    m.haze_free_threshold = 0.875;
    m.seed = 1234567890123456789ull;
    m.count = 2;
    ManifestEntry e0;
    e0.index = 0;
    e0.source_pair_id = "city";
    e0.output_hazy = "hazy/city_aug0_scale.png";
    e0.output_clean = "clean/city_aug0_scale.png";
    e0.spec.alpha = 1.375;
    e0.spec.strategy = Strategy::scale;
    e0.spec.seed = 42;
    e0.rng_seed = derive_seed(m.seed, 0);
    ManifestEntry e1;
    e1.index = 1;
    e1.source_pair_id = "field";
    e1.output_hazy = "hazy/field_aug1_compose.png";
    e1.output_clean = "clean/field_aug1_compose.png";
    e1.spec.alpha = 0.625;
    e1.spec.gamma = 0.25;
    e1.spec.eta = 0.5;
    e1.spec.fill_range = {0.7, 1.2};
    e1.spec.strategy = Strategy::compose;
    e1.spec.seed = 18446744073709551615ull;
    e1.rng_seed = derive_seed(m.seed, 1);
    m.entries = {e0, e1};

    testsupport::TempDir dir;
    const std::string path = dir.str("manifest.json");
    write_manifest(m, path);
    const Manifest r = read_manifest(path);

    CHECK(r.version == m.version);
    CHECK(r.checkpoint_id == m.checkpoint_id);
    CHECK(r.checkpoint_path == m.checkpoint_path);
    CHECK(r.depth.kind == m.depth.kind);
    CHECK(r.depth.source == m.depth.source);
    CHECK(r.toggles.use_dhr == m.toggles.use_dhr);
    CHECK(r.toggles.use_drm == m.toggles.use_drm);
    CHECK(r.haze_free_threshold == m.haze_free_threshold);
    CHECK(r.seed == m.seed);
    CHECK(r.count == m.count);
    CHECK_FALSE(r.failed);
    REQUIRE(r.entries.size() == 2);
    for (std::size_t i = 0; i < 2; ++i) {
        CHECK(r.entries[i].index == m.entries[i].index);
        CHECK(r.entries[i].source_pair_id == m.entries[i].source_pair_id);
        CHECK(r.entries[i].output_hazy == m.entries[i].output_hazy);
        CHECK(r.entries[i].output_clean == m.entries[i].output_clean);
        CHECK(r.entries[i].spec.alpha == m.entries[i].spec.alpha);
        CHECK(r.entries[i].spec.gamma == m.entries[i].spec.gamma);
        CHECK(r.entries[i].spec.eta == m.entries[i].spec.eta);
        CHECK(r.entries[i].spec.fill_range.lo == m.entries[i].spec.fill_range.lo);
        CHECK(r.entries[i].spec.fill_range.hi == m.entries[i].spec.fill_range.hi);
        CHECK(r.entries[i].spec.strategy == m.entries[i].spec.strategy);
        CHECK(r.entries[i].spec.seed == m.entries[i].spec.seed);
        CHECK(r.entries[i].rng_seed == m.entries[i].rng_seed);
    }

    // Canonical serialization: re-emitting the parsed manifest reproduces the
    // file exactly.
    CHECK(manifest_to_json(r) == manifest_to_json(m));
    const std::string again = dir.str("again.json");
    write_manifest(r, again);
    CHECK(testsupport::same_bytes(path, again));
}

TEST_CASE("manifest reader rejects bad files", "[pipeline]") {
    testsupport::TempDir dir;
    CHECK_THROWS_AS(read_manifest(dir.str("missing.json")), IoError);

    const std::string bad = dir.str("bad.json");
    write_text(bad, "{not json");
    CHECK_THROWS_AS(read_manifest(bad), IoError);

    Manifest m;
    m.version = 99;
    const std::string wrong = dir.str("wrong.json");
    write_manifest(m, wrong);
    CHECK_THROWS_AS(read_manifest(wrong), IoError);
}

TEST_CASE("paired-dirs ingestion pairs by stem and sorts by id", "[pipeline]") {
    testsupport::TempDir dir;
    namespace fs = std::filesystem;
    fs::create_directories(dir.path() / "hazy");
    fs::create_directories(dir.path() / "clean");
    fs::create_directories(dir.path() / "depth");

    for (const std::string id : {"north", "east", "south"}) {
        const std::uint64_t seed = id.size() + id[0];
        save_image(dir.path() / "hazy" / (id + ".png"), testsupport::smooth_image(20, 16, seed));
        save_image(dir.path() / "clean" / (id + ".png"), testsupport::smooth_image(20, 16, seed + 1));
    }
    Grid depth(20, 16, 1);
    for (int y = 0; y < 20; ++y)
        for (int x = 0; x < 16; ++x)
            depth.at(y, x, 0) = (y + x) / 34.0;
    save_map(dir.path() / "depth" / "east.hfpm", depth);
    write_text(dir.path() / "hazy" / "notes.txt", "not an image");

    const auto pairs = ingest_dataset(dir.str(""), "paired-dirs");
    REQUIRE(pairs.size() == 3);
    CHECK(pairs[0].id == "east");
    CHECK(pairs[1].id == "north");
    CHECK(pairs[2].id == "south");
    REQUIRE(pairs[0].depth.has_value());
    CHECK_FALSE(pairs[1].depth.has_value());
    CHECK_FALSE(pairs[2].depth.has_value());

    const Image expected_hazy = load_image(dir.path() / "hazy" / "north.png");
    CHECK(pairs[1].hazy.grid().values() == expected_hazy.grid().values());
    const Grid expected_depth = load_map(dir.path() / "depth" / "east.hfpm");
    CHECK(pairs[0].depth->grid().values() == expected_depth.values());
}

TEST_CASE("paired-dirs ingestion reports structural problems", "[pipeline]") {
    testsupport::TempDir dir;
    namespace fs = std::filesystem;

    CHECK_THROWS_AS(ingest_dataset(dir.str("void"), "paired-dirs"), IoError);

    fs::create_directories(dir.path() / "hazy");
    fs::create_directories(dir.path() / "clean");
    CHECK_THROWS_AS(ingest_dataset(dir.str(""), "paired-dirs"), ValidationError);

    save_image(dir.path() / "hazy" / "orphan.png", testsupport::smooth_image(12, 12, 3));
    try {
        ingest_dataset(dir.str(""), "paired-dirs");
        FAIL("expected IoError for the unmatched hazy image");
    } catch (const IoError& e) {
        CHECK(std::string(e.what()).find("orphan") != std::string::npos);
    }

    CHECK_THROWS_AS(ingest_dataset(dir.str(""), "spiral"), UsageError);
}

TEST_CASE("list-file ingestion resolves relative paths and optional depth", "[pipeline]") {
    testsupport::TempDir dir;
    save_image(dir.path() / "bh.png", testsupport::smooth_image(16, 16, 10));
    save_image(dir.path() / "bc.png", testsupport::smooth_image(16, 16, 11));
    save_image(dir.path() / "ah.png", testsupport::smooth_image(16, 16, 12));
    save_image(dir.path() / "ac.png", testsupport::smooth_image(16, 16, 13));
    save_map(dir.path() / "bd.hfpm", Grid(16, 16, 1, 0.5));

    write_text(dir.path() / "list.txt",
               "# pairs for the smoke set\n"
               "beta,bh.png,bc.png,bd.hfpm\n"
               "\n"
               "alpha,ah.png,ac.png\n");
    const auto pairs = ingest_dataset(dir.str("list.txt"), "list-file");
    REQUIRE(pairs.size() == 2);
    CHECK(pairs[0].id == "alpha");
    CHECK(pairs[1].id == "beta");
    CHECK_FALSE(pairs[0].depth.has_value());
    REQUIRE(pairs[1].depth.has_value());
    CHECK(pairs[1].depth->at(3, 3) == 0.5);

    write_text(dir.path() / "short.txt", "id,only_one_path\n");
    CHECK_THROWS_AS(ingest_dataset(dir.str("short.txt"), "list-file"), UsageError);

    write_text(dir.path() / "dup.txt",
               "same,ah.png,ac.png\n"
               "same,bh.png,bc.png\n");
    CHECK_THROWS_AS(ingest_dataset(dir.str("dup.txt"), "list-file"), ValidationError);

    write_text(dir.path() / "empty.txt", "# nothing here\n");
    CHECK_THROWS_AS(ingest_dataset(dir.str("empty.txt"), "list-file"), ValidationError);

    CHECK_THROWS_AS(ingest_dataset(dir.str("absent.txt"), "list-file"), IoError);
}

TEST_CASE("augmentation writes a balanced, reproducible dataset", "[pipeline]") {
    testsupport::TempDir dir;
    const std::string ck = dir.str("model.hfck");
    const std::string ck_id = save_toy_checkpoint(ck, 5, ModelToggles{});
    const std::vector<HazePair> pairs = {make_source_pair("pa", 24, 100),
                                         make_source_pair("pb", 24, 200)};

    AugmentOptions opts;
    opts.checkpoint_path = ck;
    opts.depth = DepthProviderConfig{};
    opts.count = 6;
    opts.seed = 11;
    opts.out_dir = dir.str("run1");
    const Manifest m = augment_dataset(pairs, opts);

    REQUIRE(m.entries.size() == 6);
    CHECK(m.checkpoint_id == ck_id);
    CHECK(m.seed == 11);
    CHECK(m.count == 6);
    CHECK(m.toggles.use_dhr);
    CHECK(m.toggles.use_drm);
    const auto counts = entries_per_source(m);
    CHECK(counts.at("pa") == 3);
    CHECK(counts.at("pb") == 3);

    namespace fs = std::filesystem;
    for (int k = 0; k < 6; ++k) {
        const ManifestEntry& e = m.entries[static_cast<std::size_t>(k)];
        CHECK(e.index == k);
        CHECK(e.rng_seed == derive_seed(opts.seed, static_cast<std::uint64_t>(k)));
        const std::string expected_id = k % 2 == 0 ? "pa" : "pb";
        CHECK(e.source_pair_id == expected_id);
        CHECK(e.output_hazy == "hazy/" + expected_id + "_aug" + std::to_string(k) + "_" +
                                   to_string(e.spec.strategy) + ".png");
        CHECK(fs::is_regular_file(fs::path(opts.out_dir) / e.output_hazy));
        CHECK(fs::is_regular_file(fs::path(opts.out_dir) / e.output_clean));

        // The recorded spec is exactly what the policy samples from the
        // recorded per-entry seed.
        const AugmentationSpec expected = sample_spec(opts.policy, e.rng_seed);
        CHECK(e.spec.alpha == expected.alpha);
        CHECK(e.spec.gamma == expected.gamma);
        CHECK(e.spec.eta == expected.eta);
        CHECK(e.spec.strategy == expected.strategy);
        CHECK(e.spec.seed == expected.seed);

        const Image out = load_image(fs::path(opts.out_dir) / e.output_hazy);
        CHECK(out.height() == 24);
        CHECK(out.width() == 24);
    }

    // The on-disk manifest equals the returned one.
    const Manifest on_disk = read_manifest(opts.out_dir + "/manifest.json");
    CHECK(manifest_to_json(on_disk) == manifest_to_json(m));

    // Same seed, fresh directory: identical bytes for every artifact.
    AugmentOptions opts2 = opts;
    opts2.out_dir = dir.str("run2");
    const Manifest m2 = augment_dataset(pairs, opts2);
    CHECK(testsupport::same_bytes(opts.out_dir + "/manifest.json", opts2.out_dir + "/manifest.json"));
    for (const auto& e : m.entries) {
        CHECK(testsupport::same_bytes(opts.out_dir + "/" + e.output_hazy,
                                      opts2.out_dir + "/" + e.output_hazy));
        CHECK(testsupport::same_bytes(opts.out_dir + "/" + e.output_clean,
                                      opts2.out_dir + "/" + e.output_clean));
    }

    // A different seed changes the sampled specs and at least one output.
    AugmentOptions opts3 = opts;
    opts3.seed = 12;
    opts3.out_dir = dir.str("run3");
    const Manifest m3 = augment_dataset(pairs, opts3);
    CHECK_FALSE(testsupport::same_bytes(opts.out_dir + "/manifest.json",
                                        opts3.out_dir + "/manifest.json"));
    bool any_differs = false;
    for (std::size_t i = 0; i < m.entries.size(); ++i) {
        const std::string a = opts.out_dir + "/" + m.entries[i].output_hazy;
        const std::string b = opts3.out_dir + "/" + m3.entries[i].output_hazy;
        if (!std::filesystem::exists(b) || !testsupport::same_bytes(a, b))
            any_differs = true;
    }
    CHECK(any_differs);
}

TEST_CASE("augmentation distributes a non-divisible count round robin", "[pipeline]") {
    testsupport::TempDir dir;
    const std::string ck = dir.str("model.hfck");
    save_toy_checkpoint(ck, 6, ModelToggles{});
    const std::vector<HazePair> pairs = {make_source_pair("u", 16, 1), make_source_pair("v", 16, 2),
                                         make_source_pair("w", 16, 3)};

    AugmentOptions opts;
    opts.checkpoint_path = ck;
    opts.count = 7;
    opts.seed = 4;
    opts.out_dir = dir.str("out");
    const Manifest m = augment_dataset(pairs, opts);
    const auto counts = entries_per_source(m);
    CHECK(counts.at("u") == 3);
    CHECK(counts.at("v") == 2);
    CHECK(counts.at("w") == 2);
}

TEST_CASE("augmentation output is independent of the worker count", "[pipeline]") {
    testsupport::TempDir dir;
    const std::string ck = dir.str("model.hfck");
    save_toy_checkpoint(ck, 7, ModelToggles{});
    const std::vector<HazePair> pairs = {make_source_pair("pa", 16, 50),
                                         make_source_pair("pb", 16, 60)};

    AugmentOptions opts;
    opts.checkpoint_path = ck;
    opts.count = 5;
    opts.seed = 21;

    Manifest serial;
    {
        EnvGuard guard("HAZEFORGE_THREADS", "1");
        opts.out_dir = dir.str("serial");
        serial = augment_dataset(pairs, opts);
    }
    Manifest threaded;
    {
        EnvGuard guard("HAZEFORGE_THREADS", "3");
        opts.out_dir = dir.str("threaded");
        threaded = augment_dataset(pairs, opts);
    }
    CHECK(testsupport::same_bytes(dir.str("serial/manifest.json"), dir.str("threaded/manifest.json")));
    for (const auto& e : serial.entries)
        CHECK(testsupport::same_bytes(dir.str("serial/") + e.output_hazy,
                                      dir.str("threaded/") + e.output_hazy));
}

TEST_CASE("augmentation rejects bad requests and records failures", "[pipeline]") {
    testsupport::TempDir dir;
    const std::string ck = dir.str("model.hfck");
    save_toy_checkpoint(ck, 8, ModelToggles{});
    const std::vector<HazePair> pairs = {make_source_pair("pa", 16, 70)};

    AugmentOptions opts;
    opts.checkpoint_path = ck;
    opts.count = 0;
    opts.out_dir = dir.str("out");
    CHECK_THROWS_AS(augment_dataset(pairs, opts), UsageError);

    opts.count = 2;
    CHECK_THROWS_AS(augment_dataset({}, opts), ValidationError);

    // A depth provider pointed at an empty directory fails per entry; the
    // partial manifest still lands on disk, marked failed.
    EnvGuard guard("HAZEFORGE_THREADS", "1");
    namespace fs = std::filesystem;
    fs::create_directories(dir.path() / "no_maps");
    opts.depth = DepthProviderConfig{"file", dir.str("no_maps")};
    opts.out_dir = dir.str("failing");
    CHECK_THROWS_AS(augment_dataset(pairs, opts), IoError);
    const Manifest failed = read_manifest(dir.str("failing/manifest.json"));
    CHECK(failed.failed);
    CHECK_FALSE(failed.error.empty());
    CHECK_THROWS_AS(replay_manifest(pairs, ReplayOptions{dir.str("failing/manifest.json"), "",
                                                         dir.str("replayed")}),
                    UsageError);
}

TEST_CASE("replay regenerates the dataset byte for byte", "[pipeline]") {
    testsupport::TempDir dir;
    const std::string ck = dir.str("model.hfck");
    save_toy_checkpoint(ck, 9, ModelToggles{});
    const std::vector<HazePair> pairs = {make_source_pair("pa", 20, 80),
                                         make_source_pair("pb", 20, 90)};

    AugmentOptions opts;
    opts.checkpoint_path = ck;
    opts.count = 4;
    opts.seed = 31;
    opts.out_dir = dir.str("original");
    const Manifest original = augment_dataset(pairs, opts);

    ReplayOptions ropts;
    ropts.manifest_path = dir.str("original/manifest.json");
    ropts.out_dir = dir.str("replayed");
    const Manifest replayed = replay_manifest(pairs, ropts);
    CHECK(manifest_to_json(replayed) == manifest_to_json(original));
    CHECK(testsupport::same_bytes(dir.str("original/manifest.json"),
                                  dir.str("replayed/manifest.json")));
    for (const auto& e : original.entries) {
        CHECK(testsupport::same_bytes(dir.str("original/") + e.output_hazy,
                                      dir.str("replayed/") + e.output_hazy));
        CHECK(testsupport::same_bytes(dir.str("original/") + e.output_clean,
                                      dir.str("replayed/") + e.output_clean));
    }

    // An explicit checkpoint path works when it is the same model.
    namespace fs = std::filesystem;
    fs::copy_file(ck, dir.path() / "copy.hfck");
    ropts.checkpoint_path = dir.str("copy.hfck");
    ropts.out_dir = dir.str("replayed2");
    replay_manifest(pairs, ropts);
    CHECK(testsupport::same_bytes(dir.str("original/") + original.entries[0].output_hazy,
                                  dir.str("replayed2/") + original.entries[0].output_hazy));

    // A different model is refused by checkpoint id.
    const std::string other = dir.str("other.hfck");
    save_toy_checkpoint(other, 10, ModelToggles{});
    ropts.checkpoint_path = other;
    ropts.out_dir = dir.str("replayed3");
    CHECK_THROWS_AS(replay_manifest(pairs, ropts), ValidationError);

    // Replaying against a dataset that lacks a recorded source fails.
    ropts.checkpoint_path.clear();
    ropts.out_dir = dir.str("replayed4");
    const std::vector<HazePair> partial = {make_source_pair("pb", 20, 90)};
    CHECK_THROWS_AS(replay_manifest(partial, ropts), ValidationError);
}

TEST_CASE("directory evaluation reports per-file and mean metrics", "[pipeline]") {
    testsupport::TempDir dir;
    namespace fs = std::filesystem;
    fs::create_directories(dir.path() / "a");
    fs::create_directories(dir.path() / "b");

    const Image x = testsupport::smooth_image(16, 16, 500);
    const Image y = testsupport::smooth_image(16, 16, 501);
    save_image(dir.path() / "a" / "x.png", x);
    save_image(dir.path() / "b" / "x.png", x);
    save_image(dir.path() / "a" / "y.png", y);
    Grid shifted = y.grid();
    for (double& v : shifted.values())
        v = std::min(1.0, v + 0.25);
    save_image(dir.path() / "b" / "y.png", Image(std::move(shifted)));

    const EvalReport self = evaluate_directories(dir.str("a"), dir.str("a"));
    REQUIRE(self.rows.size() == 2);
    for (const auto& row : self.rows) {
        CHECK(std::isinf(row.psnr_db));
        CHECK(row.psnr_db > 0);
        CHECK(row.ssim_value == 1.0);
    }
    CHECK(std::isinf(self.mean_psnr));
    CHECK(self.mean_ssim == 1.0);

    const EvalReport cross = evaluate_directories(dir.str("a"), dir.str("b"));
    REQUIRE(cross.rows.size() == 2);
    CHECK(cross.rows[0].name == "x.png");
    CHECK(cross.rows[1].name == "y.png");
    CHECK(std::isinf(cross.rows[0].psnr_db));
    CHECK(std::isfinite(cross.rows[1].psnr_db));
    CHECK(cross.rows[1].psnr_db > 0.0);
    CHECK(cross.rows[1].ssim_value < 1.0);
    CHECK(std::isinf(cross.mean_psnr));

    fs::create_directories(dir.path() / "partial");
    save_image(dir.path() / "partial" / "x.png", x);
    CHECK_THROWS_AS(evaluate_directories(dir.str("a"), dir.str("partial")), IoError);
    fs::create_directories(dir.path() / "empty");
    CHECK_THROWS_AS(evaluate_directories(dir.str("empty"), dir.str("a")), ValidationError);
    CHECK_THROWS_AS(evaluate_directories(dir.str("nope"), dir.str("a")), IoError);
}
