#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstddef>

#include "hazeforge/checkpoint.hpp"
#include "hazeforge/mappers.hpp"

#include "test_support.hpp"

using namespace hazeforge;

namespace {

// Independent parameter-count oracle: the architecture written out as plain
// arithmetic (3x3 convs, weight + bias per conv).
std::size_t conv_params(int ic, int oc) { return static_cast<std::size_t>(oc) * (ic * 9 + 1); }

std::size_t encoder_params(int in_ch, const MapperConfig& cfg) {
    std::size_t total = conv_params(in_ch, cfg.base_channels);
    for (int i = 0; i < cfg.depth_levels; ++i) {
        const int ch = cfg.base_channels << i;
        total += conv_params(ch, ch) + conv_params(ch, ch * 2);
    }
    const int bottom = cfg.base_channels << cfg.depth_levels;
    return total + conv_params(bottom, bottom);
}

std::size_t decoder_params(const MapperConfig& cfg, int out_ch) {
    std::size_t total = 0;
    for (int lev = 0; lev < cfg.depth_levels; ++lev) {
        const int ch = cfg.base_channels << lev;
        total += 2 * conv_params(ch * 2, ch);
    }
    return total + conv_params(cfg.base_channels, out_ch);
}

std::size_t model_params(const MapperConfig& cfg) {
    const std::size_t estimator = encoder_params(3, cfg) + decoder_params(cfg, 3) + decoder_params(cfg, 1);
    const std::size_t depth_refiner = encoder_params(4, cfg) + decoder_params(cfg, 1);
    const std::size_t haze_refiner = encoder_params(6, cfg) + decoder_params(cfg, 3);
    return estimator + depth_refiner + haze_refiner;
}

void set_parameter(const AugmenterModel& model, const std::string& name, double value) {
    bool found = false;
    for (const auto& p : model.parameters())
        if (p.name == name) {
            std::fill(p.node->value.values().begin(), p.node->value.values().end(), value);
            found = true;
        }
    REQUIRE(found);
}

} // namespace

TEST_CASE("parameter budgets", "[mappers]") {
    SECTION("toy model matches the oracle count and fits its budget") {
        const MapperConfig cfg = MapperConfig::toy_defaults(1);
        const AugmenterModel model(cfg, {}, false);
        CHECK(model.parameter_count() == model_params(cfg));
        CHECK(model.parameter_count() <= 200000u);
    }
    SECTION("full-size model matches the oracle count and lands in its band") {
        const MapperConfig cfg = MapperConfig::paper_defaults(1);
        const AugmenterModel model(cfg, {}, false);
        CHECK(model.parameter_count() == model_params(cfg));
        CHECK(model.parameter_count() >= 2500000u);
        CHECK(model.parameter_count() <= 3500000u);
    }
    SECTION("over-budget configurations are rejected at construction") {
        MapperConfig cfg = MapperConfig::toy_defaults(1);
        cfg.base_channels = 16; // roughly 4x the toy parameter count
        REQUIRE(model_params(cfg) > cfg.parameter_budget());
        CHECK_THROWS_AS(AugmenterModel(cfg, {}, false), ValidationError);
    }
    SECTION("config validation") {
        MapperConfig cfg = MapperConfig::toy_defaults();
        cfg.base_channels = 0;
        CHECK_THROWS_AS(cfg.validate(), ValidationError);
        cfg = MapperConfig::toy_defaults();
        cfg.depth_levels = 0;
        CHECK_THROWS_AS(cfg.validate(), ValidationError);
        cfg = MapperConfig::toy_defaults();
        cfg.variant = "huge";
        CHECK_THROWS_AS(cfg.validate(), ValidationError);
        CHECK(MapperConfig::toy_defaults().spatial_multiple() == 4);
        CHECK(MapperConfig::paper_defaults().spatial_multiple() == 8);
    }
}

TEST_CASE("initialisation is deterministic in the seed", "[mappers]") {
    const AugmenterModel m1(MapperConfig::toy_defaults(7), {}, false);
    const AugmenterModel m2(MapperConfig::toy_defaults(7), {}, false);
    const AugmenterModel m3(MapperConfig::toy_defaults(8), {}, false);

    const auto p1 = m1.parameters();
    const auto p2 = m2.parameters();
    const auto p3 = m3.parameters();
    REQUIRE(p1.size() == p2.size());

    bool any_difference_to_m3 = false;
    for (std::size_t i = 0; i < p1.size(); ++i) {
        REQUIRE(p1[i].name == p2[i].name);
        REQUIRE(p1[i].node->value.values() == p2[i].node->value.values());
        if (p1[i].node->value.values() != p3[i].node->value.values())
            any_difference_to_m3 = true;
    }
    CHECK(any_difference_to_m3);
}

TEST_CASE("parameter collection respects toggles and head initialisation", "[mappers]") {
    const AugmenterModel model(MapperConfig::toy_defaults(2), {/*use_dhr=*/false, /*use_drm=*/true}, true);

    bool saw_zero_head = false;
    for (const auto& p : model.parameters()) {
        if (p.name == "depth_refiner.decoder.head.weight") {
            saw_zero_head = true;
            for (double v : p.node->value.values())
                CHECK(v == 0.0);
        }
        if (p.name == "estimator.density.head.weight") {
            double mag = 0.0;
            for (double v : p.node->value.values())
                mag += std::abs(v);
            CHECK(mag > 0.0); // non-residual heads start random
        }
    }
    CHECK(saw_zero_head);

    for (const auto& p : model.trainable_parameters())
        CHECK(p.name.find("haze_refiner") == std::string::npos);
    CHECK(model.trainable_parameters().size() < model.parameters().size());

    const AugmenterModel all_on(MapperConfig::toy_defaults(2), {true, true}, true);
    CHECK(all_on.trainable_parameters().size() == all_on.parameters().size());
}

TEST_CASE("estimator outputs have the right shapes and ranges", "[mappers]") {
    const AugmenterModel model(MapperConfig::toy_defaults(3), {}, false);
    const Image hazy = testsupport::random_image(32, 32, 10);
    const auto est = estimate_parameters(model.estimator(), hazy, model.config().spatial_multiple());

    CHECK(est.density.height() == 32);
    CHECK(est.density.width() == 32);
    CHECK(est.density.channels() == 3);
    CHECK(est.atmospheric.height() == 32);
    CHECK(est.atmospheric.width() == 32);
    CHECK(est.atmospheric.channels() == 1);
    for (double v : est.density.grid().values()) {
        CHECK(std::isfinite(v));
        CHECK(v >= 0.0);
    }
    for (double v : est.atmospheric.grid().values()) {
        CHECK(v > 0.0);
        CHECK(v < 1.0);
    }

    SECTION("repeated inference is bitwise identical") {
        const auto again = estimate_parameters(model.estimator(), hazy, model.config().spatial_multiple());
        CHECK(again.density.grid().values() == est.density.grid().values());
        CHECK(again.atmospheric.grid().values() == est.atmospheric.grid().values());
    }
}

TEST_CASE("models are fully convolutional over padded sizes", "[mappers]") {
    const AugmenterModel model(MapperConfig::toy_defaults(4), {}, false);
    const int multiple = model.config().spatial_multiple();

    // 30x34 is not a multiple of 4 in either dimension
    const Image hazy = testsupport::random_image(30, 34, 11);
    const auto est = estimate_parameters(model.estimator(), hazy, multiple);
    CHECK(est.density.height() == 30);
    CHECK(est.density.width() == 34);

    const Image clean = testsupport::random_image(30, 34, 12);
    const DepthMap raw(testsupport::random_grid(30, 34, 1, 0.0, 1.0, 13));
    const DepthMap refined = refine_depth(model.depth_refiner(), raw, clean, multiple);
    CHECK(refined.height() == 30);
    CHECK(refined.width() == 34);

    const Image refined_haze = refine_haze(model.haze_refiner(), hazy, clean, multiple);
    CHECK(refined_haze.height() == 30);
    CHECK(refined_haze.width() == 34);
    for (double v : refined_haze.grid().values()) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }

    CHECK_THROWS_AS(refine_depth(model.depth_refiner(), DepthMap(Grid(8, 8, 1, 0.5)), clean, multiple),
                    ShapeError);
    CHECK_THROWS_AS(refine_haze(model.haze_refiner(), testsupport::random_image(8, 8, 14), clean, multiple),
                    ShapeError);
}

TEST_CASE("constant inputs give constant outputs", "[mappers]") {
    // replicate padding everywhere: no output pixel can tell where it is
    const AugmenterModel model(MapperConfig::toy_defaults(5), {}, false);
    const Image hazy = testsupport::constant_image(16, 20, 0.42);
    const auto est = estimate_parameters(model.estimator(), hazy, model.config().spatial_multiple());

    for (int c = 0; c < 3; ++c) {
        const double ref = est.density.at(7, 9, c);
        for (int y = 0; y < 16; ++y)
            for (int x = 0; x < 20; ++x)
                REQUIRE(std::abs(est.density.at(y, x, c) - ref) <= 1e-12);
    }
    const double aref = est.atmospheric.at(7, 9);
    for (int y = 0; y < 16; ++y)
        for (int x = 0; x < 20; ++x)
            REQUIRE(std::abs(est.atmospheric.at(y, x) - aref) <= 1e-12);
}

TEST_CASE("untrained refiners are the identity", "[mappers]") {
    const AugmenterModel model(MapperConfig::toy_defaults(6), {}, false);
    const Image clean = testsupport::random_image(24, 28, 15);
    const DepthMap raw(testsupport::random_grid(24, 28, 1, 0.0, 1.0, 16));

    const DepthMap refined = refine_depth(model.depth_refiner(), raw, clean, 4);
    CHECK(refined.grid().values() == raw.grid().values()); // zero-initialised residual head

    const Image rendered = testsupport::random_image(24, 28, 17);
    const Image polished = refine_haze(model.haze_refiner(), rendered, clean, 4);
    CHECK(polished.grid().values() == rendered.grid().values());

    // perturbing the heads makes them real functions of their inputs
    set_parameter(model, "depth_refiner.decoder.head.weight", 0.05);
    set_parameter(model, "depth_refiner.decoder.head.bias", 0.01);
    const DepthMap moved = refine_depth(model.depth_refiner(), raw, clean, 4);
    double max_change = 0.0;
    for (std::size_t i = 0; i < raw.grid().size(); ++i)
        max_change = std::max(max_change, std::abs(moved.grid().values()[i] - raw.grid().values()[i]));
    CHECK(max_change > 0.0);

    set_parameter(model, "haze_refiner.decoder.head.weight", 0.05);
    set_parameter(model, "haze_refiner.decoder.head.bias", 0.01);
    const Image shifted = refine_haze(model.haze_refiner(), rendered, clean, 4);
    CHECK(shifted.grid().values() != rendered.grid().values());
}

TEST_CASE("graph physics matches the scattering module", "[mappers]") {
    const Grid beta = testsupport::random_grid(6, 7, 3, 0.0, 3.0, 20);
    const Grid depth = testsupport::random_grid(6, 7, 1, 0.0, 1.0, 21);
    const Grid clean = testsupport::random_grid(6, 7, 3, 0.0, 1.0, 22);
    const Grid atm = testsupport::random_grid(6, 7, 1, 0.0, 1.0, 23);

    const auto t_node = transmission_node(nn::constant(nn::to_tensor(beta)),
                                          nn::constant(nn::to_tensor(depth)));
    const TransmissionMap t_ref = compute_transmission(DensityMap(beta), DepthMap(depth));
    const Grid t_graph = nn::to_grid(t_node->value);
    for (std::size_t i = 0; i < t_ref.grid().size(); ++i)
        REQUIRE(t_graph.values()[i] == t_ref.grid().values()[i]);

    const auto o_node = render_node(nn::constant(nn::to_tensor(clean)), t_node,
                                    nn::constant(nn::to_tensor(atm)));
    const Image o_ref = render_haze(Image(clean), t_ref, AtmosphericMap(atm));
    const Grid o_graph = nn::to_grid(o_node->value);
    for (std::size_t i = 0; i < o_ref.grid().size(); ++i)
        REQUIRE(std::abs(o_graph.values()[i] - o_ref.grid().values()[i]) <= 1e-15);
}

TEST_CASE("synthesis pipeline", "[mappers]") {
    const AugmenterModel model(MapperConfig::toy_defaults(9), {}, false);
    const Image clean = testsupport::random_image(16, 16, 30);
    const DepthMap depth(testsupport::random_grid(16, 16, 1, 0.0, 1.0, 31));
    const AtmosphericMap atm(testsupport::random_grid(16, 16, 1, 0.1, 0.9, 32));

    SECTION("zero density reproduces the clean image") {
        const DensityMap beta(Grid(16, 16, 3, 0.0));
        const auto result = synthesize_hazy(clean, beta, atm, depth, nullptr, 4);
        CHECK(result.initial.grid().values() == clean.grid().values());
        CHECK(result.final.grid().values() == clean.grid().values());
    }
    SECTION("without a refiner, final equals initial bitwise") {
        const DensityMap beta(testsupport::random_grid(16, 16, 3, 0.0, 2.0, 33));
        const auto result = synthesize_hazy(clean, beta, atm, depth, nullptr, 4);
        CHECK(result.final.grid().values() == result.initial.grid().values());
    }
    SECTION("with a refiner, final is the refiner applied to initial") {
        const DensityMap beta(testsupport::random_grid(16, 16, 3, 0.0, 2.0, 34));
        const auto result = synthesize_hazy(clean, beta, atm, depth, &model.haze_refiner(), 4);
        const Image direct = refine_haze(model.haze_refiner(), result.initial, clean, 4);
        CHECK(result.final.grid().values() == direct.grid().values());
        // untrained refiner: the residual head contributes nothing yet
        CHECK(result.final.grid().values() == result.initial.grid().values());

        set_parameter(model, "haze_refiner.decoder.head.weight", 0.05);
        set_parameter(model, "haze_refiner.decoder.head.bias", 0.01);
        const auto moved = synthesize_hazy(clean, beta, atm, depth, &model.haze_refiner(), 4);
        CHECK(moved.final.grid().values() != moved.initial.grid().values());
    }
}

TEST_CASE("depth providers", "[mappers]") {
    SECTION("ramp runs from one at the top to zero at the bottom") {
        const Grid ramp = DepthProvider::ramp(5, 3);
        CHECK(ramp.at(0, 0, 0) == 1.0);
        CHECK(ramp.at(2, 1, 0) == 0.5);
        CHECK(ramp.at(4, 2, 0) == 0.0);
        for (int y = 0; y < 5; ++y)
            for (int x = 1; x < 3; ++x)
                CHECK(ramp.at(y, x, 0) == ramp.at(y, 0, 0));
        CHECK(DepthProvider::ramp(1, 4).at(0, 2, 0) == 1.0);

        const DepthProvider provider({"ramp", ""});
        const Image clean = testsupport::random_image(5, 3, 40);
        CHECK(provider.raw_depth(clean, "any").values() == ramp.values());
    }
    SECTION("file provider resolves per-pair maps inside a directory") {
        testsupport::TempDir dir;
        const Grid depth = testsupport::random_grid(6, 4, 1, 0.0, 2.0, 41);
        save_map(dir.str("pair_a.hfpm"), depth);

        const DepthProvider by_dir({"file", dir.str()});
        const Image clean = testsupport::random_image(6, 4, 42);
        const Grid loaded = by_dir.raw_depth(clean, "pair_a");
        REQUIRE(loaded.same_shape(depth));
        for (std::size_t i = 0; i < depth.size(); ++i)
            CHECK(loaded.values()[i] == static_cast<double>(static_cast<float>(depth.values()[i])));

        const DepthProvider by_file({"file", dir.str("pair_a.hfpm")});
        CHECK(by_file.raw_depth(clean, "ignored").values() == loaded.values());

        CHECK_THROWS_AS(by_dir.raw_depth(clean, "missing_pair"), IoError);
        CHECK_THROWS_AS(by_dir.raw_depth(testsupport::random_image(3, 3, 43), "pair_a"), ShapeError);

        save_map(dir.str("three.hfpm"), testsupport::random_grid(6, 4, 3, 0.0, 1.0, 44));
        const DepthProvider bad_channels({"file", dir.str("three.hfpm")});
        CHECK_THROWS_AS(bad_channels.raw_depth(clean, "x"), ValidationError);
    }
    SECTION("plugin provider dispatches to registered callables") {
        DepthProvider::register_plugin("edges", [](const Image& img) {
            Grid g(img.height(), img.width(), 1);
            for (int y = 0; y < img.height(); ++y)
                for (int x = 0; x < img.width(); ++x)
                    g.at(y, x, 0) = img.at(y, x, 0);
            return g;
        });
        const Image clean = testsupport::random_image(4, 5, 45);
        const DepthProvider provider({"plugin", "edges"});
        const Grid depth = provider.raw_depth(clean, "p");
        for (int y = 0; y < 4; ++y)
            for (int x = 0; x < 5; ++x)
                CHECK(depth.at(y, x, 0) == clean.at(y, x, 0));

        CHECK_THROWS_AS(DepthProvider({"plugin", "nonexistent"}).raw_depth(clean, "p"), UsageError);

        DepthProvider::register_plugin("wrong_shape", [](const Image&) { return Grid(1, 1, 1, 0.5); });
        CHECK_THROWS_AS(DepthProvider({"plugin", "wrong_shape"}).raw_depth(clean, "p"), ShapeError);

        DepthProvider::register_plugin("non_finite", [](const Image& img) {
            Grid g(img.height(), img.width(), 1, 0.5);
            g.at(0, 0, 0) = std::numeric_limits<double>::quiet_NaN();
            return g;
        });
        CHECK_THROWS_AS(DepthProvider({"plugin", "non_finite"}).raw_depth(clean, "p"), ValidationError);
    }
    SECTION("configuration validation") {
        CHECK_THROWS_AS(DepthProvider({"sonar", "x"}), ValidationError);
        CHECK_THROWS_AS(DepthProvider({"file", ""}), ValidationError);
        CHECK_THROWS_AS(DepthProvider({"plugin", ""}), ValidationError);
        CHECK_NOTHROW(DepthProvider({"ramp", ""}));
    }
}

TEST_CASE("checkpoint round trips", "[mappers]") {
    testsupport::TempDir dir;
    const MapperConfig cfg = MapperConfig::toy_defaults(11);
    const ModelToggles toggles{true, false};
    const AugmenterModel model(cfg, toggles, true);

    SECTION("weights and metadata survive a save/load cycle") {
        const std::string path = dir.str("model.hfck");
        save_checkpoint(path, model, nullptr, 42, 777, 0.125);
        CHECK_FALSE(std::filesystem::exists(path + ".tmp"));

        const LoadedCheckpoint loaded = load_checkpoint(path, false);
        CHECK(loaded.epoch == 42);
        CHECK(loaded.train_seed == 777);
        CHECK(loaded.last_loss == 0.125);
        CHECK_FALSE(loaded.has_optimizer);
        CHECK(loaded.model->config().base_channels == cfg.base_channels);
        CHECK(loaded.model->config().depth_levels == cfg.depth_levels);
        CHECK(loaded.model->config().variant == cfg.variant);
        CHECK(loaded.model->config().seed == cfg.seed);
        CHECK(loaded.model->toggles().use_dhr == toggles.use_dhr);
        CHECK(loaded.model->toggles().use_drm == toggles.use_drm);

        const auto orig = model.parameters();
        const auto back = loaded.model->parameters();
        REQUIRE(orig.size() == back.size());
        for (std::size_t i = 0; i < orig.size(); ++i) {
            REQUIRE(orig[i].name == back[i].name);
            REQUIRE(orig[i].node->value.values() == back[i].node->value.values());
        }

        // re-serialising the loaded model reproduces the original bytes
        CHECK(serialize_checkpoint(*loaded.model, nullptr, 42, 777, 0.125) ==
              testsupport::read_bytes(path));
        CHECK(loaded.id == checkpoint_id(path));
    }
    SECTION("optimizer state survives a save/load cycle") {
        nn::Adam opt(model.trainable_parameters());
        opt.set_step_count(13);
        CounterRng rng(50);
        for (auto& m : opt.first_moments())
            for (double& v : m)
                v = rng.uniform(-1.0, 1.0);
        for (auto& m : opt.second_moments())
            for (double& v : m)
                v = rng.uniform(0.0, 1.0);

        const std::string path = dir.str("opt.hfck");
        save_checkpoint(path, model, &opt, 3, 5, 0.5);

        const LoadedCheckpoint loaded = load_checkpoint(path, true);
        REQUIRE(loaded.has_optimizer);
        CHECK(loaded.optimizer.step == 13);

        nn::Adam fresh(loaded.model->trainable_parameters());
        restore_optimizer(fresh, loaded.optimizer);
        CHECK(fresh.step_count() == 13);
        REQUIRE(fresh.first_moments().size() == opt.first_moments().size());
        for (std::size_t i = 0; i < opt.first_moments().size(); ++i) {
            CHECK(fresh.first_moments()[i] == opt.first_moments()[i]);
            CHECK(fresh.second_moments()[i] == opt.second_moments()[i]);
        }
    }
    SECTION("corrupt files are rejected") {
        const std::string path = dir.str("good.hfck");
        save_checkpoint(path, model, nullptr, 1, 2, 0.1);
        const std::string bytes = testsupport::read_bytes(path);

        auto write = [&](const std::string& name, const std::string& content) {
            std::ofstream out(dir.str(name), std::ios::binary);
            out << content;
            return dir.str(name);
        };
        CHECK_THROWS_AS(load_checkpoint(write("magic.hfck", "JUNK" + bytes.substr(4)), false), IoError);
        CHECK_THROWS_AS(load_checkpoint(write("trunc.hfck", bytes.substr(0, bytes.size() / 2)), false),
                        IoError);
        CHECK_THROWS_AS(load_checkpoint(write("trail.hfck", bytes + "extra"), false), IoError);
        CHECK_THROWS_AS(load_checkpoint(dir.str("missing.hfck"), false), IoError);
    }
    SECTION("checkpoint ids track content") {
        const std::string p1 = dir.str("a.hfck");
        const std::string p2 = dir.str("b.hfck");
        save_checkpoint(p1, model, nullptr, 1, 2, 0.1);
        save_checkpoint(p2, model, nullptr, 1, 2, 0.1);
        CHECK(checkpoint_id(p1) == checkpoint_id(p2));
        save_checkpoint(p2, model, nullptr, 2, 2, 0.1);
        CHECK(checkpoint_id(p1) != checkpoint_id(p2));
    }
}
