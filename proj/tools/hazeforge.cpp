#include <cstdint>
#include <iostream>
#include <string>

#include "CLI11.hpp"

#include "hazeforge/hazeforge.hpp"

namespace {

hazeforge::PipelineConfig load_config_or_default(const std::string& path) {
    if (path.empty())
        return hazeforge::PipelineConfig{};
    return hazeforge::load_pipeline_config_file(path);
}

void add_train(CLI::App& app) {
    auto* cmd = app.add_subcommand("train", "Train the augmentation model on a paired dataset");
    auto config_path = std::make_shared<std::string>();
    auto data_root = std::make_shared<std::string>();
    auto layout = std::make_shared<std::string>("paired-dirs");
    auto out_dir = std::make_shared<std::string>();
    auto resume = std::make_shared<std::string>();
    auto epochs = std::make_shared<int>(-1);
    auto stop_after = std::make_shared<int>(0);
    auto seed = std::make_shared<std::int64_t>(-1);
    cmd->add_option("--config", *config_path, "Config file (INI)");
    cmd->add_option("--data", *data_root, "Dataset root or list file")->required();
    cmd->add_option("--layout", *layout, "Dataset layout: paired-dirs or list-file");
    cmd->add_option("--out", *out_dir, "Output directory for checkpoint and log")->required();
    cmd->add_option("--resume", *resume, "Checkpoint to resume from");
    cmd->add_option("--epochs", *epochs, "Override the configured epoch count");
    cmd->add_option("--stop-after", *stop_after,
                    "Pause after this many total epochs (resume later with --resume)");
    cmd->add_option("--seed", *seed, "Override the configured training seed");
    cmd->callback([=] {
        auto cfg = load_config_or_default(*config_path);
        if (*epochs >= 0)
            cfg.train.epochs = *epochs;
        if (*seed >= 0)
            cfg.train.seed = static_cast<std::uint64_t>(*seed);
        const auto pairs = hazeforge::ingest_dataset(*data_root, *layout);
        hazeforge::TrainOptions opts;
        opts.mapper = cfg.mapper;
        opts.toggles = cfg.toggles;
        opts.train = cfg.train;
        opts.depth = cfg.depth;
        opts.out_dir = *out_dir;
        opts.resume_from = *resume;
        opts.stop_after_epoch = *stop_after;
        const auto result = hazeforge::train_augmenter(pairs, opts);
        if (!result.history.empty()) {
            const auto& last = result.history.back();
            std::cout << "trained " << result.history.size() << " epoch(s); final mean loss "
                      << last.mean_total << "\n";
        }
        std::cout << "checkpoint: " << result.checkpoint_path << " (id " << result.checkpoint_id
                  << ")\n";
        std::cout << "log: " << result.log_path << "\n";
    });
}

void add_augment(CLI::App& app) {
    auto* cmd = app.add_subcommand("augment", "Generate new hazy/clean pairs from a checkpoint");
    auto config_path = std::make_shared<std::string>();
    auto checkpoint = std::make_shared<std::string>();
    auto data_root = std::make_shared<std::string>();
    auto layout = std::make_shared<std::string>("paired-dirs");
    auto out_dir = std::make_shared<std::string>();
    auto count = std::make_shared<int>(0);
    auto seed = std::make_shared<std::uint64_t>(0);
    cmd->add_option("--config", *config_path, "Config file (INI) for policy and depth provider");
    cmd->add_option("--checkpoint", *checkpoint, "Trained checkpoint")->required();
    cmd->add_option("--data", *data_root, "Dataset root or list file")->required();
    cmd->add_option("--layout", *layout, "Dataset layout: paired-dirs or list-file");
    cmd->add_option("--out", *out_dir, "Output directory")->required();
    cmd->add_option("--count", *count, "Number of pairs to generate")->required();
    cmd->add_option("--seed", *seed, "Run seed");
    cmd->callback([=] {
        const auto cfg = load_config_or_default(*config_path);
        const auto pairs = hazeforge::ingest_dataset(*data_root, *layout);
        hazeforge::AugmentOptions opts;
        opts.checkpoint_path = *checkpoint;
        opts.policy = cfg.policy;
        opts.depth = cfg.depth;
        opts.count = *count;
        opts.seed = *seed;
        opts.out_dir = *out_dir;
        const auto manifest = hazeforge::augment_dataset(pairs, opts);
        std::cout << "wrote " << manifest.entries.size() << " pair(s) under " << *out_dir << "\n";
        std::cout << "manifest: " << (*out_dir + "/manifest.json") << "\n";
    });
}

void add_render(CLI::App& app) {
    auto* cmd = app.add_subcommand("render", "Physics-only render from explicit parameter maps");
    auto clean_path = std::make_shared<std::string>();
    auto beta_path = std::make_shared<std::string>();
    auto atmospheric_path = std::make_shared<std::string>();
    auto depth_path = std::make_shared<std::string>();
    auto out_path = std::make_shared<std::string>();
    cmd->add_option("--clean", *clean_path, "Clean input image (PNG)")->required();
    cmd->add_option("--beta", *beta_path, "Density map (.hfpm, 3 channels)")->required();
    cmd->add_option("--atmospheric", *atmospheric_path, "Atmospheric map (.hfpm, 1 channel)")->required();
    cmd->add_option("--depth", *depth_path, "Depth map (.hfpm, 1 channel)")->required();
    cmd->add_option("--out", *out_path, "Output image (PNG)")->required();
    cmd->callback([=] {
        const hazeforge::Image clean = hazeforge::load_image(*clean_path);
        const hazeforge::DensityMap beta(hazeforge::load_map(*beta_path));
        const hazeforge::AtmosphericMap atmospheric(hazeforge::load_map(*atmospheric_path));
        const hazeforge::DepthMap depth(hazeforge::load_map(*depth_path));
        const auto t = hazeforge::compute_transmission(beta, depth);
        const auto hazy = hazeforge::render_haze(clean, t, atmospheric);
        hazeforge::save_image(*out_path, hazy);
        std::cout << "wrote " << *out_path << "\n";
    });
}

void add_eval(CLI::App& app) {
    auto* cmd = app.add_subcommand("eval", "PSNR/SSIM between matching PNGs in two directories");
    auto test_dir = std::make_shared<std::string>();
    auto reference_dir = std::make_shared<std::string>();
    cmd->add_option("--test", *test_dir, "Directory of images to score")->required();
    cmd->add_option("--reference", *reference_dir, "Directory of reference images")->required();
    cmd->callback([=] {
        const auto report = hazeforge::evaluate_directories(*test_dir, *reference_dir);
        std::cout << "name,psnr,ssim\n";
        for (const auto& row : report.rows)
            std::cout << row.name << ',' << hazeforge::format_metric(row.psnr_db) << ','
                      << hazeforge::format_metric(row.ssim_value) << "\n";
        std::cout << "mean," << hazeforge::format_metric(report.mean_psnr) << ','
                  << hazeforge::format_metric(report.mean_ssim) << "\n";
    });
}

void add_replay(CLI::App& app) {
    auto* cmd = app.add_subcommand("replay", "Regenerate augmented images from a manifest");
    auto manifest_path = std::make_shared<std::string>();
    auto checkpoint = std::make_shared<std::string>();
    auto data_root = std::make_shared<std::string>();
    auto layout = std::make_shared<std::string>("paired-dirs");
    auto out_dir = std::make_shared<std::string>();
    cmd->add_option("--manifest", *manifest_path, "Manifest to replay")->required();
    cmd->add_option("--checkpoint", *checkpoint, "Checkpoint override (defaults to the recorded path)");
    cmd->add_option("--data", *data_root, "Dataset root or list file")->required();
    cmd->add_option("--layout", *layout, "Dataset layout: paired-dirs or list-file");
    cmd->add_option("--out", *out_dir, "Output directory")->required();
    cmd->callback([=] {
        const auto pairs = hazeforge::ingest_dataset(*data_root, *layout);
        hazeforge::ReplayOptions opts;
        opts.manifest_path = *manifest_path;
        opts.checkpoint_path = *checkpoint;
        opts.out_dir = *out_dir;
        const auto manifest = hazeforge::replay_manifest(pairs, opts);
        std::cout << "replayed " << manifest.entries.size() << " pair(s) into " << *out_dir << "\n";
    });
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"hazeforge: physics-guided haze augmentation toolkit"};
    app.require_subcommand(1);
    add_train(app);
    add_augment(app);
    add_render(app);
    add_eval(app);
    add_replay(app);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    } catch (const hazeforge::UsageError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
