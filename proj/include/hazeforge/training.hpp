#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "hazeforge/checkpoint.hpp"
#include "hazeforge/core.hpp"
#include "hazeforge/mappers.hpp"
#include "hazeforge/nn/adam.hpp"
#include "hazeforge/nn/graph.hpp"
#include "hazeforge/rng.hpp"

namespace hazeforge {

// ---------------------------------------------------------------------------
// configuration and schedule
// ---------------------------------------------------------------------------

struct TrainConfig {
    double lr_init = 5e-5;
    double lr_final = 1e-7;
    int epochs = 270;
    int batch_size = 2;
    int crop = 256;
    double lambda_perc = 1e-6;
    double charbonnier_eps = 1e-3;
    std::uint64_t seed = 0;

    void validate(int spatial_multiple) const {
        if (!(lr_init > lr_final) || !(lr_final > 0.0))
            throw ValidationError("TrainConfig: need lr_init > lr_final > 0");
        if (epochs < 1)
            throw ValidationError("TrainConfig: epochs must be >= 1");
        if (batch_size < 1)
            throw ValidationError("TrainConfig: batch_size must be >= 1");
        if (crop < 1 || crop % spatial_multiple != 0)
            throw ValidationError("TrainConfig: crop must be a positive multiple of " +
                                  std::to_string(spatial_multiple));
        if (lambda_perc < 0.0 || !(charbonnier_eps > 0.0))
            throw ValidationError("TrainConfig: lambda_perc must be >= 0 and charbonnier_eps > 0");
    }
};

// Cosine annealing. Written as a convex blend so both endpoints are exact:
// the weight is 1 at epoch 0 and 0 at the last epoch.
inline double lr_at(int epoch, const TrainConfig& cfg) {
    if (epoch < 0 || epoch > cfg.epochs)
        throw UsageError("lr_at: epoch " + std::to_string(epoch) + " outside [0, " +
                         std::to_string(cfg.epochs) + "]");
    const double w = (1.0 + std::cos(M_PI * static_cast<double>(epoch) / cfg.epochs)) / 2.0;
    return cfg.lr_init * w + cfg.lr_final * (1.0 - w);
}

// ---------------------------------------------------------------------------
// losses
// ---------------------------------------------------------------------------

// mean over elements of sqrt((a - b)^2 + eps^2)
inline double charbonnier(const Grid& a, const Grid& b, double eps) {
    if (!a.same_shape(b))
        throw ShapeError("charbonnier: " + a.shape_string() + " vs " + b.shape_string());
    if (!(eps > 0.0))
        throw ValidationError("charbonnier: eps must be > 0");
    double sum = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a.values()[i] - b.values()[i];
        sum += std::sqrt(d * d + eps * eps);
    }
    return sum / static_cast<double>(a.size());
}

inline nn::NodeRef charbonnier_node(const nn::NodeRef& a, const nn::NodeRef& b, double eps) {
    if (!a->value.same_shape(b->value))
        throw ShapeError("charbonnier: " + a->value.shape_string() + " vs " + b->value.shape_string());
    if (!(eps > 0.0))
        throw ValidationError("charbonnier: eps must be > 0");
    return nn::mean_all(nn::sqrt_op(nn::add_scalar(nn::square(nn::sub(a, b)), eps * eps)));
}

// Frozen seed-initialised feature pyramid standing in for a pretrained
// perceptual network: three stride-2 convolutions with fixed weights. The
// weights never train, but gradients still flow through to the images.
inline constexpr std::uint64_t kPerceptualSeed = 0x70657263;

class PerceptualExtractor {
  public:
    explicit PerceptualExtractor(std::uint64_t seed = kPerceptualSeed) {
        CounterRng rng(seed, 4);
        convs_.emplace_back("perceptual.level0", 3, 8, 3, 2, false, rng);
        convs_.emplace_back("perceptual.level1", 8, 16, 3, 2, false, rng);
        convs_.emplace_back("perceptual.level2", 16, 32, 3, 2, false, rng);
    }

    std::vector<nn::NodeRef> operator()(const nn::NodeRef& image) const {
        std::vector<nn::NodeRef> features;
        nn::NodeRef h = image;
        for (const auto& conv : convs_) {
            h = nn::leaky_relu(conv(h));
            features.push_back(h);
        }
        return features;
    }

  private:
    std::vector<nn::Conv2d> convs_;
};

// sum over levels of mean squared feature difference
inline nn::NodeRef perceptual_node(const nn::NodeRef& a, const nn::NodeRef& b,
                                   const PerceptualExtractor& extractor) {
    if (!a->value.same_shape(b->value))
        throw ShapeError("perceptual: " + a->value.shape_string() + " vs " + b->value.shape_string());
    const auto fa = extractor(a);
    const auto fb = extractor(b);
    nn::NodeRef total;
    for (std::size_t i = 0; i < fa.size(); ++i) {
        auto level = nn::mean_all(nn::square(nn::sub(fa[i], fb[i])));
        total = total ? nn::add(total, level) : level;
    }
    return total;
}

inline double perceptual(const Image& a, const Image& b, const PerceptualExtractor& extractor) {
    auto node = perceptual_node(nn::constant(nn::to_tensor(a.grid())),
                                nn::constant(nn::to_tensor(b.grid())), extractor);
    return node->value.values()[0];
}

// char(o_ini, gt) + char(o_final, gt) + lambda * (perc(o_ini, gt) + perc(o_final, gt))
inline nn::NodeRef total_loss_node(const nn::NodeRef& o_initial, const nn::NodeRef& o_final,
                                   const nn::NodeRef& hazy_gt, const TrainConfig& cfg,
                                   const PerceptualExtractor& extractor) {
    auto loss = nn::add(charbonnier_node(o_initial, hazy_gt, cfg.charbonnier_eps),
                        charbonnier_node(o_final, hazy_gt, cfg.charbonnier_eps));
    if (cfg.lambda_perc > 0.0) {
        auto perc = nn::add(perceptual_node(o_initial, hazy_gt, extractor),
                            perceptual_node(o_final, hazy_gt, extractor));
        loss = nn::add(loss, nn::mul_scalar(perc, cfg.lambda_perc));
    }
    return loss;
}

inline double total_loss(const Image& o_initial, const Image& o_final, const Image& hazy_gt,
                         const TrainConfig& cfg, const PerceptualExtractor& extractor) {
    auto node = total_loss_node(nn::constant(nn::to_tensor(o_initial.grid())),
                                nn::constant(nn::to_tensor(o_final.grid())),
                                nn::constant(nn::to_tensor(hazy_gt.grid())), cfg, extractor);
    return node->value.values()[0];
}

// ---------------------------------------------------------------------------
// geometric augmentation (axis-aligned, interpolation-free)
// ---------------------------------------------------------------------------

namespace geometry {

inline Grid crop(const Grid& g, int y0, int x0, int size) {
    if (y0 < 0 || x0 < 0 || y0 + size > g.height() || x0 + size > g.width())
        throw ShapeError("crop: window outside " + g.shape_string());
    Grid out(size, size, g.channels());
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x)
            for (int c = 0; c < g.channels(); ++c)
                out.at(y, x, c) = g.at(y0 + y, x0 + x, c);
    return out;
}

inline Grid flip_horizontal(const Grid& g) {
    Grid out(g.height(), g.width(), g.channels());
    for (int y = 0; y < g.height(); ++y)
        for (int x = 0; x < g.width(); ++x)
            for (int c = 0; c < g.channels(); ++c)
                out.at(y, x, c) = g.at(y, g.width() - 1 - x, c);
    return out;
}

// counter-clockwise quarter turns; square inputs only
inline Grid rotate90(const Grid& g, int quarter_turns) {
    if (g.height() != g.width())
        throw ShapeError("rotate90: grid must be square, got " + g.shape_string());
    Grid cur = g;
    for (int k = ((quarter_turns % 4) + 4) % 4; k > 0; --k) {
        Grid next(cur.height(), cur.width(), cur.channels());
        const int n = cur.height();
        for (int y = 0; y < n; ++y)
            for (int x = 0; x < n; ++x)
                for (int c = 0; c < cur.channels(); ++c)
                    next.at(y, x, c) = cur.at(x, n - 1 - y, c);
        cur = std::move(next);
    }
    return cur;
}

struct Transform {
    int y0 = 0;
    int x0 = 0;
    bool flip = false;
    int quarter_turns = 0;
};

inline Grid apply(const Grid& g, const Transform& t, int size) {
    Grid out = crop(g, t.y0, t.x0, size);
    if (t.flip)
        out = flip_horizontal(out);
    return rotate90(out, t.quarter_turns);
}

} // namespace geometry

// ---------------------------------------------------------------------------
// training loop
// ---------------------------------------------------------------------------

struct EpochStats {
    int epoch = 0;
    double lr = 0.0;
    double mean_total = 0.0;
    double mean_char_initial = 0.0;
    double mean_char_final = 0.0;
};

struct TrainOptions {
    MapperConfig mapper = MapperConfig::toy_defaults();
    ModelToggles toggles;
    TrainConfig train;
    DepthProviderConfig depth;
    std::string out_dir;      // receives checkpoint.hfck and train_log.csv
    std::string resume_from;  // optional checkpoint path
    int stop_after_epoch = 0; // pause once this many epochs are done (0: run to the end);
                              // the schedule still spans train.epochs, so a paused run
                              // resumed later matches an uninterrupted one exactly
};

struct TrainResult {
    std::vector<EpochStats> history; // epochs run in this call
    std::string checkpoint_path;
    std::string log_path;
    std::string checkpoint_id;
};

namespace detail {

// per-purpose RNG streams under the per-epoch derived seed
inline constexpr std::uint64_t kOrderStream = 1;
inline constexpr std::uint64_t kTransformStream = 2;

inline nn::Tensor stack_grids(const std::vector<Grid>& grids) {
    const Grid& first = grids.front();
    nn::Tensor out(static_cast<int>(grids.size()), first.channels(), first.height(), first.width());
    const std::size_t plane = static_cast<std::size_t>(first.height()) * first.width();
    for (std::size_t n = 0; n < grids.size(); ++n) {
        if (!grids[n].same_shape(first))
            throw ShapeError("stack_grids: mixed shapes");
        for (int c = 0; c < first.channels(); ++c) {
            double* dst = out.data() + (n * first.channels() + c) * plane;
            for (int y = 0; y < first.height(); ++y)
                for (int x = 0; x < first.width(); ++x)
                    dst[static_cast<std::size_t>(y) * first.width() + x] = grids[n].at(y, x, c);
        }
    }
    return out;
}

inline std::string format_csv_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

} // namespace detail

// Full cyclic-reconstruction training: estimate parameters from the hazy
// image, re-render from the clean image, refine, and minimise the distance
// to the original hazy image. Deterministic given the seeds in the options;
// resuming from epoch k replays exactly what an uninterrupted run does.
inline TrainResult train_augmenter(const std::vector<HazePair>& dataset, const TrainOptions& opts) {
    if (dataset.empty())
        throw ValidationError("train_augmenter: dataset is empty");
    opts.mapper.validate();
    opts.train.validate(opts.mapper.spatial_multiple());
    for (const auto& pair : dataset)
        if (pair.hazy.height() < opts.train.crop || pair.hazy.width() < opts.train.crop)
            throw ValidationError("train_augmenter: crop " + std::to_string(opts.train.crop) +
                                  " exceeds image \"" + pair.id + "\" of size " +
                                  pair.hazy.grid().shape_string());

    namespace fs = std::filesystem;
    fs::create_directories(opts.out_dir);
    const std::string checkpoint_path = (fs::path(opts.out_dir) / "checkpoint.hfck").string();
    const std::string log_path = (fs::path(opts.out_dir) / "train_log.csv").string();

    // normalized full-resolution depth per pair, fixed for the whole run
    const DepthProvider provider(opts.depth);
    std::vector<DepthMap> depths;
    depths.reserve(dataset.size());
    for (const auto& pair : dataset) {
        if (pair.depth)
            depths.push_back(*pair.depth);
        else
            depths.push_back(normalize_depth(provider.raw_depth(pair.clean, pair.id)).map);
    }

    std::shared_ptr<AugmenterModel> model;
    int start_epoch = 0;
    bool restore_state = false;
    OptimizerState saved_state;
    if (!opts.resume_from.empty()) {
        auto loaded = load_checkpoint(opts.resume_from, /*trainable=*/true);
        const auto& cfg = loaded.model->config();
        if (cfg.base_channels != opts.mapper.base_channels || cfg.depth_levels != opts.mapper.depth_levels ||
            cfg.variant != opts.mapper.variant || cfg.seed != opts.mapper.seed ||
            loaded.model->toggles().use_dhr != opts.toggles.use_dhr ||
            loaded.model->toggles().use_drm != opts.toggles.use_drm)
            throw UsageError("train_augmenter: checkpoint configuration differs from the requested one");
        if (loaded.train_seed != opts.train.seed)
            throw UsageError("train_augmenter: checkpoint was trained with a different seed");
        model = loaded.model;
        start_epoch = loaded.epoch;
        if (start_epoch >= opts.train.epochs)
            throw UsageError("train_augmenter: checkpoint already has " + std::to_string(start_epoch) +
                             " epochs, nothing to do");
        restore_state = loaded.has_optimizer;
        saved_state = std::move(loaded.optimizer);
    } else {
        model = std::make_shared<AugmenterModel>(opts.mapper, opts.toggles, /*trainable=*/true);
    }

    const int end_epoch = opts.stop_after_epoch > 0
                              ? std::min(opts.train.epochs, opts.stop_after_epoch)
                              : opts.train.epochs;
    if (start_epoch >= end_epoch)
        throw UsageError("train_augmenter: nothing to run before the requested stop point");

    nn::Adam optimizer(model->trainable_parameters());
    if (restore_state)
        restore_optimizer(optimizer, saved_state);

    const PerceptualExtractor extractor;
    const int crop = opts.train.crop;
    const std::size_t n_pairs = dataset.size();

    std::ofstream log(log_path, start_epoch == 0 ? std::ios::trunc : std::ios::app);
    if (!log)
        throw IoError("cannot open " + log_path);
    if (start_epoch == 0)
        log << "epoch,lr,total,char_initial,char_final\n";

    TrainResult result;
    result.checkpoint_path = checkpoint_path;
    result.log_path = log_path;

    for (int epoch = start_epoch; epoch < end_epoch; ++epoch) {
        const double lr = lr_at(epoch, opts.train);
        const std::uint64_t epoch_seed = derive_seed(opts.train.seed, static_cast<std::uint64_t>(epoch));
        CounterRng order_rng(epoch_seed, detail::kOrderStream);
        CounterRng transform_rng(epoch_seed, detail::kTransformStream);

        // Fisher-Yates with our own generator, so the order is portable
        std::vector<std::size_t> order(n_pairs);
        for (std::size_t i = 0; i < n_pairs; ++i)
            order[i] = i;
        for (std::size_t i = n_pairs; i > 1; --i) {
            const std::size_t j = order_rng.uniform_int(0, static_cast<std::int64_t>(i) - 1);
            std::swap(order[i - 1], order[j]);
        }

        double sum_total = 0.0, sum_char_ini = 0.0, sum_char_fin = 0.0;
        std::size_t steps = 0;
        for (std::size_t pos = 0; pos < n_pairs; pos += opts.train.batch_size) {
            const std::size_t batch_end = std::min(pos + opts.train.batch_size, n_pairs);
            std::vector<Grid> hazy_crops, clean_crops, depth_crops;
            for (std::size_t b = pos; b < batch_end; ++b) {
                const HazePair& pair = dataset[order[b]];
                geometry::Transform t;
                t.y0 = static_cast<int>(transform_rng.uniform_int(0, pair.hazy.height() - crop));
                t.x0 = static_cast<int>(transform_rng.uniform_int(0, pair.hazy.width() - crop));
                t.flip = transform_rng.next_double() < 0.5;
                t.quarter_turns = static_cast<int>(transform_rng.uniform_int(0, 3));
                hazy_crops.push_back(geometry::apply(pair.hazy.grid(), t, crop));
                clean_crops.push_back(geometry::apply(pair.clean.grid(), t, crop));
                depth_crops.push_back(geometry::apply(depths[order[b]].grid(), t, crop));
            }

            auto hazy = nn::constant(detail::stack_grids(hazy_crops));
            auto clean = nn::constant(detail::stack_grids(clean_crops));
            auto raw_depth = nn::constant(detail::stack_grids(depth_crops));

            const auto estimated = model->estimator()(hazy);
            const auto depth_node =
                opts.toggles.use_drm ? model->depth_refiner()(raw_depth, clean) : raw_depth;
            const auto t_node = transmission_node(estimated.density, depth_node);
            const auto o_initial = render_node(clean, t_node, estimated.atmospheric);
            const auto o_final =
                opts.toggles.use_dhr ? model->haze_refiner()(o_initial, clean) : o_initial;

            const auto char_ini = charbonnier_node(o_initial, hazy, opts.train.charbonnier_eps);
            const auto char_fin = charbonnier_node(o_final, hazy, opts.train.charbonnier_eps);
            auto loss = nn::add(char_ini, char_fin);
            if (opts.train.lambda_perc > 0.0) {
                auto perc = nn::add(perceptual_node(o_initial, hazy, extractor),
                                    perceptual_node(o_final, hazy, extractor));
                loss = nn::add(loss, nn::mul_scalar(perc, opts.train.lambda_perc));
            }

            optimizer.zero_grad();
            nn::backward(loss);
            optimizer.step(lr);

            sum_total += loss->value.values()[0];
            sum_char_ini += char_ini->value.values()[0];
            sum_char_fin += char_fin->value.values()[0];
            ++steps;
        }

        EpochStats stats;
        stats.epoch = epoch;
        stats.lr = lr;
        stats.mean_total = sum_total / static_cast<double>(steps);
        stats.mean_char_initial = sum_char_ini / static_cast<double>(steps);
        stats.mean_char_final = sum_char_fin / static_cast<double>(steps);
        result.history.push_back(stats);

        log << stats.epoch << ',' << detail::format_csv_double(stats.lr) << ','
            << detail::format_csv_double(stats.mean_total) << ','
            << detail::format_csv_double(stats.mean_char_initial) << ','
            << detail::format_csv_double(stats.mean_char_final) << '\n';
        log.flush();

        save_checkpoint(checkpoint_path, *model, &optimizer, epoch + 1, opts.train.seed,
                        stats.mean_total);
    }

    result.checkpoint_id = checkpoint_id(checkpoint_path);
    return result;
}

} // namespace hazeforge
