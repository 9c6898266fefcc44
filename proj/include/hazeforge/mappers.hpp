#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <utility>
#include <vector>

#include "hazeforge/core.hpp"
#include "hazeforge/io.hpp"
#include "hazeforge/nn/adam.hpp"
#include "hazeforge/nn/graph.hpp"
#include "hazeforge/nn/layers.hpp"
#include "hazeforge/rng.hpp"
#include "hazeforge/scattering.hpp"

namespace hazeforge {

// ---------------------------------------------------------------------------
// model configuration
// ---------------------------------------------------------------------------

struct MapperConfig {
    int base_channels = 8;
    int depth_levels = 2;   // number of stride-2 stages; channels double per stage
    std::string variant = "toy";
    std::uint64_t seed = 0;

    static MapperConfig toy_defaults(std::uint64_t seed = 0) { return {8, 2, "toy", seed}; }
    static MapperConfig paper_defaults(std::uint64_t seed = 0) { return {21, 3, "paper", seed}; }

    // Inputs must be padded to a multiple of this before running the models.
    int spatial_multiple() const { return 1 << depth_levels; }

    std::size_t parameter_budget() const {
        if (variant == "toy")
            return 200000;
        if (variant == "paper")
            return 3500000;
        throw ValidationError("MapperConfig: unknown variant \"" + variant + "\"");
    }

    void validate() const {
        if (base_channels < 1)
            throw ValidationError("MapperConfig: base_channels must be >= 1");
        if (depth_levels < 1)
            throw ValidationError("MapperConfig: depth_levels must be >= 1");
        parameter_budget(); // rejects unknown variants
    }
};

struct ModelToggles {
    bool use_dhr = true; // learned refinement of the rendered hazy image
    bool use_drm = true; // learned residual refinement of provider depth
};

// ---------------------------------------------------------------------------
// encoder / decoder building blocks
// ---------------------------------------------------------------------------

namespace nnblocks {

using nn::Conv2d;
using nn::NodeRef;
using nn::Parameter;

struct Features {
    std::vector<NodeRef> skips; // one per level, finest first
    NodeRef bottom;
};

// Shared trunk: stem conv, then per level a same-width conv (the skip source)
// followed by a stride-2 channel-doubling conv, finished by a bottleneck conv.
class Encoder {
  public:
    Encoder(const std::string& name, int in_channels, const MapperConfig& cfg, bool trainable,
            CounterRng& rng)
        : stem_(name + ".stem", in_channels, cfg.base_channels, 3, 1, trainable, rng) {
        for (int i = 0; i < cfg.depth_levels; ++i) {
            const int ch = cfg.base_channels << i;
            skip_convs_.emplace_back(name + ".skip" + std::to_string(i), ch, ch, 3, 1, trainable, rng);
            down_convs_.emplace_back(name + ".down" + std::to_string(i), ch, ch * 2, 3, 2, trainable, rng);
        }
        const int bottom_ch = cfg.base_channels << cfg.depth_levels;
        bottleneck_ = std::make_unique<Conv2d>(name + ".bottleneck", bottom_ch, bottom_ch, 3, 1,
                                               trainable, rng);
    }

    Features operator()(const NodeRef& x) const {
        Features f;
        NodeRef h = nn::leaky_relu(stem_(x));
        for (std::size_t i = 0; i < skip_convs_.size(); ++i) {
            NodeRef s = nn::leaky_relu(skip_convs_[i](h));
            f.skips.push_back(s);
            h = nn::leaky_relu(down_convs_[i](s));
        }
        f.bottom = nn::leaky_relu((*bottleneck_)(h));
        return f;
    }

    void collect(std::vector<Parameter>& out) const {
        stem_.collect(out);
        for (std::size_t i = 0; i < skip_convs_.size(); ++i) {
            skip_convs_[i].collect(out);
            down_convs_[i].collect(out);
        }
        bottleneck_->collect(out);
    }

  private:
    Conv2d stem_;
    std::vector<Conv2d> skip_convs_;
    std::vector<Conv2d> down_convs_;
    std::unique_ptr<Conv2d> bottleneck_;
};

enum class HeadKind {
    softplus, // nonnegative open-ended output (density)
    sigmoid,  // output bounded to (0, 1) (atmospheric light)
    residual  // linear zero-initialised output, added to a base by the caller
};

// Mirror of the encoder: per level nearest-neighbour upsample, a conv
// halving the channels, skip concatenation, and a fusing conv.
class Decoder {
  public:
    Decoder(const std::string& name, const MapperConfig& cfg, int out_channels, HeadKind head,
            bool trainable, CounterRng& rng)
        : head_kind_(head) {
        for (int lev = cfg.depth_levels - 1; lev >= 0; --lev) {
            const int ch = cfg.base_channels << lev;
            up_convs_.emplace_back(name + ".up" + std::to_string(lev), ch * 2, ch, 3, 1, trainable, rng);
            fuse_convs_.emplace_back(name + ".fuse" + std::to_string(lev), ch * 2, ch, 3, 1, trainable, rng);
        }
        head_ = std::make_unique<Conv2d>(name + ".head", cfg.base_channels, out_channels, 3, 1,
                                         trainable, rng, /*zero_init=*/head == HeadKind::residual);
    }

    NodeRef operator()(const Features& f) const {
        NodeRef h = f.bottom;
        const int levels = static_cast<int>(up_convs_.size());
        for (int step = 0; step < levels; ++step) {
            const int lev = levels - 1 - step;
            h = nn::upsample_nearest2(h);
            h = nn::leaky_relu(up_convs_[step](h));
            h = nn::concat_channels(h, f.skips[lev]);
            h = nn::leaky_relu(fuse_convs_[step](h));
        }
        NodeRef y = (*head_)(h);
        switch (head_kind_) {
            case HeadKind::softplus: return nn::softplus(y);
            case HeadKind::sigmoid: return nn::sigmoid(y);
            case HeadKind::residual: return y;
        }
        throw UsageError("Decoder: unknown head kind");
    }

    void collect(std::vector<Parameter>& out) const {
        for (std::size_t i = 0; i < up_convs_.size(); ++i) {
            up_convs_[i].collect(out);
            fuse_convs_[i].collect(out);
        }
        head_->collect(out);
    }

  private:
    HeadKind head_kind_;
    std::vector<Conv2d> up_convs_;
    std::vector<Conv2d> fuse_convs_;
    std::unique_ptr<Conv2d> head_;
};

} // namespace nnblocks

// ---------------------------------------------------------------------------
// the three learned mappers
// ---------------------------------------------------------------------------

// Hazy image -> (density map, atmospheric map). One shared encoder feeding
// two parallel decoders whose heads enforce the output ranges structurally.
class ParameterEstimator {
  public:
    ParameterEstimator(const MapperConfig& cfg, bool trainable, CounterRng& rng)
        : encoder_("estimator.encoder", 3, cfg, trainable, rng),
          density_decoder_("estimator.density", cfg, 3, nnblocks::HeadKind::softplus, trainable, rng),
          atmospheric_decoder_("estimator.atmospheric", cfg, 1, nnblocks::HeadKind::sigmoid, trainable, rng) {}

    struct Output {
        nn::NodeRef density;     // N x 3 x H x W, >= 0
        nn::NodeRef atmospheric; // N x 1 x H x W, in (0, 1)
    };

    Output operator()(const nn::NodeRef& hazy) const {
        const auto features = encoder_(hazy);
        return {density_decoder_(features), atmospheric_decoder_(features)};
    }

    void collect(std::vector<nn::Parameter>& out) const {
        encoder_.collect(out);
        density_decoder_.collect(out);
        atmospheric_decoder_.collect(out);
    }

  private:
    nnblocks::Encoder encoder_;
    nnblocks::Decoder density_decoder_;
    nnblocks::Decoder atmospheric_decoder_;
};

// (raw depth, clean image) -> refined depth. Residual with a zero-initialised
// head, so an untrained refiner is exactly the identity on the raw depth.
class DepthRefiner {
  public:
    DepthRefiner(const MapperConfig& cfg, bool trainable, CounterRng& rng)
        : encoder_("depth_refiner.encoder", 4, cfg, trainable, rng),
          decoder_("depth_refiner.decoder", cfg, 1, nnblocks::HeadKind::residual, trainable, rng) {}

    nn::NodeRef operator()(const nn::NodeRef& raw_depth, const nn::NodeRef& clean) const {
        const auto features = encoder_(nn::concat_channels(raw_depth, clean));
        return nn::clamp01(nn::add(raw_depth, decoder_(features)));
    }

    void collect(std::vector<nn::Parameter>& out) const {
        encoder_.collect(out);
        decoder_.collect(out);
    }

  private:
    nnblocks::Encoder encoder_;
    nnblocks::Decoder decoder_;
};

// (rendered hazy, clean image) -> refined hazy image. Residual with a
// zero-initialised head, like the depth refiner: an untrained refiner passes
// the rendered image through unchanged, and training can only move away from
// that baseline where it pays off. The clamp keeps the result a valid image.
class HazeRefiner {
  public:
    HazeRefiner(const MapperConfig& cfg, bool trainable, CounterRng& rng)
        : encoder_("haze_refiner.encoder", 6, cfg, trainable, rng),
          decoder_("haze_refiner.decoder", cfg, 3, nnblocks::HeadKind::residual, trainable, rng) {}

    nn::NodeRef operator()(const nn::NodeRef& initial, const nn::NodeRef& clean) const {
        const auto features = encoder_(nn::concat_channels(initial, clean));
        return nn::clamp01(nn::add(initial, decoder_(features)));
    }

    void collect(std::vector<nn::Parameter>& out) const {
        encoder_.collect(out);
        decoder_.collect(out);
    }

  private:
    nnblocks::Encoder encoder_;
    nnblocks::Decoder decoder_;
};

// ---------------------------------------------------------------------------
// full model
// ---------------------------------------------------------------------------

class AugmenterModel {
  public:
    AugmenterModel(MapperConfig cfg, ModelToggles toggles, bool trainable)
        : cfg_(std::move(cfg)), toggles_(toggles) {
        cfg_.validate();
        CounterRng est_rng(cfg_.seed, 1);
        CounterRng drm_rng(cfg_.seed, 2);
        CounterRng dhr_rng(cfg_.seed, 3);
        estimator_ = std::make_unique<ParameterEstimator>(cfg_, trainable, est_rng);
        depth_refiner_ = std::make_unique<DepthRefiner>(cfg_, trainable, drm_rng);
        haze_refiner_ = std::make_unique<HazeRefiner>(cfg_, trainable, dhr_rng);
        const std::size_t count = parameter_count();
        if (count > cfg_.parameter_budget())
            throw ValidationError("AugmenterModel: " + cfg_.variant + " variant has " +
                                  std::to_string(count) + " parameters, over the budget of " +
                                  std::to_string(cfg_.parameter_budget()));
    }

    const MapperConfig& config() const { return cfg_; }
    const ModelToggles& toggles() const { return toggles_; }

    const ParameterEstimator& estimator() const { return *estimator_; }
    const DepthRefiner& depth_refiner() const { return *depth_refiner_; }
    const HazeRefiner& haze_refiner() const { return *haze_refiner_; }

    // Every weight tensor, toggles included, so checkpoints are complete.
    std::vector<nn::Parameter> parameters() const {
        std::vector<nn::Parameter> out;
        estimator_->collect(out);
        depth_refiner_->collect(out);
        haze_refiner_->collect(out);
        return out;
    }

    // Weights the optimizer should update under the current toggles.
    std::vector<nn::Parameter> trainable_parameters() const {
        std::vector<nn::Parameter> out;
        estimator_->collect(out);
        if (toggles_.use_drm)
            depth_refiner_->collect(out);
        if (toggles_.use_dhr)
            haze_refiner_->collect(out);
        return out;
    }

    std::size_t parameter_count() const { return nn::parameter_count(parameters()); }

  private:
    MapperConfig cfg_;
    ModelToggles toggles_;
    std::unique_ptr<ParameterEstimator> estimator_;
    std::unique_ptr<DepthRefiner> depth_refiner_;
    std::unique_ptr<HazeRefiner> haze_refiner_;
};

// ---------------------------------------------------------------------------
// differentiable physics (graph form of the scattering module, used in the
// training graph and by the gradient checks)
// ---------------------------------------------------------------------------

// t = max(exp(-density * depth), floor); depth broadcasts across channels.
inline nn::NodeRef transmission_node(const nn::NodeRef& density, const nn::NodeRef& depth) {
    return nn::clamp_min(nn::exp_op(nn::neg(nn::mul(density, depth))), kTransmissionFloor);
}

// clean * t + atmospheric * (1 - t); a convex blend, so already in [0, 1].
inline nn::NodeRef render_node(const nn::NodeRef& clean, const nn::NodeRef& transmission,
                               const nn::NodeRef& atmospheric) {
    return nn::add(nn::mul(clean, transmission),
                   nn::mul(atmospheric, nn::rsub_scalar(1.0, transmission)));
}

// ---------------------------------------------------------------------------
// padded inference helpers (models need H, W divisible by spatial_multiple)
// ---------------------------------------------------------------------------

namespace detail {

inline int padded_extent(int extent, int multiple) {
    return ((extent + multiple - 1) / multiple) * multiple;
}

inline nn::Tensor pad_bottom_right_replicate(const nn::Tensor& t, int new_h, int new_w) {
    if (new_h == t.h() && new_w == t.w())
        return t;
    nn::Tensor out(t.n(), t.c(), new_h, new_w);
    for (int n = 0; n < t.n(); ++n)
        for (int c = 0; c < t.c(); ++c)
            for (int y = 0; y < new_h; ++y)
                for (int x = 0; x < new_w; ++x)
                    out.at(n, c, y, x) = t.at(n, c, std::min(y, t.h() - 1), std::min(x, t.w() - 1));
    return out;
}

inline Grid crop_top_left(const Grid& g, int h, int w) {
    if (g.height() == h && g.width() == w)
        return g;
    Grid out(h, w, g.channels());
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < g.channels(); ++c)
                out.at(y, x, c) = g.at(y, x, c);
    return out;
}

inline nn::NodeRef padded_input(const Grid& g, int multiple) {
    nn::Tensor t = nn::to_tensor(g);
    const int h = padded_extent(t.h(), multiple);
    const int w = padded_extent(t.w(), multiple);
    return nn::constant(pad_bottom_right_replicate(t, h, w));
}

} // namespace detail

struct EstimatedParameters {
    DensityMap density;
    AtmosphericMap atmospheric;
};

// Hazy image of arbitrary size -> haze parameters at the same size.
inline EstimatedParameters estimate_parameters(const ParameterEstimator& model, const Image& hazy,
                                               int spatial_multiple) {
    const auto out = model(detail::padded_input(hazy.grid(), spatial_multiple));
    Grid density = detail::crop_top_left(nn::to_grid(out.density->value), hazy.height(), hazy.width());
    Grid atmospheric =
        detail::crop_top_left(nn::to_grid(out.atmospheric->value), hazy.height(), hazy.width());
    return {DensityMap(std::move(density)), AtmosphericMap(std::move(atmospheric))};
}

inline DepthMap refine_depth(const DepthRefiner& model, const DepthMap& raw, const Image& clean,
                             int spatial_multiple) {
    if (raw.height() != clean.height() || raw.width() != clean.width())
        throw ShapeError("refine_depth: depth " + raw.grid().shape_string() + " vs clean " +
                         clean.grid().shape_string());
    const auto out = model(detail::padded_input(raw.grid(), spatial_multiple),
                           detail::padded_input(clean.grid(), spatial_multiple));
    return DepthMap(detail::crop_top_left(nn::to_grid(out->value), raw.height(), raw.width()));
}

inline Image refine_haze(const HazeRefiner& model, const Image& initial, const Image& clean,
                         int spatial_multiple) {
    if (!initial.grid().same_shape(clean.grid()))
        throw ShapeError("refine_haze: initial " + initial.grid().shape_string() + " vs clean " +
                         clean.grid().shape_string());
    const auto out = model(detail::padded_input(initial.grid(), spatial_multiple),
                           detail::padded_input(clean.grid(), spatial_multiple));
    return Image(detail::crop_top_left(nn::to_grid(out->value), initial.height(), initial.width()));
}

struct SynthesisResult {
    Image initial; // physics render
    Image final;   // learned refinement when a refiner is given, else initial
};

// Parameters -> hazy image: physics render, then optional learned refinement.
inline SynthesisResult synthesize_hazy(const Image& clean, const DensityMap& density,
                                       const AtmosphericMap& atmospheric, const DepthMap& depth,
                                       const HazeRefiner* refiner, int spatial_multiple) {
    const TransmissionMap t = compute_transmission(density, depth);
    Image initial = render_haze(clean, t, atmospheric);
    Image final = refiner ? refine_haze(*refiner, initial, clean, spatial_multiple) : initial;
    return {std::move(initial), std::move(final)};
}

// ---------------------------------------------------------------------------
// depth providers
// ---------------------------------------------------------------------------

struct DepthProviderConfig {
    std::string kind = "ramp"; // one of: file, ramp, plugin
    std::string source;        // file/dir path, or registered plugin id
};

// Supplies a raw single-channel depth map per image. "file" reads a map from
// disk, "ramp" builds a vertical gradient (top far, bottom near), "plugin"
// dispatches to a registered callable. Callers normalize the result.
class DepthProvider {
  public:
    using PluginFn = std::function<Grid(const Image&)>;

    explicit DepthProvider(DepthProviderConfig cfg) : cfg_(std::move(cfg)) {
        if (cfg_.kind != "file" && cfg_.kind != "ramp" && cfg_.kind != "plugin")
            throw ValidationError("DepthProvider: unknown kind \"" + cfg_.kind + "\"");
        if (cfg_.kind != "ramp" && cfg_.source.empty())
            throw ValidationError("DepthProvider: kind \"" + cfg_.kind + "\" needs a source");
    }

    static void register_plugin(const std::string& id, PluginFn fn) {
        std::lock_guard<std::mutex> lock(registry_mutex());
        registry()[id] = std::move(fn);
    }

    const DepthProviderConfig& config() const { return cfg_; }

    Grid raw_depth(const Image& clean, const std::string& pair_id) const {
        if (cfg_.kind == "ramp")
            return ramp(clean.height(), clean.width());
        if (cfg_.kind == "file")
            return from_file(clean, pair_id);
        return from_plugin(clean);
    }

    static Grid ramp(int height, int width) {
        Grid g(height, width, 1);
        for (int y = 0; y < height; ++y) {
            const double v = height > 1 ? 1.0 - static_cast<double>(y) / (height - 1) : 1.0;
            for (int x = 0; x < width; ++x)
                g.at(y, x, 0) = v;
        }
        return g;
    }

  private:
    Grid from_file(const Image& clean, const std::string& pair_id) const {
        namespace fs = std::filesystem;
        fs::path path(cfg_.source);
        if (fs::is_directory(path))
            path /= pair_id + ".hfpm";
        Grid g = load_map(path.string());
        if (g.channels() != 1)
            throw ValidationError("DepthProvider: " + path.string() + " has " +
                                  std::to_string(g.channels()) + " channels, expected 1");
        if (g.height() != clean.height() || g.width() != clean.width())
            throw ShapeError("DepthProvider: " + path.string() + " is " + g.shape_string() +
                             " but the image is " + clean.grid().shape_string());
        return g;
    }

    Grid from_plugin(const Image& clean) const {
        PluginFn fn;
        {
            std::lock_guard<std::mutex> lock(registry_mutex());
            auto it = registry().find(cfg_.source);
            if (it == registry().end())
                throw UsageError("DepthProvider: no plugin registered as \"" + cfg_.source + "\"");
            fn = it->second;
        }
        Grid g = fn(clean);
        if (g.channels() != 1 || g.height() != clean.height() || g.width() != clean.width())
            throw ShapeError("DepthProvider: plugin \"" + cfg_.source + "\" returned " +
                             g.shape_string() + " for a " + clean.grid().shape_string() + " image");
        for (double v : g.values())
            if (!std::isfinite(v))
                throw ValidationError("DepthProvider: plugin \"" + cfg_.source +
                                      "\" returned a non-finite value");
        return g;
    }

    static std::map<std::string, PluginFn>& registry() {
        static std::map<std::string, PluginFn> r;
        return r;
    }

    static std::mutex& registry_mutex() {
        static std::mutex m;
        return m;
    }

    DepthProviderConfig cfg_;
};

} // namespace hazeforge
