#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace hazeforge {

class ValidationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ShapeError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct Interval {
    double lo = 0.0;
    double hi = 0.0;

    bool contains(double v) const { return v >= lo && v <= hi; }
};

// Dense row-major H x W x C grid of doubles; index (y, x, c) maps to
// (y * width + x) * channels + c. Storage behind every image and map type.
class Grid {
public:
    Grid() = default;

    Grid(int height, int width, int channels, double fill = 0.0)
        : h_(height), w_(width), c_(channels) {
        if (height <= 0 || width <= 0 || channels <= 0)
            throw ShapeError("Grid: dimensions must be positive, got " + shape_string(height, width, channels));
        data_.assign(static_cast<std::size_t>(height) * width * channels, fill);
    }

    Grid(int height, int width, int channels, std::vector<double> data)
        : h_(height), w_(width), c_(channels), data_(std::move(data)) {
        if (height <= 0 || width <= 0 || channels <= 0)
            throw ShapeError("Grid: dimensions must be positive, got " + shape_string(height, width, channels));
        if (data_.size() != static_cast<std::size_t>(height) * width * channels)
            throw ShapeError("Grid: data size " + std::to_string(data_.size()) +
                             " does not match shape " + shape_string(height, width, channels));
    }

    int height() const { return h_; }
    int width() const { return w_; }
    int channels() const { return c_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    double& at(int y, int x, int c) { return data_[index(y, x, c)]; }
    double at(int y, int x, int c) const { return data_[index(y, x, c)]; }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::vector<double>& values() { return data_; }
    const std::vector<double>& values() const { return data_; }

    bool same_shape(const Grid& o) const {
        return h_ == o.h_ && w_ == o.w_ && c_ == o.c_;
    }

    std::size_t index(int y, int x, int c) const {
        return (static_cast<std::size_t>(y) * w_ + x) * c_ + c;
    }

    std::string shape_string() const { return shape_string(h_, w_, c_); }

    static std::string shape_string(int h, int w, int c) {
        return std::to_string(h) + "x" + std::to_string(w) + "x" + std::to_string(c);
    }

private:
    int h_ = 0, w_ = 0, c_ = 0;
    std::vector<double> data_;
};

namespace detail {

inline std::string value_location(const Grid& g, std::size_t flat) {
    const int c = static_cast<int>(flat % g.channels());
    const std::size_t pix = flat / g.channels();
    const int x = static_cast<int>(pix % g.width());
    const int y = static_cast<int>(pix / g.width());
    return "(y=" + std::to_string(y) + ", x=" + std::to_string(x) + ", c=" + std::to_string(c) + ")";
}

// Value-range policies for the strongly typed map wrappers below.
struct UnitRangePolicy {
    static bool ok(double v) { return std::isfinite(v) && v >= 0.0 && v <= 1.0; }
    static constexpr const char* describe() { return "within [0, 1]"; }
};

struct NonNegativePolicy {
    static bool ok(double v) { return std::isfinite(v) && v >= 0.0; }
    static constexpr const char* describe() { return "finite and >= 0"; }
};

template <class RangePolicy, int Channels, class Tag>
class TypedMap {
public:
    static constexpr int kChannels = Channels;

    explicit TypedMap(Grid g) : g_(std::move(g)) { validate(g_); }

    static void validate(const Grid& g) {
        if (g.empty())
            throw ShapeError(std::string(Tag::name()) + ": empty grid");
        if (g.channels() != Channels)
            throw ShapeError(std::string(Tag::name()) + ": expected " + std::to_string(Channels) +
                             " channel(s), got " + std::to_string(g.channels()));
        const auto& v = g.values();
        for (std::size_t i = 0; i < v.size(); ++i) {
            if (!RangePolicy::ok(v[i]))
                throw ValidationError(std::string(Tag::name()) + ": value " + std::to_string(v[i]) +
                                      " at " + value_location(g, i) + " is not " + RangePolicy::describe());
        }
    }

    const Grid& grid() const { return g_; }
    int height() const { return g_.height(); }
    int width() const { return g_.width(); }
    int channels() const { return g_.channels(); }
    double at(int y, int x, int c = 0) const { return g_.at(y, x, c); }

private:
    Grid g_;
};

struct ImageTag { static constexpr const char* name() { return "Image"; } };
struct DensityTag { static constexpr const char* name() { return "DensityMap"; } };
struct AtmosphericTag { static constexpr const char* name() { return "AtmosphericMap"; } };
struct DepthTag { static constexpr const char* name() { return "DepthMap"; } };
struct TransmissionTag { static constexpr const char* name() { return "TransmissionMap"; } };

} // namespace detail

// H x W x 3, values in [0, 1]. Clean and hazy photographs, rendered outputs.
using Image = detail::TypedMap<detail::UnitRangePolicy, 3, detail::ImageTag>;

// H x W x 3, values >= 0: per-pixel, per-channel extinction coefficient.
using DensityMap = detail::TypedMap<detail::NonNegativePolicy, 3, detail::DensityTag>;

// H x W x 1, values in [0, 1]: pixel-wise airlight intensity.
using AtmosphericMap = detail::TypedMap<detail::UnitRangePolicy, 1, detail::AtmosphericTag>;

// H x W x 1, values in [0, 1]: normalized scene depth (0 nearest, 1 farthest).
using DepthMap = detail::TypedMap<detail::UnitRangePolicy, 1, detail::DepthTag>;

// H x W x 3, values in [0, 1]: fraction of scene radiance surviving the haze.
// The scattering model only ever produces values in (0, 1]; a plain 0 is
// accepted here so fully opaque synthetic edge cases remain constructible.
using TransmissionMap = detail::TypedMap<detail::UnitRangePolicy, 3, detail::TransmissionTag>;

struct HazePair {
    Image hazy;
    Image clean;
    std::string id;
    std::optional<DepthMap> depth;
};

enum class Strategy { scale, reverse, interpolate, compose };

inline const char* to_string(Strategy s) {
    switch (s) {
        case Strategy::scale: return "scale";
        case Strategy::reverse: return "reverse";
        case Strategy::interpolate: return "interpolate";
        case Strategy::compose: return "compose";
    }
    throw UsageError("unknown strategy value");
}

inline Strategy strategy_from_string(const std::string& s) {
    if (s == "scale") return Strategy::scale;
    if (s == "reverse") return Strategy::reverse;
    if (s == "interpolate") return Strategy::interpolate;
    if (s == "compose") return Strategy::compose;
    throw UsageError("unknown strategy \"" + s + "\"");
}

// One parameter-space resampling: density scale alpha, atmospheric
// interpolation weights (gamma, eta), the density range used to fill
// haze-free regions on reversal, and the seed that makes it replayable.
struct AugmentationSpec {
    double alpha = 1.0;
    double gamma = 1.0;
    double eta = 0.0;
    Interval fill_range{0.6, 1.25};
    Strategy strategy = Strategy::scale;
    std::uint64_t seed = 0;

    void validate() const {
        if (!(alpha > 0.0) || !std::isfinite(alpha))
            throw ValidationError("AugmentationSpec: alpha must be > 0, got " + std::to_string(alpha));
        if (gamma < 0.0 || !std::isfinite(gamma))
            throw ValidationError("AugmentationSpec: gamma must be >= 0, got " + std::to_string(gamma));
        if (eta < 0.0 || !std::isfinite(eta))
            throw ValidationError("AugmentationSpec: eta must be >= 0, got " + std::to_string(eta));
        if (fill_range.lo > fill_range.hi)
            throw ValidationError("AugmentationSpec: fill range is empty");
    }
};

// Re-checks every invariant of the pair and returns it unchanged.
inline HazePair validate_pair(HazePair pair) {
    Image::validate(pair.hazy.grid());
    Image::validate(pair.clean.grid());
    if (!pair.hazy.grid().same_shape(pair.clean.grid()))
        throw ShapeError("HazePair \"" + pair.id + "\": hazy is " + pair.hazy.grid().shape_string() +
                         " but clean is " + pair.clean.grid().shape_string());
    if (pair.depth) {
        DepthMap::validate(pair.depth->grid());
        if (pair.depth->height() != pair.hazy.height() || pair.depth->width() != pair.hazy.width())
            throw ShapeError("HazePair \"" + pair.id + "\": depth is " + pair.depth->grid().shape_string() +
                             " but images are " + pair.hazy.grid().shape_string());
    }
    return pair;
}

struct NormalizedDepth {
    DepthMap map;
    bool degenerate = false; // constant input collapsed to all zeros
};

// Min-max rescale of a raw single-channel depth map to [0, 1].
inline NormalizedDepth normalize_depth(const Grid& raw) {
    if (raw.channels() != 1)
        throw ShapeError("normalize_depth: expected 1 channel, got " + std::to_string(raw.channels()));
    double lo = std::numeric_limits<double>::infinity();
    double hi = -std::numeric_limits<double>::infinity();
    for (double v : raw.values()) {
        if (!std::isfinite(v))
            throw ValidationError("normalize_depth: input contains a non-finite value");
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    Grid out(raw.height(), raw.width(), 1);
    if (lo == hi)
        return {DepthMap(std::move(out)), true};
    // Division keeps the endpoints exact: (hi-lo)/(hi-lo) is 1.0 and rounding
    // is monotone, so every output stays inside [0, 1].
    const double span = hi - lo;
    for (std::size_t i = 0; i < raw.size(); ++i)
        out.values()[i] = (raw.values()[i] - lo) / span;
    return {DepthMap(std::move(out)), false};
}

} // namespace hazeforge
