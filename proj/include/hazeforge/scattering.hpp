#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "hazeforge/core.hpp"

namespace hazeforge {

// Floor applied to computed transmission; the exponential never reaches 0
// analytically and the floor keeps downstream division and log finite.
inline constexpr double kTransmissionFloor = 1e-4;

// Pixels where |clean - atmospheric| falls below this carry no usable
// transmission information and are masked out of inversions.
inline constexpr double kDefaultInversionEps = 1e-3;

namespace detail {

inline void require_spatial_match(const Grid& a, const Grid& b, const char* what) {
    if (a.height() != b.height() || a.width() != b.width())
        throw ShapeError(std::string(what) + ": " + a.shape_string() + " vs " + b.shape_string());
}

} // namespace detail

// t(z) = exp(-beta(z) * d(z)); the single-channel depth multiplies each of
// the three density channels identically.
inline TransmissionMap compute_transmission(const DensityMap& beta, const DepthMap& depth) {
    detail::require_spatial_match(beta.grid(), depth.grid(), "compute_transmission");
    const int h = beta.height(), w = beta.width();
    Grid t(h, w, 3);
    const double* b = beta.grid().data();
    const double* d = depth.grid().data();
    double* out = t.data();
    const std::size_t pixels = static_cast<std::size_t>(h) * w;
    for (std::size_t p = 0; p < pixels; ++p) {
        const double dz = d[p];
        for (int c = 0; c < 3; ++c)
            out[p * 3 + c] = std::max(std::exp(-b[p * 3 + c] * dz), kTransmissionFloor);
    }
    return TransmissionMap(std::move(t));
}

// O(z) = J(z) t(z) + A(z) (1 - t(z)): per-pixel convex combination of the
// clean radiance and the airlight, so outputs stay within [0, 1].
inline Image render_haze(const Image& clean, const TransmissionMap& t, const AtmosphericMap& atmospheric) {
    detail::require_spatial_match(clean.grid(), t.grid(), "render_haze");
    detail::require_spatial_match(clean.grid(), atmospheric.grid(), "render_haze");
    const int h = clean.height(), w = clean.width();
    Grid out(h, w, 3);
    const double* j = clean.grid().data();
    const double* tv = t.grid().data();
    const double* a = atmospheric.grid().data();
    double* o = out.data();
    const std::size_t pixels = static_cast<std::size_t>(h) * w;
    for (std::size_t p = 0; p < pixels; ++p) {
        const double az = a[p];
        for (int c = 0; c < 3; ++c) {
            const double tz = tv[p * 3 + c];
            // clamp guards against the last-ulp overshoot of the blend
            o[p * 3 + c] = std::clamp(j[p * 3 + c] * tz + az * (1.0 - tz), 0.0, 1.0);
        }
    }
    return Image(std::move(out));
}

struct TransmissionInversion {
    TransmissionMap t;
    // per pixel/channel: 1 where |clean - A| >= epsilon_div, 0 where the
    // inversion is ill-conditioned (there t is pinned to 1)
    std::vector<std::uint8_t> valid;
};

// Solves the scattering blend for t: t = (hazy - A) / (clean - A), clamped
// to [kTransmissionFloor, 1]. Near-degenerate pixels are flagged, not errors.
inline TransmissionInversion invert_transmission(const Image& hazy, const Image& clean,
                                                 const AtmosphericMap& atmospheric,
                                                 double epsilon_div = kDefaultInversionEps) {
    detail::require_spatial_match(hazy.grid(), clean.grid(), "invert_transmission");
    detail::require_spatial_match(hazy.grid(), atmospheric.grid(), "invert_transmission");
    const int h = hazy.height(), w = hazy.width();
    Grid t(h, w, 3);
    std::vector<std::uint8_t> valid(t.size(), 0);
    const double* iv = hazy.grid().data();
    const double* jv = clean.grid().data();
    const double* a = atmospheric.grid().data();
    double* tv = t.data();
    const std::size_t pixels = static_cast<std::size_t>(h) * w;
    for (std::size_t p = 0; p < pixels; ++p) {
        const double az = a[p];
        for (int c = 0; c < 3; ++c) {
            const std::size_t i = p * 3 + c;
            const double denom = jv[i] - az;
            if (std::abs(denom) < epsilon_div) {
                tv[i] = 1.0;
                continue;
            }
            valid[i] = 1;
            tv[i] = std::clamp((iv[i] - az) / denom, kTransmissionFloor, 1.0);
        }
    }
    return {TransmissionMap(std::move(t)), std::move(valid)};
}

} // namespace hazeforge
