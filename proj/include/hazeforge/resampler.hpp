#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>

#include "hazeforge/core.hpp"
#include "hazeforge/rng.hpp"

namespace hazeforge {

// How augmentation specs are drawn: strategy weights and the uniform ranges
// for the density scale and atmospheric interpolation weights. The defaults
// span the demonstrated operating points (density halved to doubled) and the
// training-set density range [0.6, 1.25] for haze-free fills.
struct SamplingPolicy {
    double w_scale = 0.4;
    double w_reverse = 0.2;
    double w_interpolate = 0.2;
    double w_compose = 0.2;
    Interval alpha_range{0.5, 2.0};
    Interval gamma_range{0.0, 1.0};
    Interval eta_range{0.0, 1.0};
    Interval fill_range{0.6, 1.25};
    double haze_free_threshold = 0.9;

    void validate() const {
        const double ws[] = {w_scale, w_reverse, w_interpolate, w_compose};
        double sum = 0.0;
        for (double w : ws) {
            if (w < 0.0 || !std::isfinite(w))
                throw ValidationError("SamplingPolicy: strategy weights must be >= 0");
            sum += w;
        }
        if (sum <= 0.0)
            throw ValidationError("SamplingPolicy: strategy weights sum to zero");
        if (!(alpha_range.lo > 0.0) || alpha_range.lo > alpha_range.hi)
            throw ValidationError("SamplingPolicy: alpha range must be positive and ordered");
        if (gamma_range.lo < 0.0 || gamma_range.lo > gamma_range.hi)
            throw ValidationError("SamplingPolicy: gamma range must be >= 0 and ordered");
        if (eta_range.lo < 0.0 || eta_range.lo > eta_range.hi)
            throw ValidationError("SamplingPolicy: eta range must be >= 0 and ordered");
        if (!(fill_range.lo > 0.0) || fill_range.lo > fill_range.hi)
            throw ValidationError("SamplingPolicy: fill range must be positive and ordered");
        if (!(haze_free_threshold > 0.0 && haze_free_threshold < 1.0))
            throw ValidationError("SamplingPolicy: haze_free_threshold must be in (0, 1)");
    }
};

// beta'(z) = alpha * beta(z)
inline DensityMap scale_density(const DensityMap& beta, double alpha) {
    if (!(alpha > 0.0) || !std::isfinite(alpha))
        throw ValidationError("scale_density: alpha must be > 0, got " + std::to_string(alpha));
    Grid out = beta.grid();
    if (alpha != 1.0) {
        for (double& v : out.values())
            v *= alpha;
    }
    return DensityMap(std::move(out));
}

struct ReversedAtmosphere {
    AtmosphericMap atmospheric;
    DensityMap density;
};

// A'(z) = 1 - A(z), moving the haze to where it was not. Pixels that were
// haze-free in the original (transmission above the threshold on every
// channel) get a fresh density drawn i.i.d. per channel from fill_range;
// everywhere else the density is kept.
inline ReversedAtmosphere reverse_atmospheric(const AtmosphericMap& atmospheric, const DensityMap& beta,
                                              const TransmissionMap& t, Interval fill_range,
                                              double haze_free_threshold, std::uint64_t rng_seed) {
    if (!(fill_range.lo > 0.0) || fill_range.lo > fill_range.hi)
        throw ValidationError("reverse_atmospheric: fill range must be positive and ordered");
    if (!(haze_free_threshold > 0.0 && haze_free_threshold < 1.0))
        throw ValidationError("reverse_atmospheric: haze_free_threshold must be in (0, 1)");
    if (atmospheric.height() != beta.height() || atmospheric.width() != beta.width() ||
        !beta.grid().same_shape(t.grid()))
        throw ShapeError("reverse_atmospheric: map shapes disagree");

    Grid a_out = atmospheric.grid();
    for (double& v : a_out.values())
        v = 1.0 - v;

    Grid b_out = beta.grid();
    CounterRng rng(rng_seed);
    const std::size_t pixels = static_cast<std::size_t>(beta.height()) * beta.width();
    const double* tv = t.grid().data();
    for (std::size_t p = 0; p < pixels; ++p) {
        const bool haze_free = tv[p * 3] > haze_free_threshold &&
                               tv[p * 3 + 1] > haze_free_threshold &&
                               tv[p * 3 + 2] > haze_free_threshold;
        if (!haze_free)
            continue;
        for (int c = 0; c < 3; ++c)
            b_out.values()[p * 3 + c] = rng.uniform(fill_range.lo, fill_range.hi);
    }
    return {AtmosphericMap(std::move(a_out)), DensityMap(std::move(b_out))};
}

// A'(z) = min(gamma * A(z) + eta * (1 - A(z)), 1)
inline AtmosphericMap interpolate_atmospheric(const AtmosphericMap& atmospheric, double gamma, double eta) {
    if (gamma < 0.0 || eta < 0.0 || !std::isfinite(gamma) || !std::isfinite(eta))
        throw ValidationError("interpolate_atmospheric: weights must be >= 0");
    Grid out = atmospheric.grid();
    for (double& v : out.values())
        v = std::min(gamma * v + eta * (1.0 - v), 1.0);
    return AtmosphericMap(std::move(out));
}

// Draws one augmentation spec. Deterministic in rng_seed: the same seed
// always yields the same strategy, parameters, and downstream fill seed.
inline AugmentationSpec sample_spec(const SamplingPolicy& policy, std::uint64_t rng_seed) {
    policy.validate();
    CounterRng rng(rng_seed);

    const double total = policy.w_scale + policy.w_reverse + policy.w_interpolate + policy.w_compose;
    AugmentationSpec spec;
    const double pick = rng.next_double() * total;
    if (pick < policy.w_scale)
        spec.strategy = Strategy::scale;
    else if (pick < policy.w_scale + policy.w_reverse)
        spec.strategy = Strategy::reverse;
    else if (pick < policy.w_scale + policy.w_reverse + policy.w_interpolate)
        spec.strategy = Strategy::interpolate;
    else
        spec.strategy = Strategy::compose;

    spec.alpha = rng.uniform(policy.alpha_range.lo, policy.alpha_range.hi);
    spec.gamma = rng.uniform(policy.gamma_range.lo, policy.gamma_range.hi);
    spec.eta = rng.uniform(policy.eta_range.lo, policy.eta_range.hi);
    spec.fill_range = policy.fill_range;
    spec.seed = rng.next_u64();
    spec.validate();
    return spec;
}

} // namespace hazeforge
