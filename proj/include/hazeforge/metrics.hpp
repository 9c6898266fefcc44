#pragma once

#include <cmath>
#include <cstdio>
#include <limits>
#include <string>
#include <vector>

#include "hazeforge/core.hpp"

namespace hazeforge {

// 10 * log10(1 / MSE) on [0,1] images; +infinity when the images are equal.
inline double psnr(const Image& a, const Image& b) {
    if (!a.grid().same_shape(b.grid()))
        throw ShapeError("psnr: " + a.grid().shape_string() + " vs " + b.grid().shape_string());
    double sum = 0.0;
    const auto& va = a.grid().values();
    const auto& vb = b.grid().values();
    for (std::size_t i = 0; i < va.size(); ++i) {
        const double d = va[i] - vb[i];
        sum += d * d;
    }
    const double mse = sum / static_cast<double>(va.size());
    if (mse == 0.0)
        return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(1.0 / mse);
}

// Identical images report the string "inf" instead of a made-up ceiling.
inline std::string format_metric(double value) {
    if (std::isinf(value))
        return value > 0 ? "inf" : "-inf";
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.4f", value);
    return buf;
}

namespace detail {

inline const std::vector<double>& ssim_window() {
    static const std::vector<double> w = [] {
        constexpr int size = 11;
        constexpr double sigma = 1.5;
        std::vector<double> win(size * size);
        double sum = 0.0;
        for (int y = 0; y < size; ++y) {
            for (int x = 0; x < size; ++x) {
                const double dy = y - (size - 1) / 2.0;
                const double dx = x - (size - 1) / 2.0;
                win[y * size + x] = std::exp(-(dy * dy + dx * dx) / (2.0 * sigma * sigma));
                sum += win[y * size + x];
            }
        }
        for (double& v : win)
            v /= sum;
        return win;
    }();
    return w;
}

} // namespace detail

// Mean local SSIM: 11x11 Gaussian window (sigma 1.5), valid positions only,
// stabilizers C1 = 0.01^2 and C2 = 0.03^2 on the [0,1] range, evaluated per
// channel and averaged.
inline double ssim(const Image& a, const Image& b) {
    if (!a.grid().same_shape(b.grid()))
        throw ShapeError("ssim: " + a.grid().shape_string() + " vs " + b.grid().shape_string());
    constexpr int kWindow = 11;
    const int h = a.height(), w = a.width();
    if (h < kWindow || w < kWindow)
        throw ShapeError("ssim: image " + a.grid().shape_string() + " smaller than the " +
                         std::to_string(kWindow) + "x" + std::to_string(kWindow) + " window");
    constexpr double c1 = 0.01 * 0.01;
    constexpr double c2 = 0.03 * 0.03;
    const auto& win = detail::ssim_window();

    double channel_sum = 0.0;
    for (int c = 0; c < 3; ++c) {
        double acc = 0.0;
        std::size_t count = 0;
        for (int y0 = 0; y0 + kWindow <= h; ++y0) {
            for (int x0 = 0; x0 + kWindow <= w; ++x0) {
                double mu_a = 0.0, mu_b = 0.0, aa = 0.0, bb = 0.0, ab = 0.0;
                for (int dy = 0; dy < kWindow; ++dy) {
                    for (int dx = 0; dx < kWindow; ++dx) {
                        const double weight = win[dy * kWindow + dx];
                        const double va = a.at(y0 + dy, x0 + dx, c);
                        const double vb = b.at(y0 + dy, x0 + dx, c);
                        mu_a += weight * va;
                        mu_b += weight * vb;
                        aa += weight * va * va;
                        bb += weight * vb * vb;
                        ab += weight * va * vb;
                    }
                }
                const double var_a = aa - mu_a * mu_a;
                const double var_b = bb - mu_b * mu_b;
                const double cov = ab - mu_a * mu_b;
                const double num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2);
                const double den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2);
                acc += num / den;
                ++count;
            }
        }
        channel_sum += acc / static_cast<double>(count);
    }
    return channel_sum / 3.0;
}

} // namespace hazeforge
