#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <vector>

#include "hazeforge/core.hpp"

namespace hazeforge::nn {

// Dense NCHW tensor of doubles. Scalars are {1,1,1,1}.
class Tensor {
public:
    Tensor() = default;

    Tensor(int n, int c, int h, int w, double fill = 0.0)
        : n_(n), c_(c), h_(h), w_(w) {
        if (n <= 0 || c <= 0 || h <= 0 || w <= 0)
            throw ShapeError("Tensor: dimensions must be positive, got " + shape_string(n, c, h, w));
        v_.assign(static_cast<std::size_t>(n) * c * h * w, fill);
    }

    static Tensor scalar(double value) {
        Tensor t(1, 1, 1, 1);
        t.v_[0] = value;
        return t;
    }

    static Tensor zeros_like(const Tensor& o) { return Tensor(o.n_, o.c_, o.h_, o.w_); }

    int n() const { return n_; }
    int c() const { return c_; }
    int h() const { return h_; }
    int w() const { return w_; }
    std::size_t numel() const { return v_.size(); }
    bool empty() const { return v_.empty(); }

    bool same_shape(const Tensor& o) const {
        return n_ == o.n_ && c_ == o.c_ && h_ == o.h_ && w_ == o.w_;
    }

    double& at(int n, int c, int y, int x) { return v_[index(n, c, y, x)]; }
    double at(int n, int c, int y, int x) const { return v_[index(n, c, y, x)]; }

    double* data() { return v_.data(); }
    const double* data() const { return v_.data(); }
    std::vector<double>& values() { return v_; }
    const std::vector<double>& values() const { return v_; }

    std::size_t index(int n, int c, int y, int x) const {
        return ((static_cast<std::size_t>(n) * c_ + c) * h_ + y) * w_ + x;
    }

    std::string shape_string() const { return shape_string(n_, c_, h_, w_); }

    static std::string shape_string(int n, int c, int h, int w) {
        return std::to_string(n) + "x" + std::to_string(c) + "x" +
               std::to_string(h) + "x" + std::to_string(w);
    }

private:
    int n_ = 0, c_ = 0, h_ = 0, w_ = 0;
    std::vector<double> v_;
};

// Image-grid (HWC) <-> tensor (1CHW) conversion for feeding maps through
// the networks.
inline Tensor to_tensor(const Grid& g) {
    Tensor t(1, g.channels(), g.height(), g.width());
    for (int y = 0; y < g.height(); ++y)
        for (int x = 0; x < g.width(); ++x)
            for (int c = 0; c < g.channels(); ++c)
                t.at(0, c, y, x) = g.at(y, x, c);
    return t;
}

inline Grid to_grid(const Tensor& t, int batch_index = 0) {
    Grid g(t.h(), t.w(), t.c());
    for (int y = 0; y < t.h(); ++y)
        for (int x = 0; x < t.w(); ++x)
            for (int c = 0; c < t.c(); ++c)
                g.at(y, x, c) = t.at(batch_index, c, y, x);
    return g;
}

} // namespace hazeforge::nn
