#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "hazeforge/nn/tensor.hpp"

namespace hazeforge::nn {

// Reverse-mode autodiff over a dynamically built graph. Each op records its
// parents and a backprop closure only when some input requires gradients, so
// inference-only forwards keep no graph and free intermediates eagerly.
struct Node {
    Tensor value;
    Tensor grad; // sized on first use during backward()
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backprop;
};

using NodeRef = std::shared_ptr<Node>;

inline NodeRef make_leaf(Tensor value, bool requires_grad) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->requires_grad = requires_grad;
    return n;
}

inline NodeRef constant(Tensor value) { return make_leaf(std::move(value), false); }

namespace detail {

inline Tensor& grad_of(Node& n) {
    if (n.grad.empty())
        n.grad = Tensor::zeros_like(n.value);
    return n.grad;
}

inline NodeRef make_op(Tensor value, std::vector<NodeRef> parents, std::function<void(Node&)> backprop) {
    auto out = std::make_shared<Node>();
    out->value = std::move(value);
    for (const auto& p : parents)
        out->requires_grad = out->requires_grad || p->requires_grad;
    if (out->requires_grad) {
        out->parents = std::move(parents);
        out->backprop = std::move(backprop);
    }
    return out;
}

} // namespace detail

inline void zero_grad(const NodeRef& n) {
    if (!n->grad.empty())
        std::fill(n->grad.values().begin(), n->grad.values().end(), 0.0);
}

// Accumulates d(root)/d(leaf) into every reachable leaf with requires_grad.
// The root must be scalar.
inline void backward(const NodeRef& root) {
    if (root->value.numel() != 1)
        throw UsageError("backward: root must be a scalar");
    if (!root->requires_grad)
        throw UsageError("backward: no input of the graph requires gradients");

    // iterative post-order DFS over parents
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, std::size_t>> stack{{root.get(), 0}};
    visited.insert(root.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node* parent = node->parents[next++].get();
            if (parent->requires_grad && visited.insert(parent).second)
                stack.emplace_back(parent, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    detail::grad_of(*root).values()[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        if ((*it)->backprop)
            (*it)->backprop(**it);
    }
}

// ---------------------------------------------------------------------------
// elementwise ops (equal shapes, or one operand with a single channel
// broadcast across the other's channels)
// ---------------------------------------------------------------------------

namespace detail {

enum class Broadcast { none, left_channel, right_channel };

inline Broadcast binary_mode(const Tensor& a, const Tensor& b, const char* what) {
    if (a.same_shape(b))
        return Broadcast::none;
    const bool spatial = a.n() == b.n() && a.h() == b.h() && a.w() == b.w();
    if (spatial && a.c() == 1 && b.c() > 1)
        return Broadcast::left_channel;
    if (spatial && b.c() == 1 && a.c() > 1)
        return Broadcast::right_channel;
    throw ShapeError(std::string(what) + ": incompatible shapes " + a.shape_string() +
                     " vs " + b.shape_string());
}

template <class Fn>
inline void for_each_pair(const Tensor& a, const Tensor& b, Broadcast mode, Fn&& fn) {
    const Tensor& wide = (mode == Broadcast::left_channel) ? b : a;
    const std::size_t plane = static_cast<std::size_t>(wide.h()) * wide.w();
    const int channels = wide.c();
    for (int n = 0; n < wide.n(); ++n) {
        for (int c = 0; c < channels; ++c) {
            const std::size_t out_base = (static_cast<std::size_t>(n) * channels + c) * plane;
            const std::size_t a_base = (mode == Broadcast::left_channel)
                                           ? static_cast<std::size_t>(n) * plane
                                           : out_base;
            const std::size_t b_base = (mode == Broadcast::right_channel)
                                           ? static_cast<std::size_t>(n) * plane
                                           : out_base;
            for (std::size_t p = 0; p < plane; ++p)
                fn(out_base + p, a_base + p, b_base + p);
        }
    }
}

} // namespace detail

inline NodeRef add(const NodeRef& a, const NodeRef& b) {
    const auto mode = detail::binary_mode(a->value, b->value, "add");
    const Tensor& wide = (mode == detail::Broadcast::left_channel) ? b->value : a->value;
    Tensor out = Tensor::zeros_like(wide);
    detail::for_each_pair(a->value, b->value, mode, [&](std::size_t o, std::size_t ia, std::size_t ib) {
        out.values()[o] = a->value.values()[ia] + b->value.values()[ib];
    });
    return detail::make_op(std::move(out), {a, b}, [a, b, mode](Node& node) {
        if (a->requires_grad) {
            auto& ga = detail::grad_of(*a);
            detail::for_each_pair(a->value, b->value, mode, [&](std::size_t o, std::size_t ia, std::size_t) {
                ga.values()[ia] += node.grad.values()[o];
            });
        }
        if (b->requires_grad) {
            auto& gb = detail::grad_of(*b);
            detail::for_each_pair(a->value, b->value, mode, [&](std::size_t o, std::size_t, std::size_t ib) {
                gb.values()[ib] += node.grad.values()[o];
            });
        }
    });
}

inline NodeRef sub(const NodeRef& a, const NodeRef& b) {
    const auto mode = detail::binary_mode(a->value, b->value, "sub");
    const Tensor& wide = (mode == detail::Broadcast::left_channel) ? b->value : a->value;
    Tensor out = Tensor::zeros_like(wide);
    detail::for_each_pair(a->value, b->value, mode, [&](std::size_t o, std::size_t ia, std::size_t ib) {
        out.values()[o] = a->value.values()[ia] - b->value.values()[ib];
    });
    return detail::make_op(std::move(out), {a, b}, [a, b, mode](Node& node) {
        if (a->requires_grad) {
            auto& ga = detail::grad_of(*a);
            detail::for_each_pair(a->value, b->value, mode, [&](std::size_t o, std::size_t ia, std::size_t) {
                ga.values()[ia] += node.grad.values()[o];
            });
        }
        if (b->requires_grad) {
            auto& gb = detail::grad_of(*b);
            detail::for_each_pair(a->value, b->value, mode, [&](std::size_t o, std::size_t, std::size_t ib) {
                gb.values()[ib] -= node.grad.values()[o];
            });
        }
    });
}

inline NodeRef mul(const NodeRef& a, const NodeRef& b) {
    const auto mode = detail::binary_mode(a->value, b->value, "mul");
    const Tensor& wide = (mode == detail::Broadcast::left_channel) ? b->value : a->value;
    Tensor out = Tensor::zeros_like(wide);
    detail::for_each_pair(a->value, b->value, mode, [&](std::size_t o, std::size_t ia, std::size_t ib) {
        out.values()[o] = a->value.values()[ia] * b->value.values()[ib];
    });
    return detail::make_op(std::move(out), {a, b}, [a, b, mode](Node& node) {
        if (a->requires_grad) {
            auto& ga = detail::grad_of(*a);
            detail::for_each_pair(a->value, b->value, mode, [&](std::size_t o, std::size_t ia, std::size_t ib) {
                ga.values()[ia] += node.grad.values()[o] * b->value.values()[ib];
            });
        }
        if (b->requires_grad) {
            auto& gb = detail::grad_of(*b);
            detail::for_each_pair(a->value, b->value, mode, [&](std::size_t o, std::size_t ia, std::size_t ib) {
                gb.values()[ib] += node.grad.values()[o] * a->value.values()[ia];
            });
        }
    });
}

namespace detail {

// unary elementwise helper: fwd(x) and dfdx captured as plain lambdas
template <class Fwd, class Dfdx>
inline NodeRef unary_op(const NodeRef& x, Fwd fwd, Dfdx dfdx) {
    Tensor out = Tensor::zeros_like(x->value);
    for (std::size_t i = 0; i < out.numel(); ++i)
        out.values()[i] = fwd(x->value.values()[i]);
    return make_op(std::move(out), {x}, [x, dfdx](Node& node) {
        if (!x->requires_grad)
            return;
        auto& gx = grad_of(*x);
        for (std::size_t i = 0; i < gx.numel(); ++i)
            gx.values()[i] += node.grad.values()[i] * dfdx(x->value.values()[i], node.value.values()[i]);
    });
}

} // namespace detail

inline NodeRef neg(const NodeRef& x) {
    return detail::unary_op(x, [](double v) { return -v; }, [](double, double) { return -1.0; });
}

inline NodeRef add_scalar(const NodeRef& x, double s) {
    return detail::unary_op(x, [s](double v) { return v + s; }, [](double, double) { return 1.0; });
}

inline NodeRef mul_scalar(const NodeRef& x, double s) {
    return detail::unary_op(x, [s](double v) { return v * s; }, [s](double, double) { return s; });
}

// s - x
inline NodeRef rsub_scalar(double s, const NodeRef& x) {
    return detail::unary_op(x, [s](double v) { return s - v; }, [](double, double) { return -1.0; });
}

inline NodeRef exp_op(const NodeRef& x) {
    return detail::unary_op(x, [](double v) { return std::exp(v); },
                            [](double, double out) { return out; });
}

inline NodeRef square(const NodeRef& x) {
    return detail::unary_op(x, [](double v) { return v * v; },
                            [](double v, double) { return 2.0 * v; });
}

inline NodeRef sqrt_op(const NodeRef& x) {
    return detail::unary_op(x, [](double v) { return std::sqrt(v); },
                            [](double, double out) { return 0.5 / out; });
}

inline NodeRef sigmoid(const NodeRef& x) {
    auto fwd = [](double v) {
        return v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
    };
    return detail::unary_op(x, fwd, [](double, double out) { return out * (1.0 - out); });
}

inline NodeRef softplus(const NodeRef& x) {
    auto fwd = [](double v) { return v > 0.0 ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v)); };
    auto dfdx = [](double v, double) {
        return v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
    };
    return detail::unary_op(x, fwd, dfdx);
}

inline NodeRef leaky_relu(const NodeRef& x, double slope = 0.1) {
    return detail::unary_op(x, [slope](double v) { return v > 0.0 ? v : slope * v; },
                            [slope](double v, double) { return v > 0.0 ? 1.0 : slope; });
}

inline NodeRef clamp_min(const NodeRef& x, double lo) {
    return detail::unary_op(x, [lo](double v) { return std::max(v, lo); },
                            [lo](double v, double) { return v > lo ? 1.0 : 0.0; });
}

// clamp to [0, 1] with pass-through gradient strictly inside the interval
inline NodeRef clamp01(const NodeRef& x) {
    return detail::unary_op(x, [](double v) { return std::clamp(v, 0.0, 1.0); },
                            [](double v, double) { return (v > 0.0 && v < 1.0) ? 1.0 : 0.0; });
}

// ---------------------------------------------------------------------------
// structural ops
// ---------------------------------------------------------------------------

inline NodeRef concat_channels(const NodeRef& a, const NodeRef& b) {
    const Tensor& ta = a->value;
    const Tensor& tb = b->value;
    if (ta.n() != tb.n() || ta.h() != tb.h() || ta.w() != tb.w())
        throw ShapeError("concat_channels: " + ta.shape_string() + " vs " + tb.shape_string());
    Tensor out(ta.n(), ta.c() + tb.c(), ta.h(), ta.w());
    const std::size_t plane = static_cast<std::size_t>(ta.h()) * ta.w();
    for (int n = 0; n < ta.n(); ++n) {
        std::copy_n(ta.data() + static_cast<std::size_t>(n) * ta.c() * plane, ta.c() * plane,
                    out.data() + static_cast<std::size_t>(n) * out.c() * plane);
        std::copy_n(tb.data() + static_cast<std::size_t>(n) * tb.c() * plane, tb.c() * plane,
                    out.data() + static_cast<std::size_t>(n) * out.c() * plane + ta.c() * plane);
    }
    return detail::make_op(std::move(out), {a, b}, [a, b, plane](Node& node) {
        const int ca = a->value.c(), cb = b->value.c();
        for (int n = 0; n < a->value.n(); ++n) {
            const double* g = node.grad.data() + static_cast<std::size_t>(n) * (ca + cb) * plane;
            if (a->requires_grad) {
                auto& ga = detail::grad_of(*a);
                double* dst = ga.data() + static_cast<std::size_t>(n) * ca * plane;
                for (std::size_t i = 0; i < static_cast<std::size_t>(ca) * plane; ++i)
                    dst[i] += g[i];
            }
            if (b->requires_grad) {
                auto& gb = detail::grad_of(*b);
                double* dst = gb.data() + static_cast<std::size_t>(n) * cb * plane;
                for (std::size_t i = 0; i < static_cast<std::size_t>(cb) * plane; ++i)
                    dst[i] += g[ca * plane + i];
            }
        }
    });
}

inline NodeRef upsample_nearest2(const NodeRef& x) {
    const Tensor& in = x->value;
    Tensor out(in.n(), in.c(), in.h() * 2, in.w() * 2);
    for (int n = 0; n < in.n(); ++n)
        for (int c = 0; c < in.c(); ++c)
            for (int y = 0; y < out.h(); ++y)
                for (int xx = 0; xx < out.w(); ++xx)
                    out.at(n, c, y, xx) = in.at(n, c, y / 2, xx / 2);
    return detail::make_op(std::move(out), {x}, [x](Node& node) {
        if (!x->requires_grad)
            return;
        auto& gx = detail::grad_of(*x);
        const Tensor& g = node.grad;
        for (int n = 0; n < gx.n(); ++n)
            for (int c = 0; c < gx.c(); ++c)
                for (int y = 0; y < g.h(); ++y)
                    for (int xx = 0; xx < g.w(); ++xx)
                        gx.at(n, c, y / 2, xx / 2) += g.at(n, c, y, xx);
    });
}

inline NodeRef mean_all(const NodeRef& x) {
    const std::size_t n = x->value.numel();
    double sum = 0.0;
    for (double v : x->value.values())
        sum += v;
    return detail::make_op(Tensor::scalar(sum / static_cast<double>(n)), {x}, [x, n](Node& node) {
        if (!x->requires_grad)
            return;
        auto& gx = detail::grad_of(*x);
        const double g = node.grad.values()[0] / static_cast<double>(n);
        for (double& v : gx.values())
            v += g;
    });
}

// ---------------------------------------------------------------------------
// convolution (square kernel, replicate padding of k/2, stride 1 or 2)
//
// Replicate padding keeps constant inputs exactly constant through the
// stack, which the depth refiner relies on.
// ---------------------------------------------------------------------------

namespace detail {

using MatrixRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline int conv_out_dim(int in, int k, int stride) {
    return (in + 2 * (k / 2) - k) / stride + 1;
}

inline void im2col(const Tensor& x, int n, int k, int stride, std::vector<double>& col) {
    const int ic = x.c(), h = x.h(), w = x.w();
    const int pad = k / 2;
    const int oh = conv_out_dim(h, k, stride);
    const int ow = conv_out_dim(w, k, stride);
    const std::size_t patch = static_cast<std::size_t>(oh) * ow;
    col.resize(static_cast<std::size_t>(ic) * k * k * patch);
    std::size_t row = 0;
    for (int c = 0; c < ic; ++c) {
        for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx, ++row) {
                double* dst = col.data() + row * patch;
                for (int oy = 0; oy < oh; ++oy) {
                    const int iy = std::clamp(oy * stride - pad + ky, 0, h - 1);
                    for (int ox = 0; ox < ow; ++ox) {
                        const int ix = std::clamp(ox * stride - pad + kx, 0, w - 1);
                        dst[static_cast<std::size_t>(oy) * ow + ox] = x.at(n, c, iy, ix);
                    }
                }
            }
        }
    }
}

inline void col2im_accumulate(const std::vector<double>& col, Tensor& gx, int n, int k, int stride) {
    const int ic = gx.c(), h = gx.h(), w = gx.w();
    const int pad = k / 2;
    const int oh = conv_out_dim(h, k, stride);
    const int ow = conv_out_dim(w, k, stride);
    const std::size_t patch = static_cast<std::size_t>(oh) * ow;
    std::size_t row = 0;
    for (int c = 0; c < ic; ++c) {
        for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx, ++row) {
                const double* src = col.data() + row * patch;
                for (int oy = 0; oy < oh; ++oy) {
                    const int iy = std::clamp(oy * stride - pad + ky, 0, h - 1);
                    for (int ox = 0; ox < ow; ++ox) {
                        const int ix = std::clamp(ox * stride - pad + kx, 0, w - 1);
                        gx.at(n, c, iy, ix) += src[static_cast<std::size_t>(oy) * ow + ox];
                    }
                }
            }
        }
    }
}

} // namespace detail

// x: N x IC x H x W, weight: OC x IC x k x k, bias: 1 x OC x 1 x 1
inline NodeRef conv2d(const NodeRef& x, const NodeRef& weight, const NodeRef& bias, int stride = 1) {
    const Tensor& in = x->value;
    const Tensor& w = weight->value;
    const int k = w.h();
    if (w.w() != k || (k != 1 && k != 3))
        throw ShapeError("conv2d: kernel must be 1x1 or 3x3, got " + w.shape_string());
    if (w.c() != in.c())
        throw ShapeError("conv2d: weight expects " + std::to_string(w.c()) +
                         " input channels, tensor has " + std::to_string(in.c()));
    if (bias->value.c() != w.n() || bias->value.numel() != static_cast<std::size_t>(w.n()))
        throw ShapeError("conv2d: bias shape " + bias->value.shape_string() +
                         " does not match " + std::to_string(w.n()) + " output channels");
    if (stride != 1 && stride != 2)
        throw UsageError("conv2d: stride must be 1 or 2");

    const int oc = w.n();
    const int kk = in.c() * k * k;
    const int oh = detail::conv_out_dim(in.h(), k, stride);
    const int ow = detail::conv_out_dim(in.w(), k, stride);
    const std::size_t patch = static_cast<std::size_t>(oh) * ow;

    Tensor out(in.n(), oc, oh, ow);
    std::vector<double> col;
    Eigen::Map<const detail::MatrixRM> wm(w.data(), oc, kk);
    for (int n = 0; n < in.n(); ++n) {
        detail::im2col(in, n, k, stride, col);
        Eigen::Map<const detail::MatrixRM> cm(col.data(), kk, static_cast<Eigen::Index>(patch));
        Eigen::Map<detail::MatrixRM> om(out.data() + static_cast<std::size_t>(n) * oc * patch, oc,
                                        static_cast<Eigen::Index>(patch));
        om.noalias() = wm * cm;
        for (int c = 0; c < oc; ++c)
            om.row(c).array() += bias->value.values()[c];
    }

    return detail::make_op(std::move(out), {x, weight, bias}, [x, weight, bias, k, stride](Node& node) {
        const Tensor& in = x->value;
        const Tensor& w = weight->value;
        const int oc = w.n();
        const int kk = in.c() * k * k;
        const int oh = detail::conv_out_dim(in.h(), k, stride);
        const int ow = detail::conv_out_dim(in.w(), k, stride);
        const std::size_t patch = static_cast<std::size_t>(oh) * ow;

        std::vector<double> col;
        std::vector<double> dcol;
        Eigen::Map<const detail::MatrixRM> wm(w.data(), oc, kk);
        for (int n = 0; n < in.n(); ++n) {
            Eigen::Map<const detail::MatrixRM> gm(node.grad.data() + static_cast<std::size_t>(n) * oc * patch,
                                                  oc, static_cast<Eigen::Index>(patch));
            if (weight->requires_grad) {
                detail::im2col(in, n, k, stride, col);
                Eigen::Map<const detail::MatrixRM> cm(col.data(), kk, static_cast<Eigen::Index>(patch));
                auto& gw = detail::grad_of(*weight);
                Eigen::Map<detail::MatrixRM> gwm(gw.data(), oc, kk);
                gwm.noalias() += gm * cm.transpose();
            }
            if (bias->requires_grad) {
                auto& gb = detail::grad_of(*bias);
                for (int c = 0; c < oc; ++c)
                    gb.values()[c] += gm.row(c).sum();
            }
            if (x->requires_grad) {
                dcol.resize(static_cast<std::size_t>(kk) * patch);
                Eigen::Map<detail::MatrixRM> dcm(dcol.data(), kk, static_cast<Eigen::Index>(patch));
                dcm.noalias() = wm.transpose() * gm;
                auto& gx = detail::grad_of(*x);
                detail::col2im_accumulate(dcol, gx, n, k, stride);
            }
        }
    });
}

} // namespace hazeforge::nn
