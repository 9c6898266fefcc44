#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "hazeforge/nn/graph.hpp"
#include "hazeforge/rng.hpp"

namespace hazeforge::nn {

struct Parameter {
    std::string name;
    NodeRef node;
};

// 2D convolution module. Weights are He-normal initialised from the given
// generator so that construction order alone fixes the initial state.
class Conv2d {
  public:
    Conv2d(std::string name, int in_channels, int out_channels, int kernel, int stride,
           bool trainable, CounterRng& rng, bool zero_init = false)
        : name_(std::move(name)), stride_(stride) {
        Tensor w(out_channels, in_channels, kernel, kernel);
        Tensor b(1, out_channels, 1, 1);
        if (!zero_init) {
            const double stddev = std::sqrt(2.0 / (static_cast<double>(in_channels) * kernel * kernel));
            for (double& v : w.values())
                v = rng.normal() * stddev;
        }
        weight_ = make_leaf(std::move(w), trainable);
        bias_ = make_leaf(std::move(b), trainable);
    }

    NodeRef operator()(const NodeRef& x) const { return conv2d(x, weight_, bias_, stride_); }

    void collect(std::vector<Parameter>& out) const {
        out.push_back({name_ + ".weight", weight_});
        out.push_back({name_ + ".bias", bias_});
    }

    std::size_t parameter_count() const { return weight_->value.numel() + bias_->value.numel(); }

    const std::string& name() const { return name_; }
    const NodeRef& weight() const { return weight_; }
    const NodeRef& bias() const { return bias_; }

  private:
    std::string name_;
    int stride_;
    NodeRef weight_;
    NodeRef bias_;
};

inline std::size_t parameter_count(const std::vector<Parameter>& params) {
    std::size_t total = 0;
    for (const auto& p : params)
        total += p.node->value.numel();
    return total;
}

} // namespace hazeforge::nn
