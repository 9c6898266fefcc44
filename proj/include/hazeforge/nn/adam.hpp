#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "hazeforge/nn/layers.hpp"

namespace hazeforge::nn {

// Adam with bias correction. Moment buffers are addressed by parameter order,
// which is stable because model construction order is fixed.
class Adam {
  public:
    explicit Adam(std::vector<Parameter> params, double beta1 = 0.9, double beta2 = 0.999,
                  double epsilon = 1e-8)
        : params_(std::move(params)), beta1_(beta1), beta2_(beta2), epsilon_(epsilon) {
        m_.reserve(params_.size());
        v_.reserve(params_.size());
        for (const auto& p : params_) {
            m_.emplace_back(p.node->value.numel(), 0.0);
            v_.emplace_back(p.node->value.numel(), 0.0);
        }
    }

    void zero_grad() {
        for (const auto& p : params_)
            nn::zero_grad(p.node);
    }

    void step(double lr) {
        ++t_;
        const double correction1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
        const double correction2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
        for (std::size_t i = 0; i < params_.size(); ++i) {
            Node& node = *params_[i].node;
            if (node.grad.empty())
                continue;
            auto& value = node.value.values();
            const auto& grad = node.grad.values();
            auto& m = m_[i];
            auto& v = v_[i];
            for (std::size_t j = 0; j < value.size(); ++j) {
                m[j] = beta1_ * m[j] + (1.0 - beta1_) * grad[j];
                v[j] = beta2_ * v[j] + (1.0 - beta2_) * grad[j] * grad[j];
                const double m_hat = m[j] / correction1;
                const double v_hat = v[j] / correction2;
                value[j] -= lr * m_hat / (std::sqrt(v_hat) + epsilon_);
            }
        }
    }

    const std::vector<Parameter>& params() const { return params_; }
    std::uint64_t step_count() const { return t_; }
    void set_step_count(std::uint64_t t) { t_ = t; }

    std::vector<std::vector<double>>& first_moments() { return m_; }
    std::vector<std::vector<double>>& second_moments() { return v_; }
    const std::vector<std::vector<double>>& first_moments() const { return m_; }
    const std::vector<std::vector<double>>& second_moments() const { return v_; }

  private:
    std::vector<Parameter> params_;
    double beta1_;
    double beta2_;
    double epsilon_;
    std::uint64_t t_ = 0;
    std::vector<std::vector<double>> m_;
    std::vector<std::vector<double>> v_;
};

} // namespace hazeforge::nn
