#include "cipher/nn/optim.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace cipher::nn {

Adam::Adam(ParameterList params, AdamOptions options) : params_(std::move(params)), options_(options) {
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (const auto& p : params_) {
        m_.emplace_back(p.var.shape(), 0.0);
        v_.emplace_back(p.var.shape(), 0.0);
    }
}

void Adam::step(double lr) {
    ++steps_;
    const double bc1 = 1.0 - std::pow(options_.beta1, static_cast<double>(steps_));
    const double bc2 = 1.0 - std::pow(options_.beta2, static_cast<double>(steps_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
        auto var = params_[i].var;
        if (!var.requires_grad() || !var.has_grad()) continue;
        const Tensor& g = var.grad();
        Tensor& w = var.mutable_value();
        Tensor& m = m_[i];
        Tensor& v = v_[i];
        for (std::int64_t j = 0; j < w.numel(); ++j) {
            m[j] = options_.beta1 * m[j] + (1.0 - options_.beta1) * g[j];
            v[j] = options_.beta2 * v[j] + (1.0 - options_.beta2) * g[j] * g[j];
            w[j] -= lr * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + options_.eps);
        }
    }
}

double linear_decay_lr(double base_lr, std::int64_t step, std::int64_t total) {
    if (total <= 0) return base_lr;
    const double frac = std::clamp(static_cast<double>(step) / static_cast<double>(total), 0.0, 1.0);
    return base_lr * (1.0 - frac);
}

double cosine_annealed_lr(double base_lr, std::int64_t step, std::int64_t total) {
    if (total <= 0) return base_lr;
    const double frac = std::clamp(static_cast<double>(step) / static_cast<double>(total), 0.0, 1.0);
    if (frac == 1.0) return 0.0;
    return base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * frac));
}

}  // namespace cipher::nn
