#pragma once

#include <cstdint>
#include <vector>

#include "cipher/nn/parameters.hpp"

namespace cipher::nn {

struct AdamOptions {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

class Adam {
public:
    Adam(ParameterList params, AdamOptions options);

    // Applies one update with the given learning rate. Parameters without a
    // gradient (frozen, or unused this step) are left untouched.
    void step(double lr);

    std::int64_t steps() const { return steps_; }
    const ParameterList& parameters() const { return params_; }

    // Moment buffers, exposed for checkpointing.
    std::vector<Tensor>& first_moments() { return m_; }
    std::vector<Tensor>& second_moments() { return v_; }
    void set_steps(std::int64_t steps) { steps_ = steps; }

private:
    ParameterList params_;
    AdamOptions options_;
    std::vector<Tensor> m_, v_;
    std::int64_t steps_ = 0;
};

// lr * (1 - step/total), clamped at zero.
double linear_decay_lr(double base_lr, std::int64_t step, std::int64_t total);

// base_lr * (1 + cos(pi * step / total)) / 2.
double cosine_annealed_lr(double base_lr, std::int64_t step, std::int64_t total);

}  // namespace cipher::nn
