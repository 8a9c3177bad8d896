#pragma once

#include <span>
#include <vector>

#include "cipher/nn/tensor.hpp"

namespace cipher::diffusion {

// Timesteps are 1-based. Index 0 holds the clean-image sentinel
// (beta 0, alpha_bar 1) so that DDIM can step to t = 0.
struct NoiseSchedule {
    int T = 0;
    std::vector<double> beta;
    std::vector<double> alpha;
    std::vector<double> alpha_bar;

    double alpha_bar_at(int t) const;  // valid for 0 <= t <= T

    // Builds from explicit betas (beta[0] is t = 1); each must lie in (0, 1).
    static NoiseSchedule from_betas(std::span<const double> betas);
};

// Linear betas from beta_start to beta_end inclusive.
NoiseSchedule make_schedule(int T, double beta_start, double beta_end);

// x_t = sqrt(ab[t]) x0 + sqrt(1 - ab[t]) eps, with one timestep per sample.
nn::Tensor q_sample(const nn::Tensor& x0, std::span<const int> t, const nn::Tensor& eps, const NoiseSchedule& sched);

// Same formula with an explicit alpha_bar applied to every sample.
nn::Tensor q_sample_with(const nn::Tensor& x0, double alpha_bar, const nn::Tensor& eps);

}  // namespace cipher::diffusion
