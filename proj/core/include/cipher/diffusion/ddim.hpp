#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "cipher/dataio/image.hpp"
#include "cipher/diffusion/schedule.hpp"
#include "cipher/diffusion/unet.hpp"

namespace cipher::diffusion {

struct DdimSamplerConfig {
    int num_steps = 200;
    double sigma = 0.0;  // only the deterministic sampler exists; must be 0
    int batch_size = 32;

    void validate(int T) const;
};

// tau_i = round(i * T / steps) for i = 1..steps (half-up); strictly increasing, ends at T.
std::vector<int> timestep_subsequence(int T, int num_steps);

// Clean-image estimate from x_t and predicted noise.
nn::Tensor predict_x0(const nn::Tensor& x_t, const nn::Tensor& eps_pred, int t, const NoiseSchedule& sched);

// Deterministic update from t to t_prev (t_prev = 0 lands on the clean image).
// Returns x_t unchanged when t_prev == t.
nn::Tensor ddim_step(const nn::Tensor& x_t, const nn::Tensor& eps_pred, int t, int t_prev, const NoiseSchedule& sched);

// Starting noise for sample `index` of a run; depends only on (seed, index).
nn::Tensor initial_noise(std::uint64_t seed, std::int64_t index, const nn::Shape& sample_shape);

// Receives each finished batch (clamped) and the run index of its first image.
using SampleSink = std::function<void(std::int64_t first_index, const nn::Tensor& images)>;

// Streams n samples in batches of cfg.batch_size without holding them all.
void ddim_sample_stream(const UNet& model, const NoiseSchedule& sched, const DdimSamplerConfig& cfg, std::int64_t n,
                        std::uint64_t seed, const SampleSink& sink);

// n images at the model's resolution, clamped to [-1, 1].
dataio::ImageTensor ddim_sample(const UNet& model, const NoiseSchedule& sched, const DdimSamplerConfig& cfg, std::int64_t n,
                                std::uint64_t seed);

}  // namespace cipher::diffusion
