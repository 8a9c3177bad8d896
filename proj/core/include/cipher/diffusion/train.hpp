#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <span>
#include <vector>

#include "cipher/dataio/loader.hpp"
#include "cipher/diffusion/ddim.hpp"
#include "cipher/nn/optim.hpp"

namespace cipher::diffusion {

struct DiffusionTrainConfig {
    std::int64_t iterations = 100000;
    int batch_size = 32;
    double lr = 2e-4;  // cosine-annealed to 0
    int T = 1000;
    double beta_start = 1e-4;
    double beta_end = 0.02;
    std::uint64_t seed = 42;
    std::int64_t checkpoint_every = 0;  // 0 disables periodic checkpoints
    std::int64_t log_every = 100;
    int grid_samples = 16;
    int grid_steps = 50;

    void validate() const;
    NoiseSchedule schedule() const { return make_schedule(T, beta_start, beta_end); }
};

using EpsModel = std::function<nn::Var(const nn::Var& x_t, std::span<const int> t)>;

// Timesteps uniform in {1..T} and standard-normal noise, one draw per sample.
struct NoiseDraw {
    std::vector<int> t;
    nn::Tensor eps;
};

NoiseDraw draw_noise(const nn::Shape& batch_shape, int T, std::mt19937_64& rng);

// mean ||eps - model(x_t, t)||^2 over batch and elements, for a fixed draw.
nn::Var ddpm_loss(const EpsModel& model, const nn::Tensor& x0, const NoiseSchedule& sched, const NoiseDraw& draw);
nn::Var ddpm_loss(const EpsModel& model, const nn::Tensor& x0, const NoiseSchedule& sched, std::mt19937_64& rng);

struct DiffusionLogRow {
    std::int64_t iteration = 0;
    double loss = 0.0;
    double lr = 0.0;
};

class DiffusionTrainer {
public:
    DiffusionTrainer(UNetSpec spec, DiffusionTrainConfig cfg);

    DiffusionLogRow step(dataio::BatchLoader& data);
    bool finished() const { return iteration_ >= cfg_.iterations; }
    std::int64_t iteration() const { return iteration_; }

    const UNet& model() const { return model_; }
    const NoiseSchedule& schedule() const { return sched_; }

    // Model weights plus schedule metadata.
    nn::Checkpoint checkpoint() const;
    // Full state for resuming: weights, optimizer moments, counters, rng.
    nn::Checkpoint state() const;
    // Throws CheckpointError when the state was written for another spec.
    void load_state(const nn::Checkpoint& ckpt);

private:
    UNetSpec spec_;
    DiffusionTrainConfig cfg_;
    NoiseSchedule sched_;
    UNet model_;
    nn::Adam opt_;
    std::mt19937_64 rng_;
    std::int64_t iteration_ = 0;
    std::int64_t epoch_ = 0;
};

struct DiffusionTrainResult {
    nn::Checkpoint checkpoint;
    std::vector<DiffusionLogRow> log;
};

struct DiffusionHooks {
    std::function<void(const DiffusionLogRow&)> on_log;
};

// Runs cfg.iterations steps. When out_dir is set, periodic checkpoints
// (unet_<iter>.ckpt), resumable state and sample grids (grid_<iter>.png) land there,
// and an existing state.ckpt is resumed from.
DiffusionTrainResult train_diffusion(const UNetSpec& spec, const DiffusionTrainConfig& cfg, dataio::BatchLoader& data,
                                     const std::filesystem::path& out_dir = {}, const DiffusionHooks& hooks = {});

NoiseSchedule schedule_from_checkpoint(const nn::Checkpoint& ckpt);

inline constexpr const char* kDiffusionStateKind = "diffusion.state";

}  // namespace cipher::diffusion
