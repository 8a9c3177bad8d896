#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <random>
#include <vector>

#include "cipher/dataio/loader.hpp"
#include "cipher/nn/optim.hpp"
#include "cipher/progan/networks.hpp"

namespace cipher::progan {

struct GanTrainConfig {
    int batch_size = 16;
    double adam_beta1 = 0.0;
    double adam_beta2 = 0.99;
    double lr = 1e-3;  // decays linearly to 0 over all iterations
    std::int64_t iters_per_stage = 50000;
    std::int64_t fade_iters = 10000;
    int gd_ratio = 2;  // generator updates per discriminator update
    int stages = 5;    // trained stages, ending at the final resolution
    std::uint64_t seed = 42;
    std::int64_t checkpoint_every = 0;  // 0 disables periodic checkpoints
    std::int64_t log_every = 100;

    void validate() const;
};

struct GanLogRow {
    std::int64_t iteration = 0;
    int stage = 0;
    double fade_alpha = 1.0;
    double loss_d = 0.0;
    double loss_g = 0.0;
    double lr = 0.0;
};

// Owns both networks and their optimizers. One iteration is one discriminator
// update followed by gd_ratio generator updates.
class ProgressiveTrainer {
public:
    ProgressiveTrainer(ProganArch arch, GanTrainConfig cfg);

    const StageSchedule& schedule() const { return schedule_; }
    std::int64_t iteration() const { return iteration_; }
    std::int64_t d_steps() const { return d_steps_; }
    std::int64_t g_steps() const { return g_steps_; }
    bool finished() const { return iteration_ >= schedule_.total_iterations(); }

    GanLogRow step(dataio::BatchLoader& data);

    struct Hooks {
        std::function<void(const GanLogRow&)> on_log;
        std::function<void(const ProgressiveTrainer&)> on_checkpoint;
    };
    void run(dataio::BatchLoader& data, const Hooks& hooks = {});

    const Discriminator& discriminator() const { return disc_; }
    const Generator& generator() const { return gen_; }

    // Full training state (weights, optimizer moments, counters, rng).
    nn::Checkpoint state() const;
    void load_state(const nn::Checkpoint& ckpt);

    double lr_at(std::int64_t iteration) const;

private:
    dataio::ImageTensor next_real(dataio::BatchLoader& data);
    nn::Tensor sample_latents(std::int64_t n);

    ProganArch arch_;
    GanTrainConfig cfg_;
    StageSchedule schedule_;
    Discriminator disc_;
    Generator gen_;
    nn::Adam opt_d_;
    nn::Adam opt_g_;
    std::mt19937_64 rng_;
    std::int64_t iteration_ = 0;
    std::int64_t d_steps_ = 0;
    std::int64_t g_steps_ = 0;
    std::int64_t epoch_ = 0;
};

// Downsamples an image batch by repeated 2x average pooling.
nn::Tensor downsample_to(const nn::Tensor& images, int resolution);

struct GanTrainResult {
    nn::Checkpoint discriminator;
    nn::Checkpoint generator;
    std::int64_t d_steps = 0;
    std::int64_t g_steps = 0;
    std::vector<GanLogRow> log;
};

GanTrainResult train_progressive(const ProganArch& arch, const GanTrainConfig& cfg, dataio::BatchLoader& data);

inline constexpr const char* kGanStateKind = "progan.state";

}  // namespace cipher::progan
