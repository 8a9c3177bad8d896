#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "cipher/nn/checkpoint.hpp"
#include "cipher/progan/layers.hpp"
#include "cipher/progan/stage.hpp"

namespace cipher::progan {

struct ProganArch {
    int resolution = 64;
    // Feature channels at stage k (resolution 4 * 2^k); one entry per stage.
    std::vector<int> channels{256, 256, 128, 64, 32};
    int latent_dim = 256;

    int num_stages() const;
    void validate() const;
    std::string descriptor() const;
    std::string hash() const;
};

struct DiscriminatorOptions {
    bool training = false;
    double dropout_p = 0.0;              // on final-block activations, training only
    std::mt19937_64* rng = nullptr;      // required when dropout is active
    std::optional<double> mbstd_fixed;   // replaces the live minibatch statistic
    std::map<int, nn::Var>* capture = nullptr;  // block index -> output activation
};

class Discriminator {
public:
    Discriminator(ProganArch arch, std::uint64_t seed);

    // Raw head outputs, length N.
    nn::Var logits(const nn::Var& images, const ProgressiveStage& stage, const DiscriminatorOptions& opts = {}) const;
    // Sigmoid probabilities, length N.
    nn::Var forward(const nn::Var& images, const ProgressiveStage& stage, const DiscriminatorOptions& opts = {}) const;

    // The live minibatch statistic the final block would append for this batch.
    double minibatch_statistic(const nn::Var& images, const ProgressiveStage& stage) const;

    // Output channels of block k (block 0 is the final 4x4 block).
    int block_channels(int k) const;

    nn::ParameterList parameters() const;
    nn::ParameterList final_block_parameters() const;
    const ProganArch& arch() const { return arch_; }

    nn::Checkpoint to_checkpoint(std::map<std::string, std::string> meta = {}) const;
    static Discriminator from_checkpoint(const nn::Checkpoint& ckpt);

private:
    struct Block {
        WSConv2d conv1;
        WSConv2d conv2;
    };

    nn::Var from_rgb(int k, const nn::Var& x) const;
    nn::Var run_block(int k, const nn::Var& h) const;
    nn::Var final_features(const nn::Var& h, const DiscriminatorOptions& opts) const;

    ProganArch arch_;
    std::vector<WSConv2d> from_rgb_;
    std::vector<Block> blocks_;  // blocks_[0] unused; final block is separate
    WSConv2d final_conv_;
    WSConv2d final_dense_;  // 4x4 valid convolution to a 1x1 map
    WSLinear head_;
};

class Generator {
public:
    Generator(ProganArch arch, std::uint64_t seed);

    // z: N x latent_dim. Returns N x 3 x R x R in [-1, 1], R = stage.resolution.
    nn::Var forward(const nn::Var& z, const ProgressiveStage& stage) const;

    nn::ParameterList parameters() const;
    const ProganArch& arch() const { return arch_; }

    nn::Checkpoint to_checkpoint(std::map<std::string, std::string> meta = {}) const;
    static Generator from_checkpoint(const nn::Checkpoint& ckpt);

private:
    struct Block {
        WSConv2d conv1;
        WSConv2d conv2;
    };

    nn::Var to_rgb(int k, const nn::Var& h) const;
    nn::Var run_block(int k, const nn::Var& h) const;

    ProganArch arch_;
    WSLinear input_;
    WSConv2d base_conv_;
    std::vector<Block> blocks_;  // blocks_[0] unused
    std::vector<WSConv2d> to_rgb_;
};

inline constexpr const char* kDiscriminatorKind = "progan.discriminator";
inline constexpr const char* kGeneratorKind = "progan.generator";

// Reads the architecture recorded in a progan checkpoint's metadata.
ProganArch arch_from_checkpoint(const nn::Checkpoint& ckpt);

}  // namespace cipher::progan
