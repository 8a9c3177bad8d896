#pragma once

#include <optional>
#include <random>
#include <string>

#include "cipher/nn/ops.hpp"
#include "cipher/nn/parameters.hpp"

namespace cipher::progan {

inline constexpr double kLeakySlope = 0.2;

// Equalized-learning-rate convolution: weights are stored at unit variance and
// multiplied by sqrt(2 / fan_in) on every forward pass.
struct WSConvSpec {
    int in_channels = 0;
    int out_channels = 0;
    int kernel_size = 3;
    int stride = 1;
    int padding = 1;

    int fan_in() const { return in_channels * kernel_size * kernel_size; }
    double runtime_scale() const;
};

nn::Var ws_conv_forward(const nn::Var& x, const WSConvSpec& spec, const nn::Var& weights, const nn::Var& bias);

class WSConv2d {
public:
    WSConv2d() = default;
    WSConv2d(WSConvSpec spec, std::mt19937_64& rng);

    nn::Var operator()(const nn::Var& x) const { return ws_conv_forward(x, spec_, weight_, bias_); }
    void collect(nn::ParameterList& out, const std::string& prefix) const;
    const WSConvSpec& spec() const { return spec_; }

private:
    WSConvSpec spec_;
    nn::Var weight_;
    nn::Var bias_;
};

// Fully connected counterpart of WSConv2d, scale sqrt(2 / in_features).
class WSLinear {
public:
    WSLinear() = default;
    WSLinear(int in_features, int out_features, std::mt19937_64& rng);

    nn::Var operator()(const nn::Var& x) const;
    void collect(nn::ParameterList& out, const std::string& prefix) const;
    int out_features() const { return out_; }

private:
    int in_ = 0;
    int out_ = 0;
    nn::Var weight_;
    nn::Var bias_;
};

// Appends the batch-spread channel (single group, population std).
nn::Var minibatch_std(const nn::Var& x, std::optional<double> fixed_value = std::nullopt);

// alpha * fresh + (1 - alpha) * previous. Exact passthrough at alpha 0 and 1.
nn::Var fade_in(const nn::Var& previous, const nn::Var& fresh, double alpha);

}  // namespace cipher::progan
