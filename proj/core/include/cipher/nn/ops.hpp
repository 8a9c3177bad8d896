#pragma once

#include <cstdint>
#include <optional>
#include <random>

#include "cipher/nn/autograd.hpp"

// Differentiable primitives. Image-shaped operands are N x C x H x W.
namespace cipher::nn {

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);

// x: N x C x H x W, v: N x C. Adds v[n, c] to every spatial position.
Var add_channelwise(const Var& x, const Var& v);

// Cross-correlation with zero padding. Effective kernel is weight_scale * w.
// w: Cout x Cin x K x K, bias: Cout (may be undefined).
Var conv2d(const Var& x, const Var& w, const Var& bias, int stride, int padding,
           double weight_scale = 1.0);

// x: N x In, w: Out x In, bias: Out (may be undefined). Effective weight is weight_scale * w.
Var linear(const Var& x, const Var& w, const Var& bias, double weight_scale = 1.0);

Var leaky_relu(const Var& x, double slope);
Var silu(const Var& x);
Var sigmoid(const Var& x);
Var tanh(const Var& x);

Var avg_pool2(const Var& x);
Var upsample_nearest2(const Var& x);
Var concat_channels(const Var& a, const Var& b);
Var reshape(const Var& x, Shape shape);

// Normalizes each pixel's feature vector to unit RMS over channels. Rank 2 or 4.
Var pixel_norm(const Var& x, double eps = 1e-8);

Var group_norm(const Var& x, int groups, const Var& gamma, const Var& beta, double eps = 1e-5);

// Appends one channel holding the mean over (C,H,W) of the population standard deviation
// across the batch. When fixed_value is set, that constant is appended instead.
Var minibatch_stddev(const Var& x, std::optional<double> fixed_value = std::nullopt);

// Single-head softmax attention over the H*W positions; q, k, v are N x C x H x W.
Var spatial_attention(const Var& q, const Var& k, const Var& v);

Var dropout(const Var& x, double p, std::mt19937_64& rng);

Var mean(const Var& x);

// mean((pred - target)^2) over all elements.
Var mse_loss(const Var& pred, const Tensor& target);

// Mean binary cross-entropy evaluated from logits against soft targets.
Var bce_with_logits(const Var& logits, const Tensor& targets);

}  // namespace cipher::nn
