#pragma once

#include <random>

#include "cipher/dataio/image.hpp"

namespace cipher::dataio {

struct AugmentConfig {
    double hflip_prob = 0.5;
    double jitter_strength = 0.2;
    // Rotation / translation / scaling. Must stay false: geometry is never altered.
    bool geometric_transforms = false;

    void validate() const;
};

// Multiplicative colour factors, each drawn from U[1 - s, 1 + s].
struct JitterFactors {
    double brightness = 1.0;
    double contrast = 1.0;
    double saturation = 1.0;
};

JitterFactors draw_jitter(std::mt19937_64& rng, double strength);

// Mirrors sample i of t in place along the width axis.
void hflip_sample(nn::Tensor& t, std::int64_t i);
ImageTensor hflip(const ImageTensor& batch);

// Brightness, then contrast around the mean luma, then saturation via luma
// interpolation; computed in [0,1] space and clamped.
void jitter_sample(nn::Tensor& t, std::int64_t i, const JitterFactors& f);

ImageTensor augment(const ImageTensor& batch, const AugmentConfig& cfg, std::mt19937_64& rng);

}  // namespace cipher::dataio
