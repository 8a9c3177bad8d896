#include "cipher/dataio/augment.hpp"

#include <algorithm>

#include "cipher/error.hpp"

namespace cipher::dataio {

namespace {

constexpr double kLumaR = 0.299, kLumaG = 0.587, kLumaB = 0.114;

}  // namespace

void AugmentConfig::validate() const {
    if (!(hflip_prob >= 0.0 && hflip_prob <= 1.0)) {
        throw ConfigError("augment.hflip_prob must lie in [0,1], got " + std::to_string(hflip_prob));
    }
    if (!(jitter_strength >= 0.0 && jitter_strength < 1.0)) {
        throw ConfigError("augment.jitter must lie in [0,1), got " + std::to_string(jitter_strength));
    }
    if (geometric_transforms) throw ConfigError("geometric augmentation is not supported; only horizontal flips");
}

JitterFactors draw_jitter(std::mt19937_64& rng, double strength) {
    std::uniform_real_distribution<double> u(1.0 - strength, 1.0 + strength);
    JitterFactors f;
    f.brightness = u(rng);
    f.contrast = u(rng);
    f.saturation = u(rng);
    return f;
}

void hflip_sample(nn::Tensor& t, std::int64_t i) {
    const auto c = t.dim(1), h = t.dim(2), w = t.dim(3);
    for (std::int64_t ch = 0; ch < c; ++ch) {
        for (std::int64_t y = 0; y < h; ++y) {
            double* row = &t.at(i, ch, y, 0);
            std::reverse(row, row + w);
        }
    }
}

ImageTensor hflip(const ImageTensor& batch) {
    nn::Tensor t = batch.tensor();
    for (std::int64_t i = 0; i < t.dim(0); ++i) hflip_sample(t, i);
    return ImageTensor(std::move(t));
}

void jitter_sample(nn::Tensor& t, std::int64_t i, const JitterFactors& f) {
    const auto hw = t.dim(2) * t.dim(3);
    double* r = &t.at(i, 0, 0, 0);
    double* g = r + hw;
    double* b = g + hw;
    std::vector<double> px(static_cast<std::size_t>(3 * hw));
    for (std::int64_t p = 0; p < hw; ++p) {
        px[3 * p + 0] = (r[p] + 1.0) * 0.5 * f.brightness;
        px[3 * p + 1] = (g[p] + 1.0) * 0.5 * f.brightness;
        px[3 * p + 2] = (b[p] + 1.0) * 0.5 * f.brightness;
    }
    double mean_luma = 0.0;
    for (std::int64_t p = 0; p < hw; ++p) {
        mean_luma += kLumaR * px[3 * p] + kLumaG * px[3 * p + 1] + kLumaB * px[3 * p + 2];
    }
    mean_luma /= static_cast<double>(hw);
    for (std::int64_t p = 0; p < hw; ++p) {
        for (int c = 0; c < 3; ++c) px[3 * p + c] = mean_luma + f.contrast * (px[3 * p + c] - mean_luma);
        const double luma = kLumaR * px[3 * p] + kLumaG * px[3 * p + 1] + kLumaB * px[3 * p + 2];
        for (int c = 0; c < 3; ++c) px[3 * p + c] = luma + f.saturation * (px[3 * p + c] - luma);
    }
    for (std::int64_t p = 0; p < hw; ++p) {
        r[p] = std::clamp(px[3 * p + 0], 0.0, 1.0) * 2.0 - 1.0;
        g[p] = std::clamp(px[3 * p + 1], 0.0, 1.0) * 2.0 - 1.0;
        b[p] = std::clamp(px[3 * p + 2], 0.0, 1.0) * 2.0 - 1.0;
    }
}

ImageTensor augment(const ImageTensor& batch, const AugmentConfig& cfg, std::mt19937_64& rng) {
    cfg.validate();
    nn::Tensor t = batch.tensor();
    std::bernoulli_distribution flip(cfg.hflip_prob);
    for (std::int64_t i = 0; i < t.dim(0); ++i) {
        if (cfg.hflip_prob > 0.0 && flip(rng)) hflip_sample(t, i);
        if (cfg.jitter_strength > 0.0) jitter_sample(t, i, draw_jitter(rng, cfg.jitter_strength));
    }
    return ImageTensor(std::move(t));
}

}  // namespace cipher::dataio
