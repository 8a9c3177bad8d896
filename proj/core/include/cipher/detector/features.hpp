#pragma once

#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "cipher/dataio/image.hpp"
#include "cipher/detector/detector.hpp"
#include "cipher/diffusion/unet.hpp"

namespace cipher::detector {

// depth id -> N x L matrix of globally average-pooled activations.
struct FeatureBundle {
    std::map<int, nn::Tensor> features;

    bool empty() const { return features.empty(); }
    std::int64_t length(int depth) const;
};

// Discriminator depths: k >= 1 is the output of block k, 0 the final block's features.
FeatureBundle extract_features(const dataio::ImageTensor& images, const Detector& backbone, std::span<const int> depths);

// U-Net depths are encoder level indices. The image is fed as x_t at t_probe.
FeatureBundle extract_features(const dataio::ImageTensor& images, const diffusion::UNet& backbone, int t_probe,
                               std::span<const int> depths);

// Rows "image_id,depth,values" with values space-separated in one field.
std::string features_csv(const FeatureBundle& bundle, std::span<const std::string> image_ids);
void write_features_csv(const FeatureBundle& bundle, std::span<const std::string> image_ids, const std::filesystem::path& path);

}  // namespace cipher::detector
