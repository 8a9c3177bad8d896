#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "cipher/nn/tensor.hpp"

namespace cipher::dataio {

// Interleaved 8-bit RGB pixels, row-major.
struct Raster {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> rgb;

    Raster() = default;
    Raster(int w, int h) : width(w), height(h), rgb(static_cast<std::size_t>(w) * h * 3, 0) {}

    std::uint8_t& at(int x, int y, int c) { return rgb[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
    std::uint8_t at(int x, int y, int c) const { return rgb[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
};

// N x 3 x R x R batch with values in [-1, 1], R a power of two in {4, ..., 64}.
class ImageTensor {
public:
    ImageTensor() = default;
    // Validates shape and range; throws ShapeError / DomainError.
    explicit ImageTensor(nn::Tensor data);

    const nn::Tensor& tensor() const { return data_; }
    std::int64_t batch() const { return data_.empty() ? 0 : data_.dim(0); }
    std::int64_t resolution() const { return data_.empty() ? 0 : data_.dim(2); }

    // Sample i as a 1 x 3 x R x R batch.
    ImageTensor sample(std::int64_t i) const;
    static ImageTensor stack(std::span<const ImageTensor> parts);

private:
    nn::Tensor data_;
};

bool is_supported_resolution(std::int64_t r);

// Checks ImageTensor invariants on a raw tensor without taking ownership.
void check_image_batch(const nn::Tensor& t);

// Clamps every value to [-1, 1].
nn::Tensor clamp_unit(nn::Tensor t);

// Decodes PNG/JPEG (grayscale is replicated to RGB). nullopt when the file cannot be read.
std::optional<Raster> read_image(const std::filesystem::path& path);
void write_png(const Raster& raster, const std::filesystem::path& path);

// Separable bicubic resampling (Keys kernel, a = -0.75) with half-pixel centers and
// replicated borders. Input and output are single planes, row-major.
std::vector<double> resize_bicubic(std::span<const double> src, int src_w, int src_h, int dst_w, int dst_h);

Raster center_crop_square(const Raster& raster);

// Center crop, bicubic resize to target_res, map [0,255] -> [-1,1]. Returns 1 x 3 x R x R.
ImageTensor preprocess(const Raster& raster, int target_res);

// Reads and preprocesses; logs and returns nullopt for unreadable files.
std::optional<ImageTensor> load_image(const std::filesystem::path& path, int target_res);

// Inverse mapping of sample i back to 8-bit RGB (rounded, clamped).
Raster to_raster(const nn::Tensor& batch, std::int64_t i);

// Tiles the batch into a grid image for inspection.
Raster make_grid(const nn::Tensor& batch, int columns);

}  // namespace cipher::dataio
