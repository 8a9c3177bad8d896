#include "cipher/dataio/image.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <opencv2/imgcodecs.hpp>

#include "cipher/error.hpp"

namespace cipher::dataio {

namespace {

constexpr double kCubicA = -0.75;

double cubic_weight(double x) {
    x = std::abs(x);
    if (x <= 1.0) return ((kCubicA + 2.0) * x - (kCubicA + 3.0)) * x * x + 1.0;
    if (x < 2.0) return ((kCubicA * x - 5.0 * kCubicA) * x + 8.0 * kCubicA) * x - 4.0 * kCubicA;
    return 0.0;
}

struct Taps {
    std::array<int, 4> index;
    std::array<double, 4> weight;
};

std::vector<Taps> make_taps(int src, int dst) {
    std::vector<Taps> taps(static_cast<std::size_t>(dst));
    const double ratio = static_cast<double>(src) / dst;
    for (int d = 0; d < dst; ++d) {
        const double pos = (d + 0.5) * ratio - 0.5;
        const int base = static_cast<int>(std::floor(pos));
        const double t = pos - base;
        auto& tp = taps[d];
        for (int k = 0; k < 4; ++k) {
            tp.index[k] = std::clamp(base - 1 + k, 0, src - 1);
            tp.weight[k] = cubic_weight(t - (k - 1));
        }
    }
    return taps;
}

}  // namespace

bool is_supported_resolution(std::int64_t r) { return r == 4 || r == 8 || r == 16 || r == 32 || r == 64; }

void check_image_batch(const nn::Tensor& t) {
    if (t.ndim() != 4 || t.dim(1) != 3 || t.dim(2) != t.dim(3) || !is_supported_resolution(t.dim(2))) {
        throw ShapeError("image batch must be N x 3 x R x R with R in {4,8,16,32,64}, got " + nn::shape_str(t.shape()));
    }
    for (double v : t.data()) {
        if (!(v >= -1.0 && v <= 1.0)) throw DomainError("image value " + std::to_string(v) + " outside [-1, 1]");
    }
}

ImageTensor::ImageTensor(nn::Tensor data) : data_(std::move(data)) { check_image_batch(data_); }

ImageTensor ImageTensor::sample(std::int64_t i) const { return ImageTensor(data_.rows(i, i + 1)); }

ImageTensor ImageTensor::stack(std::span<const ImageTensor> parts) {
    std::vector<nn::Tensor> ts;
    ts.reserve(parts.size());
    for (const auto& p : parts) ts.push_back(p.tensor());
    return ImageTensor(nn::concat_rows(ts));
}

nn::Tensor clamp_unit(nn::Tensor t) {
    for (auto& v : t.data()) v = std::clamp(v, -1.0, 1.0);
    return t;
}

std::optional<Raster> read_image(const std::filesystem::path& path) {
    cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
    if (bgr.empty()) return std::nullopt;
    Raster r(bgr.cols, bgr.rows);
    for (int y = 0; y < bgr.rows; ++y) {
        const auto* row = bgr.ptr<cv::Vec3b>(y);
        for (int x = 0; x < bgr.cols; ++x) {
            r.at(x, y, 0) = row[x][2];
            r.at(x, y, 1) = row[x][1];
            r.at(x, y, 2) = row[x][0];
        }
    }
    return r;
}

void write_png(const Raster& raster, const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    cv::Mat bgr(raster.height, raster.width, CV_8UC3);
    for (int y = 0; y < raster.height; ++y) {
        auto* row = bgr.ptr<cv::Vec3b>(y);
        for (int x = 0; x < raster.width; ++x) {
            row[x] = cv::Vec3b(raster.at(x, y, 2), raster.at(x, y, 1), raster.at(x, y, 0));
        }
    }
    if (!cv::imwrite(path.string(), bgr)) throw IoError("cannot write image " + path.string());
}

std::vector<double> resize_bicubic(std::span<const double> src, int src_w, int src_h, int dst_w, int dst_h) {
    if (src_w <= 0 || src_h <= 0 || dst_w <= 0 || dst_h <= 0) {
        throw DataError("resize_bicubic: zero-sized image");
    }
    if (src.size() != static_cast<std::size_t>(src_w) * src_h) throw ShapeError("resize_bicubic: plane size mismatch");
    const auto tx = make_taps(src_w, dst_w);
    const auto ty = make_taps(src_h, dst_h);

    std::vector<double> horiz(static_cast<std::size_t>(dst_w) * src_h);
    for (int y = 0; y < src_h; ++y) {
        const double* row = src.data() + static_cast<std::size_t>(y) * src_w;
        for (int x = 0; x < dst_w; ++x) {
            double s = 0.0;
            for (int k = 0; k < 4; ++k) s += tx[x].weight[k] * row[tx[x].index[k]];
            horiz[static_cast<std::size_t>(y) * dst_w + x] = s;
        }
    }
    std::vector<double> out(static_cast<std::size_t>(dst_w) * dst_h);
    for (int y = 0; y < dst_h; ++y) {
        for (int x = 0; x < dst_w; ++x) {
            double s = 0.0;
            for (int k = 0; k < 4; ++k) s += ty[y].weight[k] * horiz[static_cast<std::size_t>(ty[y].index[k]) * dst_w + x];
            out[static_cast<std::size_t>(y) * dst_w + x] = s;
        }
    }
    return out;
}

Raster center_crop_square(const Raster& raster) {
    const int side = std::min(raster.width, raster.height);
    if (raster.width == raster.height) return raster;
    const int x0 = (raster.width - side) / 2;
    const int y0 = (raster.height - side) / 2;
    Raster out(side, side);
    for (int y = 0; y < side; ++y) {
        for (int x = 0; x < side; ++x) {
            for (int c = 0; c < 3; ++c) out.at(x, y, c) = raster.at(x0 + x, y0 + y, c);
        }
    }
    return out;
}

ImageTensor preprocess(const Raster& raster, int target_res) {
    if (raster.width <= 0 || raster.height <= 0) {
        throw DataError("rejected input: zero-dimension image (" + std::to_string(raster.width) + "x" +
                        std::to_string(raster.height) + ")");
    }
    if (!is_supported_resolution(target_res)) {
        throw ShapeError("unsupported target resolution " + std::to_string(target_res));
    }
    const Raster square = center_crop_square(raster);
    const int side = square.width;
    nn::Tensor out(nn::Shape{1, 3, target_res, target_res});
    std::vector<double> plane(static_cast<std::size_t>(side) * side);
    for (int c = 0; c < 3; ++c) {
        for (int y = 0; y < side; ++y) {
            for (int x = 0; x < side; ++x) plane[static_cast<std::size_t>(y) * side + x] = square.at(x, y, c);
        }
        const auto resized = side == target_res ? plane : resize_bicubic(plane, side, side, target_res, target_res);
        for (int i = 0; i < target_res * target_res; ++i) {
            out[static_cast<std::size_t>(c) * target_res * target_res + i] =
                std::clamp(resized[i] / 127.5 - 1.0, -1.0, 1.0);
        }
    }
    return ImageTensor(std::move(out));
}

std::optional<ImageTensor> load_image(const std::filesystem::path& path, int target_res) {
    auto raster = read_image(path);
    if (!raster) {
        spdlog::warn("skipping unreadable image {}", path.string());
        return std::nullopt;
    }
    try {
        return preprocess(*raster, target_res);
    } catch (const DataError& e) {
        spdlog::warn("skipping {}: {}", path.string(), e.what());
        return std::nullopt;
    }
}

Raster to_raster(const nn::Tensor& batch, std::int64_t i) {
    const int h = static_cast<int>(batch.dim(2)), w = static_cast<int>(batch.dim(3));
    Raster r(w, h);
    for (int c = 0; c < 3; ++c) {
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                const double v = std::clamp(batch.at(i, c, y, x), -1.0, 1.0);
                r.at(x, y, c) = static_cast<std::uint8_t>(std::lround((v + 1.0) * 127.5));
            }
        }
    }
    return r;
}

Raster make_grid(const nn::Tensor& batch, int columns) {
    const int n = static_cast<int>(batch.dim(0));
    const int side = static_cast<int>(batch.dim(2));
    columns = std::max(1, std::min(columns, n));
    const int rows = (n + columns - 1) / columns;
    Raster grid(columns * side, rows * side);
    for (int i = 0; i < n; ++i) {
        const Raster tile = to_raster(batch, i);
        const int ox = (i % columns) * side, oy = (i / columns) * side;
        for (int y = 0; y < side; ++y) {
            for (int x = 0; x < side; ++x) {
                for (int c = 0; c < 3; ++c) grid.at(ox + x, oy + y, c) = tile.at(x, y, c);
            }
        }
    }
    return grid;
}

}  // namespace cipher::dataio
