#include "cipher/detector/features.hpp"

#include <fmt/format.h>

#include <fstream>

#include "cipher/error.hpp"

namespace cipher::detector {

namespace {

nn::Tensor global_pool(const nn::Tensor& x) {
    const auto n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
    nn::Tensor out(nn::Shape{n, c});
    for (std::int64_t i = 0; i < n; ++i) {
        for (std::int64_t j = 0; j < c; ++j) {
            double s = 0.0;
            const double* p = x.ptr() + (i * c + j) * hw;
            for (std::int64_t k = 0; k < hw; ++k) s += p[k];
            out[i * c + j] = s / static_cast<double>(hw);
        }
    }
    return out;
}

FeatureBundle collect(const std::map<int, nn::Var>& captured, std::span<const int> depths) {
    FeatureBundle b;
    for (int d : depths) b.features[d] = global_pool(captured.at(d).value());
    return b;
}

}  // namespace

std::int64_t FeatureBundle::length(int depth) const {
    const auto it = features.find(depth);
    if (it == features.end()) throw ConfigError(fmt::format("no features at depth {}", depth));
    return it->second.dim(1);
}

FeatureBundle extract_features(const dataio::ImageTensor& images, const Detector& backbone, std::span<const int> depths) {
    const int top = backbone.stage().index;
    for (int d : depths) {
        if (d < 0 || d > top) throw ConfigError(fmt::format("discriminator depth {} outside [0, {}]", d, top));
    }
    if (depths.empty()) return {};
    if (images.resolution() != backbone.resolution()) {
        throw ShapeError(fmt::format("backbone expects {}px images, got {}px", backbone.resolution(), images.resolution()));
    }
    nn::NoGradGuard no_grad;
    std::map<int, nn::Var> captured;
    progan::DiscriminatorOptions opts;
    opts.mbstd_fixed = backbone.mbstd_constant();
    opts.capture = &captured;
    backbone.backbone().logits(nn::Var(images.tensor()), backbone.stage(), opts);
    return collect(captured, depths);
}

FeatureBundle extract_features(const dataio::ImageTensor& images, const diffusion::UNet& backbone, int t_probe,
                               std::span<const int> depths) {
    const int levels = backbone.spec().depth();
    for (int d : depths) {
        if (d < 0 || d >= levels) throw ConfigError(fmt::format("u-net depth {} outside [0, {}]", d, levels - 1));
    }
    if (depths.empty()) return {};
    nn::NoGradGuard no_grad;
    std::map<int, nn::Var> captured;
    const std::vector<int> ts(static_cast<std::size_t>(images.batch()), t_probe);
    backbone.forward(nn::Var(images.tensor()), ts, &captured);
    return collect(captured, depths);
}

std::string features_csv(const FeatureBundle& bundle, std::span<const std::string> image_ids) {
    std::string out = "image_id,depth,values\n";
    for (const auto& [depth, m] : bundle.features) {
        if (m.dim(0) != static_cast<std::int64_t>(image_ids.size())) throw ShapeError("features_csv: one id per image required");
        for (std::int64_t i = 0; i < m.dim(0); ++i) {
            std::string id = image_ids[i];
            if (id.find_first_of(",\"\n") != std::string::npos) {
                std::string q = "\"";
                for (char c : id) q += c == '"' ? std::string("\"\"") : std::string(1, c);
                id = q + "\"";
            }
            out += fmt::format("{},{},", id, depth);
            for (std::int64_t j = 0; j < m.dim(1); ++j) out += fmt::format("{}{:.9g}", j ? " " : "", m[i * m.dim(1) + j]);
            out += '\n';
        }
    }
    return out;
}

void write_features_csv(const FeatureBundle& bundle, std::span<const std::string> image_ids, const std::filesystem::path& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot write " + path.string());
    f << features_csv(bundle, image_ids);
    if (!f) throw IoError("failed writing " + path.string());
}

}  // namespace cipher::detector
