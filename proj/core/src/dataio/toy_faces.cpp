#include "cipher/dataio/toy_faces.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>

namespace cipher::dataio {

namespace {

using Rgb = std::array<double, 3>;

Rgb mix(const Rgb& a, const Rgb& b, double t) {
    return {a[0] + (b[0] - a[0]) * t, a[1] + (b[1] - a[1]) * t, a[2] + (b[2] - a[2]) * t};
}

// Soft inside-ellipse mask with an antialiased rim.
double ellipse(double x, double y, double cx, double cy, double rx, double ry, double soft) {
    const double d = std::sqrt(((x - cx) / rx) * ((x - cx) / rx) + ((y - cy) / ry) * ((y - cy) / ry));
    return std::clamp((1.0 - d) / soft + 0.5, 0.0, 1.0);
}

}  // namespace

Raster render_toy_face(int size, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::normal_distribution<double> grain(0.0, 1.0);
    auto range = [&](double lo, double hi) { return lo + (hi - lo) * u(rng); };

    const Rgb bg_top{range(0.1, 0.9), range(0.1, 0.9), range(0.1, 0.9)};
    const Rgb bg_bottom{range(0.1, 0.9), range(0.1, 0.9), range(0.1, 0.9)};
    const double tone = range(0.0, 1.0);
    const Rgb skin = mix({0.96, 0.80, 0.69}, {0.45, 0.30, 0.22}, tone);
    const Rgb hair = mix({0.08, 0.06, 0.05}, {0.75, 0.55, 0.30}, range(0.0, 1.0));
    const Rgb lips = mix(skin, {0.65, 0.20, 0.25}, range(0.4, 0.8));
    const Rgb iris = mix({0.25, 0.15, 0.08}, {0.30, 0.50, 0.70}, range(0.0, 1.0));

    const double cx = 0.5 + range(-0.04, 0.04), cy = 0.54 + range(-0.03, 0.03);
    const double rx = range(0.26, 0.32), ry = range(0.34, 0.40);
    const double eye_y = cy - ry * range(0.12, 0.22), eye_dx = rx * range(0.38, 0.48);
    const double eye_r = rx * range(0.12, 0.17);
    const double mouth_y = cy + ry * range(0.42, 0.55), mouth_w = rx * range(0.35, 0.55);
    const double smile = range(-0.4, 1.0);
    const double light = range(-0.5, 0.5);
    const double grain_sigma = range(0.01, 0.025);

    Raster out(size, size);
    for (int py = 0; py < size; ++py) {
        for (int px = 0; px < size; ++px) {
            const double x = (px + 0.5) / size, y = (py + 0.5) / size;
            Rgb c = mix(bg_top, bg_bottom, y);

            const double hair_mask = ellipse(x, y, cx, cy - ry * 0.18, rx * 1.12, ry * 0.95, 0.08);
            c = mix(c, hair, hair_mask);

            const double face = ellipse(x, y, cx, cy, rx, ry, 0.06);
            const double shade = 1.0 + 0.25 * light * (x - cx) / rx - 0.15 * ((y - cy) / ry) * ((y - cy) / ry);
            Rgb s{skin[0] * shade, skin[1] * shade, skin[2] * shade};
            c = mix(c, s, face);

            for (int side : {-1, 1}) {
                const double ex = cx + side * eye_dx;
                const double white = ellipse(x, y, ex, eye_y, eye_r * 1.5, eye_r * 0.8, 0.25);
                c = mix(c, {0.93, 0.93, 0.90}, white * face);
                c = mix(c, iris, ellipse(x, y, ex, eye_y, eye_r * 0.65, eye_r * 0.65, 0.3) * face);
                c = mix(c, {0.02, 0.02, 0.02}, ellipse(x, y, ex, eye_y, eye_r * 0.3, eye_r * 0.3, 0.4) * face);
                const double brow = ellipse(x, y, ex, eye_y - eye_r * 1.6, eye_r * 1.7, eye_r * 0.3, 0.3);
                c = mix(c, hair, 0.8 * brow * face);
            }

            const double nose = ellipse(x, y, cx, (eye_y + mouth_y) * 0.5 + 0.02, rx * 0.1, ry * 0.18, 0.5);
            c = mix(c, {skin[0] * 0.8, skin[1] * 0.75, skin[2] * 0.72}, 0.5 * nose * face);

            const double mx = (x - cx) / mouth_w;
            const double curve = mouth_y + smile * 0.04 * (mx * mx - 1.0);
            if (std::abs(mx) < 1.0) {
                const double m = std::clamp(1.0 - std::abs(y - curve) / 0.018, 0.0, 1.0);
                c = mix(c, lips, m * face);
            }

            for (int ch = 0; ch < 3; ++ch) {
                const double v = std::clamp(c[ch] + grain_sigma * grain(rng), 0.0, 1.0);
                out.at(px, py, ch) = static_cast<std::uint8_t>(std::lround(v * 255.0));
            }
        }
    }
    return out;
}

void write_toy_faces(const std::filesystem::path& dir, int n, int size, std::uint64_t seed) {
    std::filesystem::create_directories(dir);
    std::mt19937_64 rng(seed);
    for (int i = 0; i < n; ++i) {
        char name[32];
        std::snprintf(name, sizeof name, "face_%05d.png", i);
        write_png(render_toy_face(size, rng), dir / name);
    }
}

}  // namespace cipher::dataio
