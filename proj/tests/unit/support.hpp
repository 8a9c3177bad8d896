#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "cipher/nn/autograd.hpp"
#include "cipher/nn/parameters.hpp"

namespace testing {

inline cipher::nn::Tensor randn(cipher::nn::Shape shape, std::uint64_t seed, double scale = 1.0) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, scale);
    cipher::nn::Tensor t(std::move(shape));
    for (auto& v : t.data()) v = normal(rng);
    return t;
}

inline cipher::nn::Tensor uniform(cipher::nn::Shape shape, std::uint64_t seed, double lo, double hi) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(lo, hi);
    cipher::nn::Tensor t(std::move(shape));
    for (auto& v : t.data()) v = u(rng);
    return t;
}

// Direct nested-loop convolution used as an oracle.
inline cipher::nn::Tensor naive_conv(const cipher::nn::Tensor& x, const cipher::nn::Tensor& w, const cipher::nn::Tensor& b, int stride, int pad) {
    const auto n = x.dim(0), ci = x.dim(1), h = x.dim(2), wd = x.dim(3);
    const auto co = w.dim(0), k = w.dim(2);
    const auto oh = (h + 2 * pad - k) / stride + 1, ow = (wd + 2 * pad - k) / stride + 1;
    cipher::nn::Tensor y({n, co, oh, ow});
    for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t o = 0; o < co; ++o)
            for (std::int64_t r = 0; r < oh; ++r)
                for (std::int64_t c = 0; c < ow; ++c) {
                    double acc = b.empty() ? 0.0 : b[o];
                    for (std::int64_t q = 0; q < ci; ++q)
                        for (std::int64_t u = 0; u < k; ++u)
                            for (std::int64_t v = 0; v < k; ++v) {
                                auto yy = r * stride + u - pad, xx = c * stride + v - pad;
                                if (yy < 0 || yy >= h || xx < 0 || xx >= wd) continue;
                                acc += x.at(i, q, yy, xx) * w.at(o, q, u, v);
                            }
                    y.at(i, o, r, c) = acc;
                }
    return y;
}

struct GradCheck {
    double rel_error = 0.0;     // ||analytic - numeric|| / max(||analytic||, ||numeric||)
    double max_abs_error = 0.0;
    std::size_t checked = 0;
};

// Central differences on every element of every input. loss must return a scalar Var.
inline GradCheck check_gradients(const std::function<cipher::nn::Var()>& loss, const std::vector<cipher::nn::Var>& inputs,
                                 double h = 1e-6) {
    using namespace cipher::nn;
    for (auto v : inputs) v.zero_grad();
    backward(loss());
    double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
    GradCheck out;
    for (auto v : inputs) {
        const Tensor analytic = v.has_grad() ? v.grad() : Tensor(v.shape(), 0.0);
        for (std::int64_t i = 0; i < v.value().numel(); ++i) {
            const double orig = v.value()[i];
            double fp, fm;
            {
                NoGradGuard g;
                v.mutable_value()[i] = orig + h;
                fp = loss().value()[0];
                v.mutable_value()[i] = orig - h;
                fm = loss().value()[0];
                v.mutable_value()[i] = orig;
            }
            const double numeric = (fp - fm) / (2 * h);
            diff2 += (analytic[i] - numeric) * (analytic[i] - numeric);
            a2 += analytic[i] * analytic[i];
            n2 += numeric * numeric;
            out.max_abs_error = std::max(out.max_abs_error, std::abs(analytic[i] - numeric));
            ++out.checked;
        }
    }
    const double denom = std::max(std::sqrt(std::max(a2, n2)), 1e-12);
    out.rel_error = std::sqrt(diff2) / denom;
    return out;
}

inline std::vector<cipher::nn::Var> vars_of(const cipher::nn::ParameterList& params) {
    std::vector<cipher::nn::Var> out;
    for (const auto& p : params) out.push_back(p.var);
    return out;
}

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        static std::mt19937_64 rng(std::random_device{}());
        path_ = std::filesystem::temp_directory_path() / ("cipher-" + tag + "-" + std::to_string(rng() % 1000000000));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& rel) const { return path_ / rel; }

private:
    std::filesystem::path path_;
};

}  // namespace testing
