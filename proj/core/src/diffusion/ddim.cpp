#include "cipher/diffusion/ddim.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "cipher/error.hpp"

namespace cipher::diffusion {

void DdimSamplerConfig::validate(int T) const {
    if (sigma != 0.0) throw ConfigError("ddim: sigma must be exactly 0 (deterministic sampler)");
    if (num_steps < 1 || num_steps > T) {
        throw ConfigError("ddim.steps = " + std::to_string(num_steps) + " must lie in [1, " + std::to_string(T) + "]");
    }
    if (batch_size < 1) throw ConfigError("ddim batch size must be positive");
}

std::vector<int> timestep_subsequence(int T, int num_steps) {
    if (T < 1 || num_steps < 1 || num_steps > T) {
        throw ConfigError("cannot take " + std::to_string(num_steps) + " steps from a " + std::to_string(T) + "-step schedule");
    }
    std::vector<int> tau;
    tau.reserve(static_cast<std::size_t>(num_steps));
    for (std::int64_t i = 1; i <= num_steps; ++i) {
        tau.push_back(static_cast<int>((2 * i * T + num_steps) / (2 * static_cast<std::int64_t>(num_steps))));
    }
    return tau;
}

nn::Tensor predict_x0(const nn::Tensor& x_t, const nn::Tensor& eps_pred, int t, const NoiseSchedule& sched) {
    if (!x_t.same_shape(eps_pred)) throw ShapeError("ddim: noise prediction shape mismatch");
    const double ab = sched.alpha_bar_at(t);
    if (ab <= 0.0) throw DomainError("ddim: alpha_bar at t=" + std::to_string(t) + " is zero");
    const double s = std::sqrt(ab), r = std::sqrt(1.0 - ab);
    nn::Tensor out(x_t.shape());
    for (std::int64_t i = 0; i < x_t.numel(); ++i) out[i] = (x_t[i] - r * eps_pred[i]) / s;
    return out;
}

nn::Tensor ddim_step(const nn::Tensor& x_t, const nn::Tensor& eps_pred, int t, int t_prev, const NoiseSchedule& sched) {
    if (t_prev > t) throw DomainError("ddim: step must not increase the timestep");
    if (t_prev == t) {
        if (!x_t.same_shape(eps_pred)) throw ShapeError("ddim: noise prediction shape mismatch");
        sched.alpha_bar_at(t);
        return x_t;
    }
    const auto x0 = predict_x0(x_t, eps_pred, t, sched);
    const double ab_prev = sched.alpha_bar_at(t_prev);
    const double a = std::sqrt(ab_prev), b = std::sqrt(1.0 - ab_prev);
    nn::Tensor out(x_t.shape());
    for (std::int64_t i = 0; i < x_t.numel(); ++i) out[i] = a * x0[i] + b * eps_pred[i];
    return out;
}

nn::Tensor initial_noise(std::uint64_t seed, std::int64_t index, const nn::Shape& sample_shape) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(static_cast<std::uint64_t>(index) >> 32)};
    std::mt19937_64 rng(seq);
    std::normal_distribution<double> normal(0.0, 1.0);
    nn::Tensor t(sample_shape);
    for (auto& v : t.data()) v = normal(rng);
    return t;
}

void ddim_sample_stream(const UNet& model, const NoiseSchedule& sched, const DdimSamplerConfig& cfg, std::int64_t n,
                        std::uint64_t seed, const SampleSink& sink) {
    cfg.validate(sched.T);
    if (n < 0) throw DomainError("ddim: negative sample count");
    const auto tau = timestep_subsequence(sched.T, cfg.num_steps);
    const auto& spec = model.spec();
    const nn::Shape sample_shape{1, spec.in_channels, spec.resolution, spec.resolution};
    nn::NoGradGuard no_grad;
    for (std::int64_t begin = 0; begin < n; begin += cfg.batch_size) {
        const auto end = std::min(n, begin + cfg.batch_size);
        std::vector<nn::Tensor> noise;
        for (auto j = begin; j < end; ++j) noise.push_back(initial_noise(seed, j, sample_shape));
        nn::Tensor x = nn::concat_rows(noise);
        for (std::size_t i = tau.size(); i-- > 0;) {
            const std::vector<int> ts(static_cast<std::size_t>(end - begin), tau[i]);
            const auto eps = model.forward(nn::Var(x), ts).value();
            x = ddim_step(x, eps, tau[i], i == 0 ? 0 : tau[i - 1], sched);
        }
        sink(begin, dataio::clamp_unit(std::move(x)));
    }
}

dataio::ImageTensor ddim_sample(const UNet& model, const NoiseSchedule& sched, const DdimSamplerConfig& cfg, std::int64_t n,
                                std::uint64_t seed) {
    std::vector<nn::Tensor> chunks;
    ddim_sample_stream(model, sched, cfg, n, seed, [&](std::int64_t, const nn::Tensor& x) { chunks.push_back(x); });
    if (chunks.empty()) return {};
    return dataio::ImageTensor(nn::concat_rows(chunks));
}

}  // namespace cipher::diffusion
