#include "cipher/diffusion/schedule.hpp"

#include <cmath>
#include <string>

#include "cipher/error.hpp"

namespace cipher::diffusion {

double NoiseSchedule::alpha_bar_at(int t) const {
    if (t < 0 || t > T) throw DomainError("timestep " + std::to_string(t) + " outside [0, " + std::to_string(T) + "]");
    return alpha_bar[static_cast<std::size_t>(t)];
}

NoiseSchedule NoiseSchedule::from_betas(std::span<const double> betas) {
    if (betas.empty()) throw DomainError("noise schedule needs at least one timestep");
    NoiseSchedule s;
    s.T = static_cast<int>(betas.size());
    s.beta.assign(1, 0.0);
    s.alpha.assign(1, 1.0);
    s.alpha_bar.assign(1, 1.0);
    double running = 1.0;
    for (double b : betas) {
        if (!(b > 0.0 && b < 1.0)) throw DomainError("beta " + std::to_string(b) + " outside (0, 1)");
        running *= 1.0 - b;
        s.beta.push_back(b);
        s.alpha.push_back(1.0 - b);
        s.alpha_bar.push_back(running);
    }
    return s;
}

NoiseSchedule make_schedule(int T, double beta_start, double beta_end) {
    if (T < 1) throw DomainError("schedule length must be >= 1, got " + std::to_string(T));
    if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0)) {
        throw DomainError("beta range [" + std::to_string(beta_start) + ", " + std::to_string(beta_end) +
                          "] must satisfy 0 < start <= end < 1");
    }
    std::vector<double> betas(static_cast<std::size_t>(T));
    for (int t = 1; t <= T; ++t) {
        const double frac = T == 1 ? 0.0 : static_cast<double>(t - 1) / (T - 1);
        betas[t - 1] = t == T && T > 1 ? beta_end : beta_start + (beta_end - beta_start) * frac;
    }
    return NoiseSchedule::from_betas(betas);
}

nn::Tensor q_sample_with(const nn::Tensor& x0, double alpha_bar, const nn::Tensor& eps) {
    if (!x0.same_shape(eps)) throw ShapeError("q_sample: noise shape " + nn::shape_str(eps.shape()) + " != " + nn::shape_str(x0.shape()));
    const double a = std::sqrt(alpha_bar), b = std::sqrt(1.0 - alpha_bar);
    nn::Tensor out(x0.shape());
    for (std::int64_t i = 0; i < x0.numel(); ++i) out[i] = a * x0[i] + b * eps[i];
    return out;
}

nn::Tensor q_sample(const nn::Tensor& x0, std::span<const int> t, const nn::Tensor& eps, const NoiseSchedule& sched) {
    if (!x0.same_shape(eps)) throw ShapeError("q_sample: noise shape " + nn::shape_str(eps.shape()) + " != " + nn::shape_str(x0.shape()));
    if (x0.ndim() < 1 || static_cast<std::int64_t>(t.size()) != x0.dim(0)) throw ShapeError("q_sample: one timestep per sample required");
    const auto n = x0.dim(0);
    const auto per = n == 0 ? 0 : x0.numel() / n;
    nn::Tensor out(x0.shape());
    for (std::int64_t i = 0; i < n; ++i) {
        if (t[i] < 1 || t[i] > sched.T) throw DomainError("q_sample: timestep " + std::to_string(t[i]) + " outside [1, " + std::to_string(sched.T) + "]");
        const double ab = sched.alpha_bar[static_cast<std::size_t>(t[i])];
        const double a = std::sqrt(ab), b = std::sqrt(1.0 - ab);
        for (std::int64_t j = i * per; j < (i + 1) * per; ++j) out[j] = a * x0[j] + b * eps[j];
    }
    return out;
}

}  // namespace cipher::diffusion
