#include "cipher/nn/parameters.hpp"

namespace cipher::nn {

Var make_parameter(const Shape& shape, std::mt19937_64& rng, double stddev) {
    Tensor t(shape, 0.0);
    if (stddev > 0.0) {
        std::normal_distribution<double> dist(0.0, stddev);
        for (auto& v : t.data()) v = dist(rng);
    }
    return Var(std::move(t), true);
}

void zero_grads(const ParameterList& params) {
    for (const auto& p : params) {
        auto var = p.var;
        var.zero_grad();
    }
}

void set_trainable(const ParameterList& params, bool on) {
    for (const auto& p : params) {
        auto var = p.var;
        var.set_requires_grad(on);
    }
}

std::int64_t parameter_count(const ParameterList& params) {
    std::int64_t n = 0;
    for (const auto& p : params) n += p.var.value().numel();
    return n;
}

}  // namespace cipher::nn
