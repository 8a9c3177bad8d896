#pragma once

#include <random>
#include <string>
#include <utility>
#include <vector>

#include "cipher/nn/autograd.hpp"

namespace cipher::nn {

struct NamedParameter {
    std::string name;
    Var var;
};

using ParameterList = std::vector<NamedParameter>;

// Leaf parameter drawn from N(0, stddev^2); stddev == 0 yields zeros.
Var make_parameter(const Shape& shape, std::mt19937_64& rng, double stddev);

void zero_grads(const ParameterList& params);
void set_trainable(const ParameterList& params, bool on);
std::int64_t parameter_count(const ParameterList& params);

}  // namespace cipher::nn
