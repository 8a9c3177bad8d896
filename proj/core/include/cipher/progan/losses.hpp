#pragma once

#include "cipher/nn/ops.hpp"

namespace cipher::progan {

struct AdversarialLosses {
    nn::Var discriminator;  // mean((d_real - 1)^2) + mean(d_fake^2)
    nn::Var generator;      // mean((d_fake - 1)^2)
};

// Least-squares targets on sigmoid outputs: 1 for real, 0 for fake.
AdversarialLosses mse_adv_losses(const nn::Var& d_real, const nn::Var& d_fake);

}  // namespace cipher::progan
