#include "cipher/progan/layers.hpp"

#include <cmath>

#include "cipher/error.hpp"
#include "cipher/progan/losses.hpp"

namespace cipher::progan {

double WSConvSpec::runtime_scale() const {
    if (fan_in() <= 0) throw ConfigError("WSConvSpec with empty fan-in");
    return std::sqrt(2.0 / fan_in());
}

nn::Var ws_conv_forward(const nn::Var& x, const WSConvSpec& spec, const nn::Var& weights, const nn::Var& bias) {
    const nn::Shape expected{spec.out_channels, spec.in_channels, spec.kernel_size, spec.kernel_size};
    if (weights.shape() != expected) {
        throw ShapeError("ws_conv: weights " + nn::shape_str(weights.shape()) + " do not match spec " +
                         nn::shape_str(expected));
    }
    if (x.value().ndim() != 4 || x.dim(1) != spec.in_channels) {
        throw ShapeError("ws_conv: input " + nn::shape_str(x.shape()) + " incompatible with weights " +
                         nn::shape_str(weights.shape()));
    }
    return nn::conv2d(x, weights, bias, spec.stride, spec.padding, spec.runtime_scale());
}

WSConv2d::WSConv2d(WSConvSpec spec, std::mt19937_64& rng)
    : spec_(spec),
      weight_(nn::make_parameter({spec.out_channels, spec.in_channels, spec.kernel_size, spec.kernel_size}, rng, 1.0)),
      bias_(nn::make_parameter({spec.out_channels}, rng, 0.0)) {}

void WSConv2d::collect(nn::ParameterList& out, const std::string& prefix) const {
    out.push_back({prefix + ".weight", weight_});
    out.push_back({prefix + ".bias", bias_});
}

WSLinear::WSLinear(int in_features, int out_features, std::mt19937_64& rng)
    : in_(in_features),
      out_(out_features),
      weight_(nn::make_parameter({out_features, in_features}, rng, 1.0)),
      bias_(nn::make_parameter({out_features}, rng, 0.0)) {}

nn::Var WSLinear::operator()(const nn::Var& x) const {
    return nn::linear(x, weight_, bias_, std::sqrt(2.0 / in_));
}

void WSLinear::collect(nn::ParameterList& out, const std::string& prefix) const {
    out.push_back({prefix + ".weight", weight_});
    out.push_back({prefix + ".bias", bias_});
}

nn::Var minibatch_std(const nn::Var& x, std::optional<double> fixed_value) {
    return nn::minibatch_stddev(x, fixed_value);
}

nn::Var fade_in(const nn::Var& previous, const nn::Var& fresh, double alpha) {
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw DomainError("fade_in: alpha " + std::to_string(alpha) + " outside [0,1]");
    if (previous.shape() != fresh.shape()) {
        throw ShapeError("fade_in: " + nn::shape_str(previous.shape()) + " vs " + nn::shape_str(fresh.shape()));
    }
    if (alpha == 0.0) return previous;
    if (alpha == 1.0) return fresh;
    return nn::add(nn::scale(fresh, alpha), nn::scale(previous, 1.0 - alpha));
}

AdversarialLosses mse_adv_losses(const nn::Var& d_real, const nn::Var& d_fake) {
    if (d_real.value().numel() == 0 || d_fake.value().numel() == 0) {
        throw ShapeError("mse_adv_losses: empty discriminator output");
    }
    const nn::Tensor ones_real(d_real.shape(), 1.0);
    const nn::Tensor zeros_fake(d_fake.shape(), 0.0);
    const nn::Tensor ones_fake(d_fake.shape(), 1.0);
    return {nn::add(nn::mse_loss(d_real, ones_real), nn::mse_loss(d_fake, zeros_fake)),
            nn::mse_loss(d_fake, ones_fake)};
}

}  // namespace cipher::progan
