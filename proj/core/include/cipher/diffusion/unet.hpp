#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "cipher/nn/checkpoint.hpp"
#include "cipher/nn/ops.hpp"

namespace cipher::diffusion {

struct UNetSpec {
    int resolution = 64;
    int in_channels = 3;
    int base_channels = 64;
    std::vector<int> channel_multipliers{1, 2, 4};
    std::set<int> attention_resolutions{32};
    int time_dim = 0;  // sinusoid width; 0 means base_channels

    int depth() const { return static_cast<int>(channel_multipliers.size()); }
    int sinusoid_dim() const { return time_dim > 0 ? time_dim : base_channels; }
    int embed_dim() const { return 4 * sinusoid_dim(); }
    void validate() const;
    std::string descriptor() const;
    std::string hash() const;
};

// Largest divisor of channels not exceeding 32.
int group_count(int channels);

// N x dim, entries [2i] = sin(t w_i), [2i+1] = cos(t w_i), w_i = 10000^(-i / (dim/2)).
nn::Tensor timestep_embedding(std::span<const double> t, int dim);
std::vector<double> timestep_embedding(double t, int dim);

class UNet {
public:
    UNet(UNetSpec spec, std::uint64_t seed);

    // x: N x C x H x W with H, W divisible by 2^(depth-1); t: one timestep per sample.
    // capture, when set, receives the output of each encoder level keyed by level index.
    nn::Var forward(const nn::Var& x, std::span<const int> t, std::map<int, nn::Var>* capture = nullptr) const;

    const UNetSpec& spec() const { return spec_; }
    nn::ParameterList parameters() const;

    int attention_count() const;
    // Resolution at which each attention block runs, encoder first.
    std::vector<int> attention_levels() const;
    // Input channel count of each decoder level (running features + skip), deepest first.
    std::vector<int> decoder_concat_channels() const;
    // Channels produced by encoder level i.
    int level_channels(int i) const;

    nn::Checkpoint to_checkpoint(std::map<std::string, std::string> meta = {}) const;
    static UNet from_checkpoint(const nn::Checkpoint& ckpt);

private:
    struct Conv {
        nn::Var w, b;
        int stride = 1;
        int padding = 1;
        nn::Var operator()(const nn::Var& x) const { return nn::conv2d(x, w, b, stride, padding); }
    };
    struct Norm {
        nn::Var gamma, beta;
        int groups = 1;
        nn::Var operator()(const nn::Var& x) const { return nn::group_norm(x, groups, gamma, beta); }
    };
    struct ResBlock {
        int in = 0, out = 0;
        Norm norm1, norm2;
        Conv conv1, conv2, skip;  // skip is a 1x1 projection when in != out
        nn::Var temb_w, temb_b;
    };
    struct Attention {
        Norm norm;
        Conv q, k, v, proj;
    };
    struct Level {
        ResBlock res;
        bool has_attention = false;
        Attention attn;
        bool has_resample = false;
        Conv resample;  // stride-2 conv (encoder) or conv after nearest upsample (decoder)
    };

    ResBlock make_res(int in, int out, std::mt19937_64& rng) const;
    Attention make_attention(int ch, std::mt19937_64& rng) const;
    nn::Var run_res(const ResBlock& b, const nn::Var& h, const nn::Var& temb) const;
    nn::Var run_attention(const Attention& a, const nn::Var& h) const;

    void collect_res(nn::ParameterList& out, const std::string& p, const ResBlock& b) const;
    void collect_attention(nn::ParameterList& out, const std::string& p, const Attention& a) const;

    UNetSpec spec_;
    nn::Var temb_w1_, temb_b1_, temb_w2_, temb_b2_;
    Conv conv_in_;
    std::vector<Level> down_;
    ResBlock mid1_, mid2_;
    std::vector<Level> up_;  // up_[i] serves encoder level i
    Norm norm_out_;
    Conv conv_out_;
};

inline constexpr const char* kUNetKind = "diffusion.unet";

UNetSpec spec_from_checkpoint(const nn::Checkpoint& ckpt);

}  // namespace cipher::diffusion
