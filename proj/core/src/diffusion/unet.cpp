#include "cipher/diffusion/unet.hpp"

#include <cmath>
#include <sstream>

#include "cipher/error.hpp"
#include "cipher/hash.hpp"

namespace cipher::diffusion {

namespace {

std::string join(const auto& values) {
    std::ostringstream os;
    bool first = true;
    for (const auto& v : values) {
        if (!first) os << ',';
        os << v;
        first = false;
    }
    return os.str();
}

std::vector<int> split_ints(const std::string& s) {
    std::vector<int> out;
    std::stringstream ss(s);
    std::string part;
    while (std::getline(ss, part, ',')) {
        if (!part.empty()) out.push_back(std::stoi(part));
    }
    return out;
}

nn::Var ones(std::int64_t n) { return nn::Var(nn::Tensor(nn::Shape{n}, 1.0), true); }
nn::Var zeros(std::int64_t n) { return nn::Var(nn::Tensor(nn::Shape{n}, 0.0), true); }

}  // namespace

void UNetSpec::validate() const {
    if (base_channels < 1 || in_channels < 1 || channel_multipliers.empty()) {
        throw ConfigError("unet: base channels, input channels and multipliers must be positive");
    }
    for (int m : channel_multipliers) {
        if (m < 1) throw ConfigError("unet: channel multiplier " + std::to_string(m) + " must be positive");
    }
    if (sinusoid_dim() % 2 != 0) throw ConfigError("unet: timestep embedding dim " + std::to_string(sinusoid_dim()) + " must be even");
    const int factor = 1 << (depth() - 1);
    if (resolution < 1 || resolution % factor != 0) {
        throw ConfigError("unet: resolution " + std::to_string(resolution) + " not divisible by " + std::to_string(factor));
    }
    for (int r : attention_resolutions) {
        bool found = false;
        for (int i = 0; i < depth(); ++i) found = found || (resolution >> i) == r;
        if (!found) throw ConfigError("unet: attention resolution " + std::to_string(r) + " is not a level of a " + std::to_string(resolution) + "px network");
    }
}

std::string UNetSpec::descriptor() const {
    std::ostringstream os;
    os << "unet-v1;res=" << resolution << ";in=" << in_channels << ";base=" << base_channels
       << ";mult=" << join(channel_multipliers) << ";attn=" << join(attention_resolutions) << ";tdim=" << sinusoid_dim()
       << ";block=gn-silu-conv-temb-gn-silu-conv";
    return os.str();
}

std::string UNetSpec::hash() const { return hash_hex(descriptor()); }

int group_count(int channels) {
    for (int g = std::min(32, channels); g > 1; --g) {
        if (channels % g == 0) return g;
    }
    return 1;
}

nn::Tensor timestep_embedding(std::span<const double> t, int dim) {
    if (dim < 2 || dim % 2 != 0) throw ConfigError("timestep embedding dim must be even and positive, got " + std::to_string(dim));
    const auto n = static_cast<std::int64_t>(t.size());
    const int half = dim / 2;
    nn::Tensor out(nn::Shape{n, dim});
    for (std::int64_t s = 0; s < n; ++s) {
        for (int i = 0; i < half; ++i) {
            const double w = std::pow(10000.0, -static_cast<double>(i) / half);
            out[s * dim + 2 * i] = std::sin(t[s] * w);
            out[s * dim + 2 * i + 1] = std::cos(t[s] * w);
        }
    }
    return out;
}

std::vector<double> timestep_embedding(double t, int dim) {
    const double ts[] = {t};
    return timestep_embedding(ts, dim).vec();
}

UNet::ResBlock UNet::make_res(int in, int out, std::mt19937_64& rng) const {
    ResBlock b;
    b.in = in;
    b.out = out;
    b.norm1 = {ones(in), zeros(in), group_count(in)};
    b.conv1 = {nn::make_parameter({out, in, 3, 3}, rng, 1.0 / std::sqrt(in * 9.0)), zeros(out), 1, 1};
    b.temb_w = nn::make_parameter({out, spec_.embed_dim()}, rng, 1.0 / std::sqrt(static_cast<double>(spec_.embed_dim())));
    b.temb_b = zeros(out);
    b.norm2 = {ones(out), zeros(out), group_count(out)};
    b.conv2 = {nn::make_parameter({out, out, 3, 3}, rng, 1.0 / std::sqrt(out * 9.0)), zeros(out), 1, 1};
    if (in != out) b.skip = {nn::make_parameter({out, in, 1, 1}, rng, 1.0 / std::sqrt(static_cast<double>(in))), zeros(out), 1, 0};
    return b;
}

UNet::Attention UNet::make_attention(int ch, std::mt19937_64& rng) const {
    const double sd = 1.0 / std::sqrt(static_cast<double>(ch));
    Attention a;
    a.norm = {ones(ch), zeros(ch), group_count(ch)};
    a.q = {nn::make_parameter({ch, ch, 1, 1}, rng, sd), zeros(ch), 1, 0};
    a.k = {nn::make_parameter({ch, ch, 1, 1}, rng, sd), zeros(ch), 1, 0};
    a.v = {nn::make_parameter({ch, ch, 1, 1}, rng, sd), zeros(ch), 1, 0};
    a.proj = {nn::make_parameter({ch, ch, 1, 1}, rng, sd), zeros(ch), 1, 0};
    return a;
}

UNet::UNet(UNetSpec spec, std::uint64_t seed) : spec_(std::move(spec)) {
    spec_.validate();
    std::mt19937_64 rng(seed);
    const int sd = spec_.sinusoid_dim(), ed = spec_.embed_dim();
    temb_w1_ = nn::make_parameter({ed, sd}, rng, 1.0 / std::sqrt(static_cast<double>(sd)));
    temb_b1_ = zeros(ed);
    temb_w2_ = nn::make_parameter({ed, ed}, rng, 1.0 / std::sqrt(static_cast<double>(ed)));
    temb_b2_ = zeros(ed);

    const int base = spec_.base_channels;
    conv_in_ = {nn::make_parameter({base, spec_.in_channels, 3, 3}, rng, 1.0 / std::sqrt(spec_.in_channels * 9.0)), zeros(base), 1, 1};

    const int depth = spec_.depth();
    int ch = base;
    for (int i = 0; i < depth; ++i) {
        const int out = level_channels(i);
        Level lv;
        lv.res = make_res(ch, out, rng);
        lv.has_attention = spec_.attention_resolutions.count(spec_.resolution >> i) != 0;
        if (lv.has_attention) lv.attn = make_attention(out, rng);
        lv.has_resample = i + 1 < depth;
        if (lv.has_resample) lv.resample = {nn::make_parameter({out, out, 3, 3}, rng, 1.0 / std::sqrt(out * 9.0)), zeros(out), 2, 1};
        down_.push_back(std::move(lv));
        ch = out;
    }
    mid1_ = make_res(ch, ch, rng);
    mid2_ = make_res(ch, ch, rng);

    up_.resize(static_cast<std::size_t>(depth));
    for (int i = depth - 1; i >= 0; --i) {
        const int out = level_channels(i);
        Level lv;
        lv.res = make_res(ch + out, out, rng);
        lv.has_attention = down_[i].has_attention;
        if (lv.has_attention) lv.attn = make_attention(out, rng);
        lv.has_resample = i > 0;
        if (lv.has_resample) lv.resample = {nn::make_parameter({out, out, 3, 3}, rng, 1.0 / std::sqrt(out * 9.0)), zeros(out), 1, 1};
        up_[i] = std::move(lv);
        ch = out;
    }
    norm_out_ = {ones(ch), zeros(ch), group_count(ch)};
    conv_out_ = {nn::make_parameter({spec_.in_channels, ch, 3, 3}, rng, 1.0 / std::sqrt(ch * 9.0)), zeros(spec_.in_channels), 1, 1};
}

int UNet::level_channels(int i) const {
    if (i < 0 || i >= spec_.depth()) throw ConfigError("unet level " + std::to_string(i) + " out of range");
    return spec_.base_channels * spec_.channel_multipliers[i];
}

nn::Var UNet::run_res(const ResBlock& b, const nn::Var& h, const nn::Var& temb) const {
    auto y = b.conv1(nn::silu(b.norm1(h)));
    y = nn::add_channelwise(y, nn::linear(temb, b.temb_w, b.temb_b));
    y = b.conv2(nn::silu(b.norm2(y)));
    return nn::add(b.in != b.out ? b.skip(h) : h, y);
}

nn::Var UNet::run_attention(const Attention& a, const nn::Var& h) const {
    const auto n = a.norm(h);
    return nn::add(h, a.proj(nn::spatial_attention(a.q(n), a.k(n), a.v(n))));
}

nn::Var UNet::forward(const nn::Var& x, std::span<const int> t, std::map<int, nn::Var>* capture) const {
    if (x.value().ndim() != 4 || x.dim(1) != spec_.in_channels) {
        throw ShapeError("unet: expected N x " + std::to_string(spec_.in_channels) + " x H x W input, got " + nn::shape_str(x.shape()));
    }
    const int factor = 1 << (spec_.depth() - 1);
    if (x.dim(2) % factor != 0 || x.dim(3) % factor != 0 || x.dim(2) == 0 || x.dim(3) == 0) {
        throw ShapeError("unet: spatial size " + std::to_string(x.dim(2)) + "x" + std::to_string(x.dim(3)) +
                         " not divisible by " + std::to_string(factor));
    }
    if (static_cast<std::int64_t>(t.size()) != x.dim(0)) throw ShapeError("unet: one timestep per sample required");

    std::vector<double> tf(t.begin(), t.end());
    nn::Var temb(timestep_embedding(tf, spec_.sinusoid_dim()));
    temb = nn::linear(nn::silu(nn::linear(temb, temb_w1_, temb_b1_)), temb_w2_, temb_b2_);
    const auto temb_act = nn::silu(temb);

    std::vector<nn::Var> skips;
    nn::Var h = conv_in_(x);
    for (int i = 0; i < spec_.depth(); ++i) {
        const auto& lv = down_[i];
        h = run_res(lv.res, h, temb_act);
        if (lv.has_attention) h = run_attention(lv.attn, h);
        if (capture) (*capture)[i] = h;
        skips.push_back(h);
        if (lv.has_resample) h = lv.resample(h);
    }
    h = run_res(mid2_, run_res(mid1_, h, temb_act), temb_act);
    for (int i = spec_.depth() - 1; i >= 0; --i) {
        const auto& lv = up_[i];
        h = run_res(lv.res, nn::concat_channels(h, skips[i]), temb_act);
        if (lv.has_attention) h = run_attention(lv.attn, h);
        if (lv.has_resample) h = lv.resample(nn::upsample_nearest2(h));
    }
    return conv_out_(nn::silu(norm_out_(h)));
}

int UNet::attention_count() const { return static_cast<int>(attention_levels().size()); }

std::vector<int> UNet::attention_levels() const {
    std::vector<int> out;
    for (int i = 0; i < spec_.depth(); ++i) {
        if (down_[i].has_attention) out.push_back(spec_.resolution >> i);
    }
    for (int i = spec_.depth() - 1; i >= 0; --i) {
        if (up_[i].has_attention) out.push_back(spec_.resolution >> i);
    }
    return out;
}

std::vector<int> UNet::decoder_concat_channels() const {
    std::vector<int> out;
    for (int i = spec_.depth() - 1; i >= 0; --i) out.push_back(up_[i].res.in);
    return out;
}

void UNet::collect_res(nn::ParameterList& out, const std::string& p, const ResBlock& b) const {
    out.push_back({p + "norm1.gamma", b.norm1.gamma});
    out.push_back({p + "norm1.beta", b.norm1.beta});
    out.push_back({p + "conv1.weight", b.conv1.w});
    out.push_back({p + "conv1.bias", b.conv1.b});
    out.push_back({p + "temb.weight", b.temb_w});
    out.push_back({p + "temb.bias", b.temb_b});
    out.push_back({p + "norm2.gamma", b.norm2.gamma});
    out.push_back({p + "norm2.beta", b.norm2.beta});
    out.push_back({p + "conv2.weight", b.conv2.w});
    out.push_back({p + "conv2.bias", b.conv2.b});
    if (b.in != b.out) {
        out.push_back({p + "skip.weight", b.skip.w});
        out.push_back({p + "skip.bias", b.skip.b});
    }
}

void UNet::collect_attention(nn::ParameterList& out, const std::string& p, const Attention& a) const {
    out.push_back({p + "norm.gamma", a.norm.gamma});
    out.push_back({p + "norm.beta", a.norm.beta});
    for (const auto& [name, conv] : {std::pair{"q", &a.q}, {"k", &a.k}, {"v", &a.v}, {"proj", &a.proj}}) {
        out.push_back({p + name + ".weight", conv->w});
        out.push_back({p + name + ".bias", conv->b});
    }
}

nn::ParameterList UNet::parameters() const {
    nn::ParameterList out;
    out.push_back({"temb.fc1.weight", temb_w1_});
    out.push_back({"temb.fc1.bias", temb_b1_});
    out.push_back({"temb.fc2.weight", temb_w2_});
    out.push_back({"temb.fc2.bias", temb_b2_});
    out.push_back({"conv_in.weight", conv_in_.w});
    out.push_back({"conv_in.bias", conv_in_.b});
    auto levels = [&](const std::vector<Level>& lvs, const std::string& tag) {
        for (std::size_t i = 0; i < lvs.size(); ++i) {
            const std::string p = tag + "." + std::to_string(i) + ".";
            collect_res(out, p + "res.", lvs[i].res);
            if (lvs[i].has_attention) collect_attention(out, p + "attn.", lvs[i].attn);
            if (lvs[i].has_resample) {
                out.push_back({p + "resample.weight", lvs[i].resample.w});
                out.push_back({p + "resample.bias", lvs[i].resample.b});
            }
        }
    };
    levels(down_, "down");
    collect_res(out, "mid.0.", mid1_);
    collect_res(out, "mid.1.", mid2_);
    levels(up_, "up");
    out.push_back({"norm_out.gamma", norm_out_.gamma});
    out.push_back({"norm_out.beta", norm_out_.beta});
    out.push_back({"conv_out.weight", conv_out_.w});
    out.push_back({"conv_out.bias", conv_out_.b});
    return out;
}

nn::Checkpoint UNet::to_checkpoint(std::map<std::string, std::string> meta) const {
    nn::Checkpoint ckpt;
    ckpt.kind = kUNetKind;
    ckpt.arch_hash = spec_.hash();
    ckpt.meta = std::move(meta);
    ckpt.meta["spec.resolution"] = std::to_string(spec_.resolution);
    ckpt.meta["spec.in_channels"] = std::to_string(spec_.in_channels);
    ckpt.meta["spec.base_channels"] = std::to_string(spec_.base_channels);
    ckpt.meta["spec.multipliers"] = join(spec_.channel_multipliers);
    ckpt.meta["spec.attention"] = join(spec_.attention_resolutions);
    ckpt.meta["spec.time_dim"] = std::to_string(spec_.sinusoid_dim());
    ckpt.tensors = nn::snapshot(parameters());
    return ckpt;
}

UNetSpec spec_from_checkpoint(const nn::Checkpoint& ckpt) {
    UNetSpec s;
    try {
        s.resolution = std::stoi(ckpt.meta_at("spec.resolution"));
        s.in_channels = std::stoi(ckpt.meta_at("spec.in_channels"));
        s.base_channels = std::stoi(ckpt.meta_at("spec.base_channels"));
        s.channel_multipliers = split_ints(ckpt.meta_at("spec.multipliers"));
        const auto attn = split_ints(ckpt.meta_at("spec.attention"));
        s.attention_resolutions = std::set<int>(attn.begin(), attn.end());
        s.time_dim = std::stoi(ckpt.meta_at("spec.time_dim"));
    } catch (const std::invalid_argument&) {
        throw CheckpointError("unet checkpoint has malformed spec metadata");
    }
    return s;
}

UNet UNet::from_checkpoint(const nn::Checkpoint& ckpt) {
    if (ckpt.kind != kUNetKind) throw CheckpointError("expected a " + std::string(kUNetKind) + " checkpoint, got " + ckpt.kind);
    const auto spec = spec_from_checkpoint(ckpt);
    nn::expect_compatible(ckpt, kUNetKind, spec.hash());
    UNet net(spec, 0);
    nn::restore(net.parameters(), ckpt);
    return net;
}

}  // namespace cipher::diffusion
