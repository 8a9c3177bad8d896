#include "cipher/progan/networks.hpp"

#include <sstream>

#include "cipher/error.hpp"
#include "cipher/hash.hpp"

namespace cipher::progan {

namespace {

std::string join(const std::vector<int>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
    return out;
}

std::vector<int> parse_ints(const std::string& s) {
    std::vector<int> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(std::stoi(item));
    return out;
}

std::map<std::string, std::string> arch_meta(const ProganArch& arch, std::map<std::string, std::string> meta) {
    meta["arch.resolution"] = std::to_string(arch.resolution);
    meta["arch.channels"] = join(arch.channels);
    meta["arch.latent_dim"] = std::to_string(arch.latent_dim);
    return meta;
}

void check_stage(const ProganArch& arch, const ProgressiveStage& stage) {
    if (stage.index < 0 || stage.index >= arch.num_stages()) {
        throw ShapeError("stage " + std::to_string(stage.index) + " not available in a " +
                         std::to_string(arch.resolution) + "px network");
    }
}

}  // namespace

int ProganArch::num_stages() const { return stage_for_resolution(resolution) + 1; }

void ProganArch::validate() const {
    if (static_cast<int>(channels.size()) != num_stages()) {
        throw ConfigError("gan.channels needs " + std::to_string(num_stages()) + " entries for resolution " +
                          std::to_string(resolution) + ", got " + std::to_string(channels.size()));
    }
    for (int c : channels) {
        if (c < 1) throw ConfigError("gan.channels entries must be positive");
    }
    if (latent_dim < 1) throw ConfigError("gan.latent_dim must be positive");
}

std::string ProganArch::descriptor() const {
    return "progan-v1;res=" + std::to_string(resolution) + ";channels=" + join(channels) +
           ";latent=" + std::to_string(latent_dim) + ";lrelu=0.2;mbstd=1group";
}

std::string ProganArch::hash() const { return hash_hex(descriptor()); }

ProganArch arch_from_checkpoint(const nn::Checkpoint& ckpt) {
    ProganArch arch;
    try {
        arch.resolution = std::stoi(ckpt.meta_at("arch.resolution"));
        arch.channels = parse_ints(ckpt.meta_at("arch.channels"));
        arch.latent_dim = std::stoi(ckpt.meta_at("arch.latent_dim"));
    } catch (const std::invalid_argument&) {
        throw CheckpointError("malformed progan architecture metadata");
    }
    arch.validate();
    return arch;
}

// ---------------------------------------------------------------------------
// Discriminator

Discriminator::Discriminator(ProganArch arch, std::uint64_t seed) : arch_(std::move(arch)) {
    arch_.validate();
    std::mt19937_64 rng(seed);
    const int stages = arch_.num_stages();
    const auto& ch = arch_.channels;
    for (int k = 0; k < stages; ++k) from_rgb_.emplace_back(WSConvSpec{3, ch[k], 1, 1, 0}, rng);
    blocks_.resize(static_cast<std::size_t>(stages));
    for (int k = 1; k < stages; ++k) {
        blocks_[k].conv1 = WSConv2d({ch[k], ch[k], 3, 1, 1}, rng);
        blocks_[k].conv2 = WSConv2d({ch[k], ch[k - 1], 3, 1, 1}, rng);
    }
    final_conv_ = WSConv2d({ch[0] + 1, ch[0], 3, 1, 1}, rng);
    final_dense_ = WSConv2d({ch[0], ch[0], 4, 1, 0}, rng);
    head_ = WSLinear(ch[0], 1, rng);
}

int Discriminator::block_channels(int k) const {
    if (k < 0 || k >= arch_.num_stages()) throw ConfigError("no discriminator block " + std::to_string(k));
    return k == 0 ? arch_.channels[0] : arch_.channels[k - 1];
}

nn::Var Discriminator::from_rgb(int k, const nn::Var& x) const {
    return nn::leaky_relu(from_rgb_[k](x), kLeakySlope);
}

nn::Var Discriminator::run_block(int k, const nn::Var& h) const {
    auto y = nn::leaky_relu(blocks_[k].conv1(h), kLeakySlope);
    y = nn::leaky_relu(blocks_[k].conv2(y), kLeakySlope);
    return nn::avg_pool2(y);
}

nn::Var Discriminator::final_features(const nn::Var& h, const DiscriminatorOptions& opts) const {
    auto y = minibatch_std(h, opts.mbstd_fixed);
    y = nn::leaky_relu(final_conv_(y), kLeakySlope);
    y = nn::leaky_relu(final_dense_(y), kLeakySlope);  // N x C0 x 1 x 1
    if (opts.capture) (*opts.capture)[0] = y;
    return nn::reshape(y, {y.dim(0), y.dim(1)});
}

nn::Var Discriminator::logits(const nn::Var& images, const ProgressiveStage& stage,
                              const DiscriminatorOptions& opts) const {
    check_stage(arch_, stage);
    if (images.value().ndim() != 4 || images.dim(2) != stage.resolution || images.dim(3) != stage.resolution) {
        throw ShapeError("discriminator at stage " + std::to_string(stage.index) + " expects " +
                         std::to_string(stage.resolution) + "px input, got " + nn::shape_str(images.shape()));
    }
    int k = stage.index;
    nn::Var h;
    if (stage.is_fading() && k > 0) {
        auto fresh = run_block(k, from_rgb(k, images));
        if (opts.capture) (*opts.capture)[k] = fresh;
        auto previous = from_rgb(k - 1, nn::avg_pool2(images));
        h = fade_in(previous, fresh, stage.fade_alpha);
        --k;
    } else {
        h = from_rgb(k, images);
    }
    for (; k >= 1; --k) {
        h = run_block(k, h);
        if (opts.capture) (*opts.capture)[k] = h;
    }
    auto feats = final_features(h, opts);
    if (opts.training && opts.dropout_p > 0.0) {
        if (!opts.rng) throw ConfigError("dropout requires an rng");
        feats = nn::dropout(feats, opts.dropout_p, *opts.rng);
    }
    auto out = head_(feats);
    return nn::reshape(out, {out.dim(0)});
}

nn::Var Discriminator::forward(const nn::Var& images, const ProgressiveStage& stage,
                               const DiscriminatorOptions& opts) const {
    return nn::sigmoid(logits(images, stage, opts));
}

double Discriminator::minibatch_statistic(const nn::Var& images, const ProgressiveStage& stage) const {
    nn::NoGradGuard guard;
    check_stage(arch_, stage);
    int k = stage.index;
    nn::Var h = from_rgb(k, images);
    for (; k >= 1; --k) h = run_block(k, h);
    auto with_std = minibatch_std(h);
    return with_std.value().at(0, with_std.dim(1) - 1, 0, 0);
}

nn::ParameterList Discriminator::parameters() const {
    nn::ParameterList out;
    for (std::size_t k = 0; k < from_rgb_.size(); ++k) from_rgb_[k].collect(out, "from_rgb." + std::to_string(k));
    for (std::size_t k = 1; k < blocks_.size(); ++k) {
        blocks_[k].conv1.collect(out, "block." + std::to_string(k) + ".conv1");
        blocks_[k].conv2.collect(out, "block." + std::to_string(k) + ".conv2");
    }
    for (const auto& p : final_block_parameters()) out.push_back(p);
    return out;
}

nn::ParameterList Discriminator::final_block_parameters() const {
    nn::ParameterList out;
    final_conv_.collect(out, "final.conv");
    final_dense_.collect(out, "final.dense");
    head_.collect(out, "final.head");
    return out;
}

nn::Checkpoint Discriminator::to_checkpoint(std::map<std::string, std::string> meta) const {
    nn::Checkpoint ckpt;
    ckpt.kind = kDiscriminatorKind;
    ckpt.arch_hash = arch_.hash();
    ckpt.meta = arch_meta(arch_, std::move(meta));
    ckpt.tensors = nn::snapshot(parameters());
    return ckpt;
}

Discriminator Discriminator::from_checkpoint(const nn::Checkpoint& ckpt) {
    auto arch = arch_from_checkpoint(ckpt);
    nn::expect_compatible(ckpt, kDiscriminatorKind, arch.hash());
    Discriminator d(arch, 0);
    nn::restore(d.parameters(), ckpt);
    return d;
}

// ---------------------------------------------------------------------------
// Generator

Generator::Generator(ProganArch arch, std::uint64_t seed) : arch_(std::move(arch)) {
    arch_.validate();
    std::mt19937_64 rng(seed);
    const int stages = arch_.num_stages();
    const auto& ch = arch_.channels;
    input_ = WSLinear(arch_.latent_dim, ch[0] * 16, rng);
    base_conv_ = WSConv2d({ch[0], ch[0], 3, 1, 1}, rng);
    blocks_.resize(static_cast<std::size_t>(stages));
    for (int k = 1; k < stages; ++k) {
        blocks_[k].conv1 = WSConv2d({ch[k - 1], ch[k], 3, 1, 1}, rng);
        blocks_[k].conv2 = WSConv2d({ch[k], ch[k], 3, 1, 1}, rng);
    }
    for (int k = 0; k < stages; ++k) to_rgb_.emplace_back(WSConvSpec{ch[k], 3, 1, 1, 0}, rng);
}

nn::Var Generator::to_rgb(int k, const nn::Var& h) const { return nn::tanh(to_rgb_[k](h)); }

nn::Var Generator::run_block(int k, const nn::Var& h) const {
    auto y = nn::upsample_nearest2(h);
    y = nn::pixel_norm(nn::leaky_relu(blocks_[k].conv1(y), kLeakySlope));
    return nn::pixel_norm(nn::leaky_relu(blocks_[k].conv2(y), kLeakySlope));
}

nn::Var Generator::forward(const nn::Var& z, const ProgressiveStage& stage) const {
    check_stage(arch_, stage);
    if (z.value().ndim() != 2 || z.dim(1) != arch_.latent_dim) {
        throw ShapeError("generator expects N x " + std::to_string(arch_.latent_dim) + " latents, got " +
                         nn::shape_str(z.shape()));
    }
    const auto n = z.dim(0);
    auto h = input_(nn::pixel_norm(z));
    h = nn::reshape(h, {n, arch_.channels[0], 4, 4});
    h = nn::pixel_norm(nn::leaky_relu(h, kLeakySlope));
    h = nn::pixel_norm(nn::leaky_relu(base_conv_(h), kLeakySlope));

    const int s = stage.index;
    for (int k = 1; k < s; ++k) h = run_block(k, h);
    if (s == 0) return to_rgb(0, h);
    auto fresh = to_rgb(s, run_block(s, h));
    if (!stage.is_fading()) return fresh;
    return fade_in(nn::upsample_nearest2(to_rgb(s - 1, h)), fresh, stage.fade_alpha);
}

nn::ParameterList Generator::parameters() const {
    nn::ParameterList out;
    input_.collect(out, "input");
    base_conv_.collect(out, "base.conv");
    for (std::size_t k = 1; k < blocks_.size(); ++k) {
        blocks_[k].conv1.collect(out, "block." + std::to_string(k) + ".conv1");
        blocks_[k].conv2.collect(out, "block." + std::to_string(k) + ".conv2");
    }
    for (std::size_t k = 0; k < to_rgb_.size(); ++k) to_rgb_[k].collect(out, "to_rgb." + std::to_string(k));
    return out;
}

nn::Checkpoint Generator::to_checkpoint(std::map<std::string, std::string> meta) const {
    nn::Checkpoint ckpt;
    ckpt.kind = kGeneratorKind;
    ckpt.arch_hash = arch_.hash();
    ckpt.meta = arch_meta(arch_, std::move(meta));
    ckpt.tensors = nn::snapshot(parameters());
    return ckpt;
}

Generator Generator::from_checkpoint(const nn::Checkpoint& ckpt) {
    auto arch = arch_from_checkpoint(ckpt);
    nn::expect_compatible(ckpt, kGeneratorKind, arch.hash());
    Generator g(arch, 0);
    nn::restore(g.parameters(), ckpt);
    return g;
}

}  // namespace cipher::progan
