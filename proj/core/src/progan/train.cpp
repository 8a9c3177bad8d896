#include "cipher/progan/train.hpp"

#include <sstream>

#include "cipher/error.hpp"
#include "cipher/hash.hpp"
#include "cipher/progan/losses.hpp"

namespace cipher::progan {

namespace {

std::string rng_to_string(const std::mt19937_64& rng) {
    std::ostringstream os;
    os << rng;
    return os.str();
}

void rng_from_string(std::mt19937_64& rng, const std::string& s) {
    std::istringstream is(s);
    is >> rng;
    if (!is) throw CheckpointError("corrupt rng state in training checkpoint");
}

void save_adam(nn::Checkpoint& ckpt, nn::Adam& opt, const std::string& prefix) {
    const auto& params = opt.parameters();
    for (std::size_t i = 0; i < params.size(); ++i) {
        ckpt.tensors.emplace_back(prefix + ".m." + params[i].name, opt.first_moments()[i]);
        ckpt.tensors.emplace_back(prefix + ".v." + params[i].name, opt.second_moments()[i]);
    }
    ckpt.meta[prefix + ".steps"] = std::to_string(opt.steps());
}

void load_adam(const nn::Checkpoint& ckpt, nn::Adam& opt, const std::string& prefix) {
    const auto& params = opt.parameters();
    for (std::size_t i = 0; i < params.size(); ++i) {
        opt.first_moments()[i] = ckpt.tensor(prefix + ".m." + params[i].name);
        opt.second_moments()[i] = ckpt.tensor(prefix + ".v." + params[i].name);
    }
    opt.set_steps(std::stoll(ckpt.meta_at(prefix + ".steps")));
}

}  // namespace

void GanTrainConfig::validate() const {
    if (batch_size < 1 || iters_per_stage < 1 || gd_ratio < 1 || stages < 1 || lr <= 0.0) {
        throw ConfigError("gan config: batch size, iterations, ratio, stages and lr must be positive");
    }
    if (fade_iters < 0 || fade_iters > iters_per_stage) throw ConfigError("gan.fade_iters must lie in [0, iters_per_stage]");
    if (log_every < 1 || checkpoint_every < 0) throw ConfigError("gan logging/checkpoint intervals invalid");
}

nn::Tensor downsample_to(const nn::Tensor& images, int resolution) {
    nn::Var v(images);
    while (v.dim(2) > resolution) v = nn::avg_pool2(v);
    if (v.dim(2) != resolution) throw ShapeError("cannot downsample " + nn::shape_str(images.shape()) + " to " + std::to_string(resolution));
    return v.value();
}

ProgressiveTrainer::ProgressiveTrainer(ProganArch arch, GanTrainConfig cfg)
    : arch_((arch.validate(), std::move(arch))),
      cfg_((cfg.validate(), cfg)),
      schedule_([&] {
          const int last = arch_.num_stages() - 1;
          if (cfg_.stages > arch_.num_stages()) {
              throw ConfigError("gan.stages = " + std::to_string(cfg_.stages) + " exceeds the " +
                                std::to_string(arch_.num_stages()) + " stages of a " + std::to_string(arch_.resolution) +
                                "px network");
          }
          return StageSchedule(last - cfg_.stages + 1, last, cfg_.iters_per_stage, cfg_.fade_iters);
      }()),
      disc_(arch_, cfg_.seed * 2 + 1),
      gen_(arch_, cfg_.seed * 2 + 2),
      opt_d_(disc_.parameters(), {cfg_.adam_beta1, cfg_.adam_beta2, 1e-8}),
      opt_g_(gen_.parameters(), {cfg_.adam_beta1, cfg_.adam_beta2, 1e-8}),
      rng_(cfg_.seed) {}

double ProgressiveTrainer::lr_at(std::int64_t iteration) const {
    return nn::linear_decay_lr(cfg_.lr, iteration, schedule_.total_iterations());
}

dataio::ImageTensor ProgressiveTrainer::next_real(dataio::BatchLoader& data) {
    for (int attempt = 0; attempt < 2; ++attempt) {
        if (auto batch = data.next()) return batch->images;
        data.start_epoch(++epoch_);
    }
    throw DataError("gan training: data source produced no images");
}

nn::Tensor ProgressiveTrainer::sample_latents(std::int64_t n) {
    nn::Tensor z(nn::Shape{n, arch_.latent_dim});
    std::normal_distribution<double> normal(0.0, 1.0);
    for (auto& v : z.data()) v = normal(rng_);
    return z;
}

GanLogRow ProgressiveTrainer::step(dataio::BatchLoader& data) {
    if (finished()) throw Error("gan training already finished");
    const auto stage = schedule_.at(iteration_);
    const double lr = lr_at(iteration_);
    const auto real_images = next_real(data);
    if (real_images.resolution() < stage.resolution) {
        throw ShapeError("training data resolution " + std::to_string(real_images.resolution()) +
                         " is below stage resolution " + std::to_string(stage.resolution));
    }
    const nn::Var real(downsample_to(real_images.tensor(), stage.resolution));
    const auto n = real.dim(0);
    const auto d_params = disc_.parameters();
    const auto g_params = gen_.parameters();

    GanLogRow row;
    row.iteration = iteration_;
    row.stage = stage.index;
    row.fade_alpha = stage.fade_alpha;
    row.lr = lr;

    {
        nn::Var fake;
        {
            nn::NoGradGuard no_grad;
            fake = nn::Var(gen_.forward(nn::Var(sample_latents(n)), stage).value());
        }
        nn::zero_grads(d_params);
        const auto losses = mse_adv_losses(disc_.forward(real, stage), disc_.forward(fake, stage));
        nn::backward(losses.discriminator);
        opt_d_.step(lr);
        ++d_steps_;
        row.loss_d = losses.discriminator.value()[0];
    }

    nn::set_trainable(d_params, false);
    for (int r = 0; r < cfg_.gd_ratio; ++r) {
        nn::zero_grads(g_params);
        const auto fake = gen_.forward(nn::Var(sample_latents(n)), stage);
        const auto d_fake = disc_.forward(fake, stage);
        const auto losses = mse_adv_losses(d_fake, d_fake);
        nn::backward(losses.generator);
        opt_g_.step(lr);
        ++g_steps_;
        row.loss_g = losses.generator.value()[0];
    }
    nn::set_trainable(d_params, true);
    nn::zero_grads(d_params);

    ++iteration_;
    return row;
}

void ProgressiveTrainer::run(dataio::BatchLoader& data, const Hooks& hooks) {
    while (!finished()) {
        const auto row = step(data);
        const bool last = finished();
        if (hooks.on_log && (row.iteration % cfg_.log_every == 0 || last)) hooks.on_log(row);
        if (hooks.on_checkpoint && cfg_.checkpoint_every > 0 && (iteration_ % cfg_.checkpoint_every == 0) && !last) {
            hooks.on_checkpoint(*this);
        }
    }
}

nn::Checkpoint ProgressiveTrainer::state() const {
    nn::Checkpoint ckpt;
    ckpt.kind = kGanStateKind;
    ckpt.arch_hash = arch_.hash();
    ckpt.meta["arch.resolution"] = std::to_string(arch_.resolution);
    ckpt.meta["iteration"] = std::to_string(iteration_);
    ckpt.meta["d_steps"] = std::to_string(d_steps_);
    ckpt.meta["g_steps"] = std::to_string(g_steps_);
    ckpt.meta["epoch"] = std::to_string(epoch_);
    ckpt.meta["rng"] = rng_to_string(rng_);
    ckpt.tensors = nn::snapshot(disc_.parameters(), "d.");
    for (auto& t : nn::snapshot(gen_.parameters(), "g.")) ckpt.tensors.push_back(std::move(t));
    auto& self = const_cast<ProgressiveTrainer&>(*this);
    save_adam(ckpt, self.opt_d_, "adam_d");
    save_adam(ckpt, self.opt_g_, "adam_g");
    return ckpt;
}

void ProgressiveTrainer::load_state(const nn::Checkpoint& ckpt) {
    nn::expect_compatible(ckpt, kGanStateKind, arch_.hash());
    nn::restore(disc_.parameters(), ckpt, "d.");
    nn::restore(gen_.parameters(), ckpt, "g.");
    load_adam(ckpt, opt_d_, "adam_d");
    load_adam(ckpt, opt_g_, "adam_g");
    iteration_ = std::stoll(ckpt.meta_at("iteration"));
    d_steps_ = std::stoll(ckpt.meta_at("d_steps"));
    g_steps_ = std::stoll(ckpt.meta_at("g_steps"));
    epoch_ = std::stoll(ckpt.meta_at("epoch"));
    rng_from_string(rng_, ckpt.meta_at("rng"));
}

GanTrainResult train_progressive(const ProganArch& arch, const GanTrainConfig& cfg, dataio::BatchLoader& data) {
    ProgressiveTrainer trainer(arch, cfg);
    GanTrainResult result;
    trainer.run(data, {[&](const GanLogRow& row) { result.log.push_back(row); }, {}});
    const std::map<std::string, std::string> meta{
        {"iterations", std::to_string(trainer.iteration())},
        {"final_stage", std::to_string(trainer.schedule().last_stage())}};
    result.discriminator = trainer.discriminator().to_checkpoint(meta);
    result.generator = trainer.generator().to_checkpoint(meta);
    result.d_steps = trainer.d_steps();
    result.g_steps = trainer.g_steps();
    return result;
}

}  // namespace cipher::progan
