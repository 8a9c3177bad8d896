#include "cipher/diffusion/train.hpp"

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <sstream>

#include "cipher/error.hpp"

namespace cipher::diffusion {

namespace {

std::string fmt_double(double v) { return fmt::format("{:.17g}", v); }

}  // namespace

void DiffusionTrainConfig::validate() const {
    if (iterations < 0 || batch_size < 1 || lr <= 0.0 || T < 1) {
        throw ConfigError("diffusion config: iterations, batch size, lr and T must be positive");
    }
    if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0)) throw ConfigError("diffusion beta range must lie in (0, 1)");
    if (log_every < 1 || checkpoint_every < 0 || grid_samples < 0 || grid_steps < 1) throw ConfigError("diffusion logging settings invalid");
}

NoiseDraw draw_noise(const nn::Shape& batch_shape, int T, std::mt19937_64& rng) {
    NoiseDraw d;
    std::uniform_int_distribution<int> ut(1, T);
    std::normal_distribution<double> normal(0.0, 1.0);
    d.t.resize(static_cast<std::size_t>(batch_shape.at(0)));
    for (auto& t : d.t) t = ut(rng);
    d.eps = nn::Tensor(batch_shape);
    for (auto& v : d.eps.data()) v = normal(rng);
    return d;
}

nn::Var ddpm_loss(const EpsModel& model, const nn::Tensor& x0, const NoiseSchedule& sched, const NoiseDraw& draw) {
    const auto x_t = q_sample(x0, draw.t, draw.eps, sched);
    const auto pred = model(nn::Var(x_t), draw.t);
    if (pred.shape() != x0.shape()) throw ShapeError("ddpm_loss: model output " + nn::shape_str(pred.shape()) + " != input shape");
    return nn::mse_loss(pred, draw.eps);
}

nn::Var ddpm_loss(const EpsModel& model, const nn::Tensor& x0, const NoiseSchedule& sched, std::mt19937_64& rng) {
    return ddpm_loss(model, x0, sched, draw_noise(x0.shape(), sched.T, rng));
}

DiffusionTrainer::DiffusionTrainer(UNetSpec spec, DiffusionTrainConfig cfg)
    : spec_((spec.validate(), std::move(spec))),
      cfg_((cfg.validate(), cfg)),
      sched_(cfg_.schedule()),
      model_(spec_, cfg_.seed * 2 + 3),
      opt_(model_.parameters(), {0.9, 0.999, 1e-8}),
      rng_(cfg_.seed) {}

DiffusionLogRow DiffusionTrainer::step(dataio::BatchLoader& data) {
    if (finished()) throw Error("diffusion training already finished");
    std::optional<dataio::Batch> batch = data.next();
    if (!batch) {
        data.start_epoch(++epoch_);
        batch = data.next();
        if (!batch) throw DataError("diffusion training: data source produced no images");
    }
    if (batch->images.resolution() != spec_.resolution) {
        throw ShapeError("diffusion training: data resolution " + std::to_string(batch->images.resolution()) +
                         " != model resolution " + std::to_string(spec_.resolution));
    }
    DiffusionLogRow row;
    row.iteration = iteration_;
    row.lr = nn::cosine_annealed_lr(cfg_.lr, iteration_, cfg_.iterations);
    const auto params = model_.parameters();
    nn::zero_grads(params);
    const EpsModel fn = [this](const nn::Var& x, std::span<const int> t) { return model_.forward(x, t); };
    const auto loss = ddpm_loss(fn, batch->images.tensor(), sched_, rng_);
    nn::backward(loss);
    opt_.step(row.lr);
    row.loss = loss.value()[0];
    ++iteration_;
    return row;
}

nn::Checkpoint DiffusionTrainer::checkpoint() const {
    return model_.to_checkpoint({{"schedule.T", std::to_string(sched_.T)},
                                 {"schedule.beta_start", fmt_double(cfg_.beta_start)},
                                 {"schedule.beta_end", fmt_double(cfg_.beta_end)},
                                 {"iterations", std::to_string(iteration_)}});
}

nn::Checkpoint DiffusionTrainer::state() const {
    auto ckpt = checkpoint();
    ckpt.kind = kDiffusionStateKind;
    std::ostringstream rng;
    rng << rng_;
    ckpt.meta["rng"] = rng.str();
    ckpt.meta["epoch"] = std::to_string(epoch_);
    ckpt.meta["adam.steps"] = std::to_string(opt_.steps());
    auto& opt = const_cast<nn::Adam&>(opt_);
    const auto& params = opt.parameters();
    for (std::size_t i = 0; i < params.size(); ++i) {
        ckpt.tensors.emplace_back("adam.m." + params[i].name, opt.first_moments()[i]);
        ckpt.tensors.emplace_back("adam.v." + params[i].name, opt.second_moments()[i]);
    }
    return ckpt;
}

void DiffusionTrainer::load_state(const nn::Checkpoint& ckpt) {
    nn::expect_compatible(ckpt, kDiffusionStateKind, spec_.hash());
    nn::restore(model_.parameters(), ckpt);
    const auto& params = opt_.parameters();
    for (std::size_t i = 0; i < params.size(); ++i) {
        opt_.first_moments()[i] = ckpt.tensor("adam.m." + params[i].name);
        opt_.second_moments()[i] = ckpt.tensor("adam.v." + params[i].name);
    }
    opt_.set_steps(std::stoll(ckpt.meta_at("adam.steps")));
    iteration_ = std::stoll(ckpt.meta_at("iterations"));
    epoch_ = std::stoll(ckpt.meta_at("epoch"));
    std::istringstream rng(ckpt.meta_at("rng"));
    rng >> rng_;
    if (!rng) throw CheckpointError("corrupt rng state in diffusion state");
}

NoiseSchedule schedule_from_checkpoint(const nn::Checkpoint& ckpt) {
    return make_schedule(std::stoi(ckpt.meta_at("schedule.T")), std::stod(ckpt.meta_at("schedule.beta_start")),
                         std::stod(ckpt.meta_at("schedule.beta_end")));
}

DiffusionTrainResult train_diffusion(const UNetSpec& spec, const DiffusionTrainConfig& cfg, dataio::BatchLoader& data,
                                     const std::filesystem::path& out_dir, const DiffusionHooks& hooks) {
    DiffusionTrainer trainer(spec, cfg);
    const auto state_path = out_dir.empty() ? std::filesystem::path{} : out_dir / "state.ckpt";
    if (!out_dir.empty()) {
        std::filesystem::create_directories(out_dir);
        if (std::filesystem::exists(state_path)) {
            trainer.load_state(nn::load_checkpoint(state_path));
            spdlog::info("diffusion: resumed at iteration {}", trainer.iteration());
        }
    }
    auto write_grid = [&](const std::string& tag) {
        if (out_dir.empty() || cfg.grid_samples == 0) return;
        DdimSamplerConfig sc;
        sc.num_steps = std::min(cfg.grid_steps, cfg.T);
        const auto images = ddim_sample(trainer.model(), trainer.schedule(), sc, cfg.grid_samples, cfg.seed);
        dataio::write_png(dataio::make_grid(images.tensor(), 4), out_dir / ("grid_" + tag + ".png"));
    };

    DiffusionTrainResult result;
    while (!trainer.finished()) {
        const auto row = trainer.step(data);
        const bool last = trainer.finished();
        if (row.iteration % cfg.log_every == 0 || last) {
            result.log.push_back(row);
            if (hooks.on_log) hooks.on_log(row);
        }
        if (!out_dir.empty() && cfg.checkpoint_every > 0 && trainer.iteration() % cfg.checkpoint_every == 0 && !last) {
            const auto tag = fmt::format("{:07d}", trainer.iteration());
            nn::save_checkpoint(trainer.checkpoint(), out_dir / ("unet_" + tag + ".ckpt"));
            nn::save_checkpoint(trainer.state(), state_path);
            write_grid(tag);
        }
    }
    result.checkpoint = trainer.checkpoint();
    if (!out_dir.empty()) {
        nn::save_checkpoint(trainer.state(), state_path);
        write_grid("final");
    }
    return result;
}

}  // namespace cipher::diffusion
