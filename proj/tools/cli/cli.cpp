#include "cli.hpp"

#include <CLI11.hpp>
#include <fmt/format.h>
#include <spdlog/sinks/basic_file_sink.h>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <iostream>
#include <sstream>

#include "cipher/config.hpp"
#include "cipher/dataio/dataset.hpp"
#include "cipher/dataio/loader.hpp"
#include "cipher/detector/detector.hpp"
#include "cipher/detector/features.hpp"
#include "cipher/diffusion/ddim.hpp"
#include "cipher/diffusion/train.hpp"
#include "cipher/error.hpp"
#include "cipher/eval/report.hpp"
#include "cipher/hash.hpp"
#include "cipher/progan/train.hpp"

namespace cipher::cli {

namespace fs = std::filesystem;

namespace {

class UsageError : public Error {
public:
    using Error::Error;
};

std::string num(double v) { return fmt::format("{:.10g}", v); }

// Every setting a command reads is recorded so the resolved configuration,
// defaults included, can be frozen into the run directory.
class Settings {
public:
    explicit Settings(Config cfg) : cfg_(std::move(cfg)) {}

    bool has(const std::string& key) const { return cfg_.has(key); }
    void set(const std::string& key, std::string v) { cfg_.set(key, std::move(v)); }

    std::string str(const std::string& key, const std::string& fallback) { return note(key, fallback), cfg_.get_string(key, fallback); }
    std::int64_t i64(const std::string& key, std::int64_t fallback) { return note(key, std::to_string(fallback)), cfg_.get_int(key, fallback); }
    int i32(const std::string& key, int fallback) { return static_cast<int>(i64(key, fallback)); }
    double f64(const std::string& key, double fallback) { return note(key, num(fallback)), cfg_.get_double(key, fallback); }
    bool flag(const std::string& key, bool fallback) { return note(key, fallback ? "true" : "false"), cfg_.get_bool(key, fallback); }
    std::vector<double> doubles(const std::string& key, const std::string& fallback) {
        note(key, fallback);
        if (!cfg_.has(key) && fallback.empty()) return {};
        if (cfg_.has(key) && cfg_.get_string(key).empty()) return {};
        return (cfg_.has(key) ? cfg_ : Config::parse(key + " = " + fallback)).get_doubles(key);
    }
    std::vector<std::int64_t> ints(const std::string& key, const std::string& fallback) {
        note(key, fallback);
        if (!cfg_.has(key) && fallback.empty()) return {};
        if (cfg_.has(key) && cfg_.get_string(key).empty()) return {};
        return (cfg_.has(key) ? cfg_ : Config::parse(key + " = " + fallback)).get_ints(key);
    }

    Config resolved() const {
        Config out = defaults_;
        out.merge(cfg_);
        return out;
    }

private:
    void note(const std::string& key, const std::string& fallback) {
        if (!cfg_.has(key)) defaults_.set(key, fallback);
    }

    Config cfg_;
    Config defaults_;
};

class CsvLog {
public:
    // Keeps rows whose first column is below keep_below (resume), rewrites the header otherwise.
    CsvLog(const fs::path& path, const std::string& header, std::int64_t keep_below) : path_(path) {
        std::vector<std::string> kept;
        if (keep_below > 0 && fs::exists(path)) {
            std::ifstream in(path);
            std::string line;
            std::getline(in, line);
            while (std::getline(in, line)) {
                if (!line.empty() && std::stoll(line.substr(0, line.find(','))) < keep_below) kept.push_back(line);
            }
        }
        out_.open(path, std::ios::binary | std::ios::trunc);
        if (!out_) throw IoError("cannot write " + path.string());
        out_ << header << '\n';
        for (const auto& l : kept) out_ << l << '\n';
        out_.flush();
    }

    void row(const std::string& line) {
        out_ << line << '\n';
        out_.flush();
    }

private:
    fs::path path_;
    std::ofstream out_;
};

// Run directory ownership: lock file, event log and frozen configuration.
class RunContext {
public:
    // Logger to reinstate once an error escaping a run has been reported.
    static std::shared_ptr<spdlog::logger>& pending_restore() {
        static std::shared_ptr<spdlog::logger> logger;
        return logger;
    }

    RunContext(Settings& s, std::string command) : settings_(s), command_(std::move(command)) {
        const auto precision = s.str("run.precision", "double");
        if (precision != "double") throw ConfigError("run.precision = " + precision + " is not supported (only double)");
        name_ = s.str("run.name", "default");
        if (name_.empty() || name_.find('/') != std::string::npos) throw ConfigError("run.name must be a plain directory name");
        dir_ = runs_root(s.str("run.root", "runs")) / name_;
        fs::create_directories(dir_);
        lock_ = dir_ / ".lock";
        FILE* f = std::fopen(lock_.c_str(), "wx");
        if (!f) throw Error("run '" + name_ + "' is locked by another command (" + lock_.string() + "); remove it if stale");
        std::fprintf(f, "%s\n", command_.c_str());
        std::fclose(f);

        previous_ = spdlog::default_logger();
        auto console = std::make_shared<spdlog::sinks::stderr_color_sink_mt>();
        auto file = std::make_shared<spdlog::sinks::basic_file_sink_mt>((dir_ / "events.log").string(), false);
        auto logger = std::make_shared<spdlog::logger>("cipher", spdlog::sinks_init_list{console, file});
        logger->set_pattern("[%Y-%m-%d %H:%M:%S.%e] [%l] %v");
        logger->set_level(previous_->level());
        logger->flush_on(spdlog::level::info);
        spdlog::set_default_logger(logger);
        spdlog::info("{}: run '{}' in {}", command_, name_, dir_.string());
    }

    ~RunContext() {
        // On failure keep the run logger installed so the caller's error lands in events.log too.
        if (std::uncaught_exceptions() > exceptions_at_entry_)
            pending_restore() = previous_;
        else
            spdlog::set_default_logger(previous_);
        std::error_code ec;
        fs::remove(lock_, ec);
    }

    RunContext(const RunContext&) = delete;
    RunContext& operator=(const RunContext&) = delete;

    const fs::path& dir() const { return dir_; }
    const std::string& name() const { return name_; }

    // Writes the resolved configuration; call once all settings were read.
    void freeze() const {
        const auto cfg = settings_.resolved();
        cfg.save(dir_ / "config" / (command_ + ".cfg"));
        spdlog::info("{}: config hash {}", command_, cfg.hash());
    }

private:
    Settings& settings_;
    std::string command_;
    std::string name_;
    fs::path dir_;
    fs::path lock_;
    std::shared_ptr<spdlog::logger> previous_;
    int exceptions_at_entry_ = std::uncaught_exceptions();
};

fs::path path_setting(Settings& s, const std::string& key, const fs::path& fallback) {
    return fs::path(s.str(key, fallback.string()));
}

void require_file(const fs::path& p, const std::string& what, const std::string& producer) {
    if (!fs::is_regular_file(p)) {
        throw Error(fmt::format("missing {} at {}; run `cipher {}` first (or point the setting at an existing file)", what, p.string(), producer));
    }
}

void require_dir(const fs::path& p, const std::string& what) {
    if (p.empty() || !fs::is_directory(p)) throw UsageError(fmt::format("{} directory '{}' does not exist", what, p.string()));
}

dataio::LabeledDataset real_pool(const fs::path& dir) {
    std::vector<dataio::DatasetItem> items;
    for (const auto& p : dataio::list_images(dir)) items.push_back({fs::absolute(p).lexically_normal(), dataio::kRealLabel, dataio::Split::Train});
    if (items.empty()) throw DataError("no images found in " + dir.string());
    return dataio::LabeledDataset(std::move(items));
}

std::vector<int> to_ints(const std::vector<std::int64_t>& v) { return {v.begin(), v.end()}; }

progan::ProganArch gan_arch(Settings& s, int resolution) {
    progan::ProganArch arch;
    arch.resolution = resolution;
    const int stages = progan::stage_for_resolution(resolution) + 1;
    const std::vector<int> widths{256, 256, 128, 64, 32};
    std::string def;
    for (int k = 0; k < stages; ++k) def += (k ? "," : "") + std::to_string(widths[std::min<std::size_t>(k, widths.size() - 1)]);
    arch.channels = to_ints(s.ints("gan.channels", def));
    arch.latent_dim = s.i32("gan.latent_dim", 256);
    arch.validate();
    return arch;
}

diffusion::UNetSpec unet_spec(Settings& s, int resolution) {
    diffusion::UNetSpec spec;
    spec.resolution = resolution;
    spec.base_channels = s.i32("diff.base_channels", 64);
    spec.channel_multipliers = to_ints(s.ints("diff.multipliers", "1,2,4"));
    const auto attn = s.ints("diff.attention", std::to_string(resolution / 2));
    spec.attention_resolutions = std::set<int>(attn.begin(), attn.end());
    spec.time_dim = s.i32("diff.time_dim", 0);
    spec.validate();
    return spec;
}

dataio::AugmentConfig augment_config(Settings& s) {
    dataio::AugmentConfig a;
    a.hflip_prob = s.f64("augment.hflip_prob", 0.5);
    a.jitter_strength = s.f64("augment.jitter", 0.2);
    a.geometric_transforms = s.flag("augment.geometric", false);
    a.validate();
    return a;
}

// ---- commands -------------------------------------------------------------

int cmd_prepare(Settings& s) {
    RunContext ctx(s, "prepare");
    const auto seed = static_cast<std::uint64_t>(s.i64("run.seed", 42));
    const auto real_dir = path_setting(s, "data.real_dir", "");
    const auto fake_dir = path_setting(s, "data.fake_dir", ctx.dir() / "fakes");
    const auto n = s.i64("data.n_per_class", 15000);
    const auto data_seed = static_cast<std::uint64_t>(s.i64("data.seed", static_cast<std::int64_t>(seed)));
    const auto fr = s.doubles("data.split", "0.8,0.1,0.1");
    const auto manifest = path_setting(s, "data.manifest", ctx.dir() / "data" / "manifest.tsv");
    ctx.freeze();
    require_dir(real_dir, "real image");
    require_dir(fake_dir, "fake image");
    if (n < 0) throw UsageError("data.n_per_class must be >= 0");
    if (fr.size() != 3) throw ConfigError("data.split needs three fractions (train,val,test)");
    const auto ds = dataio::build_balanced_dataset(real_dir, fake_dir, static_cast<std::size_t>(n), {fr[0], fr[1], fr[2]}, data_seed);
    dataio::write_manifest(ds, manifest);
    spdlog::info("prepare: {} items ({} train, {} val, {} test) -> {}", ds.size(), ds.count_split(dataio::Split::Train),
                 ds.count_split(dataio::Split::Val), ds.count_split(dataio::Split::Test), manifest.string());
    return kExitOk;
}

int cmd_train_gan(Settings& s) {
    RunContext ctx(s, "train-gan");
    const auto seed = s.i64("run.seed", 42);
    const auto real_dir = path_setting(s, "data.real_dir", "");
    const int resolution = s.i32("data.resolution", 64);
    const auto arch = gan_arch(s, resolution);
    progan::GanTrainConfig cfg;
    cfg.batch_size = s.i32("gan.batch_size", 16);
    cfg.lr = s.f64("gan.lr", 1e-3);
    cfg.adam_beta1 = s.f64("gan.beta1", 0.0);
    cfg.adam_beta2 = s.f64("gan.beta2", 0.99);
    cfg.iters_per_stage = s.i64("gan.iters_per_stage", 50000);
    cfg.fade_iters = s.i64("gan.fade_iters", 10000);
    cfg.gd_ratio = s.i32("gan.gd_ratio", 2);
    cfg.stages = s.i32("gan.stages", arch.num_stages());
    cfg.seed = static_cast<std::uint64_t>(s.i64("gan.seed", seed));
    cfg.checkpoint_every = s.i64("gan.checkpoint_every", 0);
    cfg.log_every = s.i64("gan.log_every", 100);
    ctx.freeze();
    require_dir(real_dir, "real image");

    const auto out = ctx.dir() / "gan";
    fs::create_directories(out);
    dataio::BatchLoader loader(real_pool(real_dir), {static_cast<std::size_t>(cfg.batch_size), true, cfg.seed, resolution, true});
    progan::ProgressiveTrainer trainer(arch, cfg);
    const auto state = out / "state.ckpt";
    if (fs::exists(state)) {
        trainer.load_state(nn::load_checkpoint(state));
        spdlog::info("train-gan: resumed at iteration {}", trainer.iteration());
    }
    CsvLog log(out / "train_log.csv", "iter,stage,fade_alpha,loss_d,loss_g,lr", trainer.iteration());
    const auto t0 = std::chrono::steady_clock::now();
    progan::ProgressiveTrainer::Hooks hooks;
    hooks.on_log = [&](const progan::GanLogRow& r) {
        log.row(fmt::format("{},{},{},{},{},{}", r.iteration, r.stage, num(r.fade_alpha), num(r.loss_d), num(r.loss_g), num(r.lr)));
        spdlog::info("train-gan: iter {}/{} stage {} alpha {:.3f} loss_d {:.4f} loss_g {:.4f}", r.iteration,
                     trainer.schedule().total_iterations(), r.stage, r.fade_alpha, r.loss_d, r.loss_g);
    };
    hooks.on_checkpoint = [&](const progan::ProgressiveTrainer& t) { nn::save_checkpoint(t.state(), state); };
    trainer.run(loader, hooks);

    const std::map<std::string, std::string> meta{{"iterations", std::to_string(trainer.iteration())},
                                                  {"d_steps", std::to_string(trainer.d_steps())},
                                                  {"g_steps", std::to_string(trainer.g_steps())}};
    nn::save_checkpoint(trainer.state(), state);
    nn::save_checkpoint(trainer.discriminator().to_checkpoint(meta), out / "discriminator.ckpt");
    nn::save_checkpoint(trainer.generator().to_checkpoint(meta), out / "generator.ckpt");
    {
        nn::NoGradGuard no_grad;
        std::mt19937_64 rng(cfg.seed);
        std::normal_distribution<double> normal;
        nn::Tensor z(nn::Shape{16, arch.latent_dim});
        for (auto& v : z.data()) v = normal(rng);
        const auto img = trainer.generator().forward(nn::Var(z), progan::ProgressiveStage::stable(arch.num_stages() - 1));
        dataio::write_png(dataio::make_grid(img.value(), 4), out / "samples.png");
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    spdlog::info("train-gan: done, {} D steps, {} G steps in {:.1f}s -> {}", trainer.d_steps(), trainer.g_steps(), secs, out.string());
    return kExitOk;
}

int cmd_train_diffusion(Settings& s) {
    RunContext ctx(s, "train-diffusion");
    const auto seed = s.i64("run.seed", 42);
    const auto real_dir = path_setting(s, "data.real_dir", "");
    const int resolution = s.i32("data.resolution", 64);
    const auto spec = unet_spec(s, resolution);
    diffusion::DiffusionTrainConfig cfg;
    cfg.iterations = s.i64("diff.iterations", 100000);
    cfg.batch_size = s.i32("diff.batch_size", 32);
    cfg.lr = s.f64("diff.lr", 2e-4);
    cfg.T = s.i32("diff.T", 1000);
    cfg.beta_start = s.f64("diff.beta_start", 1e-4);
    cfg.beta_end = s.f64("diff.beta_end", 0.02);
    cfg.seed = static_cast<std::uint64_t>(s.i64("diff.seed", seed));
    cfg.checkpoint_every = s.i64("diff.checkpoint_every", 0);
    cfg.log_every = s.i64("diff.log_every", 100);
    cfg.grid_samples = s.i32("diff.grid_samples", 16);
    cfg.grid_steps = s.i32("diff.grid_steps", 50);
    cfg.validate();
    ctx.freeze();
    require_dir(real_dir, "real image");

    const auto out = ctx.dir() / "diffusion";
    fs::create_directories(out);
    std::int64_t resume = 0;
    if (fs::exists(out / "state.ckpt")) resume = std::stoll(nn::load_checkpoint(out / "state.ckpt").meta_at("iterations"));
    CsvLog log(out / "train_log.csv", "iter,loss,lr", resume);
    dataio::BatchLoader loader(real_pool(real_dir), {static_cast<std::size_t>(cfg.batch_size), true, cfg.seed, resolution, true});
    const auto t0 = std::chrono::steady_clock::now();
    diffusion::DiffusionHooks hooks;
    hooks.on_log = [&](const diffusion::DiffusionLogRow& r) {
        log.row(fmt::format("{},{},{}", r.iteration, num(r.loss), num(r.lr)));
        spdlog::info("train-diffusion: iter {}/{} loss {:.5f} lr {:.3g}", r.iteration, cfg.iterations, r.loss, r.lr);
    };
    const auto result = diffusion::train_diffusion(spec, cfg, loader, out, hooks);
    nn::save_checkpoint(result.checkpoint, out / "unet.ckpt");
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    spdlog::info("train-diffusion: done in {:.1f}s -> {}", secs, (out / "unet.ckpt").string());
    return kExitOk;
}

int cmd_generate(Settings& s) {
    RunContext ctx(s, "generate");
    const auto seed = s.i64("run.seed", 42);
    const auto ckpt_path = path_setting(s, "gen.checkpoint", ctx.dir() / "diffusion" / "unet.ckpt");
    const auto out = path_setting(s, "gen.out_dir", ctx.dir() / "fakes");
    const auto count = s.i64("gen.count", 15000);
    diffusion::DdimSamplerConfig sc;
    sc.num_steps = s.i32("ddim.steps", 200);
    sc.batch_size = s.i32("ddim.batch_size", 32);
    const auto ddim_seed = static_cast<std::uint64_t>(s.i64("ddim.seed", seed));
    ctx.freeze();
    require_file(ckpt_path, "diffusion checkpoint", "train-diffusion");
    if (count < 0) throw UsageError("gen.count must be >= 0");

    const auto bytes = [&] {
        std::ifstream f(ckpt_path, std::ios::binary);
        return std::string(std::istreambuf_iterator<char>(f), {});
    }();
    const auto ckpt = nn::deserialize_checkpoint(bytes);
    const auto model = diffusion::UNet::from_checkpoint(ckpt);
    const auto sched = diffusion::schedule_from_checkpoint(ckpt);
    fs::create_directories(out);
    const auto t0 = std::chrono::steady_clock::now();
    diffusion::ddim_sample_stream(model, sched, sc, count, ddim_seed, [&](std::int64_t first, const nn::Tensor& images) {
        for (std::int64_t j = 0; j < images.dim(0); ++j) {
            dataio::write_png(dataio::to_raster(images, j), out / fmt::format("fake_{:05d}.png", first + j));
        }
        spdlog::info("generate: {}/{} images", first + images.dim(0), count);
    });
    std::ofstream m(out / "sampling_manifest.txt", std::ios::binary);
    m << "checkpoint = " << fs::absolute(ckpt_path).lexically_normal().string() << "\n"
      << "checkpoint_hash = " << hash_hex(bytes) << "\n"
      << "count = " << count << "\n"
      << "seed = " << ddim_seed << "\n"
      << "steps = " << sc.num_steps << "\n"
      << "sigma = 0\n"
      << "T = " << sched.T << "\n";
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    spdlog::info("generate: {} images in {:.1f}s -> {}", count, secs, out.string());
    return kExitOk;
}

detector::FinetuneConfig finetune_config(Settings& s, std::int64_t seed) {
    detector::FinetuneConfig cfg;
    cfg.epochs = s.i32("ft.epochs", 50);
    cfg.lr = s.f64("ft.lr", 1e-4);
    cfg.batch_size = s.i32("ft.batch_size", 64);
    cfg.label_smoothing = s.f64("ft.label_smoothing", 0.1);
    cfg.dropout_p = s.f64("ft.dropout", 0.2);
    cfg.freeze_backbone = s.flag("ft.freeze_backbone", false);
    cfg.seed = static_cast<std::uint64_t>(s.i64("ft.seed", seed));
    cfg.augment = augment_config(s);
    return cfg;
}

int cmd_finetune(Settings& s) {
    RunContext ctx(s, "finetune");
    const auto seed = s.i64("run.seed", 42);
    const auto init = path_setting(s, "ft.init", ctx.dir() / "gan" / "discriminator.ckpt");
    const auto manifest = path_setting(s, "data.manifest", ctx.dir() / "data" / "manifest.tsv");
    const int resolution = s.i32("data.resolution", 64);
    auto cfg = finetune_config(s, seed);
    cfg.resolution = resolution;
    ctx.freeze();
    require_file(init, "discriminator checkpoint", "train-gan");
    require_file(manifest, "dataset manifest", "prepare");

    const auto out = ctx.dir() / "detector";
    fs::create_directories(out);
    CsvLog log(out / "finetune_log.csv", "epoch,train_loss,train_acc,val_loss,val_acc", 0);
    const auto t0 = std::chrono::steady_clock::now();
    const auto result = detector::finetune(nn::load_checkpoint(init), dataio::read_manifest(manifest), cfg, [&](const detector::EpochLog& e) {
        log.row(fmt::format("{},{},{},{},{}", e.epoch, num(e.train_loss), num(e.train_accuracy), num(e.val_loss), num(e.val_accuracy)));
        spdlog::info("finetune: epoch {}/{} train loss {:.4f} acc {:.4f} val loss {:.4f} acc {:.4f}", e.epoch, cfg.epochs, e.train_loss,
                     e.train_accuracy, e.val_loss, e.val_accuracy);
    });
    for (const auto& sk : result.skipped) spdlog::warn("finetune: skipped unreadable {}", sk);
    nn::save_checkpoint(result.final_detector, out / "detector.ckpt");
    nn::save_checkpoint(result.best_detector, out / "detector_best.ckpt");
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    spdlog::info("finetune: best epoch {} in {:.1f}s -> {}", result.best_epoch, secs, out.string());
    return kExitOk;
}

std::vector<fs::path> detector_paths(Settings& s, const RunContext& ctx) {
    const auto single = path_setting(s, "detect.checkpoint", ctx.dir() / "detector" / "detector_best.ckpt");
    const auto list = s.str("detect.checkpoints", "");
    std::vector<fs::path> out;
    if (list.empty()) {
        out.push_back(single);
    } else {
        std::stringstream ss(list);
        std::string item;
        while (std::getline(ss, item, ',')) {
            if (!item.empty()) out.push_back(item);
        }
    }
    return out;
}

std::vector<fs::path> expand_images(const std::vector<std::string>& inputs) {
    std::vector<fs::path> out;
    for (const auto& in : inputs) {
        const fs::path p(in);
        if (fs::is_directory(p)) {
            for (const auto& f : dataio::list_images(p)) out.push_back(f);
        } else if (fs::is_regular_file(p)) {
            out.push_back(p);
        } else {
            throw UsageError("no such image or directory: " + in);
        }
    }
    return out;
}

int cmd_detect(Settings& s, const std::vector<std::string>& inputs) {
    RunContext ctx(s, "detect");
    const auto paths = detector_paths(s, ctx);
    const double threshold = s.f64("detect.threshold", 0.5);
    const auto weights = s.doubles("ensemble.weights", "");
    const auto depths = to_ints(s.ints("detect.features", ""));
    const auto unet_depths = to_ints(s.ints("detect.unet_features", ""));
    const auto unet_path = path_setting(s, "gen.checkpoint", ctx.dir() / "diffusion" / "unet.ckpt");
    const auto t_probe_cfg = s.i32("detect.t_probe", 0);
    ctx.freeze();
    if (inputs.empty()) throw UsageError("detect needs --images <file|dir>...");
    std::vector<detector::Detector> members;
    for (const auto& p : paths) {
        require_file(p, "detector checkpoint", "finetune");
        members.push_back(detector::Detector::from_checkpoint(nn::load_checkpoint(p)));
    }
    const int res = members.front().resolution();
    std::vector<std::string> ids;
    std::vector<dataio::ImageTensor> images;
    for (const auto& f : expand_images(inputs)) {
        auto img = dataio::load_image(f, res);
        if (!img) continue;
        ids.push_back(f.string());
        images.push_back(std::move(*img));
    }
    if (images.empty()) throw DataError("detect: no readable images");
    const auto batch = dataio::ImageTensor::stack(images);
    std::vector<std::vector<double>> probs;
    for (const auto& m : members) probs.push_back(m.probabilities(batch));
    const auto p = detector::ensemble_score(probs, weights);
    std::cout << "image\tprobability_fake\tdecision\n";
    for (std::size_t i = 0; i < ids.size(); ++i) {
        const auto score = detector::make_score(p[i], threshold);
        std::cout << ids[i] << '\t' << fmt::format("{:.6f}", score.probability) << '\t' << detector::decision_name(score.decision) << '\n';
    }
    if (!depths.empty()) {
        const auto out = ctx.dir() / "detector" / "features.csv";
        fs::create_directories(out.parent_path());
        detector::write_features_csv(detector::extract_features(batch, members.front(), depths), ids, out);
        spdlog::info("detect: discriminator features -> {}", out.string());
    }
    if (!unet_depths.empty()) {
        require_file(unet_path, "diffusion checkpoint", "train-diffusion");
        const auto ckpt = nn::load_checkpoint(unet_path);
        const auto unet = diffusion::UNet::from_checkpoint(ckpt);
        const int t_probe = t_probe_cfg > 0 ? t_probe_cfg : diffusion::schedule_from_checkpoint(ckpt).T / 2;
        const auto out = ctx.dir() / "diffusion" / "features.csv";
        detector::write_features_csv(detector::extract_features(batch, unet, t_probe, unet_depths), ids, out);
        spdlog::info("detect: u-net features (t={}) -> {}", t_probe, out.string());
    }
    return kExitOk;
}

std::string utc_stamp() {
    const auto now = std::chrono::system_clock::now();
    const auto t = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&t, &tm);
    const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count() % 1000;
    return fmt::format("{:04d}{:02d}{:02d}T{:02d}{:02d}{:02d}.{:03d}Z", tm.tm_year + 1900, tm.tm_mon + 1, tm.tm_mday, tm.tm_hour,
                       tm.tm_min, tm.tm_sec, ms);
}

int cmd_evaluate(Settings& s) {
    RunContext ctx(s, "evaluate");
    const auto path = path_setting(s, "detect.checkpoint", ctx.dir() / "detector" / "detector_best.ckpt");
    const double threshold = s.f64("detect.threshold", 0.5);
    const auto registry = path_setting(s, "eval.registry", "");
    const auto manifest = path_setting(s, "data.manifest", ctx.dir() / "data" / "manifest.tsv");
    const auto method = s.str("eval.method", "CIPHER");
    const auto out_root = path_setting(s, "eval.out_dir", ctx.dir() / "reports");
    const auto cfg_hash = s.resolved().hash();
    ctx.freeze();
    require_file(path, "detector checkpoint", "finetune");

    std::vector<eval::NamedCorpus> corpora;
    if (!registry.empty()) {
        if (!fs::is_regular_file(registry)) throw UsageError("corpus registry '" + registry.string() + "' does not exist");
        for (const auto& e : eval::read_registry(registry)) {
            require_file(e.manifest, "manifest for corpus '" + e.name + "'", "prepare");
            auto ds = dataio::read_manifest(e.manifest);
            corpora.push_back({e.name, e.split ? ds.subset(*e.split) : ds});
        }
    } else {
        require_file(manifest, "dataset manifest", "prepare");
        corpora.push_back({"held-out", dataio::read_manifest(manifest).subset(dataio::Split::Test)});
    }
    const auto ckpt = nn::load_checkpoint(path);
    const auto det = detector::Detector::from_checkpoint(ckpt);
    auto report = eval::evaluate_cross(corpora, det, threshold);
    if (report.corpora.empty()) throw DataError("evaluate: every corpus was empty");
    report.method = method;
    report.detector_id = "det-" + hash_hex(nn::serialize_tensors(ckpt.tensors) + ckpt.meta_at("mbstd_constant")).substr(0, 12);
    report.config_hash = cfg_hash;
    report.timestamp = utc_stamp();
    const auto csv = eval::write_report(report, out_root);
    std::cout << eval::emit_markdown(eval::make_table({report}));
    spdlog::info("evaluate: average acc {} f1 {} -> {}", eval::format_percent(report.average.accuracy), eval::format_percent(report.average.f1),
                 csv.string());
    return kExitOk;
}

// Turns "--key value" / "--key=value" leftovers into config overrides.
Config parse_overrides(const std::vector<std::string>& extras) {
    Config out;
    for (std::size_t i = 0; i < extras.size(); ++i) {
        const auto& a = extras[i];
        if (a.rfind("--", 0) != 0 || a.size() < 3) throw UsageError("unexpected argument '" + a + "'");
        auto key = a.substr(2);
        std::string value;
        if (const auto eq = key.find('='); eq != std::string::npos) {
            value = key.substr(eq + 1);
            key = key.substr(0, eq);
        } else {
            if (i + 1 >= extras.size()) throw UsageError("option --" + key + " needs a value");
            value = extras[++i];
        }
        out.set(key, value);
    }
    return out;
}

void report_failure(const std::string& command, const char* what) {
    spdlog::error("{}: {}", command, what);
    if (auto& restore = RunContext::pending_restore()) {
        spdlog::set_default_logger(restore);
        restore.reset();
    }
}

}  // namespace

fs::path runs_root(const std::string& configured) {
    if (const char* env = std::getenv("CIPHER_RUNS_DIR"); env && *env) return fs::path(env);
    return fs::path(configured);
}

int run(const std::vector<std::string>& args) {
    CLI::App app{"cipher: progressive-GAN discriminator reuse for diffusion-fake detection"};
    app.require_subcommand(1, 1);
    std::string config_file;
    std::string real, fake, registry;
    std::int64_t n = -1;
    std::vector<std::string> images;

    const std::vector<std::pair<std::string, std::string>> commands{
        {"prepare", "build a balanced real/fake manifest"},
        {"train-gan", "train the progressive GAN"},
        {"train-diffusion", "train the noise-prediction U-Net"},
        {"generate", "sample fakes with DDIM"},
        {"finetune", "fine-tune the discriminator as a detector"},
        {"detect", "score images"},
        {"evaluate", "evaluate on labeled corpora and write reports"}};
    std::map<std::string, CLI::App*> subs;
    for (const auto& [name, desc] : commands) {
        auto* sub = app.add_subcommand(name, desc);
        sub->add_option("--config", config_file, "key = value configuration file");
        sub->allow_extras();
        subs[name] = sub;
    }
    subs["prepare"]->add_option("--real", real, "directory of real images");
    subs["prepare"]->add_option("--fake", fake, "directory of fake images");
    subs["prepare"]->add_option("--n", n, "images per class");
    subs["detect"]->add_option("--images", images, "image files or directories")->expected(1, -1);
    subs["evaluate"]->add_option("--registry", registry, "corpus registry (name<TAB>manifest[<TAB>split])");

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e) == 0 ? kExitOk : kExitUsage;
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e) == 0 ? kExitOk : kExitUsage;
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    }

    CLI::App* sub = app.get_subcommands().front();
    const std::string name = sub->get_name();
    try {
        Config cfg;
        if (!config_file.empty()) {
            if (!fs::is_regular_file(config_file)) throw UsageError("config file '" + config_file + "' does not exist");
            cfg = Config::load(config_file);
        }
        cfg.merge(parse_overrides(sub->remaining()));
        if (!real.empty()) cfg.set("data.real_dir", real);
        if (!fake.empty()) cfg.set("data.fake_dir", fake);
        if (n >= 0) cfg.set("data.n_per_class", std::to_string(n));
        if (!registry.empty()) cfg.set("eval.registry", registry);
        Settings settings(std::move(cfg));

        if (name == "prepare") return cmd_prepare(settings);
        if (name == "train-gan") return cmd_train_gan(settings);
        if (name == "train-diffusion") return cmd_train_diffusion(settings);
        if (name == "generate") return cmd_generate(settings);
        if (name == "finetune") return cmd_finetune(settings);
        if (name == "detect") return cmd_detect(settings, images);
        if (name == "evaluate") return cmd_evaluate(settings);
        throw UsageError("unknown command " + name);
    } catch (const UsageError& e) {
        report_failure(name, e.what());
        return kExitUsage;
    } catch (const std::exception& e) {
        report_failure(name, e.what());
        return kExitError;
    }
}

}  // namespace cipher::cli
