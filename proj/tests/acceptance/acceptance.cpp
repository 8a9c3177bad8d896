// Acceptance harness: one PASS/FAIL line per criterion.
//   cipher_acceptance [--skip-e2e] [--work DIR]
// --skip-e2e reports criteria 8 and 9 as SKIP instead of running two desk pipelines.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "cipher/dataio/dataset.hpp"
#include "cipher/dataio/toy_faces.hpp"
#include "cipher/detector/detector.hpp"
#include "cipher/diffusion/ddim.hpp"
#include "cipher/diffusion/schedule.hpp"
#include "cipher/diffusion/train.hpp"
#include "cipher/diffusion/unet.hpp"
#include "cipher/eval/metrics.hpp"
#include "cipher/eval/report.hpp"
#include "cipher/nn/checkpoint.hpp"
#include "cipher/nn/ops.hpp"
#include "cipher/progan/layers.hpp"
#include "cipher/progan/losses.hpp"
#include "cipher/progan/networks.hpp"
#include "cipher/progan/stage.hpp"
#include "cli.hpp"
#include "support.hpp"

namespace fs = std::filesystem;
using namespace cipher;
using nn::Tensor;
using nn::Var;

namespace {

struct Outcome {
    enum Status { Pass, Fail, Skip } status = Fail;
    std::string detail;
};

Outcome pass(std::string d) { return {Outcome::Pass, std::move(d)}; }
Outcome fail(std::string d) { return {Outcome::Fail, std::move(d)}; }
Outcome verdict(bool ok, std::string d) { return {ok ? Outcome::Pass : Outcome::Fail, std::move(d)}; }

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), {});
}

// ---- 1 ---------------------------------------------------------------------

Outcome c1_scope() {
    const auto readme = slurp(fs::path(CIPHER_SOURCE_DIR) / "README.md");
    std::string lower(readme);
    std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
    const bool stated = lower.find("not reproduced") != std::string::npos;
    return verdict(stated, stated ? "published cross-corpus numbers are not reproduced; README says so and the property suite below substitutes"
                                  : "README.md does not state that the published numbers are not reproduced");
}

// ---- 2 ---------------------------------------------------------------------

Outcome c2_forward_process() {
    const auto t0 = std::chrono::steady_clock::now();
    const auto sched = diffusion::make_schedule(1000, 1e-4, 0.02);
    const double x0v = 0.6;
    Tensor x0({1, 3, 8, 8}, x0v);
    std::mt19937_64 rng(42);
    std::normal_distribution<double> normal;
    Tensor eps(x0.shape());
    std::string detail;
    bool ok = true;
    for (int t : {1, 250, 500, 750, 1000}) {
        const std::vector<int> ts{t};
        // Every element shares x0, so the 192 elements of each draw are i.i.d. samples of the same marginal.
        double sum = 0.0, sq = 0.0;
        std::int64_t count = 0;
        for (int d = 0; d < 10000; ++d) {
            for (auto& v : eps.data()) v = normal(rng);
            const auto xt = diffusion::q_sample(x0, ts, eps, sched);
            for (double v : xt.data()) {
                sum += v;
                sq += v * v;
            }
            count += xt.numel();
        }
        const double mean = sum / count;
        const double sd = std::sqrt(sq / count - mean * mean);
        const double mu = std::sqrt(sched.alpha_bar[t]) * x0v;
        const double sigma = std::sqrt(1.0 - sched.alpha_bar[t]);
        const double scale = std::sqrt(mu * mu + sigma * sigma);
        const double mean_err = std::abs(mean - mu) / scale;
        const double sd_err = std::abs(sd - sigma) / sigma;
        ok = ok && mean_err < 0.02 && sd_err < 0.02;
        detail += fmt::format("t={} mean err {:.3f}% sd err {:.3f}%; ", t, 100 * mean_err, 100 * sd_err);
    }
    const double secs = seconds_since(t0);
    ok = ok && secs < 60.0;
    return verdict(ok, detail + fmt::format("{:.1f}s", secs));
}

// ---- 3 ---------------------------------------------------------------------

Outcome c3_gradients() {
    const auto t0 = std::chrono::steady_clock::now();
    // ddpm_loss through a small conditioned conv net.
    std::mt19937_64 prng(3);
    auto w1 = nn::make_parameter({4, 3, 3, 3}, prng, 0.3), b1 = nn::make_parameter({4}, prng, 0.1);
    auto w2 = nn::make_parameter({3, 4, 3, 3}, prng, 0.3), b2 = nn::make_parameter({3}, prng, 0.1);
    auto tw = nn::make_parameter({4, 8}, prng, 0.3), tb = nn::make_parameter({4}, prng, 0.1);
    diffusion::EpsModel net = [&](const Var& x, std::span<const int> t) {
        std::vector<double> tf(t.begin(), t.end());
        auto temb = nn::linear(Var(diffusion::timestep_embedding(tf, 8)), tw, tb);
        auto h = nn::silu(nn::add_channelwise(nn::conv2d(x, w1, b1, 1, 1), temb));
        return nn::conv2d(h, w2, b2, 1, 1);
    };
    const std::vector<Var> ddpm_params{w1, b1, w2, b2, tw, tb};
    std::int64_t ddpm_count = 0;
    for (const auto& v : ddpm_params) ddpm_count += v.value().numel();
    const auto sched = diffusion::make_schedule(100, 1e-4, 0.02);
    const auto x0 = testing::uniform({2, 3, 4, 4}, 4, -1, 1);
    std::mt19937_64 rng(5);
    const auto draw = diffusion::draw_noise(x0.shape(), 100, rng);
    const auto gd = testing::check_gradients([&] { return diffusion::ddpm_loss(net, x0, sched, draw); }, ddpm_params);

    // mse_adv_losses through a two-stage discriminator, fading in.
    progan::ProganArch arch;
    arch.resolution = 8;
    arch.channels = {4, 4};
    arch.latent_dim = 4;
    progan::Discriminator disc(arch, 6);
    const auto disc_count = nn::parameter_count(disc.parameters());
    const auto dparams = testing::vars_of(disc.parameters());
    const auto real = Var(testing::uniform({3, 3, 8, 8}, 7, -1, 1));
    const auto fake = Var(testing::uniform({3, 3, 8, 8}, 8, -1, 1));
    const auto st = progan::ProgressiveStage::fading(1, 0.4);
    const auto ld = testing::check_gradients(
        [&] { return progan::mse_adv_losses(disc.forward(real, st), disc.forward(fake, st)).discriminator; }, dparams);
    const auto lg = testing::check_gradients(
        [&] { return progan::mse_adv_losses(disc.forward(real, st), disc.forward(fake, st)).generator; }, dparams);

    const double secs = seconds_since(t0);
    const bool ok = gd.rel_error < 1e-3 && ld.rel_error < 1e-3 && lg.rel_error < 1e-3 && ddpm_count <= 1000 && disc_count <= 1000 &&
                    secs < 120.0;
    return verdict(ok, fmt::format("ddpm_loss rel err {:.2e} ({} params); loss_d {:.2e}, loss_g {:.2e} ({} params); {:.1f}s",
                                   gd.rel_error, ddpm_count, ld.rel_error, lg.rel_error, disc_count, secs));
}

// ---- 4 ---------------------------------------------------------------------

Outcome c4_progressive() {
    std::vector<std::string> failures;
    // fade_in boundaries, bitwise.
    const auto a = testing::randn({2, 4, 8, 8}, 1), b = testing::randn({2, 4, 8, 8}, 2);
    if (progan::fade_in(Var(a), Var(b), 0.0).value() != a) failures.push_back("fade_in(alpha=0)");
    if (progan::fade_in(Var(a), Var(b), 1.0).value() != b) failures.push_back("fade_in(alpha=1)");

    // Network-level boundaries on the desk architecture.
    progan::ProganArch arch;
    arch.resolution = 16;
    arch.channels = {32, 32, 32};
    arch.latent_dim = 256;
    progan::Discriminator disc(arch, 11);
    progan::Generator gen(arch, 12);
    const auto z = Var(testing::randn({4, 64}, 13));
    for (int k = 1; k <= 2; ++k) {
        const auto x = Var(testing::uniform({4, 3, 4 << k, 4 << k}, 14 + k, -1, 1));
        if (disc.forward(x, progan::ProgressiveStage::fading(k, 0.0)).value() !=
            disc.forward(nn::avg_pool2(x), progan::ProgressiveStage::stable(k - 1)).value())
            failures.push_back(fmt::format("D fade boundary at stage {}", k));
        if (gen.forward(z, progan::ProgressiveStage::fading(k, 0.0)).value() !=
            nn::upsample_nearest2(gen.forward(z, progan::ProgressiveStage::stable(k - 1))).value())
            failures.push_back(fmt::format("G fade boundary at stage {}", k));
    }

    // fade_alpha trace: monotone within each stage, reaching exactly 1.
    for (const auto& s : {progan::StageSchedule(0, 4, 50000, 10000), progan::StageSchedule(1, 2, 1000, 500)}) {
        const auto total = s.total_iterations();
        int stage = -1;
        double prev = 0.0;
        for (std::int64_t i = 0; i < total; ++i) {
            const auto p = s.at(i);
            if (p.index != stage) {
                if (stage >= 0 && prev != 1.0) failures.push_back("alpha did not reach 1 in a stage");
                stage = p.index;
                prev = p.fade_alpha;
            }
            if (p.fade_alpha < prev) failures.push_back("alpha decreased");
            if (!p.is_fading() && p.fade_alpha != 1.0) failures.push_back("stable phase with alpha != 1");
            prev = p.fade_alpha;
        }
        if (prev != 1.0) failures.push_back("alpha did not reach 1 in the last stage");
    }

    // Outputs in [0, 1] for 100 random batches per stage.
    double lo = 1.0, hi = 0.0;
    std::mt19937_64 rng(15);
    for (int k = 0; k <= 2; ++k) {
        for (int rep = 0; rep < 100; ++rep) {
            const auto n = 1 + static_cast<std::int64_t>(rng() % 8);
            const auto x = Var(testing::uniform({n, 3, 4 << k, 4 << k}, rng(), -1, 1));
            const auto st = rep % 2 && k > 0 ? progan::ProgressiveStage::fading(k, (rep % 10) / 10.0) : progan::ProgressiveStage::stable(k);
            for (double p : disc.forward(x, st).value().data()) {
                lo = std::min(lo, p);
                hi = std::max(hi, p);
            }
        }
    }
    if (lo < 0.0 || hi > 1.0) failures.push_back("discriminator output outside [0,1]");

    // ws_conv against a direct convolution on pre-scaled weights.
    double worst_rel = 0.0;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const progan::WSConvSpec spec{5, 6, 3, 1, 1};
        const auto x = testing::randn({2, 5, 8, 8}, 100 + seed), w = testing::randn({6, 5, 3, 3}, 200 + seed),
                   bias = testing::randn({6}, 300 + seed);
        const auto y = progan::ws_conv_forward(Var(x), spec, Var(w), Var(bias)).value();
        Tensor scaled = w;
        for (auto& v : scaled.data()) v *= spec.runtime_scale();
        const auto ref = testing::naive_conv(x, scaled, bias, 1, 1);
        double num = 0, den = 0;
        for (std::int64_t i = 0; i < y.numel(); ++i) {
            num = std::max(num, std::abs(y[i] - ref[i]));
            den = std::max(den, std::abs(ref[i]));
        }
        worst_rel = std::max(worst_rel, num / den);
    }
    if (worst_rel >= 1e-6) failures.push_back("ws_conv mismatch");

    std::string detail = fmt::format("fade boundaries exact, alpha traces monotone to 1, D outputs in [{:.4f}, {:.4f}] over 300 batches, ws_conv rel err {:.1e}",
                                     lo, hi, worst_rel);
    if (!failures.empty()) {
        detail = "failed: ";
        for (const auto& f : failures) detail += f + "; ";
    }
    return verdict(failures.empty(), detail);
}

// ---- 5 ---------------------------------------------------------------------

Outcome c5_minibatch_std() {
    const auto one = testing::randn({1, 4, 4, 4}, 21);
    Tensor dup({3, 4, 4, 4});
    for (int n = 0; n < 3; ++n) std::copy(one.data().begin(), one.data().end(), dup.data().begin() + n * one.numel());
    const auto y = progan::minibatch_std(Var(dup)).value();
    bool zeros = true;
    for (int n = 0; n < 3; ++n)
        for (int i = 0; i < 4; ++i)
            for (int j = 0; j < 4; ++j) zeros = zeros && y.at(n, 4, i, j) == 0.0;

    Tensor pair({2, 3, 4, 4}, 0.0);
    for (std::int64_t i = pair.numel() / 2; i < pair.numel(); ++i) pair[i] = 2.0;
    const auto z = progan::minibatch_std(Var(pair)).value();
    bool ones = true;
    for (int n = 0; n < 2; ++n)
        for (int i = 0; i < 4; ++i)
            for (int j = 0; j < 4; ++j) ones = ones && z.at(n, 3, i, j) == 1.0;
    return verdict(zeros && ones, fmt::format("duplicated batch -> {}; {{0,2}} pair -> {}", zeros ? "all zeros" : "NONZERO",
                                              ones ? "exactly 1.0" : "not 1.0"));
}

// ---- 6 ---------------------------------------------------------------------

Outcome c6_ddim() {
    diffusion::UNetSpec spec;
    spec.resolution = 16;
    spec.base_channels = 16;
    spec.channel_multipliers = {1, 2, 4};
    spec.attention_resolutions = {8};
    const diffusion::UNet model(spec, 31);
    const auto sched = diffusion::make_schedule(200, 1e-4, 0.02);
    diffusion::DdimSamplerConfig cfg;
    cfg.num_steps = 50;
    cfg.batch_size = 8;
    const auto a = diffusion::ddim_sample(model, sched, cfg, 8, 42).tensor();
    const auto b = diffusion::ddim_sample(model, sched, cfg, 8, 42).tensor();
    const double replay = nn::max_abs_diff(a, b);

    const auto x0 = testing::uniform({4, 3, 16, 16}, 32, -1, 1);
    const auto eps = testing::randn({4, 3, 16, 16}, 33);
    double inversion = 0.0;
    for (int t : {1, 50, 100, 150, 200}) {
        const std::vector<int> ts(4, t);
        const auto xt = diffusion::q_sample(x0, ts, eps, sched);
        inversion = std::max(inversion, nn::max_abs_diff(diffusion::predict_x0(xt, eps, t, sched), x0));
        inversion = std::max(inversion, nn::max_abs_diff(diffusion::ddim_step(xt, eps, t, 0, sched), x0));
    }
    return verdict(replay <= 1e-6 && inversion <= 1e-6,
                   fmt::format("replay max diff {:.1e} over 8 samples x 50 steps; oracle-noise x0 recovery max err {:.1e}", replay, inversion));
}

// ---- 7 ---------------------------------------------------------------------

Outcome c7_metrics() {
    std::mt19937_64 rng(77);
    int mismatches = 0, zero_den = 0;
    for (int rep = 0; rep < 1000; ++rep) {
        const int n = 1 + static_cast<int>(rng() % 50);
        const double pl = std::uniform_real_distribution<double>(0, 1)(rng);
        const double pd = rep % 5 == 0 ? 0.0 : std::uniform_real_distribution<double>(0, 1)(rng);
        std::vector<int> labels(n), decisions(n);
        for (int i = 0; i < n; ++i) {
            labels[i] = std::bernoulli_distribution(pl)(rng);
            decisions[i] = std::bernoulli_distribution(pd)(rng);
        }
        // Brute force: walk the samples once.
        std::int64_t correct = 0, tp = 0, pred_pos = 0, real_pos = 0;
        for (int i = 0; i < n; ++i) {
            correct += labels[i] == decisions[i];
            tp += labels[i] == 1 && decisions[i] == 1;
            pred_pos += decisions[i];
            real_pos += labels[i];
        }
        auto frac = [](std::int64_t num, std::int64_t den) { return den == 0 ? eval::Fraction(0, 1) : eval::Fraction(num, den); };
        const auto p = frac(tp, pred_pos), r = frac(tp, real_pos);
        const auto f1 = (p == eval::Fraction(0, 1) && r == eval::Fraction(0, 1))
                            ? eval::Fraction(0, 1)
                            : eval::Fraction(2, 1) * p * r / (p + r);
        zero_den += pred_pos == 0 || real_pos == 0;
        const auto m = eval::exact_metrics(eval::confusion(labels, decisions));
        if (!(m.accuracy == frac(correct, n) && m.precision == p && m.recall == r && m.f1 == f1)) ++mismatches;
    }
    const auto table_zero = eval::format_percent(eval::metrics({0, 0, 47, 53}).f1);
    return verdict(mismatches == 0 && table_zero == "0.00" && zero_den > 0,
                   fmt::format("{} mismatches over 1000 vectors ({} with a zero denominator); tp=0 renders F1 \"{}\"", mismatches, zero_den,
                               table_zero));
}

// ---- 8 & 9 -----------------------------------------------------------------

struct PipelineRun {
    fs::path root;  // CIPHER_RUNS_DIR
    std::map<std::string, double> seconds;
    int exit_code = 0;
    std::string failed_step;
    fs::path run_dir() const { return root / "desk"; }
};

PipelineRun run_desk_pipeline(const fs::path& root, const fs::path& real) {
    PipelineRun out;
    out.root = root;
    fs::remove_all(root);
    fs::create_directories(root);
    setenv("CIPHER_RUNS_DIR", root.c_str(), 1);
    const std::string cfg = (fs::path(CIPHER_SOURCE_DIR) / "configs" / "desk.cfg").string();
    const std::vector<std::vector<std::string>> steps{
        {"train-gan", "--config", cfg, "--data.real_dir", real.string()},
        {"train-diffusion", "--config", cfg, "--data.real_dir", real.string()},
        {"generate", "--config", cfg},
        {"prepare", "--config", cfg, "--real", real.string()},
        {"finetune", "--config", cfg},
        {"evaluate", "--config", cfg},
    };
    for (const auto& args : steps) {
        const auto t0 = std::chrono::steady_clock::now();
        std::cerr << "  [" << root.filename().string() << "] " << args[0] << " ..." << std::endl;
        const int code = cli::run(args);
        out.seconds[args[0]] = seconds_since(t0);
        if (code != 0) {
            out.exit_code = code;
            out.failed_step = args[0];
            break;
        }
    }
    unsetenv("CIPHER_RUNS_DIR");
    return out;
}

std::vector<fs::path> report_files(const fs::path& run_dir, const std::string& ext) {
    std::vector<fs::path> out;
    if (!fs::exists(run_dir / "reports")) return out;
    for (const auto& e : fs::recursive_directory_iterator(run_dir / "reports"))
        if (e.path().extension() == ext) out.push_back(e.path());
    std::sort(out.begin(), out.end());
    return out;
}

Outcome c8_end_to_end(const PipelineRun& run) {
    if (run.exit_code != 0) return fail(fmt::format("pipeline step '{}' exited with {}", run.failed_step, run.exit_code));
    const auto csvs = report_files(run.run_dir(), ".csv");
    if (csvs.size() != 1) return fail("expected exactly one report CSV");
    const auto table = eval::parse_csv(slurp(csvs.front()));
    if (table.corpora.size() != 1 || table.rows.size() != 1) return fail("unexpected report shape");
    const double acc = table.rows[0].acc[0], f1 = table.rows[0].f1[0];
    double total = 0.0;
    for (const auto& [k, v] : run.seconds) total += v;
    const double gan = run.seconds.at("train-gan"), diff = run.seconds.at("train-diffusion");
    const auto n_fakes = dataio::list_images(run.run_dir() / "fakes").size();
    const bool ok = acc >= 85.0 && f1 >= 85.0 && gan <= 1800.0 && diff <= 1800.0 && total <= 6 * 3600.0 && n_fakes == 500;
    std::string times;
    for (const auto& step : {"train-gan", "train-diffusion", "generate", "prepare", "finetune", "evaluate"})
        times += fmt::format("{} {:.0f}s, ", step, run.seconds.at(step));
    return verdict(ok, fmt::format("held-out acc {:.2f}% F1 {:.2f}% ({} fakes); {}total {:.1f} min (CPU)", acc, f1, n_fakes, times,
                                   total / 60.0));
}

std::string without_timestamp(const std::string& md) {
    std::istringstream in(md);
    std::string line, out;
    while (std::getline(in, line))
        if (line.rfind("- timestamp:", 0) != 0) out += line + "\n";
    return out;
}

Outcome c9_reproducible(const PipelineRun& a, const PipelineRun& b) {
    if (a.exit_code != 0 || b.exit_code != 0) return fail("a pipeline run failed");
    std::vector<std::string> differing;
    const std::vector<std::string> files{"data/manifest.tsv",        "gan/train_log.csv",         "diffusion/train_log.csv",
                                         "detector/finetune_log.csv", "gan/discriminator.ckpt",    "diffusion/unet.ckpt",
                                         "detector/detector_best.ckpt"};
    for (const auto& f : files) {
        const auto pa = a.run_dir() / f, pb = b.run_dir() / f;
        if (!fs::exists(pa) || slurp(pa) != slurp(pb)) differing.push_back(f);
    }
    const auto fa = dataio::list_images(a.run_dir() / "fakes"), fb = dataio::list_images(b.run_dir() / "fakes");
    bool fakes_equal = fa.size() == fb.size();
    for (std::size_t i = 0; fakes_equal && i < fa.size(); ++i) fakes_equal = slurp(fa[i]) == slurp(fb[i]);
    if (!fakes_equal) differing.push_back("fakes/*.png");

    const auto ca = report_files(a.run_dir(), ".csv"), cb = report_files(b.run_dir(), ".csv");
    const auto ma = report_files(a.run_dir(), ".md"), mb = report_files(b.run_dir(), ".md");
    if (ca.size() != 1 || cb.size() != 1 || slurp(ca[0]) != slurp(cb[0])) differing.push_back("report csv");
    if (ca.size() == 1 && cb.size() == 1 && ca[0].parent_path().filename() != cb[0].parent_path().filename())
        differing.push_back("detector id");
    if (ma.size() != 1 || mb.size() != 1 || without_timestamp(slurp(ma[0])) != without_timestamp(slurp(mb[0])))
        differing.push_back("report markdown (timestamp excluded)");

    std::string detail = differing.empty()
                             ? fmt::format("manifests, training logs, checkpoints, {} fakes and EvalReports (csv, md minus timestamp) identical",
                                           fa.size())
                             : "differ: ";
    for (const auto& d : differing) detail += d + "; ";
    return verdict(differing.empty(), detail);
}

// ---- 10 --------------------------------------------------------------------

Outcome c10_zero_epoch(const fs::path& work, const PipelineRun* run) {
    // Prefer the trained desk discriminator; fall back to a freshly initialised one.
    nn::Checkpoint disc_ckpt;
    dataio::LabeledDataset data;
    std::string source;
    if (run && run->exit_code == 0 && fs::exists(run->run_dir() / "gan" / "discriminator.ckpt")) {
        disc_ckpt = nn::load_checkpoint(run->run_dir() / "gan" / "discriminator.ckpt");
        data = dataio::read_manifest(run->run_dir() / "data" / "manifest.tsv");
        source = "trained desk discriminator";
    } else {
        progan::ProganArch arch;
        arch.resolution = 16;
        arch.channels = {32, 32, 32};
        arch.latent_dim = 256;
        disc_ckpt = progan::Discriminator(arch, 5).to_checkpoint();
        const auto dir = work / "zero_epoch";
        fs::remove_all(dir);
        dataio::write_toy_faces(dir / "a", 10, 16, 1);
        dataio::write_toy_faces(dir / "b", 10, 16, 2);
        data = dataio::build_balanced_dataset(dir / "a", dir / "b", 10, {}, 42);
        source = "fresh discriminator";
    }
    detector::FinetuneConfig cfg;
    cfg.epochs = 0;
    const auto result = detector::finetune(disc_ckpt, data, cfg);
    const bool ok = nn::serialize_tensors(result.final_detector.tensors) == nn::serialize_tensors(disc_ckpt.tensors);
    return verdict(ok, fmt::format("{}: weights {} after epochs=0", source, ok ? "byte-identical" : "CHANGED"));
}

}  // namespace

int main(int argc, char** argv) {
    bool skip_e2e = false;
    fs::path work = fs::temp_directory_path() / "cipher_acceptance";
    for (int i = 1; i < argc; ++i) {
        const std::string a = argv[i];
        if (a == "--skip-e2e") {
            skip_e2e = true;
        } else if (a == "--work" && i + 1 < argc) {
            work = argv[++i];
        } else {
            std::cerr << "usage: cipher_acceptance [--skip-e2e] [--work DIR]\n";
            return 2;
        }
    }
    if (const char* e = std::getenv("CIPHER_ACCEPTANCE_SKIP_E2E"); e && std::string(e) == "1") skip_e2e = true;
    spdlog::set_level(spdlog::level::warn);
    fs::create_directories(work);

    std::vector<std::pair<std::string, Outcome>> results;
    auto record = [&](int id, const std::string& title, const std::function<Outcome()>& fn) {
        Outcome o;
        try {
            o = fn();
        } catch (const std::exception& e) {
            o = fail(std::string("exception: ") + e.what());
        }
        const char* tag = o.status == Outcome::Pass ? "PASS" : o.status == Outcome::Skip ? "SKIP" : "FAIL";
        std::cout << fmt::format("[{}] {:>2}. {}: {}", tag, id, title, o.detail) << std::endl;
        results.emplace_back(title, o);
    };

    record(1, "scope of reproduction", c1_scope);
    record(2, "forward-process fidelity", c2_forward_process);
    record(3, "gradient correctness", c3_gradients);
    record(4, "progressive invariants", c4_progressive);
    record(5, "minibatch-std oracle", c5_minibatch_std);
    record(6, "DDIM determinism and inversion", c6_ddim);
    record(7, "metrics oracle", c7_metrics);

    std::optional<PipelineRun> run_a, run_b;
    if (skip_e2e) {
        record(8, "desk-scale end-to-end run", [] { return Outcome{Outcome::Skip, "skipped (--skip-e2e)"}; });
        record(9, "reproducibility", [] { return Outcome{Outcome::Skip, "skipped (--skip-e2e)"}; });
    } else {
        const auto real = work / "real";
        if (dataio::list_images(real).size() != 1000) {
            fs::remove_all(real);
            dataio::write_toy_faces(real, 1000, 64, 7);
        }
        record(8, "desk-scale end-to-end run", [&] {
            run_a = run_desk_pipeline(work / "run_a", real);
            return c8_end_to_end(*run_a);
        });
        record(9, "reproducibility", [&] {
            run_b = run_desk_pipeline(work / "run_b", real);
            return c9_reproducible(*run_a, *run_b);
        });
    }
    record(10, "zero-epoch identity", [&] { return c10_zero_epoch(work, run_a ? &*run_a : nullptr); });

    const auto failed = std::count_if(results.begin(), results.end(), [](const auto& r) { return r.second.status == Outcome::Fail; });
    std::cout << fmt::format("{} of {} criteria failed", failed, results.size()) << std::endl;
    return failed == 0 ? 0 : 1;
}
