#include <doctest.h>

#include <cmath>
#include <fstream>

#include "cipher/dataio/loader.hpp"
#include "cipher/dataio/toy_faces.hpp"
#include "cipher/error.hpp"
#include "cipher/nn/checkpoint.hpp"
#include "cipher/nn/ops.hpp"
#include "cipher/progan/layers.hpp"
#include "cipher/progan/losses.hpp"
#include "cipher/progan/networks.hpp"
#include "cipher/progan/stage.hpp"
#include "cipher/progan/train.hpp"
#include "support.hpp"

using namespace cipher;
using namespace cipher::progan;
using nn::Tensor;
using nn::Var;

namespace {

ProganArch tiny_arch(int resolution = 8) {
    ProganArch a;
    a.resolution = resolution;
    a.channels.assign(static_cast<std::size_t>(stage_for_resolution(resolution) + 1), 4);
    a.latent_dim = 8;
    return a;
}

Var images(std::int64_t n, std::int64_t res, std::uint64_t seed) {
    return Var(testing::uniform({n, 3, res, res}, seed, -1.0, 1.0));
}

dataio::LabeledDataset toy_dataset(const std::filesystem::path& dir, int n) {
    dataio::write_toy_faces(dir, n, 16, 3);
    std::vector<dataio::DatasetItem> items;
    for (const auto& p : dataio::list_images(dir)) items.push_back({p, dataio::kRealLabel, dataio::Split::Train});
    return dataio::LabeledDataset(items);
}

}  // namespace

TEST_CASE("ws conv runtime scale") {
    WSConvSpec s{64, 32, 3, 1, 1};
    CHECK(s.fan_in() == 576);
    CHECK(s.runtime_scale() == doctest::Approx(0.05893).epsilon(1e-4));
    CHECK(s.runtime_scale() == std::sqrt(2.0 / 576.0));
}

TEST_CASE("ws conv equals a reference convolution on pre-scaled weights") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        WSConvSpec s{3, 5, 3, 1, 1};
        auto x = testing::randn({2, 3, 8, 8}, seed);
        auto w = testing::randn({5, 3, 3, 3}, seed + 10);
        auto b = testing::randn({5}, seed + 20);
        auto y = ws_conv_forward(Var(x), s, Var(w), Var(b)).value();
        Tensor scaled = w;
        for (auto& v : scaled.data()) v *= s.runtime_scale();
        auto ref = testing::naive_conv(x, scaled, b, 1, 1);
        double worst = 0, mag = 0;
        for (std::int64_t i = 0; i < y.numel(); ++i) {
            worst = std::max(worst, std::abs(y[i] - ref[i]));
            mag = std::max(mag, std::abs(ref[i]));
        }
        CHECK(worst / mag < 1e-6);
    }
}

TEST_CASE("ws conv with zero weights yields the bias") {
    WSConvSpec s{2, 3, 3, 1, 1};
    auto b = Tensor({3}, std::vector<double>{0.5, -1.0, 2.0});
    auto y = ws_conv_forward(Var(testing::randn({1, 2, 4, 4}, 1)), s, Var(Tensor({3, 2, 3, 3}, 0.0)), Var(b)).value();
    for (std::int64_t c = 0; c < 3; ++c)
        for (int i = 0; i < 4; ++i)
            for (int j = 0; j < 4; ++j) CHECK(y.at(0, c, i, j) == b[c]);
}

TEST_CASE("ws conv reports channel mismatch") {
    WSConvSpec s{4, 3, 3, 1, 1};
    try {
        ws_conv_forward(Var(Tensor({1, 2, 4, 4})), s, Var(Tensor({3, 4, 3, 3})), Var(Tensor({3})));
        FAIL("expected ShapeError");
    } catch (const ShapeError& e) {
        std::string msg = e.what();
        CHECK(msg.find("[1x2x4x4]") != std::string::npos);
        CHECK(msg.find("4") != std::string::npos);
    }
}

TEST_CASE("minibatch std oracles") {
    Tensor same({3, 2, 4, 4});
    auto one = testing::randn({1, 2, 4, 4}, 4);
    for (int n = 0; n < 3; ++n)
        for (std::int64_t i = 0; i < one.numel(); ++i) same[n * one.numel() + i] = one[i];
    auto y = minibatch_std(Var(same)).value();
    CHECK(y.dim(1) == 3);
    for (int n = 0; n < 3; ++n)
        for (int i = 0; i < 4; ++i)
            for (int j = 0; j < 4; ++j) CHECK(y.at(n, 2, i, j) == 0.0);

    Tensor pair({2, 3, 4, 4});
    for (std::int64_t i = pair.numel() / 2; i < pair.numel(); ++i) pair[i] = 2.0;
    auto z = minibatch_std(Var(pair)).value();
    for (int n = 0; n < 2; ++n)
        for (int i = 0; i < 4; ++i)
            for (int j = 0; j < 4; ++j) CHECK(z.at(n, 3, i, j) == 1.0);
}

TEST_CASE("minibatch std channel is constant, nonnegative and preserves other channels") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        auto x = testing::randn({static_cast<std::int64_t>(seed % 4 + 1), 3, 4, 4}, seed);
        auto y = minibatch_std(Var(x)).value();
        CHECK(y.shape() == nn::Shape{x.dim(0), 4, 4, 4});
        const double v = y.at(0, 3, 0, 0);
        CHECK(v >= 0.0);
        for (std::int64_t n = 0; n < x.dim(0); ++n)
            for (int i = 0; i < 4; ++i)
                for (int j = 0; j < 4; ++j) {
                    CHECK(y.at(n, 3, i, j) == v);
                    for (int c = 0; c < 3; ++c) CHECK(y.at(n, c, i, j) == x.at(n, c, i, j));
                }
    }
    auto fixed = minibatch_std(Var(testing::randn({2, 3, 4, 4}, 1)), 0.75).value();
    CHECK(fixed.at(1, 3, 2, 2) == 0.75);
}

TEST_CASE("fade in boundaries are exact") {
    auto a = testing::randn({2, 3, 4, 4}, 1), b = testing::randn({2, 3, 4, 4}, 2);
    CHECK(fade_in(Var(a), Var(b), 0.0).value() == a);
    CHECK(fade_in(Var(a), Var(b), 1.0).value() == b);
    auto mid = fade_in(Var(Tensor({1, 1, 2, 2}, 0.0)), Var(Tensor({1, 1, 2, 2}, 2.0)), 0.5).value();
    for (double v : mid.data()) CHECK(v == 1.0);
    CHECK_THROWS_AS(fade_in(Var(a), Var(b), 1.5), DomainError);
    CHECK_THROWS_AS(fade_in(Var(a), Var(b), -0.1), DomainError);
    CHECK_THROWS_AS(fade_in(Var(a), Var(Tensor({2, 3, 2, 2})), 0.5), ShapeError);
}

TEST_CASE("stage helpers") {
    CHECK(stage_resolution(0) == 4);
    CHECK(stage_resolution(4) == 64);
    CHECK(stage_for_resolution(16) == 2);
    CHECK_THROWS_AS(stage_for_resolution(12), ShapeError);
    CHECK_THROWS_AS(ProgressiveStage::fading(1, 1.2), DomainError);
    CHECK(ProgressiveStage::stable(2).fade_alpha == 1.0);
}

TEST_CASE("stage schedule: full-scale numbers and monotone fade") {
    StageSchedule s(0, 4, 50000, 10000);
    CHECK(s.total_iterations() == 250000);
    CHECK(s.at(0).index == 0);
    CHECK_FALSE(s.at(0).is_fading());
    auto st = s.at(50000 + 5000);
    CHECK(st.index == 1);
    CHECK(st.is_fading());
    CHECK(st.fade_alpha == 0.5);
    CHECK(s.at(50000).fade_alpha == 0.0);
    for (int k = 1; k <= 4; ++k) {
        double prev = -1;
        for (std::int64_t i = k * 50000LL; i < (k + 1) * 50000LL; i += 97) {
            auto p = s.at(i);
            CHECK(p.index == k);
            CHECK(p.fade_alpha >= prev);
            if (!p.is_fading()) CHECK(p.fade_alpha == 1.0);
            prev = p.fade_alpha;
        }
        CHECK(s.at((k + 1) * 50000LL - 1).fade_alpha == 1.0);
    }
    StageSchedule single(0, 0, 100, 10);
    for (int i = 0; i < 100; ++i) CHECK_FALSE(single.at(i).is_fading());
    CHECK_THROWS_AS(StageSchedule(0, 1, 100, 200), ConfigError);
    CHECK_THROWS_AS(StageSchedule(2, 1, 100, 10), ConfigError);
}

TEST_CASE("mse adversarial losses by hand") {
    auto l = mse_adv_losses(Var(Tensor({1}, 1.0)), Var(Tensor({1}, 0.0)));
    CHECK(l.discriminator.value()[0] == 0.0);
    CHECK(mse_adv_losses(Var(Tensor({2}, 0.3)), Var(Tensor({2}, 1.0))).generator.value()[0] == 0.0);
    auto h = mse_adv_losses(Var(Tensor({1}, 0.5)), Var(Tensor({1}, 0.5)));
    CHECK(h.discriminator.value()[0] == doctest::Approx(0.5));
    CHECK(h.generator.value()[0] == doctest::Approx(0.25));
}

TEST_CASE("architecture validation and hashing") {
    auto a = tiny_arch(16);
    CHECK(a.num_stages() == 3);
    CHECK_NOTHROW(a.validate());
    auto b = a;
    b.channels = {4, 4};
    CHECK_THROWS_AS(b.validate(), ConfigError);
    b = a;
    b.latent_dim = 9;
    CHECK(a.hash() != b.hash());
}

TEST_CASE("discriminator outputs are probabilities with the right length") {
    Discriminator d(tiny_arch(16), 1);
    for (int k = 0; k <= 2; ++k) {
        for (int rep = 0; rep < 100; ++rep) {
            const auto n = 1 + rep % 5;
            auto p = d.forward(images(n, stage_resolution(k), 1000 * k + rep), ProgressiveStage::stable(k)).value();
            CHECK(p.numel() == n);
            for (double v : p.data()) CHECK((v >= 0.0 && v <= 1.0));
        }
    }
    CHECK_THROWS_AS(d.forward(images(2, 8, 1), ProgressiveStage::stable(2)), ShapeError);
    CHECK_THROWS_AS(d.forward(images(2, 32, 1), ProgressiveStage::stable(3)), ShapeError);
}

TEST_CASE("full-size discriminator yields one score per image") {
    ProganArch a;
    a.channels = {8, 8, 8, 8, 8};
    Discriminator d(a, 2);
    auto p = d.forward(images(7, 64, 3), ProgressiveStage::stable(4)).value();
    CHECK(p.numel() == 7);
}

TEST_CASE("discriminator fade boundary equals previous stage on pooled input") {
    Discriminator d(tiny_arch(16), 3);
    for (int k = 1; k <= 2; ++k) {
        auto x = images(4, stage_resolution(k), 50 + k);
        auto faded = d.forward(x, ProgressiveStage::fading(k, 0.0)).value();
        auto prev = d.forward(nn::avg_pool2(x), ProgressiveStage::stable(k - 1)).value();
        CHECK(faded == prev);
        auto full = d.forward(x, ProgressiveStage::fading(k, 1.0)).value();
        CHECK(full == d.forward(x, ProgressiveStage::stable(k)).value());
    }
}

TEST_CASE("generator shapes, range, fade boundary and determinism") {
    Generator g(tiny_arch(16), 4);
    auto z = Var(testing::randn({3, 8}, 5));
    auto base = g.forward(z, ProgressiveStage::stable(0)).value();
    CHECK(base.shape() == nn::Shape{3, 3, 4, 4});
    for (int k = 1; k <= 2; ++k) {
        auto out = g.forward(z, ProgressiveStage::stable(k)).value();
        CHECK(out.dim(2) == stage_resolution(k));
        for (double v : out.data()) CHECK((v >= -1.0 && v <= 1.0));
        auto faded = g.forward(z, ProgressiveStage::fading(k, 0.0)).value();
        auto up = nn::upsample_nearest2(g.forward(z, ProgressiveStage::stable(k - 1))).value();
        CHECK(faded == up);
    }
    Generator g2(tiny_arch(16), 4);
    CHECK(g2.forward(z, ProgressiveStage::stable(2)).value() == g.forward(z, ProgressiveStage::stable(2)).value());
    CHECK_THROWS_AS(g.forward(Var(Tensor({3, 7})), ProgressiveStage::stable(0)), ShapeError);
}

TEST_CASE("adversarial loss gradients match finite differences on a small discriminator") {
    Discriminator d(tiny_arch(8), 6);
    const auto params = testing::vars_of(d.parameters());
    CHECK(nn::parameter_count(d.parameters()) <= 1000);
    for (auto st : {ProgressiveStage::stable(1), ProgressiveStage::fading(1, 0.3)}) {
        auto real = images(3, 8, 7), fake = images(3, 8, 8);
        auto ld = [&] { return mse_adv_losses(d.forward(real, st), d.forward(fake, st)).discriminator; };
        auto r = testing::check_gradients(ld, params);
        CHECK(r.rel_error < 1e-3);
        auto lg = [&] { return mse_adv_losses(d.forward(real, st), d.forward(fake, st)).generator; };
        CHECK(testing::check_gradients(lg, params).rel_error < 1e-3);
    }
}

TEST_CASE("generator loss gradients flow through the discriminator") {
    ProganArch a = tiny_arch(4);
    a.channels = {2};
    a.latent_dim = 3;
    Discriminator d(a, 1);
    Generator g(a, 2);
    CHECK(nn::parameter_count(g.parameters()) <= 1000);
    auto z = Var(testing::randn({3, 3}, 9));
    auto real = images(3, 4, 10);
    auto st = ProgressiveStage::stable(0);
    auto lg = [&] { return mse_adv_losses(d.forward(real, st), d.forward(g.forward(z, st), st)).generator; };
    CHECK(testing::check_gradients(lg, testing::vars_of(g.parameters())).rel_error < 1e-3);
}

TEST_CASE("checkpoints round-trip byte for byte and check architecture") {
    testing::TempDir dir("gan");
    Discriminator d(tiny_arch(16), 7);
    nn::save_checkpoint(d.to_checkpoint({{"stage", "2"}}), dir / "d.ckpt");
    auto loaded = Discriminator::from_checkpoint(nn::load_checkpoint(dir / "d.ckpt"));
    nn::save_checkpoint(loaded.to_checkpoint({{"stage", "2"}}), dir / "d2.ckpt");
    auto read = [](const std::filesystem::path& p) {
        std::ifstream in(p, std::ios::binary);
        return std::string(std::istreambuf_iterator<char>(in), {});
    };
    CHECK(read(dir / "d.ckpt") == read(dir / "d2.ckpt"));
    auto x = images(2, 16, 1);
    CHECK(loaded.forward(x, ProgressiveStage::stable(2)).value() == d.forward(x, ProgressiveStage::stable(2)).value());

    Generator g(tiny_arch(16), 8);
    auto gl = Generator::from_checkpoint(g.to_checkpoint());
    auto z = Var(testing::randn({2, 8}, 2));
    CHECK(gl.forward(z, ProgressiveStage::stable(1)).value() == g.forward(z, ProgressiveStage::stable(1)).value());

    auto bad = d.to_checkpoint();
    bad.arch_hash = "0000";
    CHECK_THROWS_AS(Discriminator::from_checkpoint(bad), CheckpointError);
    CHECK_THROWS_AS(Generator::from_checkpoint(d.to_checkpoint()), CheckpointError);
}

TEST_CASE("downsample_to averages blocks") {
    auto x = testing::uniform({2, 3, 16, 16}, 3, -1, 1);
    auto y = downsample_to(x, 4);
    CHECK(y.shape() == nn::Shape{2, 3, 4, 4});
    double s = 0;
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j) s += x.at(1, 2, i, j);
    CHECK(y.at(1, 2, 0, 0) == doctest::Approx(s / 16));
    CHECK(downsample_to(x, 16) == x);
}

TEST_CASE("progressive training counts steps and decays the learning rate") {
    testing::TempDir dir("train");
    auto ds = toy_dataset(dir / "faces", 12);
    GanTrainConfig cfg;
    cfg.batch_size = 4;
    cfg.iters_per_stage = 50;
    cfg.fade_iters = 20;
    cfg.stages = 2;
    cfg.log_every = 10;
    dataio::BatchLoader loader(ds, {4, true, 1, 16, true});
    ProgressiveTrainer t(tiny_arch(8), cfg);
    CHECK(t.schedule().first_stage() == 0);
    CHECK(t.schedule().last_stage() == 1);
    CHECK(t.lr_at(0) == doctest::Approx(1e-3));
    CHECK(t.lr_at(50) == doctest::Approx(5e-4));
    std::vector<GanLogRow> rows;
    t.run(loader, {[&](const GanLogRow& r) { rows.push_back(r); }, {}});
    CHECK(t.d_steps() == 100);
    CHECK(t.g_steps() == 200);
    CHECK(t.finished());
    REQUIRE(!rows.empty());
    double prev = 0;
    for (const auto& r : rows) {
        CHECK(std::isfinite(r.loss_d));
        CHECK(std::isfinite(r.loss_g));
        if (r.stage == 1) {
            CHECK(r.fade_alpha >= prev);
            prev = r.fade_alpha;
        }
    }
    CHECK(rows.back().fade_alpha == 1.0);
}

TEST_CASE("single stage training and state round trip") {
    testing::TempDir dir("state");
    auto ds = toy_dataset(dir / "faces", 8);
    GanTrainConfig cfg;
    cfg.batch_size = 4;
    cfg.iters_per_stage = 6;
    cfg.fade_iters = 2;
    cfg.stages = 1;
    dataio::BatchLoader l1(ds, {4, true, 1, 16, true}), l2(ds, {4, true, 1, 16, true});
    ProgressiveTrainer a(tiny_arch(8), cfg);
    CHECK(a.schedule().first_stage() == 1);
    for (int i = 0; i < 3; ++i) CHECK_FALSE(a.step(l1).fade_alpha < 1.0);

    ProgressiveTrainer b(tiny_arch(8), cfg);
    b.load_state(a.state());
    CHECK(b.iteration() == 3);
    CHECK(nn::serialize_tensors(b.discriminator().to_checkpoint().tensors) ==
          nn::serialize_tensors(a.discriminator().to_checkpoint().tensors));
    CHECK(nn::serialize_checkpoint(b.state()) == nn::serialize_checkpoint(a.state()));

    auto other = tiny_arch(8);
    other.channels = {5, 5};
    ProgressiveTrainer c(other, cfg);
    CHECK_THROWS_AS(c.load_state(a.state()), CheckpointError);

    auto too_many = cfg;
    too_many.stages = 3;
    CHECK_THROWS_AS(ProgressiveTrainer(tiny_arch(8), too_many), ConfigError);
}

TEST_CASE("training is reproducible for a fixed seed") {
    testing::TempDir dir("rep");
    auto ds = toy_dataset(dir / "faces", 8);
    GanTrainConfig cfg;
    cfg.batch_size = 4;
    cfg.iters_per_stage = 4;
    cfg.fade_iters = 2;
    cfg.stages = 2;
    auto run = [&] {
        dataio::BatchLoader l(ds, {4, true, 1, 16, true});
        return train_progressive(tiny_arch(8), cfg, l);
    };
    auto r1 = run(), r2 = run();
    CHECK(nn::serialize_checkpoint(r1.discriminator) == nn::serialize_checkpoint(r2.discriminator));
    CHECK(nn::serialize_checkpoint(r1.generator) == nn::serialize_checkpoint(r2.generator));
    CHECK(r1.d_steps == 8);
    CHECK(r1.g_steps == 16);
}
