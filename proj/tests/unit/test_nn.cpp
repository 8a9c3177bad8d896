#include <doctest.h>

#include <cmath>
#include <numbers>

#include "cipher/error.hpp"
#include "cipher/nn/checkpoint.hpp"
#include "cipher/nn/ops.hpp"
#include "cipher/nn/optim.hpp"
#include "support.hpp"

using namespace cipher;
using namespace cipher::nn;
using testing::check_gradients;
using testing::randn;

namespace {

Var leaf(Shape s, std::uint64_t seed, double scale = 1.0) { return Var(randn(std::move(s), seed, scale), true); }

// Weighted sum so every output element feeds the scalar with a distinct coefficient.
Var probe(const Var& y, std::uint64_t seed = 99) {
    Var w(randn(y.shape(), seed));
    return mean(mul(y, w));
}

void expect_grads(const std::function<Var()>& f, const std::vector<Var>& in, double tol = 1e-6) {
    auto r = check_gradients(f, in);
    CHECK(r.checked > 0);
    CHECK(r.rel_error < tol);
}

}  // namespace

TEST_CASE("tensor basics") {
    Tensor t({2, 3}, 1.5);
    CHECK(t.numel() == 6);
    CHECK(t.rows(1, 2).shape() == Shape{1, 3});
    CHECK_THROWS(t.reshaped({4, 2}));
    std::vector<Tensor> parts{Tensor({1, 3}, 1.0), Tensor({1, 3}, 2.0)};
    auto s = concat_rows(parts);
    CHECK(s.shape() == Shape{2, 3});
    CHECK(s[4] == 2.0);
}

TEST_CASE("conv2d matches a nested-loop oracle") {
    for (auto [stride, pad, k] : {std::tuple{1, 1, 3}, std::tuple{2, 1, 3}, std::tuple{1, 0, 4}, std::tuple{1, 0, 1}}) {
        auto x = randn({3, 4, 8, 8}, 1);
        auto w = randn({5, 4, k, k}, 2);
        auto b = randn({5}, 3);
        auto y = conv2d(Var(x), Var(w), Var(b), stride, pad, 0.7);
        Tensor ws = w;
        for (auto& v : ws.data()) v *= 0.7;
        CHECK(max_abs_diff(y.value(), testing::naive_conv(x, ws, b, stride, pad)) < 1e-12);
    }
}

TEST_CASE("gradients of elementwise ops") {
    auto a = leaf({2, 3, 4, 4}, 1), b = leaf({2, 3, 4, 4}, 2);
    expect_grads([&] { return probe(add(a, b)); }, {a, b});
    expect_grads([&] { return probe(sub(a, b)); }, {a, b});
    expect_grads([&] { return probe(mul(a, b)); }, {a, b});
    expect_grads([&] { return probe(scale(a, -1.7)); }, {a});
    expect_grads([&] { return probe(add_scalar(a, 0.3)); }, {a});
    expect_grads([&] { return probe(leaky_relu(a, 0.2)); }, {a});
    expect_grads([&] { return probe(silu(a)); }, {a});
    expect_grads([&] { return probe(sigmoid(a)); }, {a});
    expect_grads([&] { return probe(tanh(a)); }, {a});
    auto v = leaf({2, 3}, 3);
    expect_grads([&] { return probe(add_channelwise(a, v)); }, {a, v});
}

TEST_CASE("gradients of structural ops") {
    auto a = leaf({2, 3, 4, 4}, 4), b = leaf({2, 2, 4, 4}, 5);
    expect_grads([&] { return probe(avg_pool2(a)); }, {a});
    expect_grads([&] { return probe(upsample_nearest2(a)); }, {a});
    expect_grads([&] { return probe(concat_channels(a, b)); }, {a, b});
    expect_grads([&] { return probe(reshape(a, {2, 48})); }, {a});
    expect_grads([&] { return mean(a); }, {a});
}

TEST_CASE("gradients of conv2d and linear") {
    auto x = leaf({2, 3, 6, 6}, 6), w = leaf({4, 3, 3, 3}, 7), bias = leaf({4}, 8);
    expect_grads([&] { return probe(conv2d(x, w, bias, 1, 1, 0.5)); }, {x, w, bias});
    expect_grads([&] { return probe(conv2d(x, w, bias, 2, 1)); }, {x, w, bias});
    expect_grads([&] { return probe(conv2d(x, w, Var(), 1, 0)); }, {x, w});
    auto xi = leaf({3, 5}, 9), wl = leaf({4, 5}, 10), bl = leaf({4}, 11);
    expect_grads([&] { return probe(linear(xi, wl, bl, 1.3)); }, {xi, wl, bl});
}

TEST_CASE("gradients of normalizations") {
    auto x = leaf({2, 4, 3, 3}, 12);
    expect_grads([&] { return probe(pixel_norm(x)); }, {x});
    auto x2 = leaf({3, 6}, 13);
    expect_grads([&] { return probe(pixel_norm(x2)); }, {x2});
    auto gamma = leaf({4}, 14), beta = leaf({4}, 15);
    expect_grads([&] { return probe(group_norm(x, 2, gamma, beta)); }, {x, gamma, beta});
    expect_grads([&] { return probe(minibatch_stddev(x)); }, {x});
    expect_grads([&] { return probe(minibatch_stddev(x, 0.25)); }, {x});
}

TEST_CASE("gradients of attention and losses") {
    auto q = leaf({2, 3, 2, 2}, 16), k = leaf({2, 3, 2, 2}, 17), v = leaf({2, 3, 2, 2}, 18);
    expect_grads([&] { return probe(spatial_attention(q, k, v)); }, {q, k, v});
    auto p = leaf({5}, 19);
    auto target = testing::uniform({5}, 20, 0.0, 1.0);
    expect_grads([&] { return mse_loss(p, target); }, {p});
    expect_grads([&] { return bce_with_logits(p, target); }, {p});
}

TEST_CASE("dropout is inverted and seeded") {
    Var x(Tensor({1000}, 1.0), true);
    std::mt19937_64 r1(5), r2(5);
    auto y1 = dropout(x, 0.2, r1), y2 = dropout(x, 0.2, r2);
    CHECK(y1.value() == y2.value());
    int zeros = 0;
    for (double v : y1.value().data()) {
        CHECK((v == 0.0 || std::abs(v - 1.25) < 1e-12));
        zeros += v == 0.0;
    }
    CHECK(zeros > 120);
    CHECK(zeros < 280);
}

TEST_CASE("no-grad guard suppresses graph recording") {
    auto a = leaf({3}, 21);
    {
        NoGradGuard g;
        auto y = scale(a, 2.0);
        CHECK(y.node()->parents.empty());
    }
    CHECK(grad_enabled());
}

TEST_CASE("bce with logits is stable for large logits") {
    Var z(Tensor({2}, std::vector<double>{800.0, -800.0}), false);
    auto l = bce_with_logits(z, Tensor({2}, std::vector<double>{1.0, 0.0}));
    CHECK(std::isfinite(l.value()[0]));
    CHECK(l.value()[0] < 1e-12);
}

TEST_CASE("adam minimizes a quadratic") {
    std::mt19937_64 rng(1);
    ParameterList ps{{"w", make_parameter({4}, rng, 1.0)}};
    Adam opt(ps, {});
    for (int i = 0; i < 500; ++i) {
        zero_grads(ps);
        backward(mse_loss(ps[0].var, Tensor({4}, 3.0)));
        opt.step(0.05);
    }
    CHECK(max_abs_diff(ps[0].var.value(), Tensor({4}, 3.0)) < 1e-3);
    CHECK(opt.steps() == 500);
}

TEST_CASE("frozen parameters are not updated") {
    std::mt19937_64 rng(2);
    ParameterList ps{{"a", make_parameter({3}, rng, 1.0)}, {"b", make_parameter({3}, rng, 1.0)}};
    const Tensor before = ps[1].var.value();
    set_trainable({ps[1]}, false);
    Adam opt(ps, {});
    backward(mean(mul(ps[0].var, ps[1].var)));
    opt.step(0.1);
    CHECK(ps[1].var.value() == before);
}

TEST_CASE("learning rate schedules") {
    CHECK(linear_decay_lr(1e-3, 0, 100) == doctest::Approx(1e-3));
    CHECK(linear_decay_lr(1e-3, 50, 100) == doctest::Approx(5e-4));
    CHECK(linear_decay_lr(1e-3, 150, 100) == 0.0);
    CHECK(cosine_annealed_lr(2e-4, 0, 1000) == doctest::Approx(2e-4));
    CHECK(std::abs(cosine_annealed_lr(2e-4, 1000, 1000)) < 1e-12);
    CHECK(std::abs(cosine_annealed_lr(2e-4, 500, 1000) - 1e-4) < 1e-12);
}

TEST_CASE("checkpoint round-trip is byte-identical") {
    Checkpoint c;
    c.kind = "test.kind";
    c.arch_hash = "abc";
    c.meta = {{"z", "1"}, {"a", "two words"}};
    c.tensors = {{"w", randn({2, 3}, 1)}, {"b", Tensor({1}, -0.0)}, {"e", Tensor({0})}};
    testing::TempDir dir("ckpt");
    save_checkpoint(c, dir / "a.ckpt");
    auto back = load_checkpoint(dir / "a.ckpt");
    CHECK(serialize_checkpoint(back) == serialize_checkpoint(c));
    CHECK(back.tensor("w") == c.tensors[0].second);
    CHECK(back.meta_at("a") == "two words");
    CHECK_THROWS_AS(expect_compatible(back, "test.kind", "xyz"), CheckpointError);
    CHECK_THROWS_AS(expect_compatible(back, "other", "abc"), CheckpointError);
    CHECK_NOTHROW(expect_compatible(back, "test.kind", "abc"));
}

TEST_CASE("checkpoint rejects garbage and truncation") {
    CHECK_THROWS_AS(deserialize_checkpoint("not a checkpoint"), CheckpointError);
    Checkpoint c;
    c.kind = "k";
    c.tensors = {{"w", randn({4}, 2)}};
    auto bytes = serialize_checkpoint(c);
    CHECK_THROWS_AS(deserialize_checkpoint(bytes.substr(0, bytes.size() - 3)), CheckpointError);
    testing::TempDir dir("ckpt2");
    CHECK_THROWS(load_checkpoint(dir / "missing.ckpt"));
}

TEST_CASE("snapshot and restore") {
    std::mt19937_64 rng(3);
    ParameterList src{{"a", make_parameter({2, 2}, rng, 1.0)}};
    ParameterList dst{{"a", make_parameter({2, 2}, rng, 1.0)}};
    Checkpoint c;
    c.tensors = snapshot(src, "p.");
    restore(dst, c, "p.");
    CHECK(dst[0].var.value() == src[0].var.value());
    ParameterList wrong{{"a", make_parameter({3}, rng, 1.0)}};
    CHECK_THROWS_AS(restore(wrong, c, "p."), CheckpointError);
    ParameterList missing{{"b", make_parameter({2, 2}, rng, 1.0)}};
    CHECK_THROWS_AS(restore(missing, c, "p."), CheckpointError);
}
