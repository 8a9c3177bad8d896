#include <benchmark/benchmark.h>

#include <random>

#include "cipher/diffusion/ddim.hpp"
#include "cipher/diffusion/unet.hpp"
#include "cipher/nn/ops.hpp"
#include "cipher/progan/networks.hpp"

using namespace cipher;

namespace {

nn::Tensor randn(nn::Shape shape, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal;
    nn::Tensor t(std::move(shape));
    for (auto& v : t.data()) v = normal(rng);
    return t;
}

void BM_Conv2dForward(benchmark::State& state) {
    const auto c = state.range(0), r = state.range(1);
    nn::Var x(randn({16, c, r, r}, 1));
    nn::Var w(randn({c, c, 3, 3}, 2));
    nn::Var b(nn::Tensor(nn::Shape{c}));
    nn::NoGradGuard g;
    for (auto _ : state) benchmark::DoNotOptimize(nn::conv2d(x, w, b, 1, 1).value().ptr());
}
BENCHMARK(BM_Conv2dForward)->Args({32, 16})->Args({64, 32});

void BM_Conv2dBackward(benchmark::State& state) {
    const auto c = state.range(0), r = state.range(1);
    nn::Var x(randn({16, c, r, r}, 1), true);
    nn::Var w(randn({c, c, 3, 3}, 2), true);
    nn::Var b(nn::Tensor(nn::Shape{c}), true);
    for (auto _ : state) {
        auto y = nn::mean(nn::conv2d(x, w, b, 1, 1));
        nn::backward(y);
        x.zero_grad();
        w.zero_grad();
        b.zero_grad();
    }
}
BENCHMARK(BM_Conv2dBackward)->Args({32, 16})->Args({64, 32});

void BM_DiscriminatorForward(benchmark::State& state) {
    progan::ProganArch arch{16, {32, 32, 32}, 64};
    progan::Discriminator d(arch, 1);
    nn::Var x(randn({16, 3, 16, 16}, 3));
    nn::NoGradGuard g;
    const auto stage = progan::ProgressiveStage::stable(2);
    for (auto _ : state) benchmark::DoNotOptimize(d.forward(x, stage).value().ptr());
}
BENCHMARK(BM_DiscriminatorForward);

void BM_UNetForward(benchmark::State& state) {
    diffusion::UNetSpec spec;
    spec.resolution = 16;
    spec.base_channels = static_cast<int>(state.range(0));
    spec.attention_resolutions = {8};
    diffusion::UNet net(spec, 1);
    nn::Var x(randn({32, 3, 16, 16}, 4));
    std::vector<int> t(32, 100);
    nn::NoGradGuard g;
    for (auto _ : state) benchmark::DoNotOptimize(net.forward(x, t).value().ptr());
}
BENCHMARK(BM_UNetForward)->Arg(16)->Arg(32);

void BM_UNetTrainStep(benchmark::State& state) {
    diffusion::UNetSpec spec;
    spec.resolution = 16;
    spec.base_channels = static_cast<int>(state.range(0));
    spec.attention_resolutions = {8};
    diffusion::UNet net(spec, 1);
    nn::Var x(randn({32, 3, 16, 16}, 4));
    const auto target = randn({32, 3, 16, 16}, 5);
    std::vector<int> t(32, 100);
    for (auto _ : state) {
        auto loss = nn::mse_loss(net.forward(x, t), target);
        nn::backward(loss);
        nn::zero_grads(net.parameters());
    }
}
BENCHMARK(BM_UNetTrainStep)->Arg(16)->Arg(32);

void BM_DdimStep(benchmark::State& state) {
    const auto sched = diffusion::make_schedule(1000, 1e-4, 0.02);
    const auto x = randn({32, 3, 64, 64}, 6);
    const auto eps = randn({32, 3, 64, 64}, 7);
    for (auto _ : state) benchmark::DoNotOptimize(diffusion::ddim_step(x, eps, 500, 495, sched).ptr());
}
BENCHMARK(BM_DdimStep);

}  // namespace
BENCHMARK_MAIN();
