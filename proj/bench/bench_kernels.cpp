// Reference (serial loops) against parallel (im2col + GEMM + OpenMP) kernels
// on the shapes the default network actually runs.
#include <benchmark/benchmark.h>

#include <vector>

#include "ctwso/kernels.hpp"
#include "ctwso/network.hpp"
#include "ctwso/rng.hpp"
#include "ctwso/tensor.hpp"

using namespace ctwso;
using kernels::Backend;
using kernels::ConvGeometry;

namespace {

constexpr std::size_t kBatch = 16;

Tensor<float> random_tensor(std::vector<std::size_t> shape, std::uint64_t seed) {
    Tensor<float> t(std::move(shape));
    Rng rng(seed);
    for (auto& v : t.span()) v = static_cast<float>(rng.uniform(-1.0, 1.0));
    return t;
}

// args: backend, in_channels, out_channels, size, kernel
ConvGeometry geometry(const benchmark::State& state) {
    const auto k = static_cast<std::size_t>(state.range(4));
    return {static_cast<std::size_t>(state.range(1)), static_cast<std::size_t>(state.range(2)),
            static_cast<std::size_t>(state.range(3)), static_cast<std::size_t>(state.range(3)), k, k / 2};
}

void conv_args(benchmark::internal::Benchmark* b) {
    for (int backend : {0, 1}) {
        b->Args({backend, 1, 16, 64, 3});    // stem
        b->Args({backend, 48, 32, 64, 1});   // bottleneck, last layer of block 1
        b->Args({backend, 32, 8, 64, 3});    // growth conv
        b->Args({backend, 40, 32, 32, 1});   // bottleneck in block 2
    }
    b->ArgNames({"parallel", "cin", "cout", "size", "k"});
}

void BM_ConvForward(benchmark::State& state) {
    const auto backend = state.range(0) ? Backend::Parallel : Backend::Reference;
    const ConvGeometry g = geometry(state);
    const auto in = random_tensor({kBatch, g.in_channels, g.height, g.width}, 1);
    const auto w = random_tensor({g.out_channels, g.in_channels, g.kernel, g.kernel}, 2);
    const auto bias = random_tensor({g.out_channels}, 3);
    Tensor<float> out({kBatch, g.out_channels, g.height, g.width});
    for (auto _ : state) {
        kernels::conv2d_forward(backend, g, kBatch, in.data(), g.in_channels * g.pixels(), w.data(),
                                bias.data(), out.data(), g.out_channels * g.pixels());
        benchmark::DoNotOptimize(out.data());
    }
    state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(kBatch));
}
BENCHMARK(BM_ConvForward)->Apply(conv_args)->Unit(benchmark::kMillisecond);

void BM_ConvBackward(benchmark::State& state) {
    const auto backend = state.range(0) ? Backend::Parallel : Backend::Reference;
    const ConvGeometry g = geometry(state);
    const auto in = random_tensor({kBatch, g.in_channels, g.height, g.width}, 1);
    const auto w = random_tensor({g.out_channels, g.in_channels, g.kernel, g.kernel}, 2);
    const auto dout = random_tensor({kBatch, g.out_channels, g.height, g.width}, 4);
    Tensor<float> din({kBatch, g.in_channels, g.height, g.width});
    Tensor<float> dw(w.shape());
    Tensor<float> db({g.out_channels});
    for (auto _ : state) {
        kernels::conv2d_backward(backend, g, kBatch, in.data(), g.in_channels * g.pixels(), w.data(),
                                 dout.data(), g.out_channels * g.pixels(), din.data(),
                                 g.in_channels * g.pixels(), dw.data(), db.data());
        benchmark::DoNotOptimize(dw.data());
    }
    state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(kBatch));
}
BENCHMARK(BM_ConvBackward)->Apply(conv_args)->Unit(benchmark::kMillisecond);

void BM_AvgPool(benchmark::State& state) {
    const auto backend = state.range(0) ? Backend::Parallel : Backend::Reference;
    const std::size_t c = 48, s = 64;
    const auto in = random_tensor({kBatch, c, s, s}, 5);
    Tensor<float> out({kBatch, c, s / 2, s / 2});
    for (auto _ : state) {
        kernels::avgpool2_forward(backend, c, s, s, kBatch, in.data(), c * s * s, out.data(), c * s * s / 4);
        benchmark::DoNotOptimize(out.data());
    }
}
BENCHMARK(BM_AvgPool)->Arg(0)->Arg(1)->ArgName("parallel");

void BM_TrainStep(benchmark::State& state) {
    const auto backend = state.range(0) ? Backend::Parallel : Backend::Reference;
    const NetworkConfig cfg;
    const auto params = init_params<float>(cfg, 1);
    auto batch = random_tensor({kBatch, 1, 64, 64}, 6);
    for (auto& v : batch.span()) v = 0.5f * (v + 1.0f);
    const std::vector<float> dlogits(kBatch, 0.1f);
    auto grads = zeros_like(params);
    for (auto _ : state) {
        ForwardCache<float> cache;
        const auto logits = forward(params, cfg, batch, &cache, backend);
        const auto dx = backward(params, cfg, cache, std::span<const float>(dlogits), grads, backend);
        benchmark::DoNotOptimize(dx.data());
        benchmark::DoNotOptimize(logits.data());
    }
    state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(kBatch));
}
BENCHMARK(BM_TrainStep)->Arg(0)->Arg(1)->ArgName("parallel")->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
