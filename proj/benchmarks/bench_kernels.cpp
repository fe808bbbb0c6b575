#include <benchmark/benchmark.h>

#include "rfa/nn_ops.hpp"
#include "rfa/rfa_layers.hpp"

using namespace rfa;

static void BM_Conv2dForward(benchmark::State& state) {
    const int64_t c = state.range(0), hw = state.range(1);
    SeededRng rng(1);
    const Tensor x = randn({1, c, hw, hw}, rng);
    ConvParams p;
    p.weight = randn({c, c, 3, 3}, rng);
    p.padding = 1;
    for (auto _ : state) {
        Tensor y = conv2d(x, p);
        benchmark::DoNotOptimize(y.data.data());
    }
    state.SetItemsProcessed(state.iterations() * c * c * hw * hw * 9);
}
BENCHMARK(BM_Conv2dForward)->Args({16, 32})->Args({32, 32})->Args({32, 64});

static void BM_UnfoldExtract(benchmark::State& state) {
    const int64_t c = state.range(0), hw = state.range(1);
    SeededRng rng(2);
    const Tensor x = randn({1, c, hw, hw}, rng);
    for (auto _ : state) {
        RfFeature f = unfold(x, 3, 1, 1);
        benchmark::DoNotOptimize(f.data.data.data());
    }
}
BENCHMARK(BM_UnfoldExtract)->Args({16, 32})->Args({32, 32})->Args({32, 64});

static void BM_GroupConvExtract(benchmark::State& state) {
    const int64_t c = state.range(0), hw = state.range(1);
    SeededRng rng(3);
    const Tensor x = randn({1, c, hw, hw}, rng);
    const ConvParams selector = selector_weights(c, 3, 1, 1);
    for (auto _ : state) {
        RfFeature f = rf_extract_groupconv(x, selector);
        benchmark::DoNotOptimize(f.data.data.data());
    }
}
BENCHMARK(BM_GroupConvExtract)->Args({16, 32})->Args({32, 32})->Args({32, 64});

static void BM_RfRearrange(benchmark::State& state) {
    const int64_t c = state.range(0), hw = state.range(1);
    SeededRng rng(4);
    const RfFeature f = unfold(randn({1, c, hw, hw}, rng), 3, 1, 1);
    for (auto _ : state) {
        Tensor y = rf_rearrange(f);
        benchmark::DoNotOptimize(y.data.data());
    }
}
BENCHMARK(BM_RfRearrange)->Args({16, 32})->Args({32, 32});

static void BM_RfaConvForward(benchmark::State& state) {
    const int64_t c = state.range(0), hw = state.range(1);
    SeededRng rng(5);
    RfaConvLayer layer = RfaConvLayer::make(c, c, 3, 1, rng);
    const Tensor x = randn({1, c, hw, hw}, rng);
    const ForwardOpts opts{.train = false, .track_running = false};
    for (auto _ : state) {
        Tape t;
        const int32_t y = layer.forward(t, t.leaf(x), opts);
        benchmark::DoNotOptimize(t.value(y).data.data());
    }
}
BENCHMARK(BM_RfaConvForward)->Args({16, 32})->Args({32, 32});

BENCHMARK_MAIN();
