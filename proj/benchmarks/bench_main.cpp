#include <benchmark/benchmark.h>

#include "dehaze/network.hpp"
#include "dehaze/objective.hpp"
#include "dehaze/spectral.hpp"
#include "dehaze/wavelet.hpp"

using namespace dehaze;

namespace {

Var<float> random_input(int c, int h, int w) {
  Rng rng(1);
  return Var<float>::constant(Tensor<float>::uniform(Shape{1, c, h, w}, rng, 0.0f, 1.0f));
}

void BM_Rfft2(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  const auto x = random_input(16, n, n);
  NoGradGuard ng;
  for (auto _ : state) benchmark::DoNotOptimize(rfft2(x).re.value().raw());
}
// 96 and 100 take the Bluestein path.
BENCHMARK(BM_Rfft2)->Arg(64)->Arg(96)->Arg(100)->Arg(128);

void BM_Conv3x3(benchmark::State& state) {
  const int c = static_cast<int>(state.range(0));
  const auto x = random_input(c, 64, 64);
  Rng rng(2);
  const auto w = Var<float>::constant(Tensor<float>::uniform(Shape{c, c, 3, 3}, rng, -0.1f, 0.1f));
  NoGradGuard ng;
  for (auto _ : state) benchmark::DoNotOptimize(conv2d(x, w, Var<float>(), ConvSpec{1, 1, 1}).value().raw());
  state.SetItemsProcessed(state.iterations() * 64LL * 64 * c * c * 9);
}
BENCHMARK(BM_Conv3x3)->Arg(16)->Arg(32)->Arg(64);

void BM_Dwt2(benchmark::State& state) {
  const auto x = random_input(32, 128, 128);
  NoGradGuard ng;
  for (auto _ : state) benchmark::DoNotOptimize(dwt2(x).ll.value().raw());
}
BENCHMARK(BM_Dwt2);

void BM_MsSsim(benchmark::State& state) {
  const auto a = random_input(3, 128, 128);
  const auto b = random_input(3, 128, 128);
  const auto cfg = SsimConfig::with_scales(3);
  NoGradGuard ng;
  for (auto _ : state) benchmark::DoNotOptimize(ms_ssim_loss(a, b, cfg).value().item());
}
BENCHMARK(BM_MsSsim);

void BM_GeneratorForward(benchmark::State& state) {
  Generator<float> g(ModelConfig::toy(), 0);
  g.set_training(false);
  const auto x = random_input(3, 64, 64);
  NoGradGuard ng;
  for (auto _ : state) benchmark::DoNotOptimize(g.forward(x).value().raw());
}
BENCHMARK(BM_GeneratorForward)->Unit(benchmark::kMillisecond);

void BM_GeneratorTrainStep(benchmark::State& state) {
  Generator<float> g(ModelConfig::toy(), 0);
  Rng rng(3);
  const auto x = Var<float>::constant(Tensor<float>::uniform(Shape{4, 3, 64, 64}, rng, 0.0f, 1.0f));
  for (auto _ : state) {
    g.registry().zero_grad();
    backward(mean(g.forward(x)));
  }
}
BENCHMARK(BM_GeneratorTrainStep)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
