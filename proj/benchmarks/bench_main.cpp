#include <benchmark/benchmark.h>

#include "vmlitho/diffwarp.hpp"
#include "vmlitho/faboracle.hpp"
#include "vmlitho/layoutgen.hpp"
#include "vmlitho/metrics.hpp"
#include "vmlitho/pipeline.hpp"
#include "vmlitho/rng.hpp"

using namespace vmlitho;

namespace {

Raster random_raster(int n, uint64_t seed) {
  Rng rng(seed);
  std::vector<double> px(static_cast<size_t>(n) * n);
  for (double& p : px) p = rng.next_double();
  return Raster(n, n, std::move(px));
}

DeformationMap random_map(int n, uint64_t seed) {
  Rng rng(seed);
  DeformationMap m(n, n);
  for (size_t i = 0; i < m.dx.size(); ++i) {
    m.dx[i] = rng.next_uniform(-3.0, 3.0);
    m.dy[i] = rng.next_uniform(-3.0, 3.0);
  }
  return m;
}

void BM_Warp(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  const Raster src = random_raster(n, 1);
  const DeformationMap m = random_map(n, 2);
  for (auto _ : state) benchmark::DoNotOptimize(warp(src, m));
}
BENCHMARK(BM_Warp)->Arg(64)->Arg(256);

void BM_GaussianBlur(benchmark::State& state) {
  const Raster src = random_raster(64, 3);
  const double sigma = state.range(0) / 10.0;
  for (auto _ : state) benchmark::DoNotOptimize(gaussian_blur(src, sigma));
}
BENCHMARK(BM_GaussianBlur)->Arg(14)->Arg(50);

void BM_OracleSimulate(benchmark::State& state) {
  const BinaryRaster layout = generate_layout(LayoutSpec{}, 4);
  const OracleConfig cfg;
  const FabParam y(0.3);
  for (auto _ : state) benchmark::DoNotOptimize(simulate(layout, y, cfg));
}
BENCHMARK(BM_OracleSimulate);

void BM_Ssim(benchmark::State& state) {
  const Raster a = random_raster(64, 5);
  const Raster b = random_raster(64, 6);
  for (auto _ : state) benchmark::DoNotOptimize(ssim(a, b));
}
BENCHMARK(BM_Ssim);

void BM_GeneratorForward(benchmark::State& state) {
  GeneratorConfig cfg;  // default desk-scale net
  UNet gen(cfg, 7);
  Rng noise(8);
  gen.params().add_noise(noise, 0.1);
  const Raster input = random_raster(64, 9);
  const FabParam y(0.3);
  UNetTapePtr tape = make_unet_tape();
  for (auto _ : state) benchmark::DoNotOptimize(gen.forward(input, &y, *tape));
}
BENCHMARK(BM_GeneratorForward);

void BM_LithoTrainStep(benchmark::State& state) {
  GeneratorConfig gcfg;
  RegressorConfig rcfg;
  UNet gen(gcfg, 10);
  Regressor reg(rcfg, 11);
  Rng noise(12);
  gen.params().add_noise(noise, 0.1);
  const BinaryRaster layout = generate_layout(LayoutSpec{}, 13);
  const Raster gt = simulate(layout, FabParam(0.3), OracleConfig{}).raster();
  const LossWeights w;
  for (auto _ : state) {
    gen.params().zero_grad();
    benchmark::DoNotOptimize(litho_sample_grads(gen, reg, layout, gt, FabParam(0.3), w,
                                                {.accumulate_generator = true,
                                                 .accumulate_regressor = false}));
  }
}
BENCHMARK(BM_LithoTrainStep);

}  // namespace

BENCHMARK_MAIN();
