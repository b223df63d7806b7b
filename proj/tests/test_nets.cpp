#include <stdexcept>
#include <set>
#include <cmath>

#include "doctest.h"
#include "vmlitho/gradcheck.hpp"
#include "vmlitho/nets.hpp"
#include "vmlitho/pipeline.hpp"

using namespace vmlitho;

namespace {

Raster random_raster(int w, int h, uint64_t seed) {
  Rng rng(seed);
  std::vector<double> px(static_cast<size_t>(w) * h);
  for (double& p : px) p = rng.next_double();
  return Raster(w, h, std::move(px));
}

GeneratorConfig small_gen() {
  GeneratorConfig cfg;
  cfg.depth = 3;
  cfg.base_channels = 4;
  return cfg;
}

}  // namespace

TEST_CASE("generator config invariants") {
  GeneratorConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  CHECK(cfg.receptive_field() >= 24);

  const GeneratorConfig back = GeneratorConfig::from_json(cfg.to_json());
  CHECK(back.to_json() == cfg.to_json());

  GeneratorConfig bad = cfg;
  bad.depth = 0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("generator output shape, bound, and determinism") {
  UNet gen(small_gen(), 42);
  Rng noise(1);
  gen.params().add_noise(noise, 0.2);  // make the head nontrivial

  const Raster input = random_raster(32, 32, 2);
  const FabParam y(0.4);
  UNetTapePtr t1 = make_unet_tape(), t2 = make_unet_tape();
  const DeformationMap m1 = gen.forward_map(input, y, *t1);
  const DeformationMap m2 = gen.forward_map(input, y, *t2);

  CHECK(m1.width == 32);
  CHECK(m1.height == 32);
  for (size_t i = 0; i < m1.dx.size(); ++i) {
    CHECK(std::abs(m1.dx[i]) <= gen.config().d_max);
    CHECK(std::abs(m1.dy[i]) <= gen.config().d_max);
  }
  CHECK(m1.dx == m2.dx);  // bitwise deterministic
  CHECK(m1.dy == m2.dy);
}

TEST_CASE("generator works at any size divisible by 2^depth") {
  UNet gen(small_gen(), 43);
  UNetTapePtr tape = make_unet_tape();
  const FabParam y(0.0);
  for (int n : {16, 24, 32, 64}) {
    const DeformationMap m = gen.forward_map(random_raster(n, n, n), y, *tape);
    CHECK(m.width == n);
    CHECK(m.height == n);
  }
  CHECK_THROWS_AS(gen.forward_map(random_raster(20, 20, 9), y, *tape), std::invalid_argument);
}

TEST_CASE("zero-initialized head yields the identity warp") {
  UNet gen(small_gen(), 44);
  UNetTapePtr tape = make_unet_tape();
  const DeformationMap m = gen.forward_map(random_raster(16, 16, 3), FabParam(0.7), *tape);
  for (size_t i = 0; i < m.dx.size(); ++i) {
    CHECK(m.dx[i] == 0.0);
    CHECK(m.dy[i] == 0.0);
  }
}

TEST_CASE("parameter conditioning changes the output") {
  UNet gen(small_gen(), 45);
  Rng noise(4);
  gen.params().add_noise(noise, 0.2);
  UNetTapePtr tape = make_unet_tape();
  const Raster input = random_raster(16, 16, 5);
  const DeformationMap a = gen.forward_map(input, FabParam(-0.9), *tape);
  const DeformationMap b = gen.forward_map(input, FabParam(0.9), *tape);
  CHECK(a.dx != b.dx);

  CHECK_THROWS_AS(gen.forward(input, nullptr, *tape), std::invalid_argument);
  const FabParam wrong(std::vector<double>{0.1, 0.2});
  CHECK_THROWS_AS(gen.forward(input, &wrong, *tape), std::invalid_argument);
}

TEST_CASE("mask generator squashes to [0,1] and composes with the forward model") {
  GeneratorConfig ocfg = small_gen();
  ocfg.param_dim = 0;
  ocfg.out_channels = 1;
  ocfg.sigmoid_head = true;
  UNet opc(ocfg, 46);
  Rng noise(6);
  opc.params().add_noise(noise, 0.2);

  UNetTapePtr tape = make_unet_tape();
  const Tensor k = opc.forward(random_raster(32, 32, 7), nullptr, *tape);
  CHECK(k.c == 1);
  CHECK(k.h == 32);
  CHECK(k.w == 32);
  for (double v : k.v) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }

  // untrained head: sigmoid(0) = 0.5 exactly
  UNet fresh(ocfg, 47);
  const Tensor k0 = fresh.forward(random_raster(16, 16, 8), nullptr, *tape);
  for (double v : k0.v) CHECK(v == 0.5);

  // the mask feeds the litho generator unchanged
  UNet gen(small_gen(), 48);
  std::vector<double> px(k.v.begin(), k.v.end());
  const Raster mask(32, 32, std::move(px));
  const DeformationMap m = gen.forward_map(mask, FabParam(0.2), *tape);
  CHECK(m.width == 32);
}

TEST_CASE("regressor shape, zero head, determinism") {
  RegressorConfig rcfg;
  rcfg.levels = 3;
  rcfg.base_channels = 4;
  Regressor reg(rcfg, 49);

  RegressorTapePtr tape = make_regressor_tape();
  const Raster img = random_raster(32, 32, 9);
  const std::vector<double> e1 = reg.forward(img, *tape);
  const std::vector<double> e2 = reg.forward(img, *tape);
  CHECK(e1.size() == 1);
  CHECK(e1 == e2);

  reg.zero_head();
  const std::vector<double> z = reg.forward(random_raster(32, 32, 10), *tape);
  CHECK(z[0] == 0.0);
}

TEST_CASE("zero upstream gradient leaves all parameter gradients zero") {
  UNet gen(small_gen(), 50);
  Rng noise(11);
  gen.params().add_noise(noise, 0.2);
  UNetTapePtr tape = make_unet_tape();
  const FabParam y(0.1);
  gen.forward(random_raster(16, 16, 12), &y, *tape);

  gen.params().zero_grad();
  gen.backward(Tensor(2, 16, 16), *tape, true, nullptr);
  for (size_t a = 0; a < gen.params().array_count(); ++a)
    for (double g : gen.params().array(static_cast<int>(a)).grad) CHECK(g == 0.0);
}

TEST_CASE("param store snapshot, restore and hashing") {
  UNet gen(small_gen(), 51);
  const uint64_t h0 = gen.params().value_hash();
  const auto snap = gen.params().snapshot();

  Rng noise(13);
  gen.params().add_noise(noise, 0.1);
  CHECK(gen.params().value_hash() != h0);

  gen.params().restore(snap);
  CHECK(gen.params().value_hash() == h0);
}

TEST_CASE("gradcheck passes on the default tiny instance") {
  const GradCheckReport report = gradcheck();
  if (!report.pass) MESSAGE(format_gradcheck_report(report));
  CHECK(report.pass);
  CHECK(report.seconds < 120.0);

  // every named array appears exactly once
  std::set<std::string> seen;
  for (const auto& r : report.arrays) {
    const std::string key = r.pipeline + "/" + r.model + "/" + r.array;
    CHECK(seen.insert(key).second);
    CHECK(r.checked > 0);
    CHECK(r.checked <= 200);
  }
}

TEST_CASE("gradcheck detects a corrupted analytic gradient") {
  GradCheckOptions opt;
  opt.corrupt_array = "generator.enc0.conv.w";
  const GradCheckReport report = gradcheck(opt);
  CHECK_FALSE(report.pass);
  bool flagged = false;
  for (const auto& r : report.arrays)
    if (!r.pass && r.model == "generator" && r.array == "enc0.conv.w") flagged = true;
  CHECK(flagged);
}
