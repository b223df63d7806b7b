#include <stdexcept>
#include <cmath>
#include <map>

#include "doctest.h"
#include "vmlitho/faboracle.hpp"
#include "vmlitho/layoutgen.hpp"
#include "vmlitho/rng.hpp"

using namespace vmlitho;

namespace {

std::map<std::string, BinaryRaster> probes_by_name() {
  std::map<std::string, BinaryRaster> m;
  for (auto& p : probe_layouts()) m.emplace(p.name, std::move(p.layout));
  return m;
}

int width_at(const BinaryRaster& b, int row, int col) {
  for (auto [start, len] : row_runs(b, row))
    if (col >= start && col < start + len) return len;
  return 0;
}

}  // namespace

TEST_CASE("fab parameter validation and grid") {
  CHECK_THROWS_AS(FabParam(1.5), std::invalid_argument);
  CHECK_THROWS_AS(FabParam(std::vector<double>{0.2, -1.2}), std::invalid_argument);
  CHECK_THROWS_AS(FabParam(std::vector<double>{}), std::invalid_argument);
  CHECK(FabParam::training_grid().size() == 7);
  for (double y : FabParam::training_grid()) CHECK(std::abs(y) <= 0.9);
}

TEST_CASE("oracle config validation and json round trip") {
  OracleConfig cfg;
  CHECK_NOTHROW(cfg.validate());

  OracleConfig bad = cfg;
  bad.t1 = bad.t0 + 0.1;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = cfg;
  bad.sigma_density = bad.sigma_fine;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);

  const OracleConfig back = OracleConfig::from_json(cfg.to_json());
  CHECK(back.sigma_fine == cfg.sigma_fine);
  CHECK(back.sigma_density == cfg.sigma_density);
  CHECK(back.alpha == cfg.alpha);
  CHECK(back.t0 == cfg.t0);
  CHECK(back.t1 == cfg.t1);
}

TEST_CASE("gaussian blur preserves constants") {
  for (double sigma : {0.7, 1.4, 5.0}) {
    const Raster out = gaussian_blur(Raster(16, 16, 0.37), sigma);
    for (double p : out.pixels()) CHECK(p == doctest::Approx(0.37).epsilon(1e-12));
  }
}

TEST_CASE("gaussian blur impulse response matches the kernel product") {
  Raster impulse(9, 9, 0.0);
  impulse.at(4, 4) = 1.0;
  const double sigma = 1.0;
  const Raster out = gaussian_blur(impulse, sigma);

  // independent kernel evaluation
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  double sum = 0.0, center = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    const double w = std::exp(-i * i / (2.0 * sigma * sigma));
    sum += w;
    if (i == 0) center = w;
  }
  const double k0 = center / sum;
  CHECK(out.at(4, 4) == doctest::Approx(k0 * k0).epsilon(1e-12));
}

TEST_CASE("gaussian blur is monotone in the input") {
  Rng rng(11);
  std::vector<double> lo(64), hi(64);
  for (size_t i = 0; i < lo.size(); ++i) {
    lo[i] = rng.next_double() * 0.5;
    hi[i] = lo[i] + rng.next_double() * 0.5;
  }
  const Raster bl = gaussian_blur(Raster(8, 8, lo), 1.3);
  const Raster bh = gaussian_blur(Raster(8, 8, hi), 1.3);
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x) CHECK(bl.at(x, y) <= bh.at(x, y) + 1e-15);
}

TEST_CASE("threshold law is linear and decreasing") {
  OracleConfig nominal;
  nominal.sigma_fine = 1.0;
  nominal.sigma_density = 8.0;
  nominal.alpha = 0.25;
  nominal.t0 = 0.40;
  nominal.t1 = 0.12;
  CHECK(threshold_for(FabParam(0.0), nominal) == doctest::Approx(0.40).epsilon(1e-15));
  CHECK(threshold_for(FabParam(0.9), nominal) == doctest::Approx(0.292).epsilon(1e-15));
  CHECK(threshold_for(FabParam(-0.9), nominal) == doctest::Approx(0.508).epsilon(1e-15));

  const OracleConfig cfg;
  CHECK(threshold_for(FabParam(0.0), cfg) == cfg.t0);
  CHECK(threshold_for(FabParam(0.9), cfg) < threshold_for(FabParam(-0.9), cfg));
}

TEST_CASE("simulate maps empty to empty and full to full") {
  const OracleConfig cfg;
  for (double y : {-1.0, -0.3, 0.0, 0.9, 1.0}) {
    CHECK(simulate(BinaryRaster(32, 32, 0.0), FabParam(y), cfg).foreground_count() == 0);
    CHECK(simulate(BinaryRaster(32, 32, 1.0), FabParam(y), cfg).foreground_count() == 32 * 32);
  }
}

TEST_CASE("simulate ignores trailing parameter components") {
  const OracleConfig cfg;
  const BinaryRaster layout = probes_by_name().at("isolated-line");
  const BinaryRaster a = simulate(layout, FabParam(0.3), cfg);
  const BinaryRaster b = simulate(layout, FabParam(std::vector<double>{0.3, -0.8, 0.5}), cfg);
  CHECK(a == b);
}

TEST_CASE("oracle property: foreground area is monotone in y") {
  const OracleConfig cfg;
  auto probes = probes_by_name();
  for (const auto& [name, layout] : probes) {
    int prev = -1;
    for (int k = 0; k <= 12; ++k) {
      const double y = -0.9 + 0.15 * k;
      const int area = simulate(layout, FabParam(y), cfg).foreground_count();
      if (prev >= 0) CHECK(area >= prev);
      prev = area;
    }
  }
  // strictly increasing for the isolated line across the endpoints
  const BinaryRaster& iso = probes.at("isolated-line");
  CHECK(simulate(iso, FabParam(0.9), cfg).foreground_count() >
        simulate(iso, FabParam(-0.9), cfg).foreground_count());
}

TEST_CASE("oracle property: convex corner rounds away at y=0") {
  const OracleConfig cfg;
  const BinaryRaster sim_l = simulate(probes_by_name().at("l-bend"), FabParam(0.0), cfg);
  const PixelCoord c = lbend_corner();
  CHECK(sim_l.at(c.x, c.y) == 0.0);
}

TEST_CASE("oracle property: necking at the tip-to-line(3) gap") {
  const OracleConfig cfg;
  auto probes = probes_by_name();
  const BinaryRaster sim_tip = simulate(probes.at("tip-to-line-3"), FabParam(0.0), cfg);
  const BinaryRaster sim_iso = simulate(probes.at("isolated-line"), FabParam(0.0), cfg);

  int neck = 1 << 20;
  for (int row = 29; row <= 34; ++row) {
    const int w = width_at(sim_tip, row, 41);
    if (w > 0) neck = std::min(neck, w);
  }
  const int iso_width = width_at(sim_iso, 32, 31);
  REQUIRE(iso_width > 0);
  CHECK(neck < iso_width);
}

TEST_CASE("oracle property: open-area lines at least as wide as dense interior lines") {
  const OracleConfig cfg;
  auto probes = probes_by_name();
  for (double y : FabParam::training_grid()) {
    const BinaryRaster si = simulate(probes.at("isolated-line"), FabParam(y), cfg);
    const BinaryRaster sd = simulate(probes.at("dense-lines"), FabParam(y), cfg);
    int iso_w = width_at(si, 32, 31);
    if (iso_w == 0) iso_w = width_at(si, 32, 32);
    int dense_w = width_at(sd, 32, 31);
    if (dense_w == 0) dense_w = width_at(sd, 32, 32);
    REQUIRE(iso_w > 0);
    REQUIRE(dense_w > 0);
    CHECK(iso_w >= dense_w);
  }
}

TEST_CASE("simulate is deterministic") {
  const OracleConfig cfg;
  const BinaryRaster layout = generate_layout(LayoutSpec{}, 17);
  CHECK(simulate(layout, FabParam(0.3), cfg) == simulate(layout, FabParam(0.3), cfg));
}
