#include <algorithm>
#include <stdexcept>
#include <cmath>
#include <cstdio>
#include <filesystem>

#include "doctest.h"
#include "vmlitho/diffwarp.hpp"
#include "vmlitho/rng.hpp"

using namespace vmlitho;

namespace {

Raster random_raster(int w, int h, uint64_t seed) {
  Rng rng(seed);
  std::vector<double> px(static_cast<size_t>(w) * h);
  for (double& p : px) p = rng.next_double();
  return Raster(w, h, std::move(px));
}

// cell-interior fractional offsets so finite differences stay one-sided-free
DeformationMap random_map(int w, int h, uint64_t seed) {
  Rng rng(seed);
  DeformationMap m(w, h);
  for (size_t i = 0; i < m.dx.size(); ++i) {
    m.dx[i] = rng.next_int(-2, 1) + rng.next_uniform(0.1, 0.9);
    m.dy[i] = rng.next_int(-2, 1) + rng.next_uniform(0.1, 0.9);
  }
  return m;
}

// independent per-pixel reference: same clamp/floor semantics, naive loops
double ref_sample(const Raster& img, double x, double y) {
  const int W = img.width(), H = img.height();
  x = std::min(std::max(x, 0.0), static_cast<double>(W - 1));
  y = std::min(std::max(y, 0.0), static_cast<double>(H - 1));
  const int x0 = static_cast<int>(std::floor(x));
  const int y0 = static_cast<int>(std::floor(y));
  const int x1 = std::min(x0 + 1, W - 1);
  const int y1 = std::min(y0 + 1, H - 1);
  const double fx = x - x0, fy = y - y0;
  double acc = 0.0;
  acc += (1 - fx) * (1 - fy) * img.at(x0, y0);
  acc += fx * (1 - fy) * img.at(x1, y0);
  acc += (1 - fx) * fy * img.at(x0, y1);
  acc += fx * fy * img.at(x1, y1);
  return acc;
}

Raster ref_warp(const Raster& src, const DeformationMap& m) {
  Raster out(src.width(), src.height(), 0.0);
  for (int y = 0; y < src.height(); ++y)
    for (int x = 0; x < src.width(); ++x) {
      const size_t i = m.index(x, y);
      out.at(x, y) = std::clamp(ref_sample(src, x + m.dx[i], y + m.dy[i]), 0.0, 1.0);
    }
  return out;
}

}  // namespace

TEST_CASE("bilinear sampling at lattice points returns pixel values") {
  const Raster img = random_raster(5, 4, 1);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 5; ++x) CHECK(bilinear_sample(img, x, y) == img.at(x, y));
}

TEST_CASE("bilinear sampling interpolates the footnote formula") {
  const Raster img(2, 2, {0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0});  // [0, 1/3; 2/3, 1]
  CHECK(bilinear_sample(img, 0.5, 0.5) == doctest::Approx(0.5).epsilon(1e-15));
  // 2x2 [0,1;2,3] scaled into range: midpoint equals the mean of the corners
  const Raster img2(2, 2, {0.0, 0.1, 0.2, 0.3});
  CHECK(bilinear_sample(img2, 0.5, 0.5) == doctest::Approx(0.15).epsilon(1e-15));
}

TEST_CASE("bilinear sampling clamps out-of-range coordinates") {
  const Raster img = random_raster(6, 6, 2);
  CHECK(bilinear_sample(img, -5.0, -5.0) == img.at(0, 0));
  CHECK(bilinear_sample(img, 100.0, 100.0) == img.at(5, 5));
}

TEST_CASE("warp with the zero map is the identity") {
  const Raster src = random_raster(12, 9, 3);
  const Raster out = warp(src, DeformationMap(12, 9));
  for (int y = 0; y < 9; ++y)
    for (int x = 0; x < 12; ++x) CHECK(out.at(x, y) == src.at(x, y));
}

TEST_CASE("constant dx=1 shifts left with right border replication") {
  const Raster src = random_raster(8, 5, 4);
  DeformationMap m(8, 5);
  std::fill(m.dx.begin(), m.dx.end(), 1.0);
  const Raster out = warp(src, m);
  for (int y = 0; y < 5; ++y)
    for (int x = 0; x < 8; ++x)
      CHECK(out.at(x, y) == src.at(std::min(x + 1, 7), y));
}

TEST_CASE("warp matches the naive reference on random instances") {
  for (uint64_t s = 0; s < 100; ++s) {
    const Raster src = random_raster(16, 16, 100 + s);
    const DeformationMap m = random_map(16, 16, 500 + s);
    const Raster a = warp(src, m);
    const Raster b = ref_warp(src, m);
    for (int y = 0; y < 16; ++y)
      for (int x = 0; x < 16; ++x) CHECK(std::abs(a.at(x, y) - b.at(x, y)) <= 1e-12);
  }
}

TEST_CASE("warp is linear in the source for a fixed map") {
  const Raster s1 = random_raster(10, 10, 7);
  const Raster s2 = random_raster(10, 10, 8);
  const DeformationMap m = random_map(10, 10, 9);
  const double a = 0.3, b = 0.7;
  std::vector<double> mix(100);
  for (int i = 0; i < 100; ++i) mix[i] = a * s1.pixels()[i] + b * s2.pixels()[i];
  const Raster combined = warp(Raster(10, 10, std::move(mix)), m);
  const Raster w1 = warp(s1, m);
  const Raster w2 = warp(s2, m);
  for (int y = 0; y < 10; ++y)
    for (int x = 0; x < 10; ++x)
      CHECK(combined.at(x, y) == doctest::Approx(a * w1.at(x, y) + b * w2.at(x, y)).epsilon(1e-12));
}

TEST_CASE("warp output stays within the source range") {
  const Raster src = random_raster(12, 12, 10);
  const DeformationMap m = random_map(12, 12, 11);
  const Raster out = warp(src, m);
  const auto [lo, hi] = std::minmax_element(src.pixels().begin(), src.pixels().end());
  for (double p : out.pixels()) {
    CHECK(p >= *lo - 1e-15);
    CHECK(p <= *hi + 1e-15);
  }
}

TEST_CASE("warp rejects mismatched grids") {
  CHECK_THROWS_AS(warp(Raster(4, 4, 0.5), DeformationMap(5, 4)), std::invalid_argument);
}

TEST_CASE("identity-warp adjoint passes upstream through") {
  const Raster src = random_raster(6, 6, 12);
  GradientField up(6, 6);
  std::fill(up.values.begin(), up.values.end(), 1.0);
  const WarpBackward wb = warp_gradients(src, DeformationMap(6, 6), up);
  for (int y = 1; y < 5; ++y)
    for (int x = 1; x < 5; ++x) CHECK(wb.grad_source.at(x, y) == 1.0);
}

TEST_CASE("zero upstream produces zero gradients") {
  const Raster src = random_raster(6, 6, 13);
  const DeformationMap m = random_map(6, 6, 14);
  const WarpBackward wb = warp_gradients(src, m, GradientField(6, 6));
  for (double v : wb.grad_source.values) CHECK(v == 0.0);
  for (size_t i = 0; i < wb.grad_map.dx.size(); ++i) {
    CHECK(wb.grad_map.dx[i] == 0.0);
    CHECK(wb.grad_map.dy[i] == 0.0);
  }
}

TEST_CASE("warp gradients match central finite differences") {
  const int n = 8;
  const Raster src = random_raster(n, n, 20);
  const DeformationMap m = random_map(n, n, 21);
  GradientField up(n, n);
  Rng rng(22);
  for (double& v : up.values) v = rng.next_uniform(-1.0, 1.0);

  auto loss = [&](const Raster& s, const DeformationMap& mm) {
    const Raster out = warp(s, mm);
    double acc = 0.0;
    for (int y = 0; y < n; ++y)
      for (int x = 0; x < n; ++x) acc += up.at(x, y) * out.at(x, y);
    return acc;
  };

  const WarpBackward wb = warp_gradients(src, m, up);
  const double h = 1e-3;

  DeformationMap mp = m;
  for (int k = 0; k < 40; ++k) {
    const size_t i = rng.next_below(mp.dx.size());
    for (auto [chan, grad] : {std::pair{&mp.dx, &wb.grad_map.dx}, std::pair{&mp.dy, &wb.grad_map.dy}}) {
      const double saved = (*chan)[i];
      (*chan)[i] = saved + h;
      const double fp = loss(src, mp);
      (*chan)[i] = saved - h;
      const double fm = loss(src, mp);
      (*chan)[i] = saved;
      const double numeric = (fp - fm) / (2 * h);
      const double analytic = (*grad)[i];
      const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
      CHECK(std::abs(analytic - numeric) / denom <= 1e-4);
    }
  }

  // source gradients: warp is linear in the source, so fd is exact
  Raster sp = src;
  for (int k = 0; k < 40; ++k) {
    const int x = static_cast<int>(rng.next_below(n));
    const int y = static_cast<int>(rng.next_below(n));
    const double saved = sp.at(x, y);
    const double hh = std::min({h, saved, 1.0 - saved});  // stay a valid raster
    if (hh <= 0) continue;
    sp.at(x, y) = saved + hh;
    const double fp = loss(sp, m);
    sp.at(x, y) = saved - hh;
    const double fm = loss(sp, m);
    sp.at(x, y) = saved;
    const double numeric = (fp - fm) / (2 * hh);
    const double analytic = wb.grad_source.at(x, y);
    const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
    CHECK(std::abs(analytic - numeric) / denom <= 1e-4);
  }
}

TEST_CASE("deformation map validation") {
  DeformationMap m(4, 4);
  CHECK_NOTHROW(m.validate());
  m.dx[3] = std::nan("");
  CHECK_THROWS_AS(m.validate(), std::invalid_argument);
  m.dx[3] = 100.0;
  CHECK_THROWS_AS(m.validate(), std::invalid_argument);
}

TEST_CASE("deformation rendering is deterministic and magnitude-monotone") {
  DeformationMap zero(32, 32);
  const RgbImage a = render_deformation(zero);
  const RgbImage b = render_deformation(zero);
  CHECK(a.data == b.data);
  // zero map: uniform color everywhere, no glyphs
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 32; ++x) {
      CHECK(a.data[(y * 32 + x) * 3 + 0] == a.data[0]);
      CHECK(a.data[(y * 32 + x) * 3 + 2] == a.data[2]);
    }

  // constant map: uniform color away from the 8 px glyph lattice rows
  DeformationMap c(32, 32);
  std::fill(c.dx.begin(), c.dx.end(), 2.0);
  const RgbImage ci = render_deformation(c);
  for (int x = 1; x < 31; ++x) CHECK(ci.data[(0 * 32 + x) * 3] == ci.data[3]);

  // dx ramp: red channel non-decreasing along x on a glyph-free row
  DeformationMap ramp(32, 32);
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 32; ++x) ramp.dx[ramp.index(x, y)] = 4.0 * x / 31.0;
  const RgbImage ri = render_deformation(ramp);
  for (int x = 1; x < 32; ++x)
    CHECK(ri.data[(0 * 32 + x) * 3] >= ri.data[(0 * 32 + x - 1) * 3]);
}

TEST_CASE("deformation map file round trip") {
  DeformationMap m(6, 5);
  Rng rng(30);
  for (size_t i = 0; i < m.dx.size(); ++i) {
    m.dx[i] = rng.next_int(-8, 8) * 0.25;  // exactly representable in float32
    m.dy[i] = rng.next_int(-8, 8) * 0.25;
  }
  const std::string path =
      (std::filesystem::temp_directory_path() / "vmlitho_test_map.bin").string();
  save_deformation(m, path);
  const DeformationMap back = load_deformation(path);
  CHECK(back.width == 6);
  CHECK(back.height == 5);
  CHECK(back.dx == m.dx);
  CHECK(back.dy == m.dy);
  std::remove(path.c_str());

  CHECK_THROWS_AS(load_deformation("/nonexistent/map.bin"), std::runtime_error);
}
