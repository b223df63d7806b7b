#include <stdexcept>
#include <cmath>

#include "doctest.h"
#include "vmlitho/losses.hpp"
#include "vmlitho/rng.hpp"

using namespace vmlitho;

namespace {

Raster random_raster(int w, int h, uint64_t seed) {
  Rng rng(seed);
  std::vector<double> px(static_cast<size_t>(w) * h);
  for (double& p : px) p = rng.next_uniform(0.02, 0.98);
  return Raster(w, h, std::move(px));
}

DeformationMap random_map(int w, int h, uint64_t seed) {
  Rng rng(seed);
  DeformationMap m(w, h);
  for (size_t i = 0; i < m.dx.size(); ++i) {
    m.dx[i] = rng.next_uniform(-2.0, 2.0);
    m.dy[i] = rng.next_uniform(-2.0, 2.0);
  }
  return m;
}

EdgeWeightMap unit_weights(int w, int h) {
  EdgeWeightMap ew;
  ew.width = w;
  ew.height = h;
  ew.w.assign(static_cast<size_t>(w) * h, 1.0);
  return ew;
}

constexpr double kStep = 1e-3;
constexpr double kTol = 1e-4;

double rel_err(double a, double n) {
  return std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1e-8});
}

}  // namespace

TEST_CASE("l_rec values") {
  const Raster x = random_raster(6, 6, 1);
  CHECK(l_rec(x, x) == 0.0);
  CHECK(l_rec(Raster(4, 4, 1.0), Raster(4, 4, 0.0)) == 1.0);
  const Raster i(2, 2, {1.0, 0.0, 0.0, 0.0});
  const Raster j(2, 2, {0.5, 0.0, 0.0, 0.0});
  CHECK(l_rec(i, j) == doctest::Approx(0.125).epsilon(1e-15));
  CHECK_THROWS_AS(l_rec(Raster(2, 2, 0.0), Raster(3, 2, 0.0)), std::invalid_argument);
}

TEST_CASE("l_var values") {
  const Raster x = random_raster(5, 5, 2);
  CHECK(l_var(x, x) == 0.0);
  // constant difference is invisible to TV
  CHECK(l_var(Raster(4, 4, 0.75), Raster(4, 4, 0.25)) == 0.0);
  // 1x3 difference [0,1,0]: |1| + |-1| = 2, unnormalized
  CHECK(l_var(Raster(3, 1, {0.0, 1.0, 0.0}), Raster(3, 1, 0.0)) == doctest::Approx(2.0));
}

TEST_CASE("edge weights") {
  const EdgeWeightMap flat = edge_weights(BinaryRaster(4, 4, 0.0), Raster(4, 4, 0.5));
  for (double v : flat.w) CHECK(v == 1.0);

  // |grad S| = 1 and |grad I| = 1 at the step pixel -> e^-2
  BinaryRaster s(2, 1, 0.0);
  s.set(1, 0, true);
  const Raster i(2, 1, {0.0, 1.0});
  const EdgeWeightMap ew = edge_weights(s, i);
  CHECK(ew.at(0, 0) == doctest::Approx(std::exp(-2.0)).epsilon(1e-12));
  CHECK(ew.at(1, 0) == 1.0);  // last column has no forward difference

  // bounded in (0,1]
  Rng rng(5);
  BinaryRaster sb(8, 8, 0.0);
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x) sb.set(x, y, rng.next_below(2) == 1);
  const EdgeWeightMap r = edge_weights(sb, random_raster(8, 8, 6));
  for (double v : r.w) {
    CHECK(v > 0.0);
    CHECK(v <= 1.0);
  }
}

TEST_CASE("l_smooth values") {
  const EdgeWeightMap w44 = unit_weights(4, 4);
  CHECK(l_smooth(DeformationMap(4, 4), w44) == 0.0);

  DeformationMap constant(4, 4);
  std::fill(constant.dx.begin(), constant.dx.end(), 1.7);
  CHECK(l_smooth(constant, w44) == 0.0);

  // Hadamard annihilation
  EdgeWeightMap zeros = unit_weights(4, 4);
  std::fill(zeros.w.begin(), zeros.w.end(), 0.0);
  CHECK(l_smooth(random_map(4, 4, 7), zeros) == 0.0);

  // 1x2 map dx=[0,2]: |2| * 1 / n with n = 2
  DeformationMap m12(2, 1);
  m12.dx = {0.0, 2.0};
  CHECK(l_smooth(m12, unit_weights(2, 1)) == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("l_reg values and homogeneity") {
  CHECK(l_reg(DeformationMap(5, 5)) == 0.0);
  DeformationMap m(4, 4);
  std::fill(m.dx.begin(), m.dx.end(), 0.5);
  CHECK(l_reg(m) == doctest::Approx(0.25).epsilon(1e-15));

  const DeformationMap r = random_map(6, 6, 8);
  DeformationMap scaled = r;
  for (auto& v : scaled.dx) v *= -3.0;
  for (auto& v : scaled.dy) v *= -3.0;
  CHECK(l_reg(scaled) == doctest::Approx(3.0 * l_reg(r)).epsilon(1e-12));
}

TEST_CASE("l_par values") {
  CHECK(l_par({0.5}, FabParam(0.5)) == 0.0);
  CHECK(l_par({0.3}, FabParam(0.9)) == doctest::Approx(0.36).epsilon(1e-15));
  CHECK(l_par({-0.3}, FabParam(-0.9)) == doctest::Approx(0.36).epsilon(1e-15));
  CHECK_THROWS_AS(l_par({0.1, 0.2}, FabParam(0.5)), std::invalid_argument);
}

TEST_CASE("litho_total weighting") {
  const LossWeights w;
  CHECK(litho_total({0, 0, 0, 0, 0}, w) == 0.0);
  CHECK(litho_total({1, 1, 1, 1, 1}, w) == doctest::Approx(260.003).epsilon(1e-12));

  // zeroing one weight reproduces the ablation configuration
  LossWeights ablated = w;
  ablated.var = 0.0;
  CHECK(litho_total({1, 1, 1, 1, 1}, ablated) == doctest::Approx(260.002).epsilon(1e-12));

  // linear in the term vector
  const LithoLossTerms t1{0.2, 3.0, 0.01, 0.5, 0.7};
  const LithoLossTerms t2{0.1, 1.0, 0.04, 0.2, 0.3};
  const LithoLossTerms sum{t1.rec + t2.rec, t1.var + t2.var, t1.smooth + t2.smooth,
                           t1.reg + t2.reg, t1.par + t2.par};
  CHECK(litho_total(sum, w) ==
        doctest::Approx(litho_total(t1, w) + litho_total(t2, w)).epsilon(1e-12));

  LossWeights bad;
  bad.rec = bad.var = bad.smooth = bad.reg = bad.par = 0.0;
  CHECK_THROWS_AS(litho_total({1, 1, 1, 1, 1}, bad), std::invalid_argument);
}

TEST_CASE("mask losses") {
  const Raster s = random_raster(6, 6, 9);
  CHECK(l_io(s, s) == 0.0);
  CHECK(l_kvar(s, s) == 0.0);
  CHECK(l_ksmooth(Raster(5, 5, 0.6)) == 0.0);

  // sharp vertical 0/1 split on 4x4: 4 boundary differences / 16
  Raster split(4, 4, 0.0);
  for (int y = 0; y < 4; ++y) {
    split.at(2, y) = 1.0;
    split.at(3, y) = 1.0;
  }
  CHECK(l_ksmooth(split) == doctest::Approx(0.25).epsilon(1e-15));

  const MaskLossWeights mw;
  CHECK(opc_total({0.5, 2.0, 0.25}, mw) == doctest::Approx(2.75).epsilon(1e-15));
}

TEST_CASE("losses are nonnegative and symmetric modulo absolute values") {
  for (uint64_t s = 0; s < 10; ++s) {
    const Raster a = random_raster(7, 7, 100 + s);
    const Raster b = random_raster(7, 7, 200 + s);
    CHECK(l_rec(a, b) >= 0.0);
    CHECK(l_var(a, b) >= 0.0);
    CHECK(l_rec(a, b) == doctest::Approx(l_rec(b, a)).epsilon(1e-15));
    CHECK(l_var(a, b) == doctest::Approx(l_var(b, a)).epsilon(1e-15));
    const DeformationMap m = random_map(7, 7, 300 + s);
    CHECK(l_reg(m) >= 0.0);
    CHECK(l_smooth(m, unit_weights(7, 7)) >= 0.0);
  }
}

TEST_CASE("image-loss gradients match finite differences") {
  const int n = 8;
  const Raster gt = random_raster(n, n, 40);
  Raster pred = random_raster(n, n, 41);
  Rng rng(42);

  const GradientField g_rec = l_rec_grad(gt, pred);
  const GradientField g_var = l_var_grad(gt, pred);
  const GradientField g_ks = l_ksmooth_grad(pred);

  for (int k = 0; k < 50; ++k) {
    const int x = static_cast<int>(rng.next_below(n));
    const int y = static_cast<int>(rng.next_below(n));
    const double saved = pred.at(x, y);

    auto fd = [&](auto&& f) {
      pred.at(x, y) = saved + kStep;
      const double fp = f();
      pred.at(x, y) = saved - kStep;
      const double fm = f();
      pred.at(x, y) = saved;
      return (fp - fm) / (2 * kStep);
    };

    CHECK(rel_err(g_rec.at(x, y), fd([&] { return l_rec(gt, pred); })) <= kTol);
    CHECK(rel_err(g_var.at(x, y), fd([&] { return l_var(gt, pred); })) <= kTol);
    CHECK(rel_err(g_ks.at(x, y), fd([&] { return l_ksmooth(pred); })) <= kTol);
  }
}

TEST_CASE("map-loss gradients match finite differences") {
  const int n = 8;
  DeformationMap m = random_map(n, n, 50);
  Rng rng(51);
  EdgeWeightMap ew = unit_weights(n, n);
  for (double& v : ew.w) v = rng.next_uniform(0.05, 1.0);

  const DeformationMap g_smooth = l_smooth_grad(m, ew);
  const DeformationMap g_reg = l_reg_grad(m);

  for (int k = 0; k < 50; ++k) {
    const size_t i = rng.next_below(m.dx.size());
    auto& chan = (k % 2 == 0) ? m.dx : m.dy;
    const auto& gs = (k % 2 == 0) ? g_smooth.dx : g_smooth.dy;
    const auto& gr = (k % 2 == 0) ? g_reg.dx : g_reg.dy;
    const double saved = chan[i];

    auto fd = [&](auto&& f) {
      chan[i] = saved + kStep;
      const double fp = f();
      chan[i] = saved - kStep;
      const double fm = f();
      chan[i] = saved;
      return (fp - fm) / (2 * kStep);
    };

    CHECK(rel_err(gs[i], fd([&] { return l_smooth(m, ew); })) <= kTol);
    CHECK(rel_err(gr[i], fd([&] { return l_reg(m); })) <= kTol);
  }
}

TEST_CASE("parameter-loss gradient matches finite differences") {
  std::vector<double> est = {0.37, -0.61};
  const FabParam target(std::vector<double>{-0.2, 0.4});
  const std::vector<double> g = l_par_grad(est, target);
  for (size_t i = 0; i < est.size(); ++i) {
    const double saved = est[i];
    est[i] = saved + kStep;
    const double fp = l_par(est, target);
    est[i] = saved - kStep;
    const double fm = l_par(est, target);
    est[i] = saved;
    CHECK(rel_err(g[i], (fp - fm) / (2 * kStep)) <= kTol);
  }
}
