#include "vmlitho/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

namespace vmlitho {

namespace {

void require_same_shape(const Raster& a, const Raster& b) {
  if (!a.same_shape(b)) throw std::invalid_argument("metric inputs differ in shape");
}

}  // namespace

double iou(const BinaryRaster& a, const BinaryRaster& b) {
  require_same_shape(a, b);
  int inter = 0, uni = 0;
  auto pa = a.raster().pixels();
  auto pb = b.raster().pixels();
  for (size_t i = 0; i < pa.size(); ++i) {
    const bool fa = pa[i] == 1.0;
    const bool fb = pb[i] == 1.0;
    inter += (fa && fb);
    uni += (fa || fb);
  }
  if (uni == 0) return 1.0;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

double pixel_error_rate(const BinaryRaster& a, const BinaryRaster& b) {
  require_same_shape(a, b);
  auto pa = a.raster().pixels();
  auto pb = b.raster().pixels();
  int diff = 0;
  for (size_t i = 0; i < pa.size(); ++i) diff += (pa[i] != pb[i]);
  return static_cast<double>(diff) / static_cast<double>(pa.size());
}

double ssim(const Raster& a, const Raster& b, const SsimParams& p) {
  require_same_shape(a, b);
  const int w = p.window;
  if (a.width() < w || a.height() < w)
    throw std::invalid_argument("image smaller than SSIM window");

  // normalized 1-D Gaussian; the 2-D window is its outer product
  std::vector<double> g(w);
  const int r = w / 2;
  double sum = 0.0;
  for (int i = 0; i < w; ++i) {
    const double d = i - r;
    g[i] = std::exp(-d * d / (2.0 * p.sigma * p.sigma));
    sum += g[i];
  }
  for (double& v : g) v /= sum;

  const double c1 = (p.k1 * p.dynamic_range) * (p.k1 * p.dynamic_range);
  const double c2 = (p.k2 * p.dynamic_range) * (p.k2 * p.dynamic_range);

  const int W = a.width(), H = a.height();
  const int outw = W - w + 1, outh = H - w + 1;

  // horizontal pass of the five separable moment fields
  const size_t rowlen = static_cast<size_t>(outw) * H;
  std::vector<double> ma(rowlen), mb(rowlen), maa(rowlen), mbb(rowlen), mab(rowlen);
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < outw; ++x) {
      double sa = 0, sb = 0, saa = 0, sbb = 0, sab = 0;
      for (int i = 0; i < w; ++i) {
        const double va = a.at(x + i, y);
        const double vb = b.at(x + i, y);
        sa += g[i] * va;
        sb += g[i] * vb;
        saa += g[i] * va * va;
        sbb += g[i] * vb * vb;
        sab += g[i] * va * vb;
      }
      const size_t idx = static_cast<size_t>(y) * outw + x;
      ma[idx] = sa;
      mb[idx] = sb;
      maa[idx] = saa;
      mbb[idx] = sbb;
      mab[idx] = sab;
    }
  }

  double total = 0.0;
  for (int y = 0; y < outh; ++y) {
    for (int x = 0; x < outw; ++x) {
      double mua = 0, mub = 0, eaa = 0, ebb = 0, eab = 0;
      for (int i = 0; i < w; ++i) {
        const size_t idx = static_cast<size_t>(y + i) * outw + x;
        mua += g[i] * ma[idx];
        mub += g[i] * mb[idx];
        eaa += g[i] * maa[idx];
        ebb += g[i] * mbb[idx];
        eab += g[i] * mab[idx];
      }
      const double va = eaa - mua * mua;
      const double vb = ebb - mub * mub;
      const double cov = eab - mua * mub;
      const double num = (2.0 * mua * mub + c1) * (2.0 * cov + c2);
      const double den = (mua * mua + mub * mub + c1) * (va + vb + c2);
      total += num / den;
    }
  }
  return total / (static_cast<double>(outw) * outh);
}

void MetricsReport::finalize() {
  mean_iou = mean_ssim = mean_pixel_error = 0.0;
  if (rows.empty()) return;
  for (const auto& row : rows) {
    mean_iou += row.iou;
    mean_ssim += row.ssim;
    mean_pixel_error += row.pixel_error;
  }
  const double n = static_cast<double>(rows.size());
  mean_iou /= n;
  mean_ssim /= n;
  mean_pixel_error /= n;
}

void write_metrics_csv(const MetricsReport& report, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write metrics CSV: " + path);
  out << "id,iou,ssim,pixel_error\n";
  char buf[160];
  for (const auto& row : report.rows) {
    std::snprintf(buf, sizeof(buf), "%s,%.9f,%.9f,%.9f\n", row.id.c_str(), row.iou, row.ssim,
                  row.pixel_error);
    out << buf;
  }
}

}  // namespace vmlitho
