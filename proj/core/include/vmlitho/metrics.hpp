#pragma once

#include <string>
#include <vector>

#include "vmlitho/raster.hpp"

namespace vmlitho {

// |a AND b| / |a OR b| over foreground pixels. Both-empty pairs score 1.0
// (vacuous agreement) instead of NaN.
double iou(const BinaryRaster& a, const BinaryRaster& b);

// Fraction of pixels where a != b (normalized Hamming distance).
double pixel_error_rate(const BinaryRaster& a, const BinaryRaster& b);

// Mean local SSIM over sliding Gaussian windows.
// Reference configuration: 11x11 window, sigma 1.5, K1=0.01, K2=0.03,
// dynamic range 1.0. Requires both images to be at least window-sized.
struct SsimParams {
  int window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double dynamic_range = 1.0;
};

double ssim(const Raster& a, const Raster& b, const SsimParams& params = {});

struct MetricsRow {
  std::string id;
  double iou = 0.0;
  double ssim = 0.0;
  double pixel_error = 0.0;
};

struct MetricsReport {
  std::vector<MetricsRow> rows;
  double mean_iou = 0.0;
  double mean_ssim = 0.0;
  double mean_pixel_error = 0.0;

  void finalize();  // recompute means from rows
};

// CSV with header `id,iou,ssim,pixel_error`, one row per sample.
void write_metrics_csv(const MetricsReport& report, const std::string& path);

}  // namespace vmlitho
