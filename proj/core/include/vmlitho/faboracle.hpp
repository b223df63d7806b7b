#pragma once

#include <string>
#include <vector>

#include "vmlitho/raster.hpp"

namespace vmlitho {

// Normalized fabrication-parameter vector; every component in [-1, 1].
// Training datasets draw component 0 from the seven-point grid
// {-0.9, -0.6, -0.3, 0, 0.3, 0.6, 0.9}.
struct FabParam {
  std::vector<double> components{0.0};

  FabParam() = default;
  explicit FabParam(double y) : components{y} {}
  explicit FabParam(std::vector<double> c);

  double primary() const { return components[0]; }
  size_t dim() const { return components.size(); }

  static const std::vector<double>& training_grid();
};

// Two-scale proxy for the lithography/etch process:
//   fabricated = 1[ blur(layout, sigma_fine) - alpha*blur(layout, sigma_density) > t(y) ]
//   t(y) = t0 - t1*y
// The short-range blur rounds corners and softens edges; the long-range
// density term etches crowded regions harder, which is what produces
// necking near tips and condensed lines in dense arrays while leaving
// isolated lines comparatively wide.
//
// Defaults are calibrated so that on the 64x64 probe set, at the pixel
// level, all four fabrication phenomena hold with maximal threshold margin:
// monotone foreground area in y, corner rounding at y=0, tip-to-line(3)
// necking at y=0, and open-area lines at least as wide as dense-array
// interior lines at every grid parameter. Calibration bounds:
// sigma_fine in [1,3], sigma_density in [4,10], alpha in [0,0.45],
// 0 < t0 - t1, t0 + t1 < 1 - alpha.
struct OracleConfig {
  double sigma_fine = 1.4;
  double sigma_density = 5.0;
  double alpha = 0.40;
  double t0 = 0.505;
  double t1 = 0.06;

  void validate() const;  // throws on violated bounds

  std::string to_json() const;
  static OracleConfig from_json(const std::string& json_text);
};

// Separable normalized Gaussian convolution, kernel truncated at radius
// ceil(3*sigma), borders handled by edge replication.
Raster gaussian_blur(const Raster& r, double sigma);

double threshold_for(const FabParam& y, const OracleConfig& cfg);

BinaryRaster simulate(const BinaryRaster& layout, const FabParam& y, const OracleConfig& cfg);

}  // namespace vmlitho
