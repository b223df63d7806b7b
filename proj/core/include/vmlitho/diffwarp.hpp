#pragma once

#include <string>
#include <vector>

#include "vmlitho/raster.hpp"

namespace vmlitho {

// Per-pixel backward displacement field in pixel units. Output pixel (x,y)
// samples the source at (x + dx(x,y), y + dy(x,y)); the identity map is the
// zero field. Displacements are stored directly in backward form so the
// sampling formula consumes them without numeric map inversion, and the
// regularizers read them as a smallness prior on the deformation.
struct DeformationMap {
  int width = 0;
  int height = 0;
  std::vector<double> dx;  // row-major
  std::vector<double> dy;

  DeformationMap() = default;
  DeformationMap(int w, int h)
      : width(w), height(h),
        dx(static_cast<size_t>(w) * h, 0.0),
        dy(static_cast<size_t>(w) * h, 0.0) {}

  size_t index(int x, int y) const { return static_cast<size_t>(y) * width + x; }
  int size() const { return width * height; }

  // finite values bounded by the grid extent
  void validate() const;
};

// Bilinear interpolation of the four lattice neighbors. Coordinates are
// clamped to [0, W-1] x [0, H-1] before interpolation, which makes the
// function total. At integer coordinates the weights collapse and the exact
// pixel value is returned.
double bilinear_sample(const Raster& img, double x, double y);

// Backward warp: out(x,y) = bilinear_sample(source, x + dx, y + dy).
Raster warp(const Raster& source, const DeformationMap& m);

// Gradients of L = sum_{x,y} upstream(x,y) * warp(source,m)(x,y) with
// respect to the source image and both displacement channels.
//
// The bilinear formula is non-smooth at lattice points; there the one-sided
// derivative of the cell [floor(c), floor(c)+1) is used (at the top border,
// where floor(c) == size-1, the cell degenerates and the derivative is 0).
// Coordinates clamped at the border have zero derivative w.r.t. the map.
struct WarpGradients {
  Raster grad_source;      // dL/dsource (values may be any sign; stored raw)
  DeformationMap grad_map; // dL/d(dx,dy)
};

// upstream has the same grid as the warp output; grad values are unbounded,
// so grad_source is returned as a plain buffer alongside its grid.
struct GradientField {
  int width = 0;
  int height = 0;
  std::vector<double> values;

  GradientField() = default;
  GradientField(int w, int h) : width(w), height(h), values(static_cast<size_t>(w) * h, 0.0) {}
  double at(int x, int y) const { return values[static_cast<size_t>(y) * width + x]; }
  double& at(int x, int y) { return values[static_cast<size_t>(y) * width + x]; }
};

struct WarpBackward {
  GradientField grad_source;
  DeformationMap grad_map;
};

WarpBackward warp_gradients(const Raster& source, const DeformationMap& m,
                            const GradientField& upstream);

// Magnitude-to-heat colormap with arrow glyphs every 8 px. Deterministic.
RgbImage render_deformation(const DeformationMap& m);

// Two-channel 32-bit float binary file:
//   bytes 0..7   magic "VMLDMAP1"
//   bytes 8..11  width  (uint32, little endian)
//   bytes 12..15 height (uint32, little endian)
//   then width*height float32 dx values (row-major, little endian),
//   then width*height float32 dy values.
void save_deformation(const DeformationMap& m, const std::string& path);
DeformationMap load_deformation(const std::string& path);

}  // namespace vmlitho
