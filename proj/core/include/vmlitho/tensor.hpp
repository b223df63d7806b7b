#pragma once

#include <vector>

#include "vmlitho/raster.hpp"

namespace vmlitho {

// Dense CHW tensor, double precision, row-major within each channel.
struct Tensor {
  int c = 0;
  int h = 0;
  int w = 0;
  std::vector<double> v;

  Tensor() = default;
  Tensor(int c_, int h_, int w_)
      : c(c_), h(h_), w(w_), v(static_cast<size_t>(c_) * h_ * w_, 0.0) {}

  size_t size() const { return v.size(); }
  size_t index(int ch, int y, int x) const {
    return (static_cast<size_t>(ch) * h + y) * w + x;
  }
  double at(int ch, int y, int x) const { return v[index(ch, y, x)]; }
  double& at(int ch, int y, int x) { return v[index(ch, y, x)]; }

  bool same_shape(const Tensor& o) const { return c == o.c && h == o.h && w == o.w; }
};

inline Tensor tensor_from_raster(const Raster& r) {
  Tensor t(1, r.height(), r.width());
  auto px = r.pixels();
  std::copy(px.begin(), px.end(), t.v.begin());
  return t;
}

}  // namespace vmlitho
