#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace vmlitho {

// Grayscale image with values in [0,1], row-major, double precision.
// Carries layouts, ground truths, predictions and masks.
class Raster {
 public:
  Raster() = default;
  Raster(int width, int height, double fill = 0.0);
  Raster(int width, int height, std::vector<double> pixels);

  int width() const { return width_; }
  int height() const { return height_; }
  int size() const { return width_ * height_; }

  double at(int x, int y) const { return pixels_[static_cast<size_t>(y) * width_ + x]; }
  double& at(int x, int y) { return pixels_[static_cast<size_t>(y) * width_ + x]; }

  std::span<const double> pixels() const { return pixels_; }
  std::span<double> pixels() { return pixels_; }

  bool same_shape(const Raster& other) const {
    return width_ == other.width_ && height_ == other.height_;
  }

  bool operator==(const Raster& other) const = default;

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<double> pixels_;
};

// Raster whose pixels are exactly 0 or 1. Constructed through binarize()
// or validated at construction.
class BinaryRaster {
 public:
  BinaryRaster() = default;
  explicit BinaryRaster(Raster r);  // throws if any pixel is not 0 or 1
  BinaryRaster(int width, int height, double fill = 0.0);

  int width() const { return raster_.width(); }
  int height() const { return raster_.height(); }
  int size() const { return raster_.size(); }

  double at(int x, int y) const { return raster_.at(x, y); }
  void set(int x, int y, bool fg) { raster_.at(x, y) = fg ? 1.0 : 0.0; }

  const Raster& raster() const { return raster_; }
  operator const Raster&() const { return raster_; }

  int foreground_count() const;

  bool operator==(const BinaryRaster& other) const = default;

 private:
  Raster raster_;
};

// pixel > t -> 1, else 0. Requires 0 < t < 1.
BinaryRaster binarize(const Raster& r, double t);

// 8-bit single-channel PNG I/O. Load maps byte v -> v/255; save rounds
// half-up: byte = floor(p*255 + 0.5).
Raster load_image(const std::string& path);
void save_image(const Raster& r, const std::string& path);

// RGB byte image for visualizations (deformation renderings, sweep strips).
struct RgbImage {
  int width = 0;
  int height = 0;
  std::vector<uint8_t> data;  // RGB interleaved, row-major

  RgbImage() = default;
  RgbImage(int w, int h) : width(w), height(h), data(static_cast<size_t>(w) * h * 3, 0) {}
  void set(int x, int y, uint8_t r, uint8_t g, uint8_t b) {
    size_t i = (static_cast<size_t>(y) * width + x) * 3;
    data[i] = r;
    data[i + 1] = g;
    data[i + 2] = b;
  }
};

void save_image_rgb(const RgbImage& img, const std::string& path);

}  // namespace vmlitho
