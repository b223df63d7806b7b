#include "vmlitho/raster.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <memory>
#include <stdexcept>

namespace vmlitho {

namespace {

void validate_dims(int width, int height) {
  if (width < 1 || height < 1)
    throw std::invalid_argument("raster dimensions must be at least 1x1");
}

void validate_unit_range(const std::vector<double>& px) {
  for (double p : px)
    if (!(p >= 0.0 && p <= 1.0))
      throw std::invalid_argument("raster pixel outside [0,1]");
}

struct FileCloser {
  void operator()(FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<FILE, FileCloser>;

}  // namespace

Raster::Raster(int width, int height, double fill)
    : width_(width), height_(height), pixels_(static_cast<size_t>(width) * height, fill) {
  validate_dims(width, height);
  if (!(fill >= 0.0 && fill <= 1.0)) throw std::invalid_argument("fill outside [0,1]");
}

Raster::Raster(int width, int height, std::vector<double> pixels)
    : width_(width), height_(height), pixels_(std::move(pixels)) {
  validate_dims(width, height);
  if (pixels_.size() != static_cast<size_t>(width) * height)
    throw std::invalid_argument("pixel count does not match dimensions");
  validate_unit_range(pixels_);
}

BinaryRaster::BinaryRaster(Raster r) : raster_(std::move(r)) {
  for (double p : raster_.pixels())
    if (p != 0.0 && p != 1.0)
      throw std::invalid_argument("binary raster pixel not in {0,1}");
}

BinaryRaster::BinaryRaster(int width, int height, double fill) : raster_(width, height, fill) {
  if (fill != 0.0 && fill != 1.0) throw std::invalid_argument("binary fill must be 0 or 1");
}

int BinaryRaster::foreground_count() const {
  int n = 0;
  for (double p : raster_.pixels()) n += (p == 1.0);
  return n;
}

BinaryRaster binarize(const Raster& r, double t) {
  if (!(t > 0.0 && t < 1.0)) throw std::invalid_argument("binarize threshold must be in (0,1)");
  BinaryRaster out(r.width(), r.height(), 0.0);
  for (int y = 0; y < r.height(); ++y)
    for (int x = 0; x < r.width(); ++x) out.set(x, y, r.at(x, y) > t);
  return out;
}

Raster load_image(const std::string& path) {
  FilePtr f(std::fopen(path.c_str(), "rb"));
  if (!f) throw std::runtime_error("cannot open image for reading: " + path);

  png_byte header[8];
  if (std::fread(header, 1, 8, f.get()) != 8 || png_sig_cmp(header, 0, 8))
    throw std::runtime_error("not a PNG file: " + path);

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw std::runtime_error("png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw std::runtime_error("png_create_info_struct failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("PNG read error: " + path);
  }

  png_init_io(png, f.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);

  const int width = static_cast<int>(png_get_image_width(png, info));
  const int height = static_cast<int>(png_get_image_height(png, info));
  const int color = png_get_color_type(png, info);
  const int depth = png_get_bit_depth(png, info);

  if (color != PNG_COLOR_TYPE_GRAY || depth != 8) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("unsupported PNG (need 8-bit grayscale): " + path);
  }

  std::vector<uint8_t> row(static_cast<size_t>(width));
  std::vector<double> pixels(static_cast<size_t>(width) * height);
  for (int y = 0; y < height; ++y) {
    png_read_row(png, row.data(), nullptr);
    for (int x = 0; x < width; ++x)
      pixels[static_cast<size_t>(y) * width + x] = row[x] / 255.0;
  }
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return Raster(width, height, std::move(pixels));
}

void save_image(const Raster& r, const std::string& path) {
  FilePtr f(std::fopen(path.c_str(), "wb"));
  if (!f) throw std::runtime_error("cannot open image for writing: " + path);

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw std::runtime_error("png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw std::runtime_error("png_create_info_struct failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("PNG write error: " + path);
  }

  png_init_io(png, f.get());
  png_set_IHDR(png, info, r.width(), r.height(), 8, PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);

  std::vector<uint8_t> row(static_cast<size_t>(r.width()));
  for (int y = 0; y < r.height(); ++y) {
    for (int x = 0; x < r.width(); ++x)
      row[x] = static_cast<uint8_t>(std::floor(r.at(x, y) * 255.0 + 0.5));
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

void save_image_rgb(const RgbImage& img, const std::string& path) {
  FilePtr f(std::fopen(path.c_str(), "wb"));
  if (!f) throw std::runtime_error("cannot open image for writing: " + path);

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw std::runtime_error("png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw std::runtime_error("png_create_info_struct failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("PNG write error: " + path);
  }

  png_init_io(png, f.get());
  png_set_IHDR(png, info, img.width, img.height, 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < img.height; ++y)
    png_write_row(png, const_cast<png_bytep>(&img.data[static_cast<size_t>(y) * img.width * 3]));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace vmlitho
