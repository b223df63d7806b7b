#include "vmlitho/diffwarp.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <memory>
#include <stdexcept>

namespace vmlitho {

static_assert(std::endian::native == std::endian::little,
              "deformation file I/O assumes a little-endian host");

void DeformationMap::validate() const {
  if (width < 1 || height < 1) throw std::invalid_argument("deformation map has empty grid");
  if (dx.size() != static_cast<size_t>(width) * height || dx.size() != dy.size())
    throw std::invalid_argument("deformation map channel size mismatch");
  for (size_t i = 0; i < dx.size(); ++i) {
    if (!std::isfinite(dx[i]) || !std::isfinite(dy[i]))
      throw std::invalid_argument("deformation map contains non-finite values");
    if (std::abs(dx[i]) > width || std::abs(dy[i]) > height)
      throw std::invalid_argument("deformation map displacement exceeds grid extent");
  }
}

namespace {

struct Cell {
  int x0, x1, y0, y1;
  double fx, fy;
};

inline Cell locate(const Raster& img, double x, double y) {
  const int W = img.width(), H = img.height();
  const double xc = std::clamp(x, 0.0, static_cast<double>(W - 1));
  const double yc = std::clamp(y, 0.0, static_cast<double>(H - 1));
  Cell c;
  c.x0 = static_cast<int>(std::floor(xc));
  c.y0 = static_cast<int>(std::floor(yc));
  c.x1 = std::min(c.x0 + 1, W - 1);
  c.y1 = std::min(c.y0 + 1, H - 1);
  c.fx = xc - c.x0;
  c.fy = yc - c.y0;
  return c;
}

}  // namespace

double bilinear_sample(const Raster& img, double x, double y) {
  const Cell c = locate(img, x, y);
  const double v00 = img.at(c.x0, c.y0);
  const double v10 = img.at(c.x1, c.y0);
  const double v01 = img.at(c.x0, c.y1);
  const double v11 = img.at(c.x1, c.y1);
  return (1.0 - c.fx) * ((1.0 - c.fy) * v00 + c.fy * v01) +
         c.fx * ((1.0 - c.fy) * v10 + c.fy * v11);
}

Raster warp(const Raster& source, const DeformationMap& m) {
  if (source.width() != m.width || source.height() != m.height)
    throw std::invalid_argument("warp: source and map grids differ");
  Raster out(m.width, m.height, 0.0);
  for (int y = 0; y < m.height; ++y) {
    for (int x = 0; x < m.width; ++x) {
      const size_t i = m.index(x, y);
      const double v = bilinear_sample(source, x + m.dx[i], y + m.dy[i]);
      out.at(x, y) = std::clamp(v, 0.0, 1.0);
    }
  }
  return out;
}

WarpBackward warp_gradients(const Raster& source, const DeformationMap& m,
                            const GradientField& upstream) {
  if (source.width() != m.width || source.height() != m.height ||
      upstream.width != m.width || upstream.height != m.height)
    throw std::invalid_argument("warp_gradients: grid mismatch");

  WarpBackward out;
  out.grad_source = GradientField(m.width, m.height);
  out.grad_map = DeformationMap(m.width, m.height);

  const int W = m.width, H = m.height;
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      const size_t i = m.index(x, y);
      const double u = upstream.at(x, y);
      if (u == 0.0) continue;

      const double sx = x + m.dx[i];
      const double sy = y + m.dy[i];
      const Cell c = locate(source, sx, sy);
      const double v00 = source.at(c.x0, c.y0);
      const double v10 = source.at(c.x1, c.y0);
      const double v01 = source.at(c.x0, c.y1);
      const double v11 = source.at(c.x1, c.y1);

      out.grad_source.at(c.x0, c.y0) += u * (1.0 - c.fx) * (1.0 - c.fy);
      out.grad_source.at(c.x1, c.y0) += u * c.fx * (1.0 - c.fy);
      out.grad_source.at(c.x0, c.y1) += u * (1.0 - c.fx) * c.fy;
      out.grad_source.at(c.x1, c.y1) += u * c.fx * c.fy;

      // clamped coordinates do not move with the map
      if (sx >= 0.0 && sx <= W - 1)
        out.grad_map.dx[i] = u * ((1.0 - c.fy) * (v10 - v00) + c.fy * (v11 - v01));
      if (sy >= 0.0 && sy <= H - 1)
        out.grad_map.dy[i] = u * ((1.0 - c.fx) * (v01 - v00) + c.fx * (v11 - v10));
    }
  }
  return out;
}

namespace {

void draw_line(RgbImage& img, int x0, int y0, int x1, int y1, uint8_t r, uint8_t g, uint8_t b) {
  const int dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
  const int sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
  int err = dx + dy;
  int x = x0, y = y0;
  while (true) {
    if (x >= 0 && x < img.width && y >= 0 && y < img.height) img.set(x, y, r, g, b);
    if (x == x1 && y == y1) break;
    const int e2 = 2 * err;
    if (e2 >= dy) {
      err += dy;
      x += sx;
    }
    if (e2 <= dx) {
      err += dx;
      y += sy;
    }
  }
}

}  // namespace

RgbImage render_deformation(const DeformationMap& m) {
  m.validate();
  RgbImage img(m.width, m.height);

  double max_mag = 0.0;
  for (size_t i = 0; i < m.dx.size(); ++i)
    max_mag = std::max(max_mag, std::hypot(m.dx[i], m.dy[i]));

  for (int y = 0; y < m.height; ++y) {
    for (int x = 0; x < m.width; ++x) {
      const size_t i = m.index(x, y);
      const double mag = std::hypot(m.dx[i], m.dy[i]);
      const double t = max_mag > 0.0 ? mag / max_mag : 0.0;
      const auto r = static_cast<uint8_t>(std::lround(255.0 * t));
      const auto g = static_cast<uint8_t>(std::lround(204.0 * t * t));
      const auto b = static_cast<uint8_t>(std::lround(64.0 * (1.0 - t)));
      img.set(x, y, r, g, b);
    }
  }

  // sparse glyphs on an 8 px lattice, scaled to at most 3.5 px
  for (int cy = 4; cy < m.height; cy += 8) {
    for (int cx = 4; cx < m.width; cx += 8) {
      const size_t i = m.index(cx, cy);
      const double mag = std::hypot(m.dx[i], m.dy[i]);
      if (mag < 0.05) continue;
      const double scale = std::min(3.5, mag) / mag;
      const int tx = cx + static_cast<int>(std::lround(m.dx[i] * scale));
      const int ty = cy + static_cast<int>(std::lround(m.dy[i] * scale));
      draw_line(img, cx, cy, tx, ty, 255, 255, 255);
    }
  }
  return img;
}

namespace {

constexpr char kMapMagic[8] = {'V', 'M', 'L', 'D', 'M', 'A', 'P', '1'};

struct FileCloser {
  void operator()(FILE* f) const {
    if (f) std::fclose(f);
  }
};

}  // namespace

void save_deformation(const DeformationMap& m, const std::string& path) {
  m.validate();
  std::unique_ptr<FILE, FileCloser> f(std::fopen(path.c_str(), "wb"));
  if (!f) throw std::runtime_error("cannot write deformation map: " + path);

  std::fwrite(kMapMagic, 1, 8, f.get());
  const uint32_t w = static_cast<uint32_t>(m.width), h = static_cast<uint32_t>(m.height);
  std::fwrite(&w, sizeof(w), 1, f.get());
  std::fwrite(&h, sizeof(h), 1, f.get());

  std::vector<float> buf(m.dx.size());
  for (size_t i = 0; i < m.dx.size(); ++i) buf[i] = static_cast<float>(m.dx[i]);
  std::fwrite(buf.data(), sizeof(float), buf.size(), f.get());
  for (size_t i = 0; i < m.dy.size(); ++i) buf[i] = static_cast<float>(m.dy[i]);
  std::fwrite(buf.data(), sizeof(float), buf.size(), f.get());
  if (std::ferror(f.get())) throw std::runtime_error("write error on deformation map: " + path);
}

DeformationMap load_deformation(const std::string& path) {
  std::unique_ptr<FILE, FileCloser> f(std::fopen(path.c_str(), "rb"));
  if (!f) throw std::runtime_error("cannot read deformation map: " + path);

  char magic[8];
  if (std::fread(magic, 1, 8, f.get()) != 8 || std::memcmp(magic, kMapMagic, 8) != 0)
    throw std::runtime_error("bad deformation map magic: " + path);

  uint32_t w = 0, h = 0;
  if (std::fread(&w, sizeof(w), 1, f.get()) != 1 || std::fread(&h, sizeof(h), 1, f.get()) != 1)
    throw std::runtime_error("truncated deformation map header: " + path);

  DeformationMap m(static_cast<int>(w), static_cast<int>(h));
  std::vector<float> buf(m.dx.size());
  if (std::fread(buf.data(), sizeof(float), buf.size(), f.get()) != buf.size())
    throw std::runtime_error("truncated deformation map dx data: " + path);
  for (size_t i = 0; i < buf.size(); ++i) m.dx[i] = buf[i];
  if (std::fread(buf.data(), sizeof(float), buf.size(), f.get()) != buf.size())
    throw std::runtime_error("truncated deformation map dy data: " + path);
  for (size_t i = 0; i < buf.size(); ++i) m.dy[i] = buf[i];
  return m;
}

}  // namespace vmlitho
