#include "vmlitho/faboracle.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "json.hpp"

namespace vmlitho {

FabParam::FabParam(std::vector<double> c) : components(std::move(c)) {
  if (components.empty()) throw std::invalid_argument("FabParam must have at least one component");
  for (double v : components)
    if (!(v >= -1.0 && v <= 1.0))
      throw std::invalid_argument("FabParam component outside [-1,1]");
}

const std::vector<double>& FabParam::training_grid() {
  static const std::vector<double> grid = {-0.9, -0.6, -0.3, 0.0, 0.3, 0.6, 0.9};
  return grid;
}

void OracleConfig::validate() const {
  if (!(sigma_fine > 0.0)) throw std::invalid_argument("sigma_fine must be positive");
  if (!(sigma_density > sigma_fine))
    throw std::invalid_argument("sigma_density must exceed sigma_fine");
  if (!(alpha >= 0.0 && alpha < 1.0)) throw std::invalid_argument("alpha must be in [0,1)");
  if (!(t0 - t1 > 0.0)) throw std::invalid_argument("t0 - t1 must be positive");
  if (!(t0 + t1 < 1.0)) throw std::invalid_argument("t0 + t1 must be below 1");
}

std::string OracleConfig::to_json() const {
  nlohmann::json j;
  j["sigma_fine"] = sigma_fine;
  j["sigma_density"] = sigma_density;
  j["alpha"] = alpha;
  j["t0"] = t0;
  j["t1"] = t1;
  return j.dump();
}

OracleConfig OracleConfig::from_json(const std::string& json_text) {
  nlohmann::json j = nlohmann::json::parse(json_text);
  OracleConfig cfg;
  cfg.sigma_fine = j.at("sigma_fine").get<double>();
  cfg.sigma_density = j.at("sigma_density").get<double>();
  cfg.alpha = j.at("alpha").get<double>();
  cfg.t0 = j.at("t0").get<double>();
  cfg.t1 = j.at("t1").get<double>();
  cfg.validate();
  return cfg;
}

namespace {

std::vector<double> gaussian_kernel(double sigma) {
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> k(2 * radius + 1);
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    k[i + radius] = std::exp(-(static_cast<double>(i) * i) / (2.0 * sigma * sigma));
    sum += k[i + radius];
  }
  for (double& v : k) v /= sum;
  return k;
}

}  // namespace

Raster gaussian_blur(const Raster& r, double sigma) {
  if (!(sigma > 0.0)) throw std::invalid_argument("blur sigma must be positive");
  const std::vector<double> k = gaussian_kernel(sigma);
  const int radius = (static_cast<int>(k.size()) - 1) / 2;
  const int W = r.width(), H = r.height();

  std::vector<double> tmp(static_cast<size_t>(W) * H);
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i) {
        const int xi = std::clamp(x + i, 0, W - 1);
        acc += k[i + radius] * r.at(xi, y);
      }
      tmp[static_cast<size_t>(y) * W + x] = acc;
    }
  }

  std::vector<double> out(static_cast<size_t>(W) * H);
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i) {
        const int yi = std::clamp(y + i, 0, H - 1);
        acc += k[i + radius] * tmp[static_cast<size_t>(yi) * W + x];
      }
      // clamp the float-epsilon spill so the result stays a valid Raster
      out[static_cast<size_t>(y) * W + x] = std::clamp(acc, 0.0, 1.0);
    }
  }
  return Raster(W, H, std::move(out));
}

double threshold_for(const FabParam& y, const OracleConfig& cfg) {
  return cfg.t0 - cfg.t1 * y.primary();
}

BinaryRaster simulate(const BinaryRaster& layout, const FabParam& y, const OracleConfig& cfg) {
  cfg.validate();
  const Raster fine = gaussian_blur(layout.raster(), cfg.sigma_fine);
  const Raster density = gaussian_blur(layout.raster(), cfg.sigma_density);
  const double t = threshold_for(y, cfg);

  BinaryRaster out(layout.width(), layout.height(), 0.0);
  for (int py = 0; py < layout.height(); ++py)
    for (int px = 0; px < layout.width(); ++px)
      out.set(px, py, fine.at(px, py) - cfg.alpha * density.at(px, py) > t);
  return out;
}

}  // namespace vmlitho
