#include "vmlitho/losses.hpp"

#include <cmath>
#include <stdexcept>

namespace vmlitho {

namespace {

void require_same_shape(const Raster& a, const Raster& b) {
  if (!a.same_shape(b)) throw std::invalid_argument("loss inputs differ in shape");
}

inline double sgn(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

}  // namespace

void LossWeights::validate() const {
  for (double v : {rec, var, smooth, reg, par})
    if (v < 0.0) throw std::invalid_argument("loss weights must be nonnegative");
  if (rec == 0.0 && var == 0.0 && smooth == 0.0 && reg == 0.0 && par == 0.0)
    throw std::invalid_argument("at least one loss weight must be positive");
}

void MaskLossWeights::validate() const {
  for (double v : {io, var, smooth})
    if (v < 0.0) throw std::invalid_argument("mask loss weights must be nonnegative");
}

EdgeWeightMap edge_weights(const BinaryRaster& layout, const Raster& gt) {
  require_same_shape(layout.raster(), gt);
  const int W = gt.width(), H = gt.height();
  EdgeWeightMap out;
  out.width = W;
  out.height = H;
  out.w.resize(static_cast<size_t>(W) * H);
  const Raster& s = layout.raster();
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      double g = 0.0;
      if (x + 1 < W) g += std::abs(s.at(x + 1, y) - s.at(x, y)) + std::abs(gt.at(x + 1, y) - gt.at(x, y));
      if (y + 1 < H) g += std::abs(s.at(x, y + 1) - s.at(x, y)) + std::abs(gt.at(x, y + 1) - gt.at(x, y));
      out.w[static_cast<size_t>(y) * W + x] = std::exp(-g);
    }
  }
  return out;
}

double l_rec(const Raster& gt, const Raster& pred) {
  require_same_shape(gt, pred);
  double acc = 0.0;
  auto a = gt.pixels();
  auto b = pred.pixels();
  for (size_t i = 0; i < a.size(); ++i) acc += std::abs(a[i] - b[i]);
  return acc / static_cast<double>(a.size());
}

GradientField l_rec_grad(const Raster& gt, const Raster& pred) {
  require_same_shape(gt, pred);
  GradientField g(pred.width(), pred.height());
  const double inv_n = 1.0 / pred.size();
  for (int y = 0; y < pred.height(); ++y)
    for (int x = 0; x < pred.width(); ++x)
      g.at(x, y) = sgn(pred.at(x, y) - gt.at(x, y)) * inv_n;
  return g;
}

double l_var(const Raster& a, const Raster& b) {
  require_same_shape(a, b);
  const int W = a.width(), H = a.height();
  double acc = 0.0;
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      const double d = a.at(x, y) - b.at(x, y);
      if (x + 1 < W) acc += std::abs(a.at(x + 1, y) - b.at(x + 1, y) - d);
      if (y + 1 < H) acc += std::abs(a.at(x, y + 1) - b.at(x, y + 1) - d);
    }
  }
  return acc;
}

GradientField l_var_grad(const Raster& a, const Raster& b) {
  require_same_shape(a, b);
  const int W = a.width(), H = a.height();
  GradientField g(W, H);
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      const double d = a.at(x, y) - b.at(x, y);
      if (x + 1 < W) {
        const double s = sgn(a.at(x + 1, y) - b.at(x + 1, y) - d);
        g.at(x + 1, y) -= s;
        g.at(x, y) += s;
      }
      if (y + 1 < H) {
        const double s = sgn(a.at(x, y + 1) - b.at(x, y + 1) - d);
        g.at(x, y + 1) -= s;
        g.at(x, y) += s;
      }
    }
  }
  return g;
}

double l_smooth(const DeformationMap& m, const EdgeWeightMap& weights) {
  if (m.width != weights.width || m.height != weights.height)
    throw std::invalid_argument("l_smooth: map and weight grids differ");
  const int W = m.width, H = m.height;
  double acc = 0.0;
  for (const auto* channel : {&m.dx, &m.dy}) {
    const auto& c = *channel;
    for (int y = 0; y < H; ++y) {
      for (int x = 0; x < W; ++x) {
        const size_t i = static_cast<size_t>(y) * W + x;
        const double w = weights.at(x, y);
        if (x + 1 < W) acc += std::abs(c[i + 1] - c[i]) * w;
        if (y + 1 < H) acc += std::abs(c[i + W] - c[i]) * w;
      }
    }
  }
  return acc / static_cast<double>(m.size());
}

DeformationMap l_smooth_grad(const DeformationMap& m, const EdgeWeightMap& weights) {
  if (m.width != weights.width || m.height != weights.height)
    throw std::invalid_argument("l_smooth_grad: map and weight grids differ");
  const int W = m.width, H = m.height;
  DeformationMap g(W, H);
  const double inv_n = 1.0 / m.size();
  for (auto [channel, grad] : {std::pair{&m.dx, &g.dx}, std::pair{&m.dy, &g.dy}}) {
    const auto& c = *channel;
    auto& gc = *grad;
    for (int y = 0; y < H; ++y) {
      for (int x = 0; x < W; ++x) {
        const size_t i = static_cast<size_t>(y) * W + x;
        const double w = weights.at(x, y) * inv_n;
        if (x + 1 < W) {
          const double s = sgn(c[i + 1] - c[i]);
          gc[i + 1] += s * w;
          gc[i] -= s * w;
        }
        if (y + 1 < H) {
          const double s = sgn(c[i + W] - c[i]);
          gc[i + W] += s * w;
          gc[i] -= s * w;
        }
      }
    }
  }
  return g;
}

double l_reg(const DeformationMap& m) {
  double acc = 0.0;
  for (size_t i = 0; i < m.dx.size(); ++i) acc += std::abs(m.dx[i]) + std::abs(m.dy[i]);
  return acc / (2.0 * m.size());
}

DeformationMap l_reg_grad(const DeformationMap& m) {
  DeformationMap g(m.width, m.height);
  const double scale = 1.0 / (2.0 * m.size());
  for (size_t i = 0; i < m.dx.size(); ++i) {
    g.dx[i] = sgn(m.dx[i]) * scale;
    g.dy[i] = sgn(m.dy[i]) * scale;
  }
  return g;
}

double l_par(const std::vector<double>& estimate, const FabParam& target) {
  if (estimate.size() != target.dim())
    throw std::invalid_argument("l_par: parameter dimensionality mismatch");
  double acc = 0.0;
  for (size_t i = 0; i < estimate.size(); ++i) {
    const double d = estimate[i] - target.components[i];
    acc += d * d;
  }
  return acc;
}

std::vector<double> l_par_grad(const std::vector<double>& estimate, const FabParam& target) {
  if (estimate.size() != target.dim())
    throw std::invalid_argument("l_par_grad: parameter dimensionality mismatch");
  std::vector<double> g(estimate.size());
  for (size_t i = 0; i < estimate.size(); ++i)
    g[i] = 2.0 * (estimate[i] - target.components[i]);
  return g;
}

double litho_total(const LithoLossTerms& terms, const LossWeights& w) {
  w.validate();
  return w.rec * terms.rec + w.var * terms.var + w.smooth * terms.smooth + w.reg * terms.reg +
         w.par * terms.par;
}

double l_io(const Raster& layout, const Raster& sim) { return l_rec(layout, sim); }
GradientField l_io_grad(const Raster& layout, const Raster& sim) { return l_rec_grad(layout, sim); }
double l_kvar(const Raster& layout, const Raster& sim) { return l_var(layout, sim); }
GradientField l_kvar_grad(const Raster& layout, const Raster& sim) {
  return l_var_grad(layout, sim);
}

double l_ksmooth(const Raster& mask) {
  const int W = mask.width(), H = mask.height();
  double acc = 0.0;
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      if (x + 1 < W) acc += std::abs(mask.at(x + 1, y) - mask.at(x, y));
      if (y + 1 < H) acc += std::abs(mask.at(x, y + 1) - mask.at(x, y));
    }
  }
  return acc / static_cast<double>(mask.size());
}

GradientField l_ksmooth_grad(const Raster& mask) {
  const int W = mask.width(), H = mask.height();
  GradientField g(W, H);
  const double inv_n = 1.0 / mask.size();
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      if (x + 1 < W) {
        const double s = sgn(mask.at(x + 1, y) - mask.at(x, y)) * inv_n;
        g.at(x + 1, y) += s;
        g.at(x, y) -= s;
      }
      if (y + 1 < H) {
        const double s = sgn(mask.at(x, y + 1) - mask.at(x, y)) * inv_n;
        g.at(x, y + 1) += s;
        g.at(x, y) -= s;
      }
    }
  }
  return g;
}

double opc_total(const OpcLossTerms& terms, const MaskLossWeights& w) {
  w.validate();
  return w.io * terms.io + w.var * terms.var + w.smooth * terms.smooth;
}

}  // namespace vmlitho
