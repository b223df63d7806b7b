#pragma once

#include <vector>

#include "vmlitho/diffwarp.hpp"
#include "vmlitho/faboracle.hpp"
#include "vmlitho/raster.hpp"

namespace vmlitho {

// Weights of the five forward-model training terms, in the order
// (reconstruction, total variation, smoothness, regularization, parameter
// regression). Defaults are the empirical weighting used at 256x256.
struct LossWeights {
  double rec = 100.0;
  double var = 0.001;
  double smooth = 150.0;
  double reg = 0.002;
  double par = 10.0;

  void validate() const;
};

// Weights of the mask-corrector terms (I/O consistency, total variation,
// mask smoothness). Unweighted in the source formulation.
struct MaskLossWeights {
  double io = 1.0;
  double var = 1.0;
  double smooth = 1.0;

  void validate() const;
};

// W(x,y) = exp(-(|grad S| + |grad I|)) in (0,1]; relaxes the deformation
// smoothness penalty where either image has contour edges.
struct EdgeWeightMap {
  int width = 0;
  int height = 0;
  std::vector<double> w;

  double at(int x, int y) const { return w[static_cast<size_t>(y) * width + x]; }
};

EdgeWeightMap edge_weights(const BinaryRaster& layout, const Raster& gt);

// Reconstruction: (1/n) * sum |gt - pred|.
double l_rec(const Raster& gt, const Raster& pred);
// dL/dpred; the gradient w.r.t. gt is its negation.
GradientField l_rec_grad(const Raster& gt, const Raster& pred);

// Anisotropic total variation of the signed difference (a - b): forward
// differences, zero at the last row/column, not normalized.
double l_var(const Raster& a, const Raster& b);
// dL/db; the gradient w.r.t. a is its negation.
GradientField l_var_grad(const Raster& a, const Raster& b);

// (1/n) * sum over both displacement channels and both derivative
// directions of |forward difference| * W at the base pixel.
double l_smooth(const DeformationMap& m, const EdgeWeightMap& weights);
DeformationMap l_smooth_grad(const DeformationMap& m, const EdgeWeightMap& weights);

// (1/(2n)) * sum (|dx| + |dy|): smallness prior on the displacement field.
double l_reg(const DeformationMap& m);
DeformationMap l_reg_grad(const DeformationMap& m);

// Squared L2 distance between a parameter estimate and its target; shared
// by the generator-side and regressor-side terms.
double l_par(const std::vector<double>& estimate, const FabParam& target);
std::vector<double> l_par_grad(const std::vector<double>& estimate, const FabParam& target);

struct LithoLossTerms {
  double rec = 0.0;
  double var = 0.0;
  double smooth = 0.0;
  double reg = 0.0;
  double par = 0.0;
};

double litho_total(const LithoLossTerms& terms, const LossWeights& w);

// Mask-corrector terms. l_io and l_kvar reuse the reconstruction / TV
// machinery against the *layout* instead of a ground truth.
double l_io(const Raster& layout, const Raster& sim);
GradientField l_io_grad(const Raster& layout, const Raster& sim);
double l_kvar(const Raster& layout, const Raster& sim);
GradientField l_kvar_grad(const Raster& layout, const Raster& sim);

// (1/n) * sum |grad K|, with no edge-aware weighting (there is no ground
// truth mask that could define contour edges).
double l_ksmooth(const Raster& mask);
GradientField l_ksmooth_grad(const Raster& mask);

struct OpcLossTerms {
  double io = 0.0;
  double var = 0.0;
  double smooth = 0.0;
};

double opc_total(const OpcLossTerms& terms, const MaskLossWeights& w);

}  // namespace vmlitho
