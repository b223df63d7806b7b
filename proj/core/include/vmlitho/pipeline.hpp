#pragma once

#include "vmlitho/losses.hpp"
#include "vmlitho/nets.hpp"

namespace vmlitho {

// One forward-model sample: M = G(S|y), J = warp(S, M), then the five
// training terms. The parameter term is the two-sided regression objective:
// D_y applied to the warped prediction against y plus D_y applied to the
// ground truth against y.
struct LithoSampleOutput {
  LithoLossTerms terms;
  double total = 0.0;
  Raster pred;
  DeformationMap map;
};

LithoSampleOutput litho_sample_forward(const UNet& gen, const Regressor& reg,
                                       const BinaryRaster& layout, const Raster& gt,
                                       const FabParam& y, const LossWeights& w);

struct LithoGradOptions {
  bool accumulate_generator = true;
  // Training freezes D_y while updating G; gradient checking turns this on
  // to differentiate the full objective w.r.t. every named array.
  bool accumulate_regressor = false;
};

LithoSampleOutput litho_sample_grads(UNet& gen, Regressor& reg, const BinaryRaster& layout,
                                     const Raster& gt, const FabParam& y, const LossWeights& w,
                                     const LithoGradOptions& opt);

// Regressor-only step on a ground-truth pair: ||D_y(I) - y||^2.
double regressor_sample_grads(Regressor& reg, const Raster& gt, const FabParam& y,
                              bool accumulate_params);

// One mask-corrector sample: K = OPC(S), J = warp(K, G(K|y)), then the
// I/O-consistency objective. No ground-truth image is consumed.
struct OpcSampleOutput {
  OpcLossTerms terms;
  double total = 0.0;
  Raster mask;
  Raster sim;
};

OpcSampleOutput opc_sample_forward(const UNet& opc, const UNet& litho_gen,
                                   const BinaryRaster& layout, const FabParam& y,
                                   const MaskLossWeights& w);

struct OpcGradOptions {
  bool accumulate_opc = true;
  bool accumulate_litho = false;  // the forward model stays frozen in training
};

OpcSampleOutput opc_sample_grads(UNet& opc, UNet& litho_gen, const BinaryRaster& layout,
                                 const FabParam& y, const MaskLossWeights& w,
                                 const OpcGradOptions& opt);

}  // namespace vmlitho
