#include "vmlitho/pipeline.hpp"

namespace vmlitho {

namespace {

Raster raster_from_channel(const Tensor& t, int channel) {
  std::vector<double> px(static_cast<size_t>(t.h) * t.w);
  const double* p = t.v.data() + static_cast<size_t>(channel) * t.h * t.w;
  for (size_t i = 0; i < px.size(); ++i) px[i] = std::clamp(p[i], 0.0, 1.0);
  return Raster(t.w, t.h, std::move(px));
}

Tensor field_to_tensor(const GradientField& g) {
  Tensor t(1, g.height, g.width);
  std::copy(g.values.begin(), g.values.end(), t.v.begin());
  return t;
}

struct LithoForwardState {
  UNetTapePtr gen_tape = make_unet_tape();
  RegressorTapePtr est_pred_tape = make_regressor_tape();
  RegressorTapePtr est_gt_tape = make_regressor_tape();
  std::vector<double> est_pred;
  std::vector<double> est_gt;
  LithoSampleOutput out;
};

LithoForwardState litho_forward_impl(const UNet& gen, const Regressor& reg,
                                     const BinaryRaster& layout, const Raster& gt,
                                     const FabParam& y, const LossWeights& w) {
  if (!layout.raster().same_shape(gt))
    throw std::invalid_argument("litho sample: layout and ground truth grids differ");

  LithoForwardState st;
  st.out.map = gen.forward_map(layout.raster(), y, *st.gen_tape);
  st.out.pred = warp(layout.raster(), st.out.map);

  st.out.terms.rec = l_rec(gt, st.out.pred);
  st.out.terms.var = l_var(gt, st.out.pred);
  const EdgeWeightMap ew = edge_weights(layout, gt);
  st.out.terms.smooth = l_smooth(st.out.map, ew);
  st.out.terms.reg = l_reg(st.out.map);

  st.est_pred = reg.forward(st.out.pred, *st.est_pred_tape);
  st.est_gt = reg.forward(gt, *st.est_gt_tape);
  st.out.terms.par = l_par(st.est_pred, y) + l_par(st.est_gt, y);

  st.out.total = litho_total(st.out.terms, w);
  return st;
}

}  // namespace

LithoSampleOutput litho_sample_forward(const UNet& gen, const Regressor& reg,
                                       const BinaryRaster& layout, const Raster& gt,
                                       const FabParam& y, const LossWeights& w) {
  return litho_forward_impl(gen, reg, layout, gt, y, w).out;
}

LithoSampleOutput litho_sample_grads(UNet& gen, Regressor& reg, const BinaryRaster& layout,
                                     const Raster& gt, const FabParam& y, const LossWeights& w,
                                     const LithoGradOptions& opt) {
  LithoForwardState st = litho_forward_impl(gen, reg, layout, gt, y, w);

  // dL/dJ from the reconstruction, TV and generator-side parameter terms
  GradientField dj = l_rec_grad(gt, st.out.pred);
  const GradientField dj_var = l_var_grad(gt, st.out.pred);
  for (size_t i = 0; i < dj.values.size(); ++i)
    dj.values[i] = w.rec * dj.values[i] + w.var * dj_var.values[i];

  if (w.par != 0.0) {
    std::vector<double> dest = l_par_grad(st.est_pred, y);
    for (double& v : dest) v *= w.par;
    GradientField dj_par;
    reg.backward(dest, *st.est_pred_tape, opt.accumulate_regressor, &dj_par);
    for (size_t i = 0; i < dj.values.size(); ++i) dj.values[i] += dj_par.values[i];

    // discriminator-side term touches only D_y
    std::vector<double> dest_gt = l_par_grad(st.est_gt, y);
    for (double& v : dest_gt) v *= w.par;
    reg.backward(dest_gt, *st.est_gt_tape, opt.accumulate_regressor, nullptr);
  }

  // dL/dM: direct regularizers plus the warp path
  const EdgeWeightMap ew = edge_weights(layout, gt);
  DeformationMap dm = l_smooth_grad(st.out.map, ew);
  const DeformationMap dm_reg = l_reg_grad(st.out.map);
  const WarpBackward wb = warp_gradients(layout.raster(), st.out.map, dj);
  for (size_t i = 0; i < dm.dx.size(); ++i) {
    dm.dx[i] = w.smooth * dm.dx[i] + w.reg * dm_reg.dx[i] + wb.grad_map.dx[i];
    dm.dy[i] = w.smooth * dm.dy[i] + w.reg * dm_reg.dy[i] + wb.grad_map.dy[i];
  }

  if (opt.accumulate_generator || opt.accumulate_regressor)
    gen.backward(UNet::map_grad_to_tensor(dm), *st.gen_tape, opt.accumulate_generator, nullptr);

  return st.out;
}

double regressor_sample_grads(Regressor& reg, const Raster& gt, const FabParam& y,
                              bool accumulate_params) {
  RegressorTapePtr tape = make_regressor_tape();
  const std::vector<double> est = reg.forward(gt, *tape);
  const double loss = l_par(est, y);
  if (accumulate_params) reg.backward(l_par_grad(est, y), *tape, true, nullptr);
  return loss;
}

namespace {

struct OpcForwardState {
  UNetTapePtr opc_tape = make_unet_tape();
  UNetTapePtr gen_tape = make_unet_tape();
  DeformationMap map;
  OpcSampleOutput out;
};

OpcForwardState opc_forward_impl(const UNet& opc, const UNet& litho_gen,
                                 const BinaryRaster& layout, const FabParam& y,
                                 const MaskLossWeights& w) {
  OpcForwardState st;
  const Tensor k = opc.forward(layout.raster(), nullptr, *st.opc_tape);
  st.out.mask = raster_from_channel(k, 0);
  st.map = litho_gen.forward_map(st.out.mask, y, *st.gen_tape);
  st.out.sim = warp(st.out.mask, st.map);

  st.out.terms.io = l_io(layout.raster(), st.out.sim);
  st.out.terms.var = l_kvar(layout.raster(), st.out.sim);
  st.out.terms.smooth = l_ksmooth(st.out.mask);
  st.out.total = opc_total(st.out.terms, w);
  return st;
}

}  // namespace

OpcSampleOutput opc_sample_forward(const UNet& opc, const UNet& litho_gen,
                                   const BinaryRaster& layout, const FabParam& y,
                                   const MaskLossWeights& w) {
  return opc_forward_impl(opc, litho_gen, layout, y, w).out;
}

OpcSampleOutput opc_sample_grads(UNet& opc, UNet& litho_gen, const BinaryRaster& layout,
                                 const FabParam& y, const MaskLossWeights& w,
                                 const OpcGradOptions& opt) {
  OpcForwardState st = opc_forward_impl(opc, litho_gen, layout, y, w);

  GradientField dj = l_io_grad(layout.raster(), st.out.sim);
  const GradientField dj_var = l_kvar_grad(layout.raster(), st.out.sim);
  for (size_t i = 0; i < dj.values.size(); ++i)
    dj.values[i] = w.io * dj.values[i] + w.var * dj_var.values[i];

  // J depends on the mask twice: as the warp source and through G's input
  const WarpBackward wb = warp_gradients(st.out.mask, st.map, dj);
  GradientField dk_via_gen;
  litho_gen.backward(UNet::map_grad_to_tensor(wb.grad_map), *st.gen_tape, opt.accumulate_litho,
                     &dk_via_gen);

  GradientField dk = l_ksmooth_grad(st.out.mask);
  for (size_t i = 0; i < dk.values.size(); ++i)
    dk.values[i] = w.smooth * dk.values[i] + wb.grad_source.values[i] + dk_via_gen.values[i];

  opc.backward(field_to_tensor(dk), *st.opc_tape, opt.accumulate_opc, nullptr);
  return st.out;
}

}  // namespace vmlitho
