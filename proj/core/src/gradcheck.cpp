#include "vmlitho/gradcheck.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numeric>
#include <sstream>

#include "vmlitho/pipeline.hpp"

namespace vmlitho {

namespace {

constexpr int kGridSize = 8;

struct Instance {
  UNet gen;
  Regressor reg;
  UNet opc;
  BinaryRaster layout{kGridSize, kGridSize, 0.0};
  Raster gt;
  FabParam y;
};

Instance build_instance(uint64_t seed) {
  GeneratorConfig gcfg;
  gcfg.param_dim = 1;
  gcfg.out_channels = 2;
  gcfg.depth = 3;  // 8 px grid: 2^3 keeps the bottleneck at 1x1
  gcfg.base_channels = 4;

  RegressorConfig rcfg;
  rcfg.levels = 3;
  rcfg.base_channels = 4;
  rcfg.param_dim = 1;

  GeneratorConfig ocfg = gcfg;
  ocfg.param_dim = 0;
  ocfg.out_channels = 1;
  ocfg.sigmoid_head = true;

  Instance inst{UNet(gcfg, hash_combine(seed, 1)), Regressor(rcfg, hash_combine(seed, 2)),
                UNet(ocfg, hash_combine(seed, 3))};

  Rng rng(hash_combine(seed, 4));
  // kick every parameter (including the zero heads) off the non-smooth
  // zero-map / lattice-aligned state
  inst.gen.params().add_noise(rng, 0.1);
  inst.reg.params().add_noise(rng, 0.1);
  inst.opc.params().add_noise(rng, 0.1);

  std::vector<double> gtpx(kGridSize * kGridSize);
  for (int i = 0; i < kGridSize * kGridSize; ++i) {
    inst.layout.set(i % kGridSize, i / kGridSize, rng.next_below(2) == 1);
    gtpx[i] = rng.next_uniform(0.02, 0.98);
  }
  inst.gt = Raster(kGridSize, kGridSize, std::move(gtpx));
  inst.y = FabParam(rng.next_uniform(-0.85, 0.85));
  return inst;
}

struct CheckTarget {
  std::string pipeline;
  std::string model;
  ParamStore* store;
  std::function<double()> loss;  // forward-only evaluation at current params
};

bool any_live_grad(const ParamStore& store) {
  for (size_t a = 0; a < store.array_count(); ++a) {
    const auto& arr = store.array(static_cast<int>(a));
    bool live = false;
    for (double g : arr.grad)
      if (g != 0.0) {
        live = true;
        break;
      }
    if (!live) return false;
  }
  return true;
}

void check_store(const CheckTarget& target, const GradCheckOptions& opt, Rng& rng,
                 std::vector<GradCheckArrayResult>& results, bool& all_pass) {
  ParamStore& store = *target.store;
  for (size_t a = 0; a < store.array_count(); ++a) {
    auto& arr = store.array(static_cast<int>(a));
    std::vector<double> analytic = arr.grad;  // copy before fd perturbs state
    if (target.model + "." + arr.name == opt.corrupt_array || arr.name == opt.corrupt_array)
      analytic[0] += 1.0;

    std::vector<size_t> indices(arr.value.size());
    std::iota(indices.begin(), indices.end(), 0);
    if (static_cast<int>(indices.size()) > opt.max_per_array) {
      for (size_t i = indices.size() - 1; i > 0; --i)
        std::swap(indices[i], indices[rng.next_below(i + 1)]);
      indices.resize(opt.max_per_array);
    }

    GradCheckArrayResult res;
    res.pipeline = target.pipeline;
    res.model = target.model;
    res.array = arr.name;
    res.checked = static_cast<int>(indices.size());

    for (size_t idx : indices) {
      const double saved = arr.value[idx];
      arr.value[idx] = saved + opt.step;
      const double f_plus = target.loss();
      arr.value[idx] = saved - opt.step;
      const double f_minus = target.loss();
      arr.value[idx] = saved;

      const double numeric = (f_plus - f_minus) / (2.0 * opt.step);
      const double a_val = analytic[idx];
      const double denom = std::max({std::abs(a_val), std::abs(numeric), 1e-8});
      const double rel = std::abs(a_val - numeric) / denom;
      if (rel > res.max_rel_err) {
        res.max_rel_err = rel;
        res.worst_index = static_cast<int>(idx);
        res.worst_analytic = a_val;
        res.worst_numeric = numeric;
      }
    }
    res.pass = res.max_rel_err <= opt.tol;
    all_pass = all_pass && res.pass;
    results.push_back(std::move(res));
  }
}

}  // namespace

GradCheckReport gradcheck(const GradCheckOptions& opt) {
  const auto t0 = std::chrono::steady_clock::now();
  GradCheckReport report;

  const LossWeights lw;
  const MaskLossWeights mw;

  // retry the seed if some array comes back with an all-zero gradient
  // (a dead ReLU path would turn the relative-error floor into noise)
  Instance inst = build_instance(opt.seed);
  for (int attempt = 0; attempt < 10; ++attempt) {
    inst.gen.params().zero_grad();
    inst.reg.params().zero_grad();
    inst.opc.params().zero_grad();
    litho_sample_grads(inst.gen, inst.reg, inst.layout, inst.gt, inst.y, lw,
                       {.accumulate_generator = true, .accumulate_regressor = true});
    OpcGradOptions oopt;
    oopt.accumulate_opc = true;
    oopt.accumulate_litho = false;
    opc_sample_grads(inst.opc, inst.gen, inst.layout, inst.y, mw, oopt);
    if (any_live_grad(inst.gen.params()) && any_live_grad(inst.reg.params()) &&
        any_live_grad(inst.opc.params()))
      break;
    inst = build_instance(opt.seed + attempt + 1);
  }

  Rng pick(hash_combine(opt.seed, 99));

  // forward-model pipeline: generator and regressor arrays
  {
    inst.gen.params().zero_grad();
    inst.reg.params().zero_grad();
    litho_sample_grads(inst.gen, inst.reg, inst.layout, inst.gt, inst.y, lw,
                       {.accumulate_generator = true, .accumulate_regressor = true});
    auto loss = [&]() {
      return litho_sample_forward(inst.gen, inst.reg, inst.layout, inst.gt, inst.y, lw).total;
    };
    check_store({"lithonet", "generator", &inst.gen.params(), loss}, opt, pick, report.arrays,
                report.pass);
    check_store({"lithonet", "regressor", &inst.reg.params(), loss}, opt, pick, report.arrays,
                report.pass);
  }

  // mask-corrector pipeline: the OPC arrays (the frozen generator is
  // exercised through the chain rule on these gradients)
  {
    inst.opc.params().zero_grad();
    OpcGradOptions oopt;
    opc_sample_grads(inst.opc, inst.gen, inst.layout, inst.y, mw, oopt);
    auto loss = [&]() {
      return opc_sample_forward(inst.opc, inst.gen, inst.layout, inst.y, mw).total;
    };
    check_store({"opcnet", "opc", &inst.opc.params(), loss}, opt, pick, report.arrays,
                report.pass);
  }

  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return report;
}

std::string format_gradcheck_report(const GradCheckReport& report) {
  std::ostringstream out;
  char line[256];
  for (const auto& r : report.arrays) {
    std::snprintf(line, sizeof(line),
                  "%-8s %-9s %-22s checked=%-4d max_rel_err=%.3e %s", r.pipeline.c_str(),
                  r.model.c_str(), r.array.c_str(), r.checked, r.max_rel_err,
                  r.pass ? "PASS" : "FAIL");
    out << line;
    if (!r.pass) {
      std::snprintf(line, sizeof(line), "  [worst idx=%d analytic=%.6e numeric=%.6e]",
                    r.worst_index, r.worst_analytic, r.worst_numeric);
      out << line;
    }
    out << "\n";
  }
  std::snprintf(line, sizeof(line), "gradcheck %s in %.2f s\n",
                report.pass ? "PASSED" : "FAILED", report.seconds);
  out << line;
  return out.str();
}

}  // namespace vmlitho
