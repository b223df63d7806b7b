#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace vmlitho {

struct GradCheckArrayResult {
  std::string pipeline;  // "lithonet" | "opcnet"
  std::string model;     // "generator" | "regressor" | "opc"
  std::string array;
  int checked = 0;
  double max_rel_err = 0.0;
  int worst_index = -1;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  bool pass = true;
};

struct GradCheckReport {
  std::vector<GradCheckArrayResult> arrays;
  bool pass = true;
  double seconds = 0.0;
};

struct GradCheckOptions {
  uint64_t seed = 20240811;
  int max_per_array = 200;  // per named array; smaller arrays are checked fully
  double step = 1e-3;
  double tol = 1e-4;        // relative error, denominator floored at 1e-8
  std::string corrupt_array;  // test hook: falsify this array's analytic gradient
};

// Differentiates the full forward-model and mask-corrector objectives on an
// 8x8 instance (base_channels 4, depth 3 so the bottleneck stays on-grid)
// and compares every named parameter array against central differences.
// Parameters are noise-perturbed off the zero-head initialization so the
// losses are evaluated away from their non-smooth points.
GradCheckReport gradcheck(const GradCheckOptions& opt = {});

std::string format_gradcheck_report(const GradCheckReport& report);

}  // namespace vmlitho
