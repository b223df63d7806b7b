#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "vmlitho/faboracle.hpp"
#include "vmlitho/raster.hpp"

namespace vmlitho {

enum class LayoutFamily {
  kParallelWires,
  kComb,
  kTipToLine,
  kIsolatedLine,
  kLBend,
  kDenseArray,
};

const char* family_name(LayoutFamily f);
LayoutFamily family_from_name(const std::string& name);

// Generation recipe for Manhattan layout patterns.
struct LayoutSpec {
  int width = 64;
  int height = 64;
  int min_line_width = 4;
  int min_spacing = 3;
  std::vector<LayoutFamily> families = {
      LayoutFamily::kParallelWires, LayoutFamily::kComb,     LayoutFamily::kTipToLine,
      LayoutFamily::kIsolatedLine,  LayoutFamily::kLBend,    LayoutFamily::kDenseArray,
  };
  double density = 0.25;  // target foreground fraction
  int count = 64;         // layouts per dataset

  void validate() const;

  std::string to_json() const;
  static LayoutSpec from_json(const std::string& json_text);
};

// Deterministic in (spec, seed). Empty family set yields an all-background
// raster. All features respect min_line_width / min_spacing.
BinaryRaster generate_layout(const LayoutSpec& spec, uint64_t seed);

// Named 64x64 probe layouts exercising the failure-prone geometries:
// isolated-line, dense-lines, tip-to-line at gaps {3,5,8}, l-bend.
struct NamedProbe {
  std::string name;
  BinaryRaster layout;
};
std::vector<NamedProbe> probe_layouts();

// Outer convex corner pixel of the l-bend probe (rounding checks look here).
struct PixelCoord {
  int x = 0;
  int y = 0;
};
PixelCoord lbend_corner();

// --- run-length scan helpers (geometry oracles for tests and acceptance) ---

// (start, length) of each maximal foreground run in a row / column.
std::vector<std::pair<int, int>> row_runs(const BinaryRaster& b, int y);
std::vector<std::pair<int, int>> col_runs(const BinaryRaster& b, int x);

// Length of the foreground run in row y containing column x; 0 if background.
int line_width_at_row(const BinaryRaster& b, int x, int y);

// Minimum maximal-run length over all rows and columns (ignoring empty lines).
// For rectilinear unions this lower-bounds the drawn feature width.
int min_foreground_run(const BinaryRaster& b);

// --- dataset assembly ---

struct ManifestEntry {
  std::string id;           // layout id, shared across its parameter settings
  std::string layout_path;  // relative to the manifest directory
  std::string gt_path;
  FabParam param;
  int param_index = 0;
  std::string split;  // train | val | test
};

struct DatasetManifest {
  int width = 0;
  int height = 0;
  uint64_t seed = 0;
  int dihedral_augment = 1;  // 1 = no augmentation, up to 8 dihedral copies
  LayoutSpec layout_spec;
  OracleConfig oracle_config;
  std::vector<ManifestEntry> entries;

  std::vector<const ManifestEntry*> split_entries(const std::string& split) const;

  void save(const std::string& path) const;
  static DatasetManifest load(const std::string& path);
};

// Hash of the manifest file bytes; recorded into checkpoints.
uint64_t manifest_file_hash(const std::string& path);

// Generates spec.count layouts, simulates each under every parameter,
// writes PNGs plus manifest.json under out_dir, and returns the manifest.
// Splits are assigned 80/10/10 by layout (augmented copies inherit the
// base layout's split so no geometry leaks across splits).
DatasetManifest build_dataset(const LayoutSpec& spec, const OracleConfig& oracle_cfg,
                              const std::vector<FabParam>& params, const std::string& out_dir,
                              uint64_t seed, int dihedral_augment = 1);

// The eight axis-aligned symmetries; index 0 is the identity.
BinaryRaster dihedral_transform(const BinaryRaster& b, int index);

}  // namespace vmlitho
