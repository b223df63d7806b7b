#include "vmlitho/layoutgen.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "json.hpp"
#include "vmlitho/rng.hpp"

namespace fs = std::filesystem;

namespace vmlitho {

const char* family_name(LayoutFamily f) {
  switch (f) {
    case LayoutFamily::kParallelWires: return "parallel-wires";
    case LayoutFamily::kComb: return "comb";
    case LayoutFamily::kTipToLine: return "tip-to-line";
    case LayoutFamily::kIsolatedLine: return "isolated-line";
    case LayoutFamily::kLBend: return "l-bend";
    case LayoutFamily::kDenseArray: return "dense-array";
  }
  throw std::invalid_argument("unknown layout family");
}

LayoutFamily family_from_name(const std::string& name) {
  for (LayoutFamily f : {LayoutFamily::kParallelWires, LayoutFamily::kComb,
                         LayoutFamily::kTipToLine, LayoutFamily::kIsolatedLine,
                         LayoutFamily::kLBend, LayoutFamily::kDenseArray})
    if (name == family_name(f)) return f;
  throw std::invalid_argument("unknown layout family name: " + name);
}

void LayoutSpec::validate() const {
  if (width < 32 || height < 32) throw std::invalid_argument("layout grid must be at least 32x32");
  if (min_line_width < 3) throw std::invalid_argument("min_line_width must be >= 3 px");
  if (min_spacing < 2) throw std::invalid_argument("min_spacing must be >= 2 px");
  if (!(density >= 0.05 && density <= 0.6))
    throw std::invalid_argument("density must be in [0.05, 0.6]");
  const double max_density =
      static_cast<double>(min_line_width) / (min_line_width + min_spacing);
  if (density > max_density)
    throw std::invalid_argument("density unachievable at given width/spacing constraints");
  if (count < 1) throw std::invalid_argument("count must be >= 1");
}

std::string LayoutSpec::to_json() const {
  nlohmann::json j;
  j["width"] = width;
  j["height"] = height;
  j["min_line_width"] = min_line_width;
  j["min_spacing"] = min_spacing;
  std::vector<std::string> fam;
  for (LayoutFamily f : families) fam.emplace_back(family_name(f));
  j["families"] = fam;
  j["density"] = density;
  j["count"] = count;
  return j.dump();
}

LayoutSpec LayoutSpec::from_json(const std::string& json_text) {
  nlohmann::json j = nlohmann::json::parse(json_text);
  LayoutSpec s;
  s.width = j.at("width").get<int>();
  s.height = j.at("height").get<int>();
  s.min_line_width = j.at("min_line_width").get<int>();
  s.min_spacing = j.at("min_spacing").get<int>();
  s.families.clear();
  for (const auto& name : j.at("families")) s.families.push_back(family_from_name(name));
  s.density = j.at("density").get<double>();
  s.count = j.at("count").get<int>();
  return s;
}

namespace {

void fill_rect(BinaryRaster& b, int x0, int y0, int x1, int y1) {
  x0 = std::max(x0, 0);
  y0 = std::max(y0, 0);
  x1 = std::min(x1, b.width());
  y1 = std::min(y1, b.height());
  for (int y = y0; y < y1; ++y)
    for (int x = x0; x < x1; ++x) b.set(x, y, true);
}

double fg_fraction(const BinaryRaster& b) {
  return static_cast<double>(b.foreground_count()) / b.size();
}

// Lines across the full usable extent, widths/gaps jittered upward from the
// minima, stopping at the density target.
void gen_parallel_wires(BinaryRaster& b, const LayoutSpec& s, Rng& rng, bool jitter_pitch) {
  const bool vertical = rng.next_below(2) == 0;
  const int margin = s.min_spacing;
  const int extent = vertical ? b.width() : b.height();
  int pos = margin + static_cast<int>(rng.next_below(static_cast<uint64_t>(s.min_spacing + 2)));
  while (true) {
    const int w = s.min_line_width +
                  (jitter_pitch ? static_cast<int>(rng.next_below(3)) : 0);
    if (pos + w > extent - margin) break;
    if (vertical)
      fill_rect(b, pos, margin, pos + w, b.height() - margin);
    else
      fill_rect(b, margin, pos, b.width() - margin, pos + w);
    if (fg_fraction(b) >= s.density) break;
    const int gap = s.min_spacing +
                    (jitter_pitch ? static_cast<int>(rng.next_below(4)) : 0);
    pos += w + gap;
  }
}

void gen_comb(BinaryRaster& b, const LayoutSpec& s, Rng& rng) {
  const int margin = s.min_spacing;
  const int w = s.min_line_width;
  const int spine_y = margin + static_cast<int>(rng.next_below(4));
  fill_rect(b, margin, spine_y, b.width() - margin, spine_y + w);
  const int pitch = w + s.min_spacing + static_cast<int>(rng.next_below(3));
  const int max_len = b.height() - spine_y - w - margin;
  for (int x = margin + static_cast<int>(rng.next_below(3)); x + w <= b.width() - margin;
       x += pitch) {
    const int len = std::max(2 * w, static_cast<int>(rng.next_below(
                                        static_cast<uint64_t>(std::max(1, max_len)))));
    fill_rect(b, x, spine_y + w, x + w, std::min(spine_y + w + len, b.height() - margin));
  }
}

void gen_tip_to_line(BinaryRaster& b, const LayoutSpec& s, Rng& rng) {
  const int margin = s.min_spacing;
  const int w = s.min_line_width;
  const int gap = std::max(s.min_spacing, 3) + static_cast<int>(rng.next_below(6));  // 3..8 default
  // vertical bar near the right side, horizontal tip approaching from the left
  const int bar_x = b.width() - margin - w - static_cast<int>(rng.next_below(8));
  fill_rect(b, bar_x, margin, bar_x + w, b.height() - margin);
  const int tip_y =
      margin + w + static_cast<int>(rng.next_below(static_cast<uint64_t>(
                       std::max(1, b.height() - 2 * (margin + w)))));
  fill_rect(b, margin, tip_y, bar_x - gap, std::min(tip_y + w, b.height() - margin));
}

void gen_isolated_line(BinaryRaster& b, const LayoutSpec& s, Rng& rng) {
  const int margin = s.min_spacing;
  const int w = s.min_line_width + static_cast<int>(rng.next_below(3));
  const bool vertical = rng.next_below(2) == 0;
  if (vertical) {
    const int x = margin + static_cast<int>(rng.next_below(
                               static_cast<uint64_t>(std::max(1, b.width() - 2 * margin - w))));
    fill_rect(b, x, margin, x + w, b.height() - margin);
  } else {
    const int y = margin + static_cast<int>(rng.next_below(
                               static_cast<uint64_t>(std::max(1, b.height() - 2 * margin - w))));
    fill_rect(b, margin, y, b.width() - margin, y + w);
  }
}

void gen_l_bend(BinaryRaster& b, const LayoutSpec& s, Rng& rng) {
  const int margin = s.min_spacing;
  const int w = s.min_line_width + static_cast<int>(rng.next_below(2));
  const int cx = margin + 4 + static_cast<int>(rng.next_below(
                                  static_cast<uint64_t>(std::max(1, b.width() / 2 - margin))));
  const int cy = b.height() / 2 +
                 static_cast<int>(rng.next_below(static_cast<uint64_t>(b.height() / 2 - margin - w)));
  const int vlen = std::max(3 * w, cy - margin - static_cast<int>(rng.next_below(8)));
  const int hlen = std::max(3 * w, b.width() - margin - cx - static_cast<int>(rng.next_below(8)));
  fill_rect(b, cx, cy - vlen, cx + w, cy + w);       // vertical arm
  fill_rect(b, cx, cy, cx + hlen, cy + w);           // horizontal arm
}

void gen_dense_array(BinaryRaster& b, const LayoutSpec& s, Rng& rng) {
  gen_parallel_wires(b, s, rng, /*jitter_pitch=*/false);
}

}  // namespace

BinaryRaster generate_layout(const LayoutSpec& spec, uint64_t seed) {
  spec.validate();
  BinaryRaster out(spec.width, spec.height, 0.0);
  if (spec.families.empty()) return out;

  Rng rng(seed);
  const LayoutFamily family =
      spec.families[rng.next_below(spec.families.size())];
  switch (family) {
    case LayoutFamily::kParallelWires: gen_parallel_wires(out, spec, rng, true); break;
    case LayoutFamily::kComb: gen_comb(out, spec, rng); break;
    case LayoutFamily::kTipToLine: gen_tip_to_line(out, spec, rng); break;
    case LayoutFamily::kIsolatedLine: gen_isolated_line(out, spec, rng); break;
    case LayoutFamily::kLBend: gen_l_bend(out, spec, rng); break;
    case LayoutFamily::kDenseArray: gen_dense_array(out, spec, rng); break;
  }
  return out;
}

std::vector<NamedProbe> probe_layouts() {
  std::vector<NamedProbe> probes;
  const int n = 64;

  {
    BinaryRaster b(n, n, 0.0);
    fill_rect(b, 30, 0, 34, n);
    probes.push_back({"isolated-line", std::move(b)});
  }
  {
    BinaryRaster b(n, n, 0.0);
    for (int i = 0; i < 5; ++i) fill_rect(b, 14 + 8 * i, 0, 18 + 8 * i, n);
    probes.push_back({"dense-lines", std::move(b)});
  }
  for (int gap : {3, 5, 8}) {
    BinaryRaster b(n, n, 0.0);
    fill_rect(b, 40, 0, 44, n);                 // target bar
    fill_rect(b, 4, 30, 40 - gap, 34);          // approaching tip
    probes.push_back({"tip-to-line-" + std::to_string(gap), std::move(b)});
  }
  {
    BinaryRaster b(n, n, 0.0);
    fill_rect(b, 20, 14, 24, 50);   // vertical arm
    fill_rect(b, 20, 46, 50, 50);   // horizontal arm
    probes.push_back({"l-bend", std::move(b)});
  }
  return probes;
}

PixelCoord lbend_corner() { return {20, 49}; }

std::vector<std::pair<int, int>> row_runs(const BinaryRaster& b, int y) {
  std::vector<std::pair<int, int>> runs;
  int start = -1;
  for (int x = 0; x <= b.width(); ++x) {
    const bool fg = x < b.width() && b.at(x, y) == 1.0;
    if (fg && start < 0) start = x;
    if (!fg && start >= 0) {
      runs.emplace_back(start, x - start);
      start = -1;
    }
  }
  return runs;
}

std::vector<std::pair<int, int>> col_runs(const BinaryRaster& b, int x) {
  std::vector<std::pair<int, int>> runs;
  int start = -1;
  for (int y = 0; y <= b.height(); ++y) {
    const bool fg = y < b.height() && b.at(x, y) == 1.0;
    if (fg && start < 0) start = y;
    if (!fg && start >= 0) {
      runs.emplace_back(start, y - start);
      start = -1;
    }
  }
  return runs;
}

int line_width_at_row(const BinaryRaster& b, int x, int y) {
  for (auto [start, len] : row_runs(b, y))
    if (x >= start && x < start + len) return len;
  return 0;
}

int min_foreground_run(const BinaryRaster& b) {
  int best = 0;
  bool any = false;
  auto consider = [&](int len) {
    if (!any || len < best) best = len;
    any = true;
  };
  for (int y = 0; y < b.height(); ++y)
    for (auto [start, len] : row_runs(b, y)) consider(len);
  for (int x = 0; x < b.width(); ++x)
    for (auto [start, len] : col_runs(b, x)) consider(len);
  return any ? best : 0;
}

BinaryRaster dihedral_transform(const BinaryRaster& b, int index) {
  if (index < 0 || index > 7) throw std::invalid_argument("dihedral index must be in [0,7]");
  const int W = b.width(), H = b.height();
  const bool swap = index >= 4;  // transpose first for indices 4..7
  BinaryRaster out(swap ? H : W, swap ? W : H, 0.0);
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      int sx = x, sy = y;
      if (swap) std::swap(sx, sy);
      const int fx = (index & 1) ? out.width() - 1 - sx : sx;
      const int fy = (index & 2) ? out.height() - 1 - sy : sy;
      out.set(fx, fy, b.at(x, y) == 1.0);
    }
  }
  return out;
}

std::vector<const ManifestEntry*> DatasetManifest::split_entries(const std::string& split) const {
  std::vector<const ManifestEntry*> out;
  for (const auto& e : entries)
    if (e.split == split) out.push_back(&e);
  return out;
}

void DatasetManifest::save(const std::string& path) const {
  nlohmann::json j;
  j["width"] = width;
  j["height"] = height;
  j["seed"] = seed;
  j["dihedral_augment"] = dihedral_augment;
  j["layout_spec"] = nlohmann::json::parse(layout_spec.to_json());
  j["oracle_config"] = nlohmann::json::parse(oracle_config.to_json());
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& e : entries) {
    nlohmann::json je;
    je["id"] = e.id;
    je["layout_path"] = e.layout_path;
    je["gt_path"] = e.gt_path;
    je["param"] = e.param.components;
    je["param_index"] = e.param_index;
    je["split"] = e.split;
    arr.push_back(std::move(je));
  }
  j["entries"] = std::move(arr);

  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write manifest: " + path);
  out << j.dump(2) << "\n";
}

DatasetManifest DatasetManifest::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read manifest: " + path);
  nlohmann::json j = nlohmann::json::parse(in);

  DatasetManifest m;
  m.width = j.at("width").get<int>();
  m.height = j.at("height").get<int>();
  m.seed = j.at("seed").get<uint64_t>();
  m.dihedral_augment = j.at("dihedral_augment").get<int>();
  m.layout_spec = LayoutSpec::from_json(j.at("layout_spec").dump());
  m.oracle_config = OracleConfig::from_json(j.at("oracle_config").dump());
  for (const auto& je : j.at("entries")) {
    ManifestEntry e;
    e.id = je.at("id").get<std::string>();
    e.layout_path = je.at("layout_path").get<std::string>();
    e.gt_path = je.at("gt_path").get<std::string>();
    e.param = FabParam(je.at("param").get<std::vector<double>>());
    e.param_index = je.at("param_index").get<int>();
    e.split = je.at("split").get<std::string>();
    m.entries.push_back(std::move(e));
  }
  return m;
}

uint64_t manifest_file_hash(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot hash manifest: " + path);
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return fnv1a64(bytes.data(), bytes.size());
}

DatasetManifest build_dataset(const LayoutSpec& spec, const OracleConfig& oracle_cfg,
                              const std::vector<FabParam>& params, const std::string& out_dir,
                              uint64_t seed, int dihedral_augment) {
  spec.validate();
  oracle_cfg.validate();
  if (params.empty()) throw std::invalid_argument("parameter list must be nonempty");
  if (dihedral_augment < 1 || dihedral_augment > 8)
    throw std::invalid_argument("dihedral_augment must be in [1,8]");

  fs::create_directories(fs::path(out_dir) / "layouts");
  fs::create_directories(fs::path(out_dir) / "gt");

  // split sizes over base layouts: 80/10/10 with floor'd tails
  const int n_val = std::max(spec.count / 10, spec.count >= 3 ? 1 : 0);
  const int n_test = n_val;
  const int n_train = spec.count - n_val - n_test;

  DatasetManifest manifest;
  manifest.width = spec.width;
  manifest.height = spec.height;
  manifest.seed = seed;
  manifest.dihedral_augment = dihedral_augment;
  manifest.layout_spec = spec;
  manifest.oracle_config = oracle_cfg;

  char idbuf[32];
  for (int i = 0; i < spec.count; ++i) {
    const uint64_t sample_seed = hash_combine(seed, static_cast<uint64_t>(i));
    const BinaryRaster base = generate_layout(spec, sample_seed);
    const std::string split = i < n_train ? "train" : (i < n_train + n_val ? "val" : "test");

    for (int d = 0; d < dihedral_augment; ++d) {
      const BinaryRaster layout = d == 0 ? base : dihedral_transform(base, d);
      if (d == 0)
        std::snprintf(idbuf, sizeof(idbuf), "L%04d", i);
      else
        std::snprintf(idbuf, sizeof(idbuf), "L%04d_d%d", i, d);
      const std::string id = idbuf;
      const std::string layout_rel = "layouts/" + id + ".png";
      save_image(layout.raster(), (fs::path(out_dir) / layout_rel).string());

      for (size_t pi = 0; pi < params.size(); ++pi) {
        BinaryRaster gt;
        try {
          gt = simulate(layout, params[pi], oracle_cfg);
        } catch (const std::exception& e) {
          throw std::runtime_error("oracle failed on sample " + id + ": " + e.what());
        }
        const std::string gt_rel = "gt/" + id + "_" + std::to_string(pi) + ".png";
        save_image(gt.raster(), (fs::path(out_dir) / gt_rel).string());

        ManifestEntry entry;
        entry.id = id;
        entry.layout_path = layout_rel;
        entry.gt_path = gt_rel;
        entry.param = params[pi];
        entry.param_index = static_cast<int>(pi);
        entry.split = split;
        manifest.entries.push_back(std::move(entry));
      }
    }
  }

  manifest.save((fs::path(out_dir) / "manifest.json").string());
  return manifest;
}

}  // namespace vmlitho
