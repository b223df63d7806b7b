// vmlitho: dataset generation, forward-model / mask-corrector training,
// prediction, evaluation, ablations and gradient verification.
//
// Exit codes: 0 success, 1 verification failure, 2 usage/config error,
// 3 runtime divergence.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>

#include "CLI11.hpp"
#include "json.hpp"
#include "vmlitho/gradcheck.hpp"
#include "vmlitho/train.hpp"

using namespace vmlitho;
namespace fs = std::filesystem;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitVerification = 1;
constexpr int kExitConfig = 2;
constexpr int kExitDivergence = 3;

struct RunConfig {
  LayoutSpec layout;
  OracleConfig oracle;
  TrainConfig train;
  uint64_t seed = 42;
  int augment = 1;
  std::vector<double> params;  // fabrication parameter grid for datasets

  RunConfig() {
    params = FabParam::training_grid();
  }

  std::string to_json() const {
    nlohmann::json j = nlohmann::json::parse(train.to_json());
    const nlohmann::json jl = nlohmann::json::parse(layout.to_json());
    for (auto it = jl.begin(); it != jl.end(); ++it) j[it.key()] = it.value();
    const nlohmann::json jo = nlohmann::json::parse(oracle.to_json());
    for (auto it = jo.begin(); it != jo.end(); ++it) j[it.key()] = it.value();
    j["seed"] = seed;
    j["augment"] = augment;
    j["params"] = params;
    return j.dump(2);
  }

  static RunConfig from_json_text(const std::string& text) {
    RunConfig c;
    nlohmann::json j = nlohmann::json::parse(text);
    c.train = TrainConfig::from_json(text);
    auto get = [&](const char* key, auto& field) {
      if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
    };
    get("width", c.layout.width);
    get("height", c.layout.height);
    get("min_line_width", c.layout.min_line_width);
    get("min_spacing", c.layout.min_spacing);
    get("density", c.layout.density);
    get("count", c.layout.count);
    if (j.contains("families")) {
      c.layout.families.clear();
      for (const auto& name : j.at("families"))
        c.layout.families.push_back(family_from_name(name.get<std::string>()));
    }
    get("sigma_fine", c.oracle.sigma_fine);
    get("sigma_density", c.oracle.sigma_density);
    get("alpha", c.oracle.alpha);
    get("t0", c.oracle.t0);
    get("t1", c.oracle.t1);
    get("seed", c.seed);
    get("augment", c.augment);
    get("params", c.params);
    c.train.seed = c.seed;
    return c;
  }

  static RunConfig load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::invalid_argument("cannot read config file: " + path);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return from_json_text(text);
  }
};

void write_resolved_config(const RunConfig& cfg, const std::string& out_dir) {
  fs::create_directories(out_dir);
  std::ofstream out(fs::path(out_dir) / "resolved_config.json");
  out << cfg.to_json() << "\n";
}

std::vector<FabParam> fab_params(const RunConfig& cfg) {
  std::vector<FabParam> out;
  for (double y : cfg.params) out.emplace_back(y);
  return out;
}

void apply_ablation(LossWeights& w, const std::string& spec) {
  std::set<std::string> terms;
  std::string cur;
  for (char ch : spec + ",") {
    if (ch == ',') {
      if (!cur.empty()) terms.insert(cur);
      cur.clear();
    } else {
      cur += ch;
    }
  }
  for (const std::string& t : terms) {
    if (t == "rec")
      w.rec = 0.0;
    else if (t == "var")
      w.var = 0.0;
    else if (t == "smooth")
      w.smooth = 0.0;
    else if (t == "reg")
      w.reg = 0.0;
    else if (t == "par")
      w.par = 0.0;
    else
      throw std::invalid_argument("unknown ablation term: " + t +
                                  " (expected rec,var,smooth,reg,par)");
  }
}

// ---------------------------------------------------------------------------

int cmd_dataset(const RunConfig& cfg, const std::string& out_dir) {
  const DatasetManifest m = build_dataset(cfg.layout, cfg.oracle, fab_params(cfg), out_dir,
                                          cfg.seed, cfg.augment);
  write_resolved_config(cfg, out_dir);

  std::map<std::string, int> by_split;
  std::map<int, int> by_param;
  for (const auto& e : m.entries) {
    by_split[e.split]++;
    by_param[e.param_index]++;
  }
  std::printf("dataset: %zu entries (%d layouts x %zu params%s) at %dx%d\n", m.entries.size(),
              cfg.layout.count, cfg.params.size(),
              cfg.augment > 1 ? (", dihedral x" + std::to_string(cfg.augment)).c_str() : "",
              m.width, m.height);
  for (const auto& [split, n] : by_split) std::printf("  split %-5s : %d entries\n", split.c_str(), n);
  for (const auto& [pi, n] : by_param)
    std::printf("  param %d (y=%+.2f) : %d entries\n", pi, cfg.params[pi], n);
  std::printf("  manifest hash : %016llx\n",
              static_cast<unsigned long long>(
                  manifest_file_hash((fs::path(out_dir) / "manifest.json").string())));
  return kExitOk;
}

int cmd_train_litho(RunConfig cfg, const std::string& data, const std::string& out_dir,
                    const std::string& ablate) {
  if (!ablate.empty()) apply_ablation(cfg.train.loss_weights, ablate);
  write_resolved_config(cfg, out_dir);

  const LithoTrainResult r = train_lithonet(data, cfg.train);
  const std::string ckpt = (fs::path(out_dir) / "litho.ckpt").string();
  save_checkpoint(r.checkpoint, ckpt);
  write_litho_log_csv(r.log, (fs::path(out_dir) / "train_log.csv").string());

  std::printf("trained lithonet: best epoch %d, val IOU %.4f\n", r.best_epoch, r.best_val_iou);
  std::printf("checkpoint: %s\n", ckpt.c_str());
  return kExitOk;
}

int cmd_train_opc(RunConfig cfg, const std::string& data, const std::string& litho_path,
                  const std::string& out_dir) {
  write_resolved_config(cfg, out_dir);
  LithoCheckpoint litho = load_litho_checkpoint(litho_path);

  const OpcTrainResult r = train_opcnet(data, litho, cfg.train);
  const std::string ckpt = (fs::path(out_dir) / "opc.ckpt").string();
  save_checkpoint(r.checkpoint, ckpt);
  write_opc_log_csv(r.log, (fs::path(out_dir) / "train_log.csv").string());

  std::printf("trained opcnet: best epoch %d, val IOU %.4f\n", r.best_epoch, r.best_val_iou);
  std::printf("frozen forward model hash: %016llx (unchanged)\n",
              static_cast<unsigned long long>(r.litho_hash_after));
  std::printf("ground-truth files opened during training: %zu\n", r.ground_truth_opens);
  std::printf("checkpoint: %s\n", ckpt.c_str());
  return kExitOk;
}

RgbImage gray_to_rgb(const Raster& r) {
  RgbImage img(r.width(), r.height());
  for (int y = 0; y < r.height(); ++y)
    for (int x = 0; x < r.width(); ++x) {
      const auto v = static_cast<uint8_t>(std::lround(r.at(x, y) * 255.0));
      img.set(x, y, v, v, v);
    }
  return img;
}

RgbImage hstack(const std::vector<RgbImage>& imgs, int gap = 2) {
  int w = gap * (static_cast<int>(imgs.size()) - 1), h = 0;
  for (const auto& i : imgs) {
    w += i.width;
    h = std::max(h, i.height);
  }
  RgbImage out(w, h);
  int x0 = 0;
  for (const auto& i : imgs) {
    for (int y = 0; y < i.height; ++y)
      for (int x = 0; x < i.width; ++x) {
        const size_t s = (static_cast<size_t>(y) * i.width + x) * 3;
        out.set(x0 + x, y, i.data[s], i.data[s + 1], i.data[s + 2]);
      }
    x0 += i.width + gap;
  }
  return out;
}

int cmd_predict(const std::string& litho_path, const std::string& layout_path, double y_value,
                const std::string& prefix, bool sweep) {
  const LithoCheckpoint ckpt = load_litho_checkpoint(litho_path);
  const BinaryRaster layout(load_image(layout_path));
  const FabParam y(y_value);

  const LithoPrediction p = predict_litho(ckpt, layout, y);
  save_image_rgb(render_deformation(p.map), prefix + "_map.png");
  save_deformation(p.map, prefix + "_map.bin");
  save_image(p.pred, prefix + "_pred.png");
  save_image(binarize(p.pred, 0.5).raster(), prefix + "_pred_bin.png");
  save_image_rgb(hstack({gray_to_rgb(layout.raster()), render_deformation(p.map),
                         gray_to_rgb(p.pred)}),
                 prefix + "_triptych.png");

  if (sweep) {
    std::vector<RgbImage> frames;
    for (int k = 0; k <= 12; ++k) {
      const FabParam ys(-0.9 + 0.15 * k);
      frames.push_back(gray_to_rgb(predict_litho(ckpt, layout, ys).pred));
    }
    save_image_rgb(hstack(frames), prefix + "_sweep.png");
  }
  std::printf("prediction written to %s_{map.png,map.bin,pred.png,pred_bin.png,triptych.png%s}\n",
              prefix.c_str(), sweep ? ",sweep.png" : "");
  return kExitOk;
}

int cmd_correct(const std::string& opc_path, const std::string& litho_path,
                const std::string& layout_path, double y_value, const std::string& prefix) {
  const OpcCheckpoint opc = load_opc_checkpoint(opc_path);
  const LithoCheckpoint litho = load_litho_checkpoint(litho_path);
  const BinaryRaster layout(load_image(layout_path));

  const CorrectionResult res = correct_and_verify(opc, litho, layout, FabParam(y_value));
  save_image(res.mask, prefix + "_mask.png");
  save_image(binarize(res.mask, 0.5).raster(), prefix + "_mask_bin.png");
  save_image(res.corrected, prefix + "_corrected.png");
  save_image(res.uncorrected, prefix + "_uncorrected.png");

  nlohmann::json j;
  j["iou_corrected"] = res.iou_corrected;
  j["iou_uncorrected"] = res.iou_uncorrected;
  j["ssim_corrected"] = res.ssim_corrected;
  j["ssim_uncorrected"] = res.ssim_uncorrected;
  j["err_corrected"] = res.err_corrected;
  j["err_uncorrected"] = res.err_uncorrected;
  std::ofstream(prefix + "_metrics.json") << j.dump(2) << "\n";

  std::printf("correction: IOU %.4f -> %.4f, err %.4f -> %.4f\n", res.iou_uncorrected,
              res.iou_corrected, res.err_uncorrected, res.err_corrected);
  return kExitOk;
}

int cmd_eval(const std::string& ckpt_path, const std::string& litho_path, const std::string& data,
             const std::string& split, const std::string& out_dir) {
  fs::create_directories(out_dir);
  const std::string role = checkpoint_role(ckpt_path);

  MetricsReport report;
  uint64_t ckpt_hash = 0;
  if (role == "lithonet") {
    const LithoCheckpoint ckpt = load_litho_checkpoint(ckpt_path);
    ckpt_hash = ckpt.info.manifest_hash;
    report = evaluate(ckpt, data, split);
  } else if (role == "opcnet") {
    if (litho_path.empty())
      throw std::invalid_argument("evaluating an opcnet checkpoint requires --litho");
    const OpcCheckpoint opc = load_opc_checkpoint(ckpt_path);
    const LithoCheckpoint litho = load_litho_checkpoint(litho_path);
    ckpt_hash = opc.info.manifest_hash;
    report = evaluate_opc(opc, litho, data, split);
  } else {
    throw std::invalid_argument("unknown checkpoint role: " + role);
  }

  if (ckpt_hash != 0 && ckpt_hash != manifest_file_hash(data))
    std::fprintf(stderr,
                 "warning: manifest hash differs from the one recorded at training time\n");

  write_metrics_csv(report, (fs::path(out_dir) / "metrics.csv").string());
  nlohmann::json j;
  j["split"] = split;
  j["n"] = report.rows.size();
  j["mean_iou"] = report.mean_iou;
  j["mean_ssim"] = report.mean_ssim;
  j["mean_pixel_error"] = report.mean_pixel_error;
  std::ofstream((fs::path(out_dir) / "metrics.json")) << j.dump(2) << "\n";

  std::printf("%s %s split: n=%zu  Avg IOU %.4f  Avg SSIM %.4f  Avg Error %.4f\n", role.c_str(),
              split.c_str(), report.rows.size(), report.mean_iou, report.mean_ssim,
              report.mean_pixel_error);
  return kExitOk;
}

int cmd_ablate(const RunConfig& cfg, const std::string& data, const std::string& out_dir) {
  write_resolved_config(cfg, out_dir);
  std::ofstream csv(fs::path(out_dir) / "ablation.csv");
  csv << "setting,avg_iou,avg_ssim,avg_error\n";

  struct LithoRow {
    const char* name;
    const char* ablate;
  };
  const LithoRow litho_rows[] = {
      {"L_total-L_var-L_smooth", "var,smooth"},
      {"L_total-L_var", "var"},
      {"L_total-L_smooth", "smooth"},
      {"L_total", ""},
  };

  std::string full_ckpt_path;
  char line[256];
  for (const LithoRow& row : litho_rows) {
    try {
      RunConfig rc = cfg;
      if (row.ablate[0] != '\0') apply_ablation(rc.train.loss_weights, row.ablate);
      const LithoTrainResult r = train_lithonet(data, rc.train);
      const std::string dir = (fs::path(out_dir) / row.name).string();
      fs::create_directories(dir);
      const std::string ckpt_path = (fs::path(dir) / "litho.ckpt").string();
      save_checkpoint(r.checkpoint, ckpt_path);
      write_litho_log_csv(r.log, (fs::path(dir) / "train_log.csv").string());
      if (std::string(row.ablate).empty()) full_ckpt_path = ckpt_path;

      const MetricsReport rep = evaluate(r.checkpoint, data, "val");
      std::snprintf(line, sizeof(line), "%s,%.4f,%.4f,%.4f\n", row.name, rep.mean_iou,
                    rep.mean_ssim, rep.mean_pixel_error);
      csv << line;
      std::printf("%-24s Avg IOU %.4f  Avg SSIM %.4f  Avg Error %.4f\n", row.name, rep.mean_iou,
                  rep.mean_ssim, rep.mean_pixel_error);
    } catch (const std::exception& e) {
      csv << row.name << ",failed,failed,failed\n";
      std::fprintf(stderr, "ablation row %s failed: %s\n", row.name, e.what());
    }
  }

  struct OpcRow {
    const char* name;
    double mu_var, mu_smooth;
  };
  const OpcRow opc_rows[] = {
      {"L_IO", 0.0, 0.0},
      {"L_IO+L_Kvar", 1.0, 0.0},
      {"L_IO+L_Kvar+L_Ksmooth", 1.0, 1.0},
  };

  for (const OpcRow& row : opc_rows) {
    try {
      if (full_ckpt_path.empty()) throw std::runtime_error("no full-loss forward model available");
      LithoCheckpoint litho = load_litho_checkpoint(full_ckpt_path);
      RunConfig rc = cfg;
      rc.train.mask_loss_weights.var = row.mu_var;
      rc.train.mask_loss_weights.smooth = row.mu_smooth;
      const OpcTrainResult r = train_opcnet(data, litho, rc.train);
      const std::string dir = (fs::path(out_dir) / row.name).string();
      fs::create_directories(dir);
      save_checkpoint(r.checkpoint, (fs::path(dir) / "opc.ckpt").string());
      write_opc_log_csv(r.log, (fs::path(dir) / "train_log.csv").string());

      const MetricsReport rep = evaluate_opc(r.checkpoint, litho, data, "val");
      std::snprintf(line, sizeof(line), "%s,%.4f,%.4f,%.4f\n", row.name, rep.mean_iou,
                    rep.mean_ssim, rep.mean_pixel_error);
      csv << line;
      std::printf("%-24s Avg IOU %.4f  Avg SSIM %.4f  Avg Error %.4f\n", row.name, rep.mean_iou,
                  rep.mean_ssim, rep.mean_pixel_error);
    } catch (const std::exception& e) {
      csv << row.name << ",failed,failed,failed\n";
      std::fprintf(stderr, "ablation row %s failed: %s\n", row.name, e.what());
    }
  }
  std::printf("ablation table: %s\n", (fs::path(out_dir) / "ablation.csv").string().c_str());
  return kExitOk;
}

int cmd_gradcheck() {
  const GradCheckReport report = gradcheck();
  std::fputs(format_gradcheck_report(report).c_str(), stdout);
  return report.pass ? kExitOk : kExitVerification;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"virtual lithography simulator and self-supervised mask corrector"};
  app.require_subcommand(1);

  std::string config_path, out_dir = ".", data, litho_path, opc_path, ckpt_path;
  std::string layout_path, prefix = "out", split = "test", ablate_terms;
  double y_value = 0.0;
  bool sweep = false;
  int count = -1, epochs = -1;
  int64_t seed = -1;

  auto load_config = [&]() {
    RunConfig cfg = config_path.empty() ? RunConfig{} : RunConfig::load(config_path);
    if (seed >= 0) {
      cfg.seed = static_cast<uint64_t>(seed);
      cfg.train.seed = cfg.seed;
    }
    if (count > 0) cfg.layout.count = count;
    if (epochs > 0) cfg.train.epochs = epochs;
    return cfg;
  };

  CLI::App* dataset = app.add_subcommand("dataset", "generate a synthetic layout/shape dataset");
  dataset->add_option("--config", config_path, "JSON run config");
  dataset->add_option("--out", out_dir, "output directory")->required();
  dataset->add_option("--count", count, "layouts to generate");
  dataset->add_option("--seed", seed, "dataset seed");

  CLI::App* train_litho = app.add_subcommand("train-litho", "train the forward deformation model");
  train_litho->add_option("--config", config_path, "JSON run config");
  train_litho->add_option("--data", data, "dataset manifest.json")->required();
  train_litho->add_option("--out", out_dir, "output directory")->required();
  train_litho->add_option("--ablate", ablate_terms, "loss terms to zero (csv of rec,var,smooth,reg,par)");
  train_litho->add_option("--epochs", epochs, "override epochs");
  train_litho->add_option("--seed", seed, "override seed");

  CLI::App* train_opc = app.add_subcommand("train-opc", "train the mask corrector (self-supervised)");
  train_opc->add_option("--config", config_path, "JSON run config");
  train_opc->add_option("--data", data, "dataset manifest.json")->required();
  train_opc->add_option("--litho", litho_path, "frozen forward-model checkpoint")->required();
  train_opc->add_option("--out", out_dir, "output directory")->required();
  train_opc->add_option("--epochs", epochs, "override epochs");
  train_opc->add_option("--seed", seed, "override seed");

  CLI::App* predict = app.add_subcommand("predict", "predict fabricated shape for a layout");
  predict->add_option("--litho", litho_path, "forward-model checkpoint")->required();
  predict->add_option("layout", layout_path, "layout PNG")->required();
  predict->add_option("--param", y_value, "fabrication parameter in [-1,1]");
  predict->add_option("--out", prefix, "output prefix");
  predict->add_flag("--sweep", sweep, "emit a parameter-sweep strip image");

  CLI::App* correct = app.add_subcommand("correct", "predict a corrected photomask and verify it");
  correct->add_option("--opc", opc_path, "mask-corrector checkpoint")->required();
  correct->add_option("--litho", litho_path, "forward-model checkpoint")->required();
  correct->add_option("layout", layout_path, "layout PNG")->required();
  correct->add_option("--param", y_value, "fabrication parameter in [-1,1]");
  correct->add_option("--out", prefix, "output prefix");

  CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint on a dataset split");
  eval->add_option("--ckpt", ckpt_path, "checkpoint to evaluate")->required();
  eval->add_option("--litho", litho_path, "forward model (required for opcnet checkpoints)");
  eval->add_option("--data", data, "dataset manifest.json")->required();
  eval->add_option("--split", split, "train | val | test");
  eval->add_option("--out", out_dir, "output directory")->required();

  CLI::App* ablate = app.add_subcommand("ablate", "train and tabulate the loss-setting grid");
  ablate->add_option("--config", config_path, "JSON run config");
  ablate->add_option("--data", data, "dataset manifest.json")->required();
  ablate->add_option("--out", out_dir, "output directory")->required();
  ablate->add_option("--epochs", epochs, "override epochs");
  ablate->add_option("--seed", seed, "override seed");

  app.add_subcommand("gradcheck", "verify analytic gradients against finite differences");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (dataset->parsed()) return cmd_dataset(load_config(), out_dir);
    if (train_litho->parsed()) return cmd_train_litho(load_config(), data, out_dir, ablate_terms);
    if (train_opc->parsed()) return cmd_train_opc(load_config(), data, litho_path, out_dir);
    if (predict->parsed()) return cmd_predict(litho_path, layout_path, y_value, prefix, sweep);
    if (correct->parsed()) return cmd_correct(opc_path, litho_path, layout_path, y_value, prefix);
    if (eval->parsed()) return cmd_eval(ckpt_path, litho_path, data, split, out_dir);
    if (ablate->parsed()) return cmd_ablate(load_config(), data, out_dir);
    return cmd_gradcheck();
  } catch (const DivergenceError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitDivergence;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitConfig;
  }
}
