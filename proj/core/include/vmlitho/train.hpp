#pragma once

#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "vmlitho/layoutgen.hpp"
#include "vmlitho/metrics.hpp"
#include "vmlitho/pipeline.hpp"

namespace vmlitho {

struct TrainConfig {
  int epochs = 6;
  int batch_size = 8;
  double lr_g = 2e-4;
  double lr_d = 2e-4;
  double lr_opc = 2e-4;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  LossWeights loss_weights;
  MaskLossWeights mask_loss_weights;
  uint64_t seed = 42;
  int eval_interval = 1;
  GeneratorConfig generator;  // param_dim is taken from the dataset
  RegressorConfig regressor;

  void validate() const;
  std::string to_json() const;
  static TrainConfig from_json(const std::string& json_text);
};

// Image loader with an I/O audit trail; the self-supervision contract of
// mask training is checked against it.
class DatasetCache {
 public:
  DatasetCache(std::string base_dir, const DatasetManifest& manifest);

  const BinaryRaster& layout(const ManifestEntry& e);
  const Raster& ground_truth(const ManifestEntry& e);

  size_t ground_truth_opens() const { return gt_opens_; }
  const std::vector<std::string>& opened_paths() const { return opened_; }

 private:
  std::string base_;
  std::map<std::string, BinaryRaster> layouts_;
  std::map<std::string, Raster> gts_;
  std::vector<std::string> opened_;
  size_t gt_opens_ = 0;
};

struct CheckpointInfo {
  std::string role;  // "lithonet" | "opcnet"
  int epoch = 0;
  uint64_t manifest_hash = 0;
  std::string train_config_json;
};

struct LithoCheckpoint {
  CheckpointInfo info;
  UNet generator;
  Regressor regressor;
};

struct OpcCheckpoint {
  CheckpointInfo info;
  UNet generator;
};

// Single binary file: header, JSON metadata block, then the named parameter
// arrays in creation order as raw little-endian doubles. A `.json` sidecar
// repeats the metadata. Save/load round-trips bit-exactly.
void save_checkpoint(const LithoCheckpoint& ckpt, const std::string& path);
void save_checkpoint(const OpcCheckpoint& ckpt, const std::string& path);
LithoCheckpoint load_litho_checkpoint(const std::string& path);
OpcCheckpoint load_opc_checkpoint(const std::string& path);
std::string checkpoint_role(const std::string& path);

uint64_t litho_param_hash(const LithoCheckpoint& ckpt);

class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(const std::string& what, int batch_id)
      : std::runtime_error(what), batch_id(batch_id) {}
  int batch_id;
};

struct LithoEpochLog {
  int epoch = 0;
  LithoLossTerms terms;
  double total = 0.0;
  bool has_validation = false;
  double val_iou = 0.0, val_ssim = 0.0, val_pixel_error = 0.0;
};

struct OpcEpochLog {
  int epoch = 0;
  OpcLossTerms terms;
  double total = 0.0;
  bool has_validation = false;
  double val_iou = 0.0, val_ssim = 0.0, val_pixel_error = 0.0;
};

struct LithoTrainResult {
  LithoCheckpoint checkpoint;  // best-validation-IOU parameters
  std::vector<LithoEpochLog> log;
  int best_epoch = 0;
  double best_val_iou = 0.0;
};

struct OpcTrainResult {
  OpcCheckpoint checkpoint;
  std::vector<OpcEpochLog> log;
  int best_epoch = 0;
  double best_val_iou = 0.0;
  size_t ground_truth_opens = 0;  // I/O audit: must be zero
  uint64_t litho_hash_before = 0;
  uint64_t litho_hash_after = 0;
};

// Alternating training: one regressor step on ground-truth pairs per
// generator step on the full objective (regressor frozen). Epoch 0 of the
// log records the pre-training losses. Returns the best-validation model.
LithoTrainResult train_lithonet(const std::string& manifest_path, const TrainConfig& cfg);

// Self-supervised mask training through the frozen forward model: only
// layout images are read, and the forward-model hash is asserted unchanged.
OpcTrainResult train_opcnet(const std::string& manifest_path, LithoCheckpoint& litho,
                            const TrainConfig& cfg);

void write_litho_log_csv(const std::vector<LithoEpochLog>& log, const std::string& path);
void write_opc_log_csv(const std::vector<OpcEpochLog>& log, const std::string& path);

struct LithoPrediction {
  DeformationMap map;
  Raster pred;
};

LithoPrediction predict_litho(const LithoCheckpoint& ckpt, const BinaryRaster& layout,
                              const FabParam& y);

struct CorrectionResult {
  Raster mask;         // K
  Raster corrected;    // Litho(K, y)
  Raster uncorrected;  // Litho(S, y)
  double iou_corrected = 0.0, iou_uncorrected = 0.0;
  double ssim_corrected = 0.0, ssim_uncorrected = 0.0;
  double err_corrected = 0.0, err_uncorrected = 0.0;
};

// Metrics compare each binarized simulation against the source layout.
CorrectionResult correct_and_verify(const OpcCheckpoint& opc, const LithoCheckpoint& litho,
                                    const BinaryRaster& layout, const FabParam& y);

// Binarized forward-model predictions against oracle ground truth.
MetricsReport evaluate(const LithoCheckpoint& ckpt, const std::string& manifest_path,
                       const std::string& split);

// Closed-loop evaluation: Litho(OPC(S), y) against the layout itself.
MetricsReport evaluate_opc(const OpcCheckpoint& opc, const LithoCheckpoint& litho,
                           const std::string& manifest_path, const std::string& split);

}  // namespace vmlitho
