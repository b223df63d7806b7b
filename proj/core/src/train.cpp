#include "vmlitho/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <memory>
#include <numeric>

#include "json.hpp"
#include "vmlitho/rng.hpp"

namespace fs = std::filesystem;

namespace vmlitho {

// ---------------------------------------------------------------------------
// TrainConfig

void TrainConfig::validate() const {
  if (epochs < 1) throw std::invalid_argument("epochs must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  for (double lr : {lr_g, lr_d, lr_opc})
    if (!(lr > 0.0)) throw std::invalid_argument("learning rates must be positive");
  if (!(adam_beta1 > 0.0 && adam_beta1 < 1.0 && adam_beta2 > 0.0 && adam_beta2 < 1.0))
    throw std::invalid_argument("adam betas must be in (0,1)");
  if (!(adam_eps > 0.0)) throw std::invalid_argument("adam eps must be positive");
  if (eval_interval < 1) throw std::invalid_argument("eval_interval must be >= 1");
  loss_weights.validate();
  mask_loss_weights.validate();
  generator.validate();
  regressor.validate();
}

std::string TrainConfig::to_json() const {
  nlohmann::json j;
  j["epochs"] = epochs;
  j["batch_size"] = batch_size;
  j["lr_g"] = lr_g;
  j["lr_d"] = lr_d;
  j["lr_opc"] = lr_opc;
  j["adam_beta1"] = adam_beta1;
  j["adam_beta2"] = adam_beta2;
  j["adam_eps"] = adam_eps;
  j["lambda_rec"] = loss_weights.rec;
  j["lambda_var"] = loss_weights.var;
  j["lambda_smooth"] = loss_weights.smooth;
  j["lambda_reg"] = loss_weights.reg;
  j["lambda_par"] = loss_weights.par;
  j["mu_io"] = mask_loss_weights.io;
  j["mu_var"] = mask_loss_weights.var;
  j["mu_smooth"] = mask_loss_weights.smooth;
  j["seed"] = seed;
  j["eval_interval"] = eval_interval;
  j["gen_depth"] = generator.depth;
  j["gen_base_channels"] = generator.base_channels;
  j["gen_d_max"] = generator.d_max;
  j["reg_levels"] = regressor.levels;
  j["reg_base_channels"] = regressor.base_channels;
  return j.dump();
}

TrainConfig TrainConfig::from_json(const std::string& json_text) {
  nlohmann::json j = nlohmann::json::parse(json_text);
  TrainConfig c;
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
  };
  get("epochs", c.epochs);
  get("batch_size", c.batch_size);
  get("lr_g", c.lr_g);
  get("lr_d", c.lr_d);
  get("lr_opc", c.lr_opc);
  get("adam_beta1", c.adam_beta1);
  get("adam_beta2", c.adam_beta2);
  get("adam_eps", c.adam_eps);
  get("lambda_rec", c.loss_weights.rec);
  get("lambda_var", c.loss_weights.var);
  get("lambda_smooth", c.loss_weights.smooth);
  get("lambda_reg", c.loss_weights.reg);
  get("lambda_par", c.loss_weights.par);
  get("mu_io", c.mask_loss_weights.io);
  get("mu_var", c.mask_loss_weights.var);
  get("mu_smooth", c.mask_loss_weights.smooth);
  get("seed", c.seed);
  get("eval_interval", c.eval_interval);
  get("gen_depth", c.generator.depth);
  get("gen_base_channels", c.generator.base_channels);
  get("gen_d_max", c.generator.d_max);
  get("reg_levels", c.regressor.levels);
  get("reg_base_channels", c.regressor.base_channels);
  return c;
}

// ---------------------------------------------------------------------------
// DatasetCache

DatasetCache::DatasetCache(std::string base_dir, const DatasetManifest& manifest)
    : base_(std::move(base_dir)) {
  (void)manifest;
}

const BinaryRaster& DatasetCache::layout(const ManifestEntry& e) {
  auto it = layouts_.find(e.layout_path);
  if (it == layouts_.end()) {
    const std::string full = (fs::path(base_) / e.layout_path).string();
    opened_.push_back(e.layout_path);
    it = layouts_.emplace(e.layout_path, BinaryRaster(load_image(full))).first;
  }
  return it->second;
}

const Raster& DatasetCache::ground_truth(const ManifestEntry& e) {
  auto it = gts_.find(e.gt_path);
  if (it == gts_.end()) {
    const std::string full = (fs::path(base_) / e.gt_path).string();
    opened_.push_back(e.gt_path);
    ++gt_opens_;
    it = gts_.emplace(e.gt_path, load_image(full)).first;
  }
  return it->second;
}

// ---------------------------------------------------------------------------
// Adam

namespace {

class Adam {
 public:
  Adam(ParamStore& store, double lr, double b1, double b2, double eps)
      : store_(&store), lr_(lr), b1_(b1), b2_(b2), eps_(eps) {
    m_.resize(store.array_count());
    v_.resize(store.array_count());
    for (size_t i = 0; i < store.array_count(); ++i) {
      m_[i].assign(store.array(static_cast<int>(i)).value.size(), 0.0);
      v_[i].assign(store.array(static_cast<int>(i)).value.size(), 0.0);
    }
  }

  void step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(b1_, t_);
    const double bc2 = 1.0 - std::pow(b2_, t_);
    for (size_t a = 0; a < store_->array_count(); ++a) {
      auto& arr = store_->array(static_cast<int>(a));
      auto& m = m_[a];
      auto& v = v_[a];
      for (size_t i = 0; i < arr.value.size(); ++i) {
        const double g = arr.grad[i];
        m[i] = b1_ * m[i] + (1.0 - b1_) * g;
        v[i] = b2_ * v[i] + (1.0 - b2_) * g * g;
        arr.value[i] -= lr_ * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps_);
      }
    }
  }

 private:
  ParamStore* store_;
  double lr_, b1_, b2_, eps_;
  int t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

std::vector<size_t> shuffled_indices(size_t n, uint64_t seed) {
  std::vector<size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(seed);
  for (size_t i = n; i > 1; --i) std::swap(idx[i - 1], idx[rng.next_below(i)]);
  return idx;
}

struct ValMetrics {
  double iou = 0.0, ssim = 0.0, err = 0.0;
};

ValMetrics validate_litho(const UNet& gen, DatasetCache& cache,
                          const std::vector<const ManifestEntry*>& val) {
  ValMetrics m;
  UNetTapePtr tape = make_unet_tape();
  for (const ManifestEntry* e : val) {
    const BinaryRaster& layout = cache.layout(*e);
    const Raster& gt = cache.ground_truth(*e);
    const DeformationMap map = gen.forward_map(layout.raster(), e->param, *tape);
    const Raster pred = warp(layout.raster(), map);
    const BinaryRaster pb = binarize(pred, 0.5);
    const BinaryRaster gb = binarize(gt, 0.5);
    m.iou += iou(pb, gb);
    m.ssim += ssim(pb.raster(), gb.raster());
    m.err += pixel_error_rate(pb, gb);
  }
  const double n = static_cast<double>(val.size());
  m.iou /= n;
  m.ssim /= n;
  m.err /= n;
  return m;
}

ValMetrics validate_opc(const UNet& opc, const UNet& gen, DatasetCache& cache,
                        const std::vector<const ManifestEntry*>& val) {
  ValMetrics m;
  UNetTapePtr ot = make_unet_tape();
  UNetTapePtr gt_tape = make_unet_tape();
  for (const ManifestEntry* e : val) {
    const BinaryRaster& layout = cache.layout(*e);
    const Tensor kt = opc.forward(layout.raster(), nullptr, *ot);
    std::vector<double> px(kt.v.begin(), kt.v.begin() + static_cast<size_t>(kt.h) * kt.w);
    for (double& v : px) v = std::clamp(v, 0.0, 1.0);
    const Raster mask(kt.w, kt.h, std::move(px));
    const DeformationMap map = gen.forward_map(mask, e->param, *gt_tape);
    const Raster sim = warp(mask, map);
    const BinaryRaster sb = binarize(sim, 0.5);
    m.iou += iou(sb, layout);
    m.ssim += ssim(sb.raster(), layout.raster());
    m.err += pixel_error_rate(sb, layout);
  }
  const double n = static_cast<double>(val.size());
  m.iou /= n;
  m.ssim /= n;
  m.err /= n;
  return m;
}

}  // namespace

// ---------------------------------------------------------------------------
// Checkpoint I/O

namespace {

constexpr char kCkptMagic[8] = {'V', 'M', 'L', 'C', 'K', 'P', 'T', '1'};
constexpr uint32_t kCkptVersion = 1;

struct FileCloser {
  void operator()(FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<FILE, FileCloser>;

void write_store(FILE* f, const ParamStore& store) {
  const uint32_t n = static_cast<uint32_t>(store.array_count());
  std::fwrite(&n, sizeof(n), 1, f);
  for (uint32_t i = 0; i < n; ++i) {
    const auto& arr = store.array(static_cast<int>(i));
    const uint32_t name_len = static_cast<uint32_t>(arr.name.size());
    std::fwrite(&name_len, sizeof(name_len), 1, f);
    std::fwrite(arr.name.data(), 1, name_len, f);
    const uint64_t count = arr.value.size();
    std::fwrite(&count, sizeof(count), 1, f);
    std::fwrite(arr.value.data(), sizeof(double), arr.value.size(), f);
  }
}

void read_store(FILE* f, ParamStore& store, const std::string& path) {
  uint32_t n = 0;
  if (std::fread(&n, sizeof(n), 1, f) != 1)
    throw std::runtime_error("truncated checkpoint (store header): " + path);
  if (n != store.array_count())
    throw std::runtime_error("checkpoint array count mismatch: " + path);
  for (uint32_t i = 0; i < n; ++i) {
    uint32_t name_len = 0;
    if (std::fread(&name_len, sizeof(name_len), 1, f) != 1)
      throw std::runtime_error("truncated checkpoint: " + path);
    std::string name(name_len, '\0');
    if (std::fread(name.data(), 1, name_len, f) != name_len)
      throw std::runtime_error("truncated checkpoint: " + path);
    auto& arr = store.array(static_cast<int>(i));
    if (name != arr.name)
      throw std::runtime_error("checkpoint array order mismatch (" + name + " vs " + arr.name +
                               "): " + path);
    uint64_t count = 0;
    if (std::fread(&count, sizeof(count), 1, f) != 1 || count != arr.value.size())
      throw std::runtime_error("checkpoint array size mismatch for " + name + ": " + path);
    if (std::fread(arr.value.data(), sizeof(double), count, f) != count)
      throw std::runtime_error("truncated checkpoint values: " + path);
  }
}

std::string hash_to_hex(uint64_t h) {
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

uint64_t hash_from_hex(const std::string& s) { return std::stoull(s, nullptr, 16); }

nlohmann::json meta_json(const CheckpointInfo& info, const std::string& gen_cfg,
                         const std::string& reg_cfg) {
  nlohmann::json j;
  j["role"] = info.role;
  j["epoch"] = info.epoch;
  j["manifest_hash"] = hash_to_hex(info.manifest_hash);
  j["train_config"] =
      info.train_config_json.empty() ? nlohmann::json(nullptr)
                                     : nlohmann::json::parse(info.train_config_json);
  j["generator_config"] = nlohmann::json::parse(gen_cfg);
  if (!reg_cfg.empty()) j["regressor_config"] = nlohmann::json::parse(reg_cfg);
  return j;
}

void write_checkpoint_file(const std::string& path, const nlohmann::json& meta,
                           const std::vector<const ParamStore*>& stores) {
  FilePtr f(std::fopen(path.c_str(), "wb"));
  if (!f) throw std::runtime_error("cannot write checkpoint: " + path);
  std::fwrite(kCkptMagic, 1, 8, f.get());
  std::fwrite(&kCkptVersion, sizeof(kCkptVersion), 1, f.get());
  const std::string meta_text = meta.dump();
  const uint32_t meta_len = static_cast<uint32_t>(meta_text.size());
  std::fwrite(&meta_len, sizeof(meta_len), 1, f.get());
  std::fwrite(meta_text.data(), 1, meta_text.size(), f.get());
  const uint32_t n_stores = static_cast<uint32_t>(stores.size());
  std::fwrite(&n_stores, sizeof(n_stores), 1, f.get());
  for (const ParamStore* s : stores) write_store(f.get(), *s);
  if (std::ferror(f.get())) throw std::runtime_error("write error on checkpoint: " + path);

  std::ofstream sidecar(path + ".json");
  sidecar << meta.dump(2) << "\n";
}

nlohmann::json read_checkpoint_meta(FILE* f, const std::string& path) {
  char magic[8];
  if (std::fread(magic, 1, 8, f) != 8 || std::memcmp(magic, kCkptMagic, 8) != 0)
    throw std::runtime_error("bad checkpoint magic: " + path);
  uint32_t version = 0;
  if (std::fread(&version, sizeof(version), 1, f) != 1 || version != kCkptVersion)
    throw std::runtime_error("unsupported checkpoint version: " + path);
  uint32_t meta_len = 0;
  if (std::fread(&meta_len, sizeof(meta_len), 1, f) != 1)
    throw std::runtime_error("truncated checkpoint meta: " + path);
  std::string meta_text(meta_len, '\0');
  if (std::fread(meta_text.data(), 1, meta_len, f) != meta_len)
    throw std::runtime_error("truncated checkpoint meta: " + path);
  return nlohmann::json::parse(meta_text);
}

CheckpointInfo info_from_meta(const nlohmann::json& meta) {
  CheckpointInfo info;
  info.role = meta.at("role").get<std::string>();
  info.epoch = meta.at("epoch").get<int>();
  info.manifest_hash = hash_from_hex(meta.at("manifest_hash").get<std::string>());
  info.train_config_json = meta.at("train_config").is_null() ? "" : meta.at("train_config").dump();
  return info;
}

}  // namespace

void save_checkpoint(const LithoCheckpoint& ckpt, const std::string& path) {
  if (ckpt.info.role != "lithonet") throw std::invalid_argument("litho checkpoint role mismatch");
  const nlohmann::json meta = meta_json(ckpt.info, ckpt.generator.config().to_json(),
                                        ckpt.regressor.config().to_json());
  write_checkpoint_file(path, meta, {&ckpt.generator.params(), &ckpt.regressor.params()});
}

void save_checkpoint(const OpcCheckpoint& ckpt, const std::string& path) {
  if (ckpt.info.role != "opcnet") throw std::invalid_argument("opc checkpoint role mismatch");
  const nlohmann::json meta = meta_json(ckpt.info, ckpt.generator.config().to_json(), "");
  write_checkpoint_file(path, meta, {&ckpt.generator.params()});
}

LithoCheckpoint load_litho_checkpoint(const std::string& path) {
  FilePtr f(std::fopen(path.c_str(), "rb"));
  if (!f) throw std::runtime_error("cannot read checkpoint: " + path);
  const nlohmann::json meta = read_checkpoint_meta(f.get(), path);
  CheckpointInfo info = info_from_meta(meta);
  if (info.role != "lithonet")
    throw std::runtime_error("checkpoint role is '" + info.role + "', expected lithonet: " + path);

  const GeneratorConfig gcfg = GeneratorConfig::from_json(meta.at("generator_config").dump());
  const RegressorConfig rcfg = RegressorConfig::from_json(meta.at("regressor_config").dump());
  LithoCheckpoint ckpt{std::move(info), UNet(gcfg, 0), Regressor(rcfg, 0)};

  uint32_t n_stores = 0;
  if (std::fread(&n_stores, sizeof(n_stores), 1, f.get()) != 1 || n_stores != 2)
    throw std::runtime_error("checkpoint store count mismatch: " + path);
  read_store(f.get(), ckpt.generator.params(), path);
  read_store(f.get(), ckpt.regressor.params(), path);
  return ckpt;
}

OpcCheckpoint load_opc_checkpoint(const std::string& path) {
  FilePtr f(std::fopen(path.c_str(), "rb"));
  if (!f) throw std::runtime_error("cannot read checkpoint: " + path);
  const nlohmann::json meta = read_checkpoint_meta(f.get(), path);
  CheckpointInfo info = info_from_meta(meta);
  if (info.role != "opcnet")
    throw std::runtime_error("checkpoint role is '" + info.role + "', expected opcnet: " + path);

  const GeneratorConfig gcfg = GeneratorConfig::from_json(meta.at("generator_config").dump());
  OpcCheckpoint ckpt{std::move(info), UNet(gcfg, 0)};

  uint32_t n_stores = 0;
  if (std::fread(&n_stores, sizeof(n_stores), 1, f.get()) != 1 || n_stores != 1)
    throw std::runtime_error("checkpoint store count mismatch: " + path);
  read_store(f.get(), ckpt.generator.params(), path);
  return ckpt;
}

std::string checkpoint_role(const std::string& path) {
  FilePtr f(std::fopen(path.c_str(), "rb"));
  if (!f) throw std::runtime_error("cannot read checkpoint: " + path);
  return read_checkpoint_meta(f.get(), path).at("role").get<std::string>();
}

uint64_t litho_param_hash(const LithoCheckpoint& ckpt) {
  return hash_combine(ckpt.generator.params().value_hash(),
                      ckpt.regressor.params().value_hash());
}

// ---------------------------------------------------------------------------
// Training loops

LithoTrainResult train_lithonet(const std::string& manifest_path, const TrainConfig& cfg) {
  cfg.validate();
  const DatasetManifest manifest = DatasetManifest::load(manifest_path);
  const uint64_t mhash = manifest_file_hash(manifest_path);
  const std::string base_dir = fs::path(manifest_path).parent_path().string();

  const auto train = manifest.split_entries("train");
  const auto val = manifest.split_entries("val");
  if (train.empty()) throw std::invalid_argument("train split is empty");

  const int param_dim = static_cast<int>(manifest.entries.front().param.dim());
  GeneratorConfig gcfg = cfg.generator;
  gcfg.param_dim = param_dim;
  gcfg.out_channels = 2;
  gcfg.sigmoid_head = false;
  RegressorConfig rcfg = cfg.regressor;
  rcfg.param_dim = param_dim;

  LithoTrainResult result{
      LithoCheckpoint{CheckpointInfo{"lithonet", 0, mhash, cfg.to_json()},
                      UNet(gcfg, hash_combine(cfg.seed, 0x67656eULL)),
                      Regressor(rcfg, hash_combine(cfg.seed, 0x726567ULL))},
      {}, 0, 0.0};
  UNet& gen = result.checkpoint.generator;
  Regressor& reg = result.checkpoint.regressor;

  DatasetCache cache(base_dir, manifest);
  Adam opt_g(gen.params(), cfg.lr_g, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
  Adam opt_d(reg.params(), cfg.lr_d, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);

  auto snapshot_best = [&](int epoch, double val_iou) {
    result.best_epoch = epoch;
    result.best_val_iou = val_iou;
  };
  std::vector<std::vector<double>> best_gen = gen.params().snapshot();
  std::vector<std::vector<double>> best_reg = reg.params().snapshot();
  double best_iou = -1.0;

  // epoch 0: losses before any update
  {
    LithoEpochLog row;
    row.epoch = 0;
    for (const ManifestEntry* e : train) {
      const auto out = litho_sample_forward(gen, reg, cache.layout(*e), cache.ground_truth(*e),
                                            e->param, cfg.loss_weights);
      row.terms.rec += out.terms.rec;
      row.terms.var += out.terms.var;
      row.terms.smooth += out.terms.smooth;
      row.terms.reg += out.terms.reg;
      row.terms.par += out.terms.par;
      row.total += out.total;
    }
    const double n = static_cast<double>(train.size());
    row.terms.rec /= n;
    row.terms.var /= n;
    row.terms.smooth /= n;
    row.terms.reg /= n;
    row.terms.par /= n;
    row.total /= n;
    if (!val.empty()) {
      const ValMetrics vm = validate_litho(gen, cache, val);
      row.has_validation = true;
      row.val_iou = vm.iou;
      row.val_ssim = vm.ssim;
      row.val_pixel_error = vm.err;
      if (vm.iou > best_iou) {
        best_iou = vm.iou;
        best_gen = gen.params().snapshot();
        best_reg = reg.params().snapshot();
        snapshot_best(0, vm.iou);
      }
    }
    result.log.push_back(row);
  }

  int batch_id = 0;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto order = shuffled_indices(train.size(), hash_combine(cfg.seed, 0x1000 + epoch));
    LithoEpochLog row;
    row.epoch = epoch;

    for (size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const size_t end = std::min(order.size(), start + cfg.batch_size);
      const double inv_b = 1.0 / static_cast<double>(end - start);
      ++batch_id;

      // regressor step on ground-truth pairs
      reg.params().zero_grad();
      for (size_t k = start; k < end; ++k) {
        const ManifestEntry* e = train[order[k]];
        regressor_sample_grads(reg, cache.ground_truth(*e), e->param, true);
      }
      reg.params().scale_grad(inv_b);
      opt_d.step();

      // generator step on the full objective, regressor frozen
      gen.params().zero_grad();
      for (size_t k = start; k < end; ++k) {
        const ManifestEntry* e = train[order[k]];
        const auto out =
            litho_sample_grads(gen, reg, cache.layout(*e), cache.ground_truth(*e), e->param,
                               cfg.loss_weights, {.accumulate_generator = true,
                                                  .accumulate_regressor = false});
        if (!std::isfinite(out.total))
          throw DivergenceError("non-finite training loss in batch " + std::to_string(batch_id),
                                batch_id);
        row.terms.rec += out.terms.rec;
        row.terms.var += out.terms.var;
        row.terms.smooth += out.terms.smooth;
        row.terms.reg += out.terms.reg;
        row.terms.par += out.terms.par;
        row.total += out.total;
      }
      gen.params().scale_grad(inv_b);
      opt_g.step();
    }

    const double n = static_cast<double>(train.size());
    row.terms.rec /= n;
    row.terms.var /= n;
    row.terms.smooth /= n;
    row.terms.reg /= n;
    row.terms.par /= n;
    row.total /= n;

    if (!val.empty() && (epoch % cfg.eval_interval == 0 || epoch == cfg.epochs)) {
      const ValMetrics vm = validate_litho(gen, cache, val);
      row.has_validation = true;
      row.val_iou = vm.iou;
      row.val_ssim = vm.ssim;
      row.val_pixel_error = vm.err;
      if (vm.iou > best_iou) {
        best_iou = vm.iou;
        best_gen = gen.params().snapshot();
        best_reg = reg.params().snapshot();
        snapshot_best(epoch, vm.iou);
      }
    }
    result.log.push_back(row);
  }

  if (best_iou >= 0.0) {
    gen.params().restore(best_gen);
    reg.params().restore(best_reg);
  }
  result.checkpoint.info.epoch = result.best_epoch;
  return result;
}

OpcTrainResult train_opcnet(const std::string& manifest_path, LithoCheckpoint& litho,
                            const TrainConfig& cfg) {
  cfg.validate();
  if (litho.info.role != "lithonet")
    throw std::invalid_argument("train_opcnet requires a lithonet checkpoint");

  const DatasetManifest manifest = DatasetManifest::load(manifest_path);
  const uint64_t mhash = manifest_file_hash(manifest_path);
  const std::string base_dir = fs::path(manifest_path).parent_path().string();

  const auto train = manifest.split_entries("train");
  const auto val = manifest.split_entries("val");
  if (train.empty()) throw std::invalid_argument("train split is empty");

  // parameter grid of the manifest, ordered by param_index
  std::vector<FabParam> grid;
  for (const auto& e : manifest.entries) {
    if (e.param_index >= static_cast<int>(grid.size())) grid.resize(e.param_index + 1);
    grid[e.param_index] = e.param;
  }

  GeneratorConfig ocfg = cfg.generator;
  ocfg.param_dim = 0;
  ocfg.out_channels = 1;
  ocfg.sigmoid_head = true;

  OpcTrainResult result{OpcCheckpoint{CheckpointInfo{"opcnet", 0, mhash, cfg.to_json()},
                                      UNet(ocfg, hash_combine(cfg.seed, 0x6f7063ULL))},
                        {}, 0, 0.0, 0, 0, 0};
  UNet& opc = result.checkpoint.generator;
  UNet& gen = litho.generator;

  result.litho_hash_before = litho_param_hash(litho);

  DatasetCache cache(base_dir, manifest);
  Adam opt(opc.params(), cfg.lr_opc, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);

  std::vector<std::vector<double>> best = opc.params().snapshot();
  double best_iou = -1.0;

  auto draw_param = [&](uint64_t epoch, uint64_t k) {
    Rng rng(hash_combine(cfg.seed, hash_combine(0x2000 + epoch, k)));
    return grid[rng.next_below(grid.size())];
  };

  // epoch 0: losses before any update
  {
    OpcEpochLog row;
    row.epoch = 0;
    for (size_t k = 0; k < train.size(); ++k) {
      const auto out = opc_sample_forward(opc, gen, cache.layout(*train[k]), draw_param(0, k),
                                          cfg.mask_loss_weights);
      row.terms.io += out.terms.io;
      row.terms.var += out.terms.var;
      row.terms.smooth += out.terms.smooth;
      row.total += out.total;
    }
    const double n = static_cast<double>(train.size());
    row.terms.io /= n;
    row.terms.var /= n;
    row.terms.smooth /= n;
    row.total /= n;
    if (!val.empty()) {
      const ValMetrics vm = validate_opc(opc, gen, cache, val);
      row.has_validation = true;
      row.val_iou = vm.iou;
      row.val_ssim = vm.ssim;
      row.val_pixel_error = vm.err;
      if (vm.iou > best_iou) {
        best_iou = vm.iou;
        best = opc.params().snapshot();
        result.best_epoch = 0;
        result.best_val_iou = vm.iou;
      }
    }
    result.log.push_back(row);
  }

  int batch_id = 0;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto order = shuffled_indices(train.size(), hash_combine(cfg.seed, 0x3000 + epoch));
    OpcEpochLog row;
    row.epoch = epoch;

    for (size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const size_t end = std::min(order.size(), start + cfg.batch_size);
      const double inv_b = 1.0 / static_cast<double>(end - start);
      ++batch_id;

      opc.params().zero_grad();
      for (size_t k = start; k < end; ++k) {
        const ManifestEntry* e = train[order[k]];
        OpcGradOptions gopt;
        gopt.accumulate_opc = true;
        gopt.accumulate_litho = false;  // frozen forward model
        const auto out = opc_sample_grads(opc, gen, cache.layout(*e),
                                          draw_param(epoch, order[k]), cfg.mask_loss_weights,
                                          gopt);
        if (!std::isfinite(out.total))
          throw DivergenceError("non-finite mask training loss in batch " +
                                    std::to_string(batch_id),
                                batch_id);
        row.terms.io += out.terms.io;
        row.terms.var += out.terms.var;
        row.terms.smooth += out.terms.smooth;
        row.total += out.total;
      }
      opc.params().scale_grad(inv_b);
      opt.step();
    }

    const double n = static_cast<double>(train.size());
    row.terms.io /= n;
    row.terms.var /= n;
    row.terms.smooth /= n;
    row.total /= n;

    if (!val.empty() && (epoch % cfg.eval_interval == 0 || epoch == cfg.epochs)) {
      const ValMetrics vm = validate_opc(opc, gen, cache, val);
      row.has_validation = true;
      row.val_iou = vm.iou;
      row.val_ssim = vm.ssim;
      row.val_pixel_error = vm.err;
      if (vm.iou > best_iou) {
        best_iou = vm.iou;
        best = opc.params().snapshot();
        result.best_epoch = epoch;
        result.best_val_iou = vm.iou;
      }
    }
    result.log.push_back(row);
  }

  if (best_iou >= 0.0) opc.params().restore(best);
  result.checkpoint.info.epoch = result.best_epoch;

  result.litho_hash_after = litho_param_hash(litho);
  if (result.litho_hash_after != result.litho_hash_before)
    throw std::logic_error("frozen LithoNet was modified during mask training");
  result.ground_truth_opens = cache.ground_truth_opens();
  return result;
}

// ---------------------------------------------------------------------------
// Logs

void write_litho_log_csv(const std::vector<LithoEpochLog>& log, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write training log: " + path);
  out << "epoch,l_rec,l_var,l_smooth,l_reg,l_par,litho_total,val_iou,val_ssim,val_pixel_error\n";
  char buf[320];
  for (const auto& row : log) {
    std::snprintf(buf, sizeof(buf), "%d,%.9f,%.9f,%.9f,%.9f,%.9f,%.9f", row.epoch, row.terms.rec,
                  row.terms.var, row.terms.smooth, row.terms.reg, row.terms.par, row.total);
    out << buf;
    if (row.has_validation) {
      std::snprintf(buf, sizeof(buf), ",%.9f,%.9f,%.9f", row.val_iou, row.val_ssim,
                    row.val_pixel_error);
      out << buf;
    } else {
      out << ",,,";
    }
    out << "\n";
  }
}

void write_opc_log_csv(const std::vector<OpcEpochLog>& log, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write training log: " + path);
  out << "epoch,l_io,l_kvar,l_ksmooth,opc_total,val_iou,val_ssim,val_pixel_error\n";
  char buf[320];
  for (const auto& row : log) {
    std::snprintf(buf, sizeof(buf), "%d,%.9f,%.9f,%.9f,%.9f", row.epoch, row.terms.io,
                  row.terms.var, row.terms.smooth, row.total);
    out << buf;
    if (row.has_validation) {
      std::snprintf(buf, sizeof(buf), ",%.9f,%.9f,%.9f", row.val_iou, row.val_ssim,
                    row.val_pixel_error);
      out << buf;
    } else {
      out << ",,,";
    }
    out << "\n";
  }
}

// ---------------------------------------------------------------------------
// Inference

LithoPrediction predict_litho(const LithoCheckpoint& ckpt, const BinaryRaster& layout,
                              const FabParam& y) {
  UNetTapePtr tape = make_unet_tape();
  DeformationMap map = ckpt.generator.forward_map(layout.raster(), y, *tape);
  Raster pred = warp(layout.raster(), map);
  return {std::move(map), std::move(pred)};
}

CorrectionResult correct_and_verify(const OpcCheckpoint& opc, const LithoCheckpoint& litho,
                                    const BinaryRaster& layout, const FabParam& y) {
  UNetTapePtr ot = make_unet_tape();
  const Tensor kt = opc.generator.forward(layout.raster(), nullptr, *ot);
  std::vector<double> px(kt.v.begin(), kt.v.begin() + static_cast<size_t>(kt.h) * kt.w);
  for (double& v : px) v = std::clamp(v, 0.0, 1.0);

  CorrectionResult res;
  res.mask = Raster(kt.w, kt.h, std::move(px));

  UNetTapePtr gt1 = make_unet_tape();
  const DeformationMap m_corr = litho.generator.forward_map(res.mask, y, *gt1);
  res.corrected = warp(res.mask, m_corr);

  UNetTapePtr gt2 = make_unet_tape();
  const DeformationMap m_unc = litho.generator.forward_map(layout.raster(), y, *gt2);
  res.uncorrected = warp(layout.raster(), m_unc);

  const BinaryRaster cb = binarize(res.corrected, 0.5);
  const BinaryRaster ub = binarize(res.uncorrected, 0.5);
  res.iou_corrected = iou(cb, layout);
  res.iou_uncorrected = iou(ub, layout);
  res.ssim_corrected = ssim(cb.raster(), layout.raster());
  res.ssim_uncorrected = ssim(ub.raster(), layout.raster());
  res.err_corrected = pixel_error_rate(cb, layout);
  res.err_uncorrected = pixel_error_rate(ub, layout);
  return res;
}

MetricsReport evaluate(const LithoCheckpoint& ckpt, const std::string& manifest_path,
                       const std::string& split) {
  const DatasetManifest manifest = DatasetManifest::load(manifest_path);
  const std::string base_dir = fs::path(manifest_path).parent_path().string();
  const auto entries = manifest.split_entries(split);
  if (entries.empty()) throw std::invalid_argument("split '" + split + "' is empty");

  DatasetCache cache(base_dir, manifest);
  MetricsReport report;
  for (const ManifestEntry* e : entries) {
    const LithoPrediction p = predict_litho(ckpt, cache.layout(*e), e->param);
    const BinaryRaster pb = binarize(p.pred, 0.5);
    const BinaryRaster gb = binarize(cache.ground_truth(*e), 0.5);
    MetricsRow row;
    row.id = e->id + "_p" + std::to_string(e->param_index);
    row.iou = iou(pb, gb);
    row.ssim = ssim(pb.raster(), gb.raster());
    row.pixel_error = pixel_error_rate(pb, gb);
    report.rows.push_back(std::move(row));
  }
  report.finalize();
  return report;
}

MetricsReport evaluate_opc(const OpcCheckpoint& opc, const LithoCheckpoint& litho,
                           const std::string& manifest_path, const std::string& split) {
  const DatasetManifest manifest = DatasetManifest::load(manifest_path);
  const std::string base_dir = fs::path(manifest_path).parent_path().string();
  const auto entries = manifest.split_entries(split);
  if (entries.empty()) throw std::invalid_argument("split '" + split + "' is empty");

  DatasetCache cache(base_dir, manifest);
  MetricsReport report;
  for (const ManifestEntry* e : entries) {
    const CorrectionResult res = correct_and_verify(opc, litho, cache.layout(*e), e->param);
    MetricsRow row;
    row.id = e->id + "_p" + std::to_string(e->param_index);
    row.iou = res.iou_corrected;
    row.ssim = res.ssim_corrected;
    row.pixel_error = res.err_corrected;
    report.rows.push_back(std::move(row));
  }
  report.finalize();
  return report;
}

}  // namespace vmlitho
