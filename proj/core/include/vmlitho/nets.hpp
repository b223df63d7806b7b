#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "vmlitho/diffwarp.hpp"
#include "vmlitho/faboracle.hpp"
#include "vmlitho/raster.hpp"
#include "vmlitho/rng.hpp"
#include "vmlitho/tensor.hpp"

namespace vmlitho {

// Flat ordered collection of named parameter arrays. Creation order is the
// serialization and gradient-checking order.
class ParamStore {
 public:
  struct Array {
    std::string name;
    std::vector<double> value;
    std::vector<double> grad;
  };

  int add(const std::string& name, size_t n);

  size_t array_count() const { return arrays_.size(); }
  Array& array(int handle) { return arrays_[static_cast<size_t>(handle)]; }
  const Array& array(int handle) const { return arrays_[static_cast<size_t>(handle)]; }

  std::span<double> value(int handle) { return arrays_[handle].value; }
  std::span<const double> value(int handle) const { return arrays_[handle].value; }
  std::span<double> grad(int handle) { return arrays_[handle].grad; }

  void zero_grad();
  void scale_grad(double factor);
  size_t total_size() const;
  uint64_t value_hash() const;  // FNV over the raw value bytes, arrays in order

  // value snapshot/restore for best-checkpoint selection
  std::vector<std::vector<double>> snapshot() const;
  void restore(const std::vector<std::vector<double>>& snap);

  // He-style fan-in init for an array interpreted as conv/affine weights.
  void init_normal(int handle, Rng& rng, double stddev);
  void add_noise(Rng& rng, double stddev);  // gradcheck perturbation

 private:
  std::vector<Array> arrays_;
};

// Encoder/decoder image-to-image network with skip connections at every
// level. The fabrication parameter enters twice: broadcast as constant
// extra input channels and tiled again at the bottleneck.
struct GeneratorConfig {
  int param_dim = 1;      // 0 disables parameter conditioning (mask generator)
  int out_channels = 2;   // 2 displacement channels, or 1 mask channel
  int depth = 4;          // pooling levels
  int base_channels = 16;
  double d_max = 8.0;     // displacement bound for the tanh head
  bool sigmoid_head = false;

  void validate() const;
  int level_channels(int level) const { return base_channels << level; }
  // receptive field of one bottleneck pixel in input pixels
  int receptive_field() const;

  std::string to_json() const;
  static GeneratorConfig from_json(const std::string& json_text);
};

// Strided convolutional regressor estimating the fabrication parameter
// from an image: conv stride-2 stack, global average pool, affine head.
struct RegressorConfig {
  int levels = 4;
  int base_channels = 16;
  int param_dim = 1;

  void validate() const;

  std::string to_json() const;
  static RegressorConfig from_json(const std::string& json_text);
};

class UNet {
 public:
  struct Tape;  // opaque activation record

  UNet(GeneratorConfig cfg, uint64_t init_seed);

  // y must be non-null iff the config is parameter-conditioned.
  // Input sizes must be divisible by 2^depth.
  Tensor forward(const Raster& input, const FabParam* y, Tape& tape) const;

  // Accumulates parameter gradients unless accumulate_params is false.
  // When input_grad is non-null it receives dL/d(input image).
  void backward(const Tensor& dout, const Tape& tape, bool accumulate_params,
                GradientField* input_grad);

  // Deformation-map convenience wrappers for the 2-channel head.
  DeformationMap forward_map(const Raster& input, const FabParam& y, Tape& tape) const;
  static Tensor map_grad_to_tensor(const DeformationMap& g);

  const GeneratorConfig& config() const { return cfg_; }
  ParamStore& params() { return *store_; }
  const ParamStore& params() const { return *store_; }

 private:
  GeneratorConfig cfg_;
  std::shared_ptr<ParamStore> store_;
  std::vector<int> enc_w_, enc_gamma_, enc_beta_;
  int bott_w_ = -1, bott_gamma_ = -1, bott_beta_ = -1;
  std::vector<int> dec_w_, dec_gamma_, dec_beta_;
  int head_w_ = -1, head_b_ = -1;
};

struct UNetTapeDeleter {
  void operator()(UNet::Tape*) const;
};
using UNetTapePtr = std::unique_ptr<UNet::Tape, UNetTapeDeleter>;
UNetTapePtr make_unet_tape();

class Regressor {
 public:
  struct Tape;

  Regressor(RegressorConfig cfg, uint64_t init_seed);

  std::vector<double> forward(const Raster& input, Tape& tape) const;

  // dout has param_dim entries.
  void backward(std::span<const double> dout, const Tape& tape, bool accumulate_params,
                GradientField* input_grad);

  const RegressorConfig& config() const { return cfg_; }
  ParamStore& params() { return *store_; }
  const ParamStore& params() const { return *store_; }

  void zero_head();  // test hook: affine head to zeros

 private:
  RegressorConfig cfg_;
  std::shared_ptr<ParamStore> store_;
  std::vector<int> conv_w_, conv_b_;
  int head_w_ = -1, head_b_ = -1;
};

struct RegressorTapeDeleter {
  void operator()(Regressor::Tape*) const;
};
using RegressorTapePtr = std::unique_ptr<Regressor::Tape, RegressorTapeDeleter>;
RegressorTapePtr make_regressor_tape();

}  // namespace vmlitho
