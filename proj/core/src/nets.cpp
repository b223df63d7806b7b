#include "vmlitho/nets.hpp"

#include <Eigen/Core>

#include <cmath>
#include <stdexcept>

#include "json.hpp"

namespace vmlitho {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

constexpr double kInEps = 1e-5;

void im2col(const Tensor& in, int stride, RowMat& col) {
  const int oh = in.h / stride, ow = in.w / stride;
  col.resize(static_cast<Eigen::Index>(in.c) * 9, static_cast<Eigen::Index>(oh) * ow);
  for (int ci = 0; ci < in.c; ++ci) {
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        const int r = (ci * 3 + ky) * 3 + kx;
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * stride + ky - 1;
          const bool y_ok = iy >= 0 && iy < in.h;
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * stride + kx - 1;
            col(r, static_cast<Eigen::Index>(oy) * ow + ox) =
                (y_ok && ix >= 0 && ix < in.w) ? in.at(ci, iy, ix) : 0.0;
          }
        }
      }
    }
  }
}

// 3x3 convolution, zero padding 1. Output spatial size = input/stride.
Tensor conv3x3(const Tensor& in, std::span<const double> w, std::span<const double> bias,
               int cout, int stride) {
  const int oh = in.h / stride, ow = in.w / stride;
  Tensor out(cout, oh, ow);

  RowMat col;
  im2col(in, stride, col);
  Eigen::Map<const RowMat> wm(w.data(), cout, static_cast<Eigen::Index>(in.c) * 9);
  Eigen::Map<RowMat> om(out.v.data(), cout, static_cast<Eigen::Index>(oh) * ow);
  om.noalias() = wm * col;

  if (!bias.empty())
    for (int co = 0; co < cout; ++co) om.row(co).array() += bias[co];
  return out;
}

// Accumulates dW (and db when non-empty); returns dIn when want_din.
Tensor conv3x3_backward(const Tensor& dout, const Tensor& in, std::span<const double> w,
                        std::span<double> dw, std::span<double> db, int stride, bool want_din,
                        bool accumulate_params) {
  const int cout = dout.c;
  const Eigen::Index n = static_cast<Eigen::Index>(dout.h) * dout.w;
  Eigen::Map<const RowMat> dom(dout.v.data(), cout, n);

  RowMat col;
  if (accumulate_params) {
    im2col(in, stride, col);
    Eigen::Map<RowMat> dwm(dw.data(), cout, static_cast<Eigen::Index>(in.c) * 9);
    dwm.noalias() += dom * col.transpose();
    if (!db.empty())
      for (int co = 0; co < cout; ++co) db[co] += dom.row(co).sum();
  }

  Tensor din;
  if (want_din) {
    Eigen::Map<const RowMat> wm(w.data(), cout, static_cast<Eigen::Index>(in.c) * 9);
    RowMat colgrad = wm.transpose() * dom;  // (cin*9) x n

    din = Tensor(in.c, in.h, in.w);
    const int oh = dout.h, ow = dout.w;
    for (int ci = 0; ci < in.c; ++ci) {
      for (int ky = 0; ky < 3; ++ky) {
        for (int kx = 0; kx < 3; ++kx) {
          const int r = (ci * 3 + ky) * 3 + kx;
          for (int oy = 0; oy < oh; ++oy) {
            const int iy = oy * stride + ky - 1;
            if (iy < 0 || iy >= in.h) continue;
            for (int ox = 0; ox < ow; ++ox) {
              const int ix = ox * stride + kx - 1;
              if (ix < 0 || ix >= in.w) continue;
              din.at(ci, iy, ix) += colgrad(r, static_cast<Eigen::Index>(oy) * ow + ox);
            }
          }
        }
      }
    }
  }
  return din;
}

void instance_norm_forward(const Tensor& z, std::span<const double> gamma,
                           std::span<const double> beta, Tensor& xhat,
                           std::vector<double>& inv_s, Tensor& out) {
  const size_t hw = static_cast<size_t>(z.h) * z.w;
  xhat = Tensor(z.c, z.h, z.w);
  out = Tensor(z.c, z.h, z.w);
  inv_s.assign(z.c, 0.0);
  for (int c = 0; c < z.c; ++c) {
    const double* zp = z.v.data() + c * hw;
    double mean = 0.0;
    for (size_t i = 0; i < hw; ++i) mean += zp[i];
    mean /= static_cast<double>(hw);
    double var = 0.0;
    for (size_t i = 0; i < hw; ++i) {
      const double d = zp[i] - mean;
      var += d * d;
    }
    var /= static_cast<double>(hw);
    const double is = 1.0 / std::sqrt(var + kInEps);
    inv_s[c] = is;
    double* xp = xhat.v.data() + c * hw;
    double* op = out.v.data() + c * hw;
    for (size_t i = 0; i < hw; ++i) {
      xp[i] = (zp[i] - mean) * is;
      op[i] = gamma[c] * xp[i] + beta[c];
    }
  }
}

Tensor instance_norm_backward(const Tensor& dout, const Tensor& xhat,
                              const std::vector<double>& inv_s, std::span<const double> gamma,
                              std::span<double> dgamma, std::span<double> dbeta,
                              bool accumulate_params) {
  const size_t hw = static_cast<size_t>(dout.h) * dout.w;
  Tensor din(dout.c, dout.h, dout.w);
  for (int c = 0; c < dout.c; ++c) {
    const double* dp = dout.v.data() + c * hw;
    const double* xp = xhat.v.data() + c * hw;
    double sum_d = 0.0, sum_dx = 0.0;
    for (size_t i = 0; i < hw; ++i) {
      sum_d += dp[i];
      sum_dx += dp[i] * xp[i];
    }
    if (accumulate_params) {
      dbeta[c] += sum_d;
      dgamma[c] += sum_dx;
    }
    const double mean_d = sum_d / static_cast<double>(hw);
    const double mean_dx = sum_dx / static_cast<double>(hw);
    const double g = gamma[c] * inv_s[c];
    double* ip = din.v.data() + c * hw;
    for (size_t i = 0; i < hw; ++i) ip[i] = g * (dp[i] - mean_d - xp[i] * mean_dx);
  }
  return din;
}

void relu_inplace(Tensor& t) {
  for (double& v : t.v) v = v > 0.0 ? v : 0.0;
}

Tensor relu_backward(const Tensor& dout, const Tensor& relu_out) {
  Tensor din = dout;
  for (size_t i = 0; i < din.v.size(); ++i)
    if (relu_out.v[i] <= 0.0) din.v[i] = 0.0;
  return din;
}

Tensor avgpool2(const Tensor& in) {
  Tensor out(in.c, in.h / 2, in.w / 2);
  for (int c = 0; c < in.c; ++c)
    for (int y = 0; y < out.h; ++y)
      for (int x = 0; x < out.w; ++x)
        out.at(c, y, x) = 0.25 * (in.at(c, 2 * y, 2 * x) + in.at(c, 2 * y, 2 * x + 1) +
                                  in.at(c, 2 * y + 1, 2 * x) + in.at(c, 2 * y + 1, 2 * x + 1));
  return out;
}

Tensor avgpool2_backward(const Tensor& dout) {
  Tensor din(dout.c, dout.h * 2, dout.w * 2);
  for (int c = 0; c < dout.c; ++c)
    for (int y = 0; y < dout.h; ++y)
      for (int x = 0; x < dout.w; ++x) {
        const double g = 0.25 * dout.at(c, y, x);
        din.at(c, 2 * y, 2 * x) = g;
        din.at(c, 2 * y, 2 * x + 1) = g;
        din.at(c, 2 * y + 1, 2 * x) = g;
        din.at(c, 2 * y + 1, 2 * x + 1) = g;
      }
  return din;
}

Tensor upsample2(const Tensor& in) {
  Tensor out(in.c, in.h * 2, in.w * 2);
  for (int c = 0; c < in.c; ++c)
    for (int y = 0; y < out.h; ++y)
      for (int x = 0; x < out.w; ++x) out.at(c, y, x) = in.at(c, y / 2, x / 2);
  return out;
}

Tensor upsample2_backward(const Tensor& dout) {
  Tensor din(dout.c, dout.h / 2, dout.w / 2);
  for (int c = 0; c < dout.c; ++c)
    for (int y = 0; y < dout.h; ++y)
      for (int x = 0; x < dout.w; ++x) din.at(c, y / 2, x / 2) += dout.at(c, y, x);
  return din;
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  Tensor out(a.c + b.c, a.h, a.w);
  std::copy(a.v.begin(), a.v.end(), out.v.begin());
  std::copy(b.v.begin(), b.v.end(), out.v.begin() + a.v.size());
  return out;
}

void split_channels(const Tensor& in, int ca, Tensor& a, Tensor& b) {
  a = Tensor(ca, in.h, in.w);
  b = Tensor(in.c - ca, in.h, in.w);
  std::copy(in.v.begin(), in.v.begin() + a.v.size(), a.v.begin());
  std::copy(in.v.begin() + a.v.size(), in.v.end(), b.v.begin());
}

Tensor tile_params(const FabParam& y, int h, int w) {
  Tensor t(static_cast<int>(y.dim()), h, w);
  for (int c = 0; c < t.c; ++c)
    std::fill(t.v.begin() + static_cast<size_t>(c) * h * w,
              t.v.begin() + static_cast<size_t>(c + 1) * h * w, y.components[c]);
  return t;
}

struct ConvBlockTape {
  Tensor in;
  Tensor xhat;
  std::vector<double> inv_s;
  Tensor out;  // post-ReLU
};

struct ConvBlockRefs {
  int w, gamma, beta;
  int cout;
};

Tensor conv_block_forward(const Tensor& in, const ParamStore& ps, const ConvBlockRefs& refs,
                          ConvBlockTape& tape) {
  tape.in = in;
  Tensor z = conv3x3(in, ps.value(refs.w), {}, refs.cout, 1);
  Tensor out;
  instance_norm_forward(z, ps.value(refs.gamma), ps.value(refs.beta), tape.xhat, tape.inv_s, out);
  relu_inplace(out);
  tape.out = out;
  return out;
}

Tensor conv_block_backward(const Tensor& dout, ParamStore& ps, const ConvBlockRefs& refs,
                           const ConvBlockTape& tape, bool accumulate_params, bool want_din) {
  Tensor d = relu_backward(dout, tape.out);
  d = instance_norm_backward(d, tape.xhat, tape.inv_s, ps.value(refs.gamma),
                             ps.grad(refs.gamma), ps.grad(refs.beta), accumulate_params);
  return conv3x3_backward(d, tape.in, ps.value(refs.w), ps.grad(refs.w), {}, 1, want_din,
                          accumulate_params);
}

}  // namespace

// ---------------------------------------------------------------------------
// ParamStore

int ParamStore::add(const std::string& name, size_t n) {
  for (const auto& a : arrays_)
    if (a.name == name) throw std::invalid_argument("duplicate parameter array name: " + name);
  arrays_.push_back({name, std::vector<double>(n, 0.0), std::vector<double>(n, 0.0)});
  return static_cast<int>(arrays_.size()) - 1;
}

void ParamStore::zero_grad() {
  for (auto& a : arrays_) std::fill(a.grad.begin(), a.grad.end(), 0.0);
}

void ParamStore::scale_grad(double factor) {
  for (auto& a : arrays_)
    for (double& g : a.grad) g *= factor;
}

std::vector<std::vector<double>> ParamStore::snapshot() const {
  std::vector<std::vector<double>> snap;
  snap.reserve(arrays_.size());
  for (const auto& a : arrays_) snap.push_back(a.value);
  return snap;
}

void ParamStore::restore(const std::vector<std::vector<double>>& snap) {
  if (snap.size() != arrays_.size())
    throw std::invalid_argument("snapshot array count mismatch");
  for (size_t i = 0; i < snap.size(); ++i) {
    if (snap[i].size() != arrays_[i].value.size())
      throw std::invalid_argument("snapshot size mismatch for " + arrays_[i].name);
    arrays_[i].value = snap[i];
  }
}

size_t ParamStore::total_size() const {
  size_t n = 0;
  for (const auto& a : arrays_) n += a.value.size();
  return n;
}

uint64_t ParamStore::value_hash() const {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& a : arrays_) {
    h = fnv1a64(a.name.data(), a.name.size(), h);
    h = fnv1a64(a.value.data(), a.value.size() * sizeof(double), h);
  }
  return h;
}

void ParamStore::init_normal(int handle, Rng& rng, double stddev) {
  for (double& v : arrays_[handle].value) v = rng.next_normal() * stddev;
}

void ParamStore::add_noise(Rng& rng, double stddev) {
  for (auto& a : arrays_)
    for (double& v : a.value) v += rng.next_normal() * stddev;
}

// ---------------------------------------------------------------------------
// Configs

void GeneratorConfig::validate() const {
  if (param_dim < 0) throw std::invalid_argument("param_dim must be >= 0");
  if (out_channels < 1) throw std::invalid_argument("out_channels must be >= 1");
  if (depth < 1 || depth > 6) throw std::invalid_argument("depth must be in [1,6]");
  if (base_channels < 1) throw std::invalid_argument("base_channels must be >= 1");
  if (!(d_max > 0.0)) throw std::invalid_argument("d_max must be positive");
  if (receptive_field() < 24)
    throw std::invalid_argument("bottleneck receptive field below the 24 px density footprint");
}

int GeneratorConfig::receptive_field() const {
  // each 3x3 conv at scale s adds 2s, each pool doubles the scale
  int rf = 1, scale = 1;
  for (int i = 0; i < depth; ++i) {
    rf += 2 * scale;  // encoder conv
    scale *= 2;       // pool
  }
  rf += 2 * scale;  // bottleneck conv
  return rf;
}

std::string GeneratorConfig::to_json() const {
  nlohmann::json j;
  j["param_dim"] = param_dim;
  j["out_channels"] = out_channels;
  j["depth"] = depth;
  j["base_channels"] = base_channels;
  j["d_max"] = d_max;
  j["sigmoid_head"] = sigmoid_head;
  return j.dump();
}

GeneratorConfig GeneratorConfig::from_json(const std::string& json_text) {
  nlohmann::json j = nlohmann::json::parse(json_text);
  GeneratorConfig c;
  c.param_dim = j.at("param_dim").get<int>();
  c.out_channels = j.at("out_channels").get<int>();
  c.depth = j.at("depth").get<int>();
  c.base_channels = j.at("base_channels").get<int>();
  c.d_max = j.at("d_max").get<double>();
  c.sigmoid_head = j.at("sigmoid_head").get<bool>();
  return c;
}

void RegressorConfig::validate() const {
  if (levels < 1 || levels > 6) throw std::invalid_argument("levels must be in [1,6]");
  if (base_channels < 1) throw std::invalid_argument("base_channels must be >= 1");
  if (param_dim < 1) throw std::invalid_argument("param_dim must be >= 1");
}

std::string RegressorConfig::to_json() const {
  nlohmann::json j;
  j["levels"] = levels;
  j["base_channels"] = base_channels;
  j["param_dim"] = param_dim;
  return j.dump();
}

RegressorConfig RegressorConfig::from_json(const std::string& json_text) {
  nlohmann::json j = nlohmann::json::parse(json_text);
  RegressorConfig c;
  c.levels = j.at("levels").get<int>();
  c.base_channels = j.at("base_channels").get<int>();
  c.param_dim = j.at("param_dim").get<int>();
  return c;
}

// ---------------------------------------------------------------------------
// UNet

struct UNet::Tape {
  Tensor input;
  std::vector<ConvBlockTape> enc;
  ConvBlockTape bott;
  std::vector<ConvBlockTape> dec;
  Tensor head_in;   // == dec[0].out, kept for clarity
  Tensor head_out;  // post-activation
};

void UNetTapeDeleter::operator()(UNet::Tape* t) const { delete t; }
UNetTapePtr make_unet_tape() { return UNetTapePtr(new UNet::Tape()); }

UNet::UNet(GeneratorConfig cfg, uint64_t init_seed)
    : cfg_(cfg), store_(std::make_shared<ParamStore>()) {
  cfg_.validate();
  Rng rng(init_seed);

  const int in_ch = 1 + cfg_.param_dim;
  int prev = in_ch;
  for (int i = 0; i < cfg_.depth; ++i) {
    const int ci = cfg_.level_channels(i);
    const std::string tag = "enc" + std::to_string(i);
    enc_w_.push_back(store_->add(tag + ".conv.w", static_cast<size_t>(ci) * prev * 9));
    enc_gamma_.push_back(store_->add(tag + ".in.gamma", ci));
    enc_beta_.push_back(store_->add(tag + ".in.beta", ci));
    store_->init_normal(enc_w_.back(), rng, std::sqrt(2.0 / (prev * 9)));
    std::fill(store_->value(enc_gamma_.back()).begin(), store_->value(enc_gamma_.back()).end(),
              1.0);
    prev = ci;
  }

  const int cb = cfg_.level_channels(cfg_.depth - 1);
  const int bott_in = cb + cfg_.param_dim;
  bott_w_ = store_->add("bottleneck.conv.w", static_cast<size_t>(cb) * bott_in * 9);
  bott_gamma_ = store_->add("bottleneck.in.gamma", cb);
  bott_beta_ = store_->add("bottleneck.in.beta", cb);
  store_->init_normal(bott_w_, rng, std::sqrt(2.0 / (bott_in * 9)));
  std::fill(store_->value(bott_gamma_).begin(), store_->value(bott_gamma_).end(), 1.0);

  dec_w_.resize(cfg_.depth);
  dec_gamma_.resize(cfg_.depth);
  dec_beta_.resize(cfg_.depth);
  for (int i = cfg_.depth - 1; i >= 0; --i) {
    const int ci = cfg_.level_channels(i);
    const int cup = i == cfg_.depth - 1 ? cb : cfg_.level_channels(i + 1);
    const int cin = cup + ci;
    const std::string tag = "dec" + std::to_string(i);
    dec_w_[i] = store_->add(tag + ".conv.w", static_cast<size_t>(ci) * cin * 9);
    dec_gamma_[i] = store_->add(tag + ".in.gamma", ci);
    dec_beta_[i] = store_->add(tag + ".in.beta", ci);
    store_->init_normal(dec_w_[i], rng, std::sqrt(2.0 / (cin * 9)));
    std::fill(store_->value(dec_gamma_[i]).begin(), store_->value(dec_gamma_[i]).end(), 1.0);
  }

  // zero-initialized head: the deformation generator starts at the identity
  // warp and the mask generator at a uniform 0.5 mask
  head_w_ = store_->add("head.conv.w",
                        static_cast<size_t>(cfg_.out_channels) * cfg_.base_channels * 9);
  head_b_ = store_->add("head.conv.b", cfg_.out_channels);
}

Tensor UNet::forward(const Raster& input, const FabParam* y, Tape& tape) const {
  const int div = 1 << cfg_.depth;
  if (input.width() % div != 0 || input.height() % div != 0)
    throw std::invalid_argument("input size must be divisible by 2^depth");
  if (input.width() < div || input.height() < div)
    throw std::invalid_argument("input too small for network depth");
  if (cfg_.param_dim > 0) {
    if (y == nullptr) throw std::invalid_argument("parameter-conditioned net requires y");
    if (static_cast<int>(y->dim()) != cfg_.param_dim)
      throw std::invalid_argument("fab parameter dimensionality mismatch");
  }

  Tensor x = tensor_from_raster(input);
  if (cfg_.param_dim > 0) x = concat_channels(x, tile_params(*y, x.h, x.w));
  tape.input = x;

  tape.enc.assign(cfg_.depth, {});
  for (int i = 0; i < cfg_.depth; ++i) {
    ConvBlockRefs refs{enc_w_[i], enc_gamma_[i], enc_beta_[i], cfg_.level_channels(i)};
    Tensor s = conv_block_forward(x, *store_, refs, tape.enc[i]);
    x = avgpool2(s);
  }

  if (cfg_.param_dim > 0) x = concat_channels(x, tile_params(*y, x.h, x.w));
  ConvBlockRefs brefs{bott_w_, bott_gamma_, bott_beta_, cfg_.level_channels(cfg_.depth - 1)};
  x = conv_block_forward(x, *store_, brefs, tape.bott);

  tape.dec.assign(cfg_.depth, {});
  for (int i = cfg_.depth - 1; i >= 0; --i) {
    Tensor up = upsample2(x);
    Tensor cat = concat_channels(up, tape.enc[i].out);
    ConvBlockRefs refs{dec_w_[i], dec_gamma_[i], dec_beta_[i], cfg_.level_channels(i)};
    x = conv_block_forward(cat, *store_, refs, tape.dec[i]);
  }

  tape.head_in = x;
  Tensor z = conv3x3(x, store_->value(head_w_), store_->value(head_b_), cfg_.out_channels, 1);
  if (cfg_.sigmoid_head) {
    for (double& v : z.v) v = 1.0 / (1.0 + std::exp(-v));
  } else {
    for (double& v : z.v) v = cfg_.d_max * std::tanh(v / cfg_.d_max);
  }
  tape.head_out = z;
  return z;
}

void UNet::backward(const Tensor& dout, const Tape& tape, bool accumulate_params,
                    GradientField* input_grad) {
  if (!dout.same_shape(tape.head_out))
    throw std::invalid_argument("UNet backward: gradient shape mismatch");

  // head activation
  Tensor dz = dout;
  if (cfg_.sigmoid_head) {
    for (size_t i = 0; i < dz.v.size(); ++i) {
      const double o = tape.head_out.v[i];
      dz.v[i] *= o * (1.0 - o);
    }
  } else {
    for (size_t i = 0; i < dz.v.size(); ++i) {
      const double th = tape.head_out.v[i] / cfg_.d_max;
      dz.v[i] *= 1.0 - th * th;
    }
  }

  Tensor d = conv3x3_backward(dz, tape.head_in, store_->value(head_w_), store_->grad(head_w_),
                              store_->grad(head_b_), 1, true, accumulate_params);

  // decoder, reverse of processing order (dec0 was last)
  std::vector<Tensor> d_skip(cfg_.depth);
  for (int i = 0; i < cfg_.depth; ++i) {
    ConvBlockRefs refs{dec_w_[i], dec_gamma_[i], dec_beta_[i], cfg_.level_channels(i)};
    Tensor dcat = conv_block_backward(d, *store_, refs, tape.dec[i], accumulate_params, true);
    const int cup = i == cfg_.depth - 1 ? cfg_.level_channels(cfg_.depth - 1)
                                        : cfg_.level_channels(i + 1);
    Tensor dup;
    split_channels(dcat, cup, dup, d_skip[i]);
    d = upsample2_backward(dup);
  }

  // bottleneck; drop the tiled parameter channels
  ConvBlockRefs brefs{bott_w_, bott_gamma_, bott_beta_, cfg_.level_channels(cfg_.depth - 1)};
  Tensor dbott = conv_block_backward(d, *store_, brefs, tape.bott, accumulate_params, true);
  if (cfg_.param_dim > 0) {
    Tensor dmain, dpar;
    split_channels(dbott, cfg_.level_channels(cfg_.depth - 1), dmain, dpar);
    dbott = std::move(dmain);
  }

  // encoder: skip path + pooled path
  Tensor dpool = dbott;
  for (int i = cfg_.depth - 1; i >= 0; --i) {
    Tensor ds = avgpool2_backward(dpool);
    for (size_t k = 0; k < ds.v.size(); ++k) ds.v[k] += d_skip[i].v[k];
    ConvBlockRefs refs{enc_w_[i], enc_gamma_[i], enc_beta_[i], cfg_.level_channels(i)};
    const bool need_din = i > 0 || input_grad != nullptr;
    Tensor dx = conv_block_backward(ds, *store_, refs, tape.enc[i], accumulate_params, need_din);
    dpool = std::move(dx);
  }

  if (input_grad != nullptr) {
    *input_grad = GradientField(tape.input.w, tape.input.h);
    for (int y = 0; y < tape.input.h; ++y)
      for (int x = 0; x < tape.input.w; ++x) input_grad->at(x, y) = dpool.at(0, y, x);
  }
}

DeformationMap UNet::forward_map(const Raster& input, const FabParam& y, Tape& tape) const {
  if (cfg_.out_channels != 2)
    throw std::logic_error("forward_map requires a 2-channel head");
  Tensor out = forward(input, &y, tape);
  DeformationMap m(out.w, out.h);
  const size_t hw = static_cast<size_t>(out.h) * out.w;
  std::copy(out.v.begin(), out.v.begin() + hw, m.dx.begin());
  std::copy(out.v.begin() + hw, out.v.end(), m.dy.begin());
  return m;
}

Tensor UNet::map_grad_to_tensor(const DeformationMap& g) {
  Tensor t(2, g.height, g.width);
  const size_t hw = static_cast<size_t>(g.height) * g.width;
  std::copy(g.dx.begin(), g.dx.end(), t.v.begin());
  std::copy(g.dy.begin(), g.dy.end(), t.v.begin() + hw);
  return t;
}

// ---------------------------------------------------------------------------
// Regressor

struct Regressor::Tape {
  std::vector<Tensor> inputs;    // per conv level
  std::vector<Tensor> relu_out;  // per conv level
  Tensor last;                   // == relu_out.back()
  std::vector<double> pooled;    // GAP vector
};

void RegressorTapeDeleter::operator()(Regressor::Tape* t) const { delete t; }
RegressorTapePtr make_regressor_tape() { return RegressorTapePtr(new Regressor::Tape()); }

Regressor::Regressor(RegressorConfig cfg, uint64_t init_seed)
    : cfg_(cfg), store_(std::make_shared<ParamStore>()) {
  cfg_.validate();
  Rng rng(init_seed);

  int prev = 1;
  for (int i = 0; i < cfg_.levels; ++i) {
    const int ci = cfg_.base_channels << i;
    const std::string tag = "conv" + std::to_string(i);
    conv_w_.push_back(store_->add(tag + ".w", static_cast<size_t>(ci) * prev * 9));
    conv_b_.push_back(store_->add(tag + ".b", ci));
    store_->init_normal(conv_w_.back(), rng, std::sqrt(2.0 / (prev * 9)));
    prev = ci;
  }
  head_w_ = store_->add("head.w", static_cast<size_t>(cfg_.param_dim) * prev);
  head_b_ = store_->add("head.b", cfg_.param_dim);
  store_->init_normal(head_w_, rng, std::sqrt(1.0 / prev));
}

void Regressor::zero_head() {
  std::fill(store_->value(head_w_).begin(), store_->value(head_w_).end(), 0.0);
  std::fill(store_->value(head_b_).begin(), store_->value(head_b_).end(), 0.0);
}

std::vector<double> Regressor::forward(const Raster& input, Tape& tape) const {
  const int div = 1 << cfg_.levels;
  if (input.width() % div != 0 || input.height() % div != 0)
    throw std::invalid_argument("regressor input size must be divisible by 2^levels");

  Tensor x = tensor_from_raster(input);
  tape.inputs.clear();
  tape.relu_out.clear();
  for (int i = 0; i < cfg_.levels; ++i) {
    tape.inputs.push_back(x);
    Tensor z = conv3x3(x, store_->value(conv_w_[i]), store_->value(conv_b_[i]),
                       cfg_.base_channels << i, 2);
    relu_inplace(z);
    tape.relu_out.push_back(z);
    x = std::move(z);
  }
  tape.last = x;

  const size_t hw = static_cast<size_t>(tape.last.h) * tape.last.w;
  tape.pooled.assign(tape.last.c, 0.0);
  for (int c = 0; c < tape.last.c; ++c) {
    double s = 0.0;
    const double* p = tape.last.v.data() + c * hw;
    for (size_t i = 0; i < hw; ++i) s += p[i];
    tape.pooled[c] = s / static_cast<double>(hw);
  }

  std::vector<double> out(cfg_.param_dim, 0.0);
  auto w = store_->value(head_w_);
  auto b = store_->value(head_b_);
  for (int o = 0; o < cfg_.param_dim; ++o) {
    double s = b[o];
    for (size_t c = 0; c < tape.pooled.size(); ++c) s += w[o * tape.pooled.size() + c] * tape.pooled[c];
    out[o] = s;
  }
  return out;
}

void Regressor::backward(std::span<const double> dout, const Tape& tape, bool accumulate_params,
                         GradientField* input_grad) {
  if (static_cast<int>(dout.size()) != cfg_.param_dim)
    throw std::invalid_argument("regressor backward: gradient dimensionality mismatch");

  const size_t nc = tape.pooled.size();
  std::vector<double> dpool(nc, 0.0);
  auto w = store_->value(head_w_);
  if (accumulate_params) {
    auto dw = store_->grad(head_w_);
    auto db = store_->grad(head_b_);
    for (int o = 0; o < cfg_.param_dim; ++o) {
      db[o] += dout[o];
      for (size_t c = 0; c < nc; ++c) dw[o * nc + c] += dout[o] * tape.pooled[c];
    }
  }
  for (size_t c = 0; c < nc; ++c) {
    double s = 0.0;
    for (int o = 0; o < cfg_.param_dim; ++o) s += w[o * nc + c] * dout[o];
    dpool[c] = s;
  }

  const size_t hw = static_cast<size_t>(tape.last.h) * tape.last.w;
  Tensor d(tape.last.c, tape.last.h, tape.last.w);
  for (int c = 0; c < tape.last.c; ++c) {
    const double g = dpool[c] / static_cast<double>(hw);
    std::fill(d.v.begin() + c * hw, d.v.begin() + (c + 1) * hw, g);
  }

  for (int i = cfg_.levels - 1; i >= 0; --i) {
    d = relu_backward(d, tape.relu_out[i]);
    const bool need_din = i > 0 || input_grad != nullptr;
    d = conv3x3_backward(d, tape.inputs[i], store_->value(conv_w_[i]), store_->grad(conv_w_[i]),
                         store_->grad(conv_b_[i]), 2, need_din, accumulate_params);
  }

  if (input_grad != nullptr) {
    *input_grad = GradientField(tape.inputs[0].w, tape.inputs[0].h);
    for (int y = 0; y < tape.inputs[0].h; ++y)
      for (int x = 0; x < tape.inputs[0].w; ++x) input_grad->at(x, y) = d.at(0, y, x);
  }
}

}  // namespace vmlitho
