#pragma once

#include <string>
#include <vector>

#include "dcl/nn/tensor.hpp"
#include "dcl/rng.hpp"

namespace dcl::nn {

struct Param {
  std::string name;
  Tensor w;    // value
  Tensor g;    // gradient accumulator
  Tensor mom;  // SGD momentum buffer

  void resize(int n, int c, int h, int ww) {
    w = Tensor(n, c, h, ww);
    g = Tensor(n, c, h, ww);
    mom = Tensor(n, c, h, ww);
  }
};

// Kaiming-uniform fill, deterministic per rng stream.
void init_conv_weight(Param& p, int fan_in, Rng& rng);

struct Layer {
  virtual ~Layer() = default;
  virtual void collect(std::vector<Param*>& out) {}
};

class Conv2d : public Layer {
 public:
  Conv2d(std::string name, int cin, int cout, int k, int pad, bool bias, Rng& rng);
  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& gy);
  void collect(std::vector<Param*>& out) override;

  Param weight, bias_p;
  int cin, cout, k, pad;
  bool has_bias;

 private:
  Tensor x_shape_;           // empty data holder for shape only
  std::vector<float> col_;   // cached im2col of the whole batch
  int cached_n_ = 0, cached_h_ = 0, cached_w_ = 0;
};

class BatchNorm2d : public Layer {
 public:
  BatchNorm2d(std::string name, int channels);
  Tensor forward(const Tensor& x, bool train);
  Tensor backward(const Tensor& gy);
  void collect(std::vector<Param*>& out) override;

  std::string name;
  Param gamma, beta;
  Tensor run_mean, run_var;  // buffers, not optimized
  double momentum = 0.1, eps = 1e-5;

 private:
  Tensor xhat_;
  std::vector<float> invstd_;
  bool trained_forward_ = false;
};

class ReLU : public Layer {
 public:
  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& gy);

 private:
  std::vector<uint8_t> mask_;
};

// Conv-BN-ReLU twice.
class ConvBlock : public Layer {
 public:
  ConvBlock(const std::string& name, int cin, int cout, Rng& rng);
  Tensor forward(const Tensor& x, bool train);
  Tensor backward(const Tensor& gy);
  void collect(std::vector<Param*>& out) override;

  Conv2d c1, c2;
  BatchNorm2d b1, b2;
  ReLU r1, r2;
};

class MaxPool2 : public Layer {
 public:
  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& gy);

 private:
  std::vector<uint32_t> argmax_;
  int in_n_ = 0, in_c_ = 0, in_h_ = 0, in_w_ = 0;
};

class UpBilinear2 : public Layer {
 public:
  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& gy);

 private:
  int in_n_ = 0, in_c_ = 0, in_h_ = 0, in_w_ = 0;
};

class Dropout : public Layer {
 public:
  explicit Dropout(double rate) : rate_(rate) {}
  Tensor forward(const Tensor& x, bool train, Rng& rng);
  Tensor backward(const Tensor& gy);

 private:
  double rate_;
  std::vector<float> mask_;
  bool active_ = false;
};

// Parameter-free per-position attention; returns the coefficient map S.
class SimAM : public Layer {
 public:
  explicit SimAM(double lambda, bool per_channel = false)
      : lambda_(lambda), per_channel_(per_channel) {}
  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& gS);

 private:
  double lambda_;
  bool per_channel_;
  Tensor x_, s_;
  std::vector<double> mean_, var_;
};

// ECA: per-channel coefficients via 1-D conv over pooled descriptors;
// output is the reweighted feature map.
class EcaReweight : public Layer {
 public:
  EcaReweight(std::string name, int channels, int gamma, int b, Rng& rng);
  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& gy);
  void collect(std::vector<Param*>& out) override;

  Param weight;  // (1,1,1,k)
  int channels, k;

 private:
  Tensor x_;
  std::vector<float> pooled_, s_;
};

// CBAM-style spatial attention over [max;mean] channel maps; returns the
// (n,1,h,w) coefficient map.
class SpatialAttention : public Layer {
 public:
  SpatialAttention(std::string name, int kernel, Rng& rng);
  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& gE);
  void collect(std::vector<Param*>& out) override;

  Param weight, bias;  // (1,1,2*k*k? stored (1,2,k,k)), (1,1,1,1)
  int k;

 private:
  Tensor x_, e_;
  std::vector<float> mx_, mn_, z_;
  std::vector<uint32_t> argc_;
};

// y = fa + s * (t1w - fa); s is (n,c,h,w) or broadcast (n,1,h,w).
Tensor mix_lerp(const Tensor& t1w, const Tensor& fa, const Tensor& s);
void mix_lerp_backward(const Tensor& t1w, const Tensor& fa, const Tensor& s, const Tensor& gy,
                       Tensor& g_t1w, Tensor& g_fa, Tensor& g_s);

// Single-head bidirectional scaled dot-product attention over flattened
// spatial positions, each direction added residually to its query source.
class CrossAttention : public Layer {
 public:
  CrossAttention(std::string name, int channels, Rng& rng);
  // ya = xa + Attn(q=xa, kv=xb), yb likewise with roles swapped
  void forward(const Tensor& xa, const Tensor& xb, Tensor& ya, Tensor& yb);
  void backward(const Tensor& gya, const Tensor& gyb, Tensor& gxa, Tensor& gxb);
  void collect(std::vector<Param*>& out) override;

  // last-forward attention matrices, rows sum to 1: [direction][n](P x P)
  const std::vector<std::vector<std::vector<float>>>& attention() const { return attn_; }

  int channels;

 private:
  struct Direction {
    Param wq, wk, wv;
    std::vector<float> q, kk, vv;  // cached per batch, (n, C, P) packed
    std::vector<std::vector<float>> a;
  };
  void dir_forward(Direction& d, const Tensor& xq, const Tensor& xkv, Tensor& y);
  void dir_backward(Direction& d, const Tensor& xq, const Tensor& xkv, const Tensor& gy,
                    Tensor& gxq, Tensor& gxkv);

  Direction d_ab_, d_ba_;
  Tensor xa_, xb_;
  std::vector<std::vector<std::vector<float>>> attn_;
};

Tensor concat_channels(const Tensor& a, const Tensor& b);
void split_channels(const Tensor& g, int ca, Tensor& ga, Tensor& gb);

Tensor sigmoid_map(const Tensor& x);
// gy w.r.t. probabilities -> gradient w.r.t. logits given p = sigmoid(z)
Tensor sigmoid_backward_from_p(const Tensor& p, const Tensor& gp);

}  // namespace dcl::nn
