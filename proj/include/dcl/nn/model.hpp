#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "dcl/nn/layers.hpp"
#include "dcl/nn/tensor.hpp"
#include "dcl/rng.hpp"

namespace dcl::nn {

struct ModelConfig {
  int in_channels = 1;
  std::vector<int> widths = {16, 32, 64, 128, 256};  // stem + 4 exchange stages
  int classes = 4;
  double simam_lambda = 1e-4;
  int eca_gamma = 2;
  int eca_b = 1;
  int sa_kernel = 7;
  double dropout = 0.3;
  // ablation switches: MEM = FEM + AEM; DCL toggles the coarse-label branch
  bool use_fem = true;
  bool use_aem = true;
  bool use_dcl = true;
  // paper-gap variants, both default off
  bool swap_aem_mixture = false;
  bool simam_per_channel = false;

  void validate() const;
};

std::string model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const std::string& text);

// Exchange coefficients and attention rows retained from the last forward.
struct EncoderState {
  std::vector<Tensor> s_maps;  // FEM coefficients, one per exchange stage
  std::vector<Tensor> e_maps;  // AEM coefficients (n,1,h,w), one per stage
  std::vector<std::vector<std::vector<float>>> attention;  // [dir][n](P x P)
};

// Dual-branch encoder with four modality-exchange stages, cross-attention
// fusion, and two U-shaped decoders producing sigmoid probability maps.
class DclNet {
 public:
  DclNet(const ModelConfig& cfg, uint64_t seed);

  // t1w/fa: (n,1,H,W) with H,W divisible by 16. p1/p2: (n,classes,H,W).
  void forward(const Tensor& t1w, const Tensor& fa, bool train, Rng& dropout_rng, Tensor& p1,
               Tensor& p2, EncoderState* state = nullptr, bool want_p2 = true);
  // gp1/gp2 are gradients w.r.t. the probability maps of the last training
  // forward; optional input gradients for differentiability checks.
  void backward(const Tensor& gp1, const Tensor& gp2, Tensor* g_t1w = nullptr,
                Tensor* g_fa = nullptr);

  std::vector<Param*> params();
  // parameter values plus batch-norm running statistics, for checkpoints
  std::vector<std::pair<std::string, Tensor*>> state_entries();
  size_t param_count();
  void zero_grad();
  const ModelConfig& config() const { return cfg_; }

 private:
  struct Decoder {
    std::vector<std::unique_ptr<UpBilinear2>> up;
    std::vector<std::unique_ptr<ConvBlock>> block;
    std::vector<std::unique_ptr<Dropout>> drop;  // decoder 2 only
    std::unique_ptr<Conv2d> head;
  };

  Tensor decoder_forward(Decoder& d, const Tensor& fused, const std::vector<Tensor>& skips,
                         bool train, Rng& rng);
  Tensor decoder_backward(Decoder& d, const Tensor& g_logits, std::vector<Tensor>& g_skips);

  ModelConfig cfg_;
  std::unique_ptr<ConvBlock> stem_t_, stem_f_;
  std::vector<std::unique_ptr<SimAM>> simam_;
  std::vector<std::unique_ptr<EcaReweight>> eca_;
  std::vector<std::unique_ptr<SpatialAttention>> sa_;
  std::vector<std::unique_ptr<MaxPool2>> pool_t_, pool_f_;
  std::vector<std::unique_ptr<ConvBlock>> block_t_, block_f_;
  std::unique_ptr<CrossAttention> ca_;
  std::unique_ptr<Conv2d> fuse_;
  Decoder dec1_, dec2_;

  // forward caches
  std::vector<Tensor> a_, b_, s_cache_, e_cache_;
  Tensor p1_, p2_;
  bool did_p2_ = false;
  bool train_forward_ = false;
};

}  // namespace dcl::nn
