#include "dcl/nn/model.hpp"

#include <algorithm>
#include <json.hpp>
#include <stdexcept>

namespace dcl::nn {

using json = nlohmann::ordered_json;

void ModelConfig::validate() const {
  if (in_channels < 1) throw std::runtime_error("ModelConfig: in_channels must be >= 1");
  if (widths.size() != 5) throw std::runtime_error("ModelConfig: expected 5 stage widths");
  for (size_t i = 1; i < widths.size(); ++i)
    if (widths[i] <= widths[i - 1])
      throw std::runtime_error("ModelConfig: stage widths must be strictly increasing");
  if (widths[0] < 1) throw std::runtime_error("ModelConfig: widths must be positive");
  if (classes < 1) throw std::runtime_error("ModelConfig: classes must be >= 1");
  if (dropout < 0.0 || dropout >= 1.0) throw std::runtime_error("ModelConfig: dropout in [0,1)");
  if (simam_lambda <= 0.0) throw std::runtime_error("ModelConfig: simam_lambda must be > 0");
  if (sa_kernel < 1 || sa_kernel % 2 == 0)
    throw std::runtime_error("ModelConfig: sa_kernel must be odd and positive");
}

std::string model_config_to_json(const ModelConfig& c) {
  json j;
  j["in_channels"] = c.in_channels;
  j["widths"] = c.widths;
  j["classes"] = c.classes;
  j["simam_lambda"] = c.simam_lambda;
  j["eca_gamma"] = c.eca_gamma;
  j["eca_b"] = c.eca_b;
  j["sa_kernel"] = c.sa_kernel;
  j["dropout"] = c.dropout;
  j["use_fem"] = c.use_fem;
  j["use_aem"] = c.use_aem;
  j["use_dcl"] = c.use_dcl;
  j["swap_aem_mixture"] = c.swap_aem_mixture;
  j["simam_per_channel"] = c.simam_per_channel;
  return j.dump(2);
}

ModelConfig model_config_from_json(const std::string& text) {
  ModelConfig c;
  json j = json::parse(text);
  static const std::vector<std::string> known = {
      "in_channels", "widths",  "classes", "simam_lambda",     "eca_gamma",
      "eca_b",       "sa_kernel", "dropout", "use_fem",          "use_aem",
      "use_dcl",     "swap_aem_mixture",     "simam_per_channel"};
  for (const auto& [k, v] : j.items())
    if (std::find(known.begin(), known.end(), k) == known.end())
      throw std::runtime_error("model config: unknown key '" + k + "'");
  if (j.contains("in_channels")) c.in_channels = j["in_channels"];
  if (j.contains("widths")) c.widths = j["widths"].get<std::vector<int>>();
  if (j.contains("classes")) c.classes = j["classes"];
  if (j.contains("simam_lambda")) c.simam_lambda = j["simam_lambda"];
  if (j.contains("eca_gamma")) c.eca_gamma = j["eca_gamma"];
  if (j.contains("eca_b")) c.eca_b = j["eca_b"];
  if (j.contains("sa_kernel")) c.sa_kernel = j["sa_kernel"];
  if (j.contains("dropout")) c.dropout = j["dropout"];
  if (j.contains("use_fem")) c.use_fem = j["use_fem"];
  if (j.contains("use_aem")) c.use_aem = j["use_aem"];
  if (j.contains("use_dcl")) c.use_dcl = j["use_dcl"];
  if (j.contains("swap_aem_mixture")) c.swap_aem_mixture = j["swap_aem_mixture"];
  if (j.contains("simam_per_channel")) c.simam_per_channel = j["simam_per_channel"];
  c.validate();
  return c;
}

namespace {
Tensor add(const Tensor& a, const Tensor& b) {
  Tensor y = a;
  for (size_t i = 0; i < y.size(); ++i) y.v[i] += b.v[i];
  return y;
}
void acc(Tensor& a, const Tensor& b) {
  for (size_t i = 0; i < a.size(); ++i) a.v[i] += b.v[i];
}
}  // namespace

DclNet::DclNet(const ModelConfig& cfg, uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  Rng rng(seed, 0x9e11);
  const auto& w = cfg_.widths;
  stem_t_ = std::make_unique<ConvBlock>("stem_t", cfg_.in_channels, w[0], rng);
  stem_f_ = std::make_unique<ConvBlock>("stem_f", cfg_.in_channels, w[0], rng);
  for (int i = 0; i < 4; ++i) {
    const std::string si = std::to_string(i);
    simam_.push_back(std::make_unique<SimAM>(cfg_.simam_lambda, cfg_.simam_per_channel));
    eca_.push_back(
        std::make_unique<EcaReweight>("enc" + si + ".eca", w[i], cfg_.eca_gamma, cfg_.eca_b, rng));
    sa_.push_back(std::make_unique<SpatialAttention>("enc" + si + ".sa", cfg_.sa_kernel, rng));
    pool_t_.push_back(std::make_unique<MaxPool2>());
    pool_f_.push_back(std::make_unique<MaxPool2>());
    block_t_.push_back(std::make_unique<ConvBlock>("enc" + si + ".t1w", w[i], w[i + 1], rng));
    block_f_.push_back(std::make_unique<ConvBlock>("enc" + si + ".fa", w[i], w[i + 1], rng));
  }
  ca_ = std::make_unique<CrossAttention>("fusion.ca", w[4], rng);
  fuse_ = std::make_unique<Conv2d>("fusion.mix", 2 * w[4], w[4], 1, 0, true, rng);
  for (int d = 0; d < 2; ++d) {
    Decoder& dec = d == 0 ? dec1_ : dec2_;
    const std::string dn = "dec" + std::to_string(d + 1);
    for (int j = 0; j < 4; ++j) {
      dec.up.push_back(std::make_unique<UpBilinear2>());
      dec.block.push_back(std::make_unique<ConvBlock>(dn + ".up" + std::to_string(j),
                                                      w[4 - j] + w[3 - j], w[3 - j], rng));
      if (d == 1) dec.drop.push_back(std::make_unique<Dropout>(cfg_.dropout));
    }
    dec.head = std::make_unique<Conv2d>(dn + ".head", w[0], cfg_.classes, 1, 0, true, rng);
  }
}

std::vector<Param*> DclNet::params() {
  std::vector<Param*> out;
  stem_t_->collect(out);
  stem_f_->collect(out);
  for (int i = 0; i < 4; ++i) {
    if (cfg_.use_aem) {
      eca_[i]->collect(out);
      sa_[i]->collect(out);
    }
    block_t_[i]->collect(out);
    block_f_[i]->collect(out);
  }
  ca_->collect(out);
  fuse_->collect(out);
  for (Decoder* d : {&dec1_, &dec2_}) {
    for (auto& b : d->block) b->collect(out);
    d->head->collect(out);
  }
  return out;
}

std::vector<std::pair<std::string, Tensor*>> DclNet::state_entries() {
  std::vector<Param*> all;
  stem_t_->collect(all);
  stem_f_->collect(all);
  for (int i = 0; i < 4; ++i) {
    eca_[i]->collect(all);
    sa_[i]->collect(all);
    block_t_[i]->collect(all);
    block_f_[i]->collect(all);
  }
  ca_->collect(all);
  fuse_->collect(all);
  for (Decoder* d : {&dec1_, &dec2_}) {
    for (auto& b : d->block) b->collect(all);
    d->head->collect(all);
  }
  std::vector<std::pair<std::string, Tensor*>> out;
  for (Param* p : all) out.emplace_back(p->name, &p->w);
  auto add_bn = [&](BatchNorm2d& bn) {
    out.emplace_back(bn.name + ".run_mean", &bn.run_mean);
    out.emplace_back(bn.name + ".run_var", &bn.run_var);
  };
  auto add_block = [&](ConvBlock& cb) {
    add_bn(cb.b1);
    add_bn(cb.b2);
  };
  add_block(*stem_t_);
  add_block(*stem_f_);
  for (int i = 0; i < 4; ++i) {
    add_block(*block_t_[i]);
    add_block(*block_f_[i]);
  }
  for (Decoder* d : {&dec1_, &dec2_})
    for (auto& b : d->block) add_block(*b);
  return out;
}

size_t DclNet::param_count() {
  size_t n = 0;
  for (Param* p : params()) n += p->w.size();
  return n;
}

void DclNet::zero_grad() {
  for (Param* p : params()) p->g.zero();
}

Tensor DclNet::decoder_forward(Decoder& d, const Tensor& fused, const std::vector<Tensor>& skips,
                               bool train, Rng& rng) {
  Tensor cur = fused;
  for (int j = 0; j < 4; ++j) {
    cur = d.up[j]->forward(cur);
    cur = concat_channels(cur, skips[3 - j]);
    cur = d.block[j]->forward(cur, train);
    if (!d.drop.empty()) cur = d.drop[j]->forward(cur, train, rng);
  }
  return d.head->forward(cur);
}

Tensor DclNet::decoder_backward(Decoder& d, const Tensor& g_logits, std::vector<Tensor>& g_skips) {
  Tensor g = d.head->backward(g_logits);
  for (int j = 3; j >= 0; --j) {
    if (!d.drop.empty()) g = d.drop[j]->backward(g);
    g = d.block[j]->backward(g);
    Tensor g_up, g_skip;
    split_channels(g, cfg_.widths[4 - j], g_up, g_skip);
    acc(g_skips[3 - j], g_skip);
    g = d.up[j]->backward(g_up);
  }
  return g;
}

void DclNet::forward(const Tensor& t1w, const Tensor& fa, bool train, Rng& dropout_rng, Tensor& p1,
                     Tensor& p2, EncoderState* state, bool want_p2) {
  if (!t1w.same_shape(fa)) throw std::runtime_error("DclNet: modality shapes differ");
  if (t1w.c != cfg_.in_channels) throw std::runtime_error("DclNet: unexpected input channels");
  if (t1w.h % 16 != 0 || t1w.w % 16 != 0)
    throw std::runtime_error("DclNet: input dims must be divisible by 16");
  train_forward_ = train;
  a_.assign(5, Tensor());
  b_.assign(5, Tensor());
  s_cache_.assign(4, Tensor());
  e_cache_.assign(4, Tensor());
  a_[0] = stem_t_->forward(t1w, train);
  b_[0] = stem_f_->forward(fa, train);
  std::vector<Tensor> skips(4);
  for (int i = 0; i < 4; ++i) {
    const Tensor x_in = add(a_[i], b_[i]);
    skips[i] = x_in;
    Tensor m_t, m_f;
    if (cfg_.use_fem) {
      s_cache_[i] = simam_[i]->forward(x_in);
      m_t = mix_lerp(a_[i], b_[i], s_cache_[i]);
    } else {
      m_t = a_[i];
    }
    if (cfg_.use_aem) {
      Tensor e_in = eca_[i]->forward(x_in);
      e_cache_[i] = sa_[i]->forward(e_in);
      m_f = cfg_.swap_aem_mixture ? mix_lerp(b_[i], a_[i], e_cache_[i])
                                  : mix_lerp(a_[i], b_[i], e_cache_[i]);
    } else {
      m_f = b_[i];
    }
    a_[i + 1] = block_t_[i]->forward(pool_t_[i]->forward(m_t), train);
    b_[i + 1] = block_f_[i]->forward(pool_f_[i]->forward(m_f), train);
  }

  Tensor ya, yb;
  ca_->forward(a_[4], b_[4], ya, yb);
  Tensor fused = fuse_->forward(concat_channels(ya, yb));

  p1_ = sigmoid_map(decoder_forward(dec1_, fused, skips, train, dropout_rng));
  p1 = p1_;
  did_p2_ = want_p2;
  if (want_p2) {
    p2_ = sigmoid_map(decoder_forward(dec2_, fused, skips, train, dropout_rng));
    p2 = p2_;
  } else {
    p2_ = Tensor();
    p2 = p2_;
  }

  if (state) {
    state->s_maps.assign(s_cache_.begin(), s_cache_.end());
    state->e_maps.assign(e_cache_.begin(), e_cache_.end());
    state->attention = ca_->attention();
  }
}

void DclNet::backward(const Tensor& gp1, const Tensor& gp2, Tensor* g_t1w, Tensor* g_fa) {
  if (!train_forward_) throw std::runtime_error("DclNet: backward requires a training forward");
  std::vector<Tensor> g_skips(4);
  for (int i = 0; i < 4; ++i) g_skips[i] = Tensor(a_[i].n, a_[i].c, a_[i].h, a_[i].w);

  Tensor g_fused = decoder_backward(dec1_, sigmoid_backward_from_p(p1_, gp1), g_skips);
  if (did_p2_) {
    Tensor g2 = decoder_backward(dec2_, sigmoid_backward_from_p(p2_, gp2), g_skips);
    acc(g_fused, g2);
  }

  Tensor g_cat = fuse_->backward(g_fused);
  Tensor gya, gyb;
  split_channels(g_cat, cfg_.widths[4], gya, gyb);
  Tensor ga, gb;
  ca_->backward(gya, gyb, ga, gb);

  for (int i = 3; i >= 0; --i) {
    Tensor g_mt = pool_t_[i]->backward(block_t_[i]->backward(ga));
    Tensor g_mf = pool_f_[i]->backward(block_f_[i]->backward(gb));
    Tensor gai(a_[i].n, a_[i].c, a_[i].h, a_[i].w);
    Tensor gbi = gai;
    Tensor gx_in = g_skips[i];  // skip = x_in = a + b
    if (cfg_.use_fem) {
      Tensor gta, gtb, gS;
      mix_lerp_backward(a_[i], b_[i], s_cache_[i], g_mt, gta, gtb, gS);
      acc(gai, gta);
      acc(gbi, gtb);
      acc(gx_in, simam_[i]->backward(gS));
    } else {
      acc(gai, g_mt);
    }
    if (cfg_.use_aem) {
      Tensor gfa_1, gfa_2, gE;
      if (cfg_.swap_aem_mixture) {
        mix_lerp_backward(b_[i], a_[i], e_cache_[i], g_mf, gfa_1, gfa_2, gE);
        acc(gbi, gfa_1);
        acc(gai, gfa_2);
      } else {
        mix_lerp_backward(a_[i], b_[i], e_cache_[i], g_mf, gfa_1, gfa_2, gE);
        acc(gai, gfa_1);
        acc(gbi, gfa_2);
      }
      acc(gx_in, eca_[i]->backward(sa_[i]->backward(gE)));
    } else {
      acc(gbi, g_mf);
    }
    acc(gai, gx_in);
    acc(gbi, gx_in);
    ga = std::move(gai);
    gb = std::move(gbi);
  }

  Tensor gt = stem_t_->backward(ga);
  Tensor gf = stem_f_->backward(gb);
  if (g_t1w) *g_t1w = std::move(gt);
  if (g_fa) *g_fa = std::move(gf);
}

}  // namespace dcl::nn
