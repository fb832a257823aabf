#include "dcl/nn/layers.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>

#include "dcl/nn/kernels.hpp"
#include "dcl/nn/reference.hpp"

namespace dcl::nn {

void init_conv_weight(Param& p, int fan_in, Rng& rng) {
  const double bound = std::sqrt(6.0 / fan_in);
  for (auto& x : p.w.v) x = static_cast<float>(rng.uniform(-bound, bound));
}

// ---------------------------------------------------------------- Conv2d

Conv2d::Conv2d(std::string name, int cin_, int cout_, int k_, int pad_, bool bias, Rng& rng)
    : cin(cin_), cout(cout_), k(k_), pad(pad_), has_bias(bias) {
  weight.name = name + ".weight";
  weight.resize(cout, cin, k, k);
  init_conv_weight(weight, cin * k * k, rng);
  if (has_bias) {
    bias_p.name = name + ".bias";
    bias_p.resize(1, 1, 1, cout);
  }
}

void Conv2d::collect(std::vector<Param*>& out) {
  out.push_back(&weight);
  if (has_bias) out.push_back(&bias_p);
}

Tensor Conv2d::forward(const Tensor& x) {
  if (x.c != cin) throw std::runtime_error("Conv2d: channel mismatch");
  cached_n_ = x.n;
  cached_h_ = x.h;
  cached_w_ = x.w;
  const int plane = x.h * x.w;
  const int rows = cin * k * k;
  col_.resize(static_cast<size_t>(x.n) * rows * plane);
  Tensor y(x.n, cout, x.h, x.w);
  for (int in = 0; in < x.n; ++in) {
    float* col = col_.data() + static_cast<size_t>(in) * rows * plane;
    im2col(x.v.data() + x.idx(in, 0, 0, 0), cin, x.h, x.w, k, pad, col);
    gemm(false, false, cout, plane, rows, 1.0f, weight.w.v.data(), rows, col, plane, 0.0f,
         y.v.data() + y.idx(in, 0, 0, 0), plane);
    if (has_bias) {
      float* out = y.v.data() + y.idx(in, 0, 0, 0);
      for (int oc = 0; oc < cout; ++oc) {
        const float b = bias_p.w.v[oc];
        for (int p = 0; p < plane; ++p) out[static_cast<size_t>(oc) * plane + p] += b;
      }
    }
  }
  return y;
}

Tensor Conv2d::backward(const Tensor& gy) {
  const int plane = cached_h_ * cached_w_;
  const int rows = cin * k * k;
  Tensor gx(cached_n_, cin, cached_h_, cached_w_);
  std::vector<float> gcol(static_cast<size_t>(rows) * plane);
  for (int in = 0; in < cached_n_; ++in) {
    const float* col = col_.data() + static_cast<size_t>(in) * rows * plane;
    const float* g = gy.v.data() + gy.idx(in, 0, 0, 0);
    // dW += gy * col^T
    gemm(false, true, cout, rows, plane, 1.0f, g, plane, col, plane, 1.0f, weight.g.v.data(), rows);
    // gcol = W^T * gy
    gemm(true, false, rows, plane, cout, 1.0f, weight.w.v.data(), rows, g, plane, 0.0f, gcol.data(),
         plane);
    col2im_acc(gcol.data(), cin, cached_h_, cached_w_, k, pad, gx.v.data() + gx.idx(in, 0, 0, 0));
    if (has_bias)
      for (int oc = 0; oc < cout; ++oc) {
        double s = 0;
        for (int p = 0; p < plane; ++p) s += g[static_cast<size_t>(oc) * plane + p];
        bias_p.g.v[oc] += static_cast<float>(s);
      }
  }
  return gx;
}

// ------------------------------------------------------------ BatchNorm2d

BatchNorm2d::BatchNorm2d(std::string name_, int channels) : name(std::move(name_)) {
  gamma.name = name + ".gamma";
  gamma.resize(1, 1, 1, channels);
  std::fill(gamma.w.v.begin(), gamma.w.v.end(), 1.0f);
  beta.name = name + ".beta";
  beta.resize(1, 1, 1, channels);
  run_mean = Tensor(1, 1, 1, channels);
  run_var = Tensor(1, 1, 1, channels, 1.0f);
}

void BatchNorm2d::collect(std::vector<Param*>& out) {
  out.push_back(&gamma);
  out.push_back(&beta);
}

Tensor BatchNorm2d::forward(const Tensor& x, bool train) {
  const int C = x.c;
  const size_t plane = x.plane();
  const size_t M = static_cast<size_t>(x.n) * plane;
  Tensor y(x.n, x.c, x.h, x.w);
  trained_forward_ = train;
  invstd_.assign(C, 0.0f);
  if (train) xhat_ = Tensor(x.n, x.c, x.h, x.w);

  for (int c = 0; c < C; ++c) {
    double mean, var;
    if (train) {
      double s = 0, s2 = 0;
      for (int in = 0; in < x.n; ++in) {
        const float* p = x.v.data() + x.idx(in, c, 0, 0);
        for (size_t i = 0; i < plane; ++i) {
          s += p[i];
          s2 += double(p[i]) * p[i];
        }
      }
      mean = s / M;
      var = std::max(0.0, s2 / M - mean * mean);
      run_mean.v[c] = static_cast<float>((1 - momentum) * run_mean.v[c] + momentum * mean);
      run_var.v[c] = static_cast<float>((1 - momentum) * run_var.v[c] + momentum * var);
    } else {
      mean = run_mean.v[c];
      var = run_var.v[c];
    }
    const float istd = static_cast<float>(1.0 / std::sqrt(var + eps));
    invstd_[c] = istd;
    const float g = gamma.w.v[c], b = beta.w.v[c], mu = static_cast<float>(mean);
    for (int in = 0; in < x.n; ++in) {
      const float* p = x.v.data() + x.idx(in, c, 0, 0);
      float* q = y.v.data() + y.idx(in, c, 0, 0);
      float* xh = train ? xhat_.v.data() + xhat_.idx(in, c, 0, 0) : nullptr;
      for (size_t i = 0; i < plane; ++i) {
        const float h = (p[i] - mu) * istd;
        if (xh) xh[i] = h;
        q[i] = g * h + b;
      }
    }
  }
  return y;
}

Tensor BatchNorm2d::backward(const Tensor& gy) {
  if (!trained_forward_) throw std::runtime_error("BatchNorm2d: backward requires a training forward");
  const int C = gy.c;
  const size_t plane = gy.plane();
  const double M = static_cast<double>(gy.n) * plane;
  Tensor gx(gy.n, gy.c, gy.h, gy.w);
  for (int c = 0; c < C; ++c) {
    double sum_g = 0, sum_gx = 0;
    for (int in = 0; in < gy.n; ++in) {
      const float* g = gy.v.data() + gy.idx(in, c, 0, 0);
      const float* xh = xhat_.v.data() + xhat_.idx(in, c, 0, 0);
      for (size_t i = 0; i < plane; ++i) {
        sum_g += g[i];
        sum_gx += double(g[i]) * xh[i];
      }
    }
    gamma.g.v[c] += static_cast<float>(sum_gx);
    beta.g.v[c] += static_cast<float>(sum_g);
    const double gam = gamma.w.v[c], istd = invstd_[c];
    for (int in = 0; in < gy.n; ++in) {
      const float* g = gy.v.data() + gy.idx(in, c, 0, 0);
      const float* xh = xhat_.v.data() + xhat_.idx(in, c, 0, 0);
      float* out = gx.v.data() + gx.idx(in, c, 0, 0);
      for (size_t i = 0; i < plane; ++i)
        out[i] = static_cast<float>(gam * istd / M * (M * g[i] - sum_g - xh[i] * sum_gx));
    }
  }
  return gx;
}

// ----------------------------------------------------------------- ReLU

Tensor ReLU::forward(const Tensor& x) {
  Tensor y = x;
  mask_.assign(x.size(), 0);
  for (size_t i = 0; i < x.size(); ++i) {
    if (x.v[i] > 0.0f)
      mask_[i] = 1;
    else
      y.v[i] = 0.0f;
  }
  return y;
}

Tensor ReLU::backward(const Tensor& gy) {
  Tensor gx = gy;
  for (size_t i = 0; i < gx.size(); ++i)
    if (!mask_[i]) gx.v[i] = 0.0f;
  return gx;
}

// -------------------------------------------------------------- ConvBlock

ConvBlock::ConvBlock(const std::string& name, int cin, int cout, Rng& rng)
    : c1(name + ".c1", cin, cout, 3, 1, false, rng),
      c2(name + ".c2", cout, cout, 3, 1, false, rng),
      b1(name + ".b1", cout),
      b2(name + ".b2", cout) {}

Tensor ConvBlock::forward(const Tensor& x, bool train) {
  return r2.forward(b2.forward(c2.forward(r1.forward(b1.forward(c1.forward(x), train))), train));
}

Tensor ConvBlock::backward(const Tensor& gy) {
  return c1.backward(b1.backward(r1.backward(c2.backward(b2.backward(r2.backward(gy))))));
}

void ConvBlock::collect(std::vector<Param*>& out) {
  c1.collect(out);
  b1.collect(out);
  c2.collect(out);
  b2.collect(out);
}

// --------------------------------------------------------------- MaxPool2

Tensor MaxPool2::forward(const Tensor& x) {
  in_n_ = x.n;
  in_c_ = x.c;
  in_h_ = x.h;
  in_w_ = x.w;
  const int oh = x.h / 2, ow = x.w / 2;
  Tensor y(x.n, x.c, oh, ow);
  argmax_.assign(y.size(), 0);
  for (int in = 0; in < x.n; ++in)
    for (int c = 0; c < x.c; ++c)
      for (int yy = 0; yy < oh; ++yy)
        for (int xx = 0; xx < ow; ++xx) {
          float best = -std::numeric_limits<float>::infinity();
          uint32_t bi = 0;
          for (int dy = 0; dy < 2; ++dy)
            for (int dx = 0; dx < 2; ++dx) {
              const size_t i = x.idx(in, c, 2 * yy + dy, 2 * xx + dx);
              if (x.v[i] > best) {
                best = x.v[i];
                bi = static_cast<uint32_t>(i);
              }
            }
          const size_t o = y.idx(in, c, yy, xx);
          y.v[o] = best;
          argmax_[o] = bi;
        }
  return y;
}

Tensor MaxPool2::backward(const Tensor& gy) {
  Tensor gx(in_n_, in_c_, in_h_, in_w_);
  for (size_t o = 0; o < gy.size(); ++o) gx.v[argmax_[o]] += gy.v[o];
  return gx;
}

// ------------------------------------------------------------ UpBilinear2

Tensor UpBilinear2::forward(const Tensor& x) {
  in_n_ = x.n;
  in_c_ = x.c;
  in_h_ = x.h;
  in_w_ = x.w;
  const int oh = x.h * 2, ow = x.w * 2;
  Tensor y(x.n, x.c, oh, ow);
#pragma omp parallel for schedule(static)
  for (int oy = 0; oy < oh; ++oy) {
    const double sy = std::clamp((oy + 0.5) / 2.0 - 0.5, 0.0, double(x.h - 1));
    const int y0 = static_cast<int>(sy);
    const int y1 = std::min(y0 + 1, x.h - 1);
    const float fy = static_cast<float>(sy - y0);
    for (int ox = 0; ox < ow; ++ox) {
      const double sx = std::clamp((ox + 0.5) / 2.0 - 0.5, 0.0, double(x.w - 1));
      const int x0 = static_cast<int>(sx);
      const int x1 = std::min(x0 + 1, x.w - 1);
      const float fx = static_cast<float>(sx - x0);
      for (int in = 0; in < x.n; ++in)
        for (int c = 0; c < x.c; ++c) {
          const float v = (1 - fy) * ((1 - fx) * x.at(in, c, y0, x0) + fx * x.at(in, c, y0, x1)) +
                          fy * ((1 - fx) * x.at(in, c, y1, x0) + fx * x.at(in, c, y1, x1));
          y.at(in, c, oy, ox) = v;
        }
    }
  }
  return y;
}

Tensor UpBilinear2::backward(const Tensor& gy) {
  Tensor gx(in_n_, in_c_, in_h_, in_w_);
  const int oh = gy.h, ow = gy.w;
  for (int oy = 0; oy < oh; ++oy) {
    const double sy = std::clamp((oy + 0.5) / 2.0 - 0.5, 0.0, double(in_h_ - 1));
    const int y0 = static_cast<int>(sy);
    const int y1 = std::min(y0 + 1, in_h_ - 1);
    const float fy = static_cast<float>(sy - y0);
    for (int ox = 0; ox < ow; ++ox) {
      const double sx = std::clamp((ox + 0.5) / 2.0 - 0.5, 0.0, double(in_w_ - 1));
      const int x0 = static_cast<int>(sx);
      const int x1 = std::min(x0 + 1, in_w_ - 1);
      const float fx = static_cast<float>(sx - x0);
      for (int in = 0; in < gx.n; ++in)
        for (int c = 0; c < gx.c; ++c) {
          const float g = gy.at(in, c, oy, ox);
          gx.at(in, c, y0, x0) += (1 - fy) * (1 - fx) * g;
          gx.at(in, c, y0, x1) += (1 - fy) * fx * g;
          gx.at(in, c, y1, x0) += fy * (1 - fx) * g;
          gx.at(in, c, y1, x1) += fy * fx * g;
        }
    }
  }
  return gx;
}

// ---------------------------------------------------------------- Dropout

Tensor Dropout::forward(const Tensor& x, bool train, Rng& rng) {
  active_ = train && rate_ > 0.0;
  if (!active_) return x;
  Tensor y = x;
  mask_.assign(x.size(), 0.0f);
  const float keep = static_cast<float>(1.0 - rate_);
  for (size_t i = 0; i < x.size(); ++i) {
    if (rng.uniform() >= rate_) mask_[i] = 1.0f / keep;
    y.v[i] = x.v[i] * mask_[i];
  }
  return y;
}

Tensor Dropout::backward(const Tensor& gy) {
  if (!active_) return gy;
  Tensor gx = gy;
  for (size_t i = 0; i < gx.size(); ++i) gx.v[i] *= mask_[i];
  return gx;
}

// ------------------------------------------------------------------ SimAM

Tensor SimAM::forward(const Tensor& x) {
  x_ = x;
  const size_t plane = x.plane();
  const int groups = x.n * x.c;
  s_ = Tensor(x.n, x.c, x.h, x.w);
  mean_.assign(groups, 0.0);
  var_.assign(groups, 0.0);
  for (int g = 0; g < groups; ++g) {
    const float* p = x.v.data() + g * plane;
    double s = 0, s2 = 0;
    for (size_t i = 0; i < plane; ++i) {
      s += p[i];
      s2 += double(p[i]) * p[i];
    }
    const double mu = s / plane;
    const double var = std::max(0.0, s2 / plane - mu * mu);
    mean_[g] = mu;
    var_[g] = var;
    const double a = 1.0 / (4.0 * (var + lambda_));
    float* out = s_.v.data() + g * plane;
    if (per_channel_) {
      const double z = a * (3.0 * var + 2.0 * lambda_);
      const float sv = static_cast<float>(1.0 / (1.0 + std::exp(-z)));
      for (size_t i = 0; i < plane; ++i) out[i] = sv;
    } else {
      for (size_t i = 0; i < plane; ++i) {
        const double u = p[i] - mu;
        const double z = a * (u * u + 2.0 * var + 2.0 * lambda_);
        out[i] = static_cast<float>(1.0 / (1.0 + std::exp(-z)));
      }
    }
  }
  return s_;
}

Tensor SimAM::backward(const Tensor& gS) {
  const size_t plane = x_.plane();
  const int groups = x_.n * x_.c;
  Tensor gx(x_.n, x_.c, x_.h, x_.w);
  const double M = static_cast<double>(plane);
  for (int g = 0; g < groups; ++g) {
    const float* xp = x_.v.data() + g * plane;
    const float* sp = s_.v.data() + g * plane;
    const float* gp = gS.v.data() + g * plane;
    float* out = gx.v.data() + g * plane;
    const double mu = mean_[g], var = var_[g];
    const double a = 1.0 / (4.0 * (var + lambda_));
    if (per_channel_) {
      // z = a*(3 var + 2 lambda); dz/dvar = 3a - 4a^2(3 var + 2 lambda)
      double gz = 0;
      for (size_t i = 0; i < plane; ++i) gz += double(gp[i]) * sp[i] * (1.0 - sp[i]);
      const double dz_dvar = 3.0 * a - 4.0 * a * a * (3.0 * var + 2.0 * lambda_);
      for (size_t i = 0; i < plane; ++i) {
        const double u = xp[i] - mu;
        out[i] = static_cast<float>(gz * dz_dvar * 2.0 * u / M);
      }
    } else {
      double sum_gz = 0, sum_gzu = 0, sum_gzz = 0;
      // recompute z from s is ill-conditioned; use the formula directly
      for (size_t i = 0; i < plane; ++i) {
        const double u = xp[i] - mu;
        const double z = a * (u * u + 2.0 * var + 2.0 * lambda_);
        const double gz = double(gp[i]) * sp[i] * (1.0 - sp[i]);
        sum_gz += gz;
        sum_gzu += gz * u;
        sum_gzz += gz * z;
      }
      for (size_t i = 0; i < plane; ++i) {
        const double u = xp[i] - mu;
        const double z = a * (u * u + 2.0 * var + 2.0 * lambda_);
        const double gz = double(gp[i]) * sp[i] * (1.0 - sp[i]);
        double d = 2.0 * a * u * gz - (2.0 * a / M) * sum_gzu +
                   (u / M) * (4.0 * a * sum_gz - 8.0 * a * sum_gzz);
        (void)z;
        out[i] = static_cast<float>(d);
      }
    }
  }
  return gx;
}

// ------------------------------------------------------------ EcaReweight

EcaReweight::EcaReweight(std::string name, int channels_, int gamma, int b, Rng& rng)
    : channels(channels_), k(reference::eca_kernel_size(channels_, gamma, b)) {
  weight.name = name + ".weight";
  weight.resize(1, 1, 1, k);
  init_conv_weight(weight, k, rng);
}

void EcaReweight::collect(std::vector<Param*>& out) { out.push_back(&weight); }

Tensor EcaReweight::forward(const Tensor& x) {
  x_ = x;
  const size_t plane = x.plane();
  const int half = k / 2;
  pooled_.assign(static_cast<size_t>(x.n) * x.c, 0.0f);
  s_.assign(static_cast<size_t>(x.n) * x.c, 0.0f);
  Tensor y(x.n, x.c, x.h, x.w);
  for (int in = 0; in < x.n; ++in) {
    float* p = pooled_.data() + static_cast<size_t>(in) * x.c;
    for (int c = 0; c < x.c; ++c) {
      double s = 0;
      const float* xp = x.v.data() + x.idx(in, c, 0, 0);
      for (size_t i = 0; i < plane; ++i) s += xp[i];
      p[c] = static_cast<float>(s / plane);
    }
    for (int c = 0; c < x.c; ++c) {
      double z = 0;
      for (int j = 0; j < k; ++j) {
        const int cc = c + j - half;
        if (cc >= 0 && cc < x.c) z += weight.w.v[j] * p[cc];
      }
      const float sv = static_cast<float>(1.0 / (1.0 + std::exp(-z)));
      s_[static_cast<size_t>(in) * x.c + c] = sv;
      const float* xp = x.v.data() + x.idx(in, c, 0, 0);
      float* yp = y.v.data() + y.idx(in, c, 0, 0);
      for (size_t i = 0; i < plane; ++i) yp[i] = sv * xp[i];
    }
  }
  return y;
}

Tensor EcaReweight::backward(const Tensor& gy) {
  const size_t plane = x_.plane();
  const int half = k / 2;
  Tensor gx(x_.n, x_.c, x_.h, x_.w);
  std::vector<double> gz(x_.c), gp(x_.c);
  for (int in = 0; in < x_.n; ++in) {
    const float* p = pooled_.data() + static_cast<size_t>(in) * x_.c;
    const float* s = s_.data() + static_cast<size_t>(in) * x_.c;
    for (int c = 0; c < x_.c; ++c) {
      const float* g = gy.v.data() + gy.idx(in, c, 0, 0);
      const float* xp = x_.v.data() + x_.idx(in, c, 0, 0);
      float* out = gx.v.data() + gx.idx(in, c, 0, 0);
      double gs = 0;
      for (size_t i = 0; i < plane; ++i) {
        gs += double(g[i]) * xp[i];
        out[i] = s[c] * g[i];
      }
      gz[c] = gs * s[c] * (1.0 - s[c]);
    }
    std::fill(gp.begin(), gp.end(), 0.0);
    for (int c = 0; c < x_.c; ++c)
      for (int j = 0; j < k; ++j) {
        const int cc = c + j - half;
        if (cc >= 0 && cc < x_.c) {
          weight.g.v[j] += static_cast<float>(gz[c] * p[cc]);
          gp[cc] += weight.w.v[j] * gz[c];
        }
      }
    for (int c = 0; c < x_.c; ++c) {
      const float add = static_cast<float>(gp[c] / plane);
      float* out = gx.v.data() + gx.idx(in, c, 0, 0);
      for (size_t i = 0; i < plane; ++i) out[i] += add;
    }
  }
  return gx;
}

// --------------------------------------------------------- SpatialAttention

SpatialAttention::SpatialAttention(std::string name, int kernel, Rng& rng) : k(kernel) {
  weight.name = name + ".weight";
  weight.resize(1, 2, k, k);
  init_conv_weight(weight, 2 * k * k, rng);
  bias.name = name + ".bias";
  bias.resize(1, 1, 1, 1);
}

void SpatialAttention::collect(std::vector<Param*>& out) {
  out.push_back(&weight);
  out.push_back(&bias);
}

Tensor SpatialAttention::forward(const Tensor& x) {
  x_ = x;
  const size_t plane = x.plane();
  const int half = k / 2;
  mx_.assign(static_cast<size_t>(x.n) * plane, 0.0f);
  mn_.assign(static_cast<size_t>(x.n) * plane, 0.0f);
  argc_.assign(static_cast<size_t>(x.n) * plane, 0);
  z_.assign(static_cast<size_t>(x.n) * plane, 0.0f);
  e_ = Tensor(x.n, 1, x.h, x.w);
  for (int in = 0; in < x.n; ++in) {
    float* mx = mx_.data() + static_cast<size_t>(in) * plane;
    float* mn = mn_.data() + static_cast<size_t>(in) * plane;
    uint32_t* am = argc_.data() + static_cast<size_t>(in) * plane;
    for (size_t i = 0; i < plane; ++i) {
      float best = x.v[x.idx(in, 0, 0, 0) + i];
      uint32_t bc = 0;
      double sum = best;
      for (int c = 1; c < x.c; ++c) {
        const float v = x.v[x.idx(in, c, 0, 0) + i];
        sum += v;
        if (v > best) {
          best = v;
          bc = static_cast<uint32_t>(c);
        }
      }
      mx[i] = best;
      mn[i] = static_cast<float>(sum / x.c);
      am[i] = bc;
    }
    for (int y = 0; y < x.h; ++y)
      for (int xx = 0; xx < x.w; ++xx) {
        double z = bias.w.v[0];
        for (int ky = 0; ky < k; ++ky)
          for (int kx = 0; kx < k; ++kx) {
            const int yy = y + ky - half, xc = xx + kx - half;
            if (yy < 0 || xc < 0 || yy >= x.h || xc >= x.w) continue;
            const size_t pp = static_cast<size_t>(yy) * x.w + xc;
            z += weight.w.v[(0 * k + ky) * k + kx] * mx[pp];
            z += weight.w.v[((1 * k) + ky) * k + kx] * mn[pp];
          }
        const size_t o = static_cast<size_t>(y) * x.w + xx;
        z_[static_cast<size_t>(in) * plane + o] = static_cast<float>(z);
        e_.v[e_.idx(in, 0, y, xx)] = static_cast<float>(1.0 / (1.0 + std::exp(-z)));
      }
  }
  return e_;
}

Tensor SpatialAttention::backward(const Tensor& gE) {
  const size_t plane = x_.plane();
  const int half = k / 2;
  Tensor gx(x_.n, x_.c, x_.h, x_.w);
  std::vector<float> gmx(plane), gmn(plane);
  for (int in = 0; in < x_.n; ++in) {
    const float* mx = mx_.data() + static_cast<size_t>(in) * plane;
    const float* mn = mn_.data() + static_cast<size_t>(in) * plane;
    const uint32_t* am = argc_.data() + static_cast<size_t>(in) * plane;
    std::fill(gmx.begin(), gmx.end(), 0.0f);
    std::fill(gmn.begin(), gmn.end(), 0.0f);
    for (int y = 0; y < x_.h; ++y)
      for (int xx = 0; xx < x_.w; ++xx) {
        const size_t o = static_cast<size_t>(y) * x_.w + xx;
        const float e = e_.v[e_.idx(in, 0, y, xx)];
        const float gz = gE.v[gE.idx(in, 0, y, xx)] * e * (1.0f - e);
        if (gz == 0.0f) continue;
        bias.g.v[0] += gz;
        for (int ky = 0; ky < k; ++ky)
          for (int kx = 0; kx < k; ++kx) {
            const int yy = y + ky - half, xc = xx + kx - half;
            if (yy < 0 || xc < 0 || yy >= x_.h || xc >= x_.w) continue;
            const size_t pp = static_cast<size_t>(yy) * x_.w + xc;
            weight.g.v[(0 * k + ky) * k + kx] += gz * mx[pp];
            weight.g.v[((1 * k) + ky) * k + kx] += gz * mn[pp];
            gmx[pp] += weight.w.v[(0 * k + ky) * k + kx] * gz;
            gmn[pp] += weight.w.v[((1 * k) + ky) * k + kx] * gz;
          }
      }
    for (size_t i = 0; i < plane; ++i) {
      gx.v[gx.idx(in, static_cast<int>(am[i]), 0, 0) + i] += gmx[i];
      const float spread = gmn[i] / x_.c;
      for (int c = 0; c < x_.c; ++c) gx.v[gx.idx(in, c, 0, 0) + i] += spread;
    }
  }
  return gx;
}

// ---------------------------------------------------------------- mixture

Tensor mix_lerp(const Tensor& t1w, const Tensor& fa, const Tensor& s) {
  if (!t1w.same_shape(fa)) throw std::runtime_error("mix_lerp: modality shape mismatch");
  const bool broadcast = s.c == 1 && t1w.c != 1;
  Tensor y(t1w.n, t1w.c, t1w.h, t1w.w);
  const size_t plane = t1w.plane();
  for (int in = 0; in < t1w.n; ++in)
    for (int c = 0; c < t1w.c; ++c) {
      const float* a = t1w.v.data() + t1w.idx(in, c, 0, 0);
      const float* b = fa.v.data() + fa.idx(in, c, 0, 0);
      const float* coeff = s.v.data() + s.idx(in, broadcast ? 0 : c, 0, 0);
      float* out = y.v.data() + y.idx(in, c, 0, 0);
      for (size_t i = 0; i < plane; ++i) out[i] = b[i] + coeff[i] * (a[i] - b[i]);
    }
  return y;
}

void mix_lerp_backward(const Tensor& t1w, const Tensor& fa, const Tensor& s, const Tensor& gy,
                       Tensor& g_t1w, Tensor& g_fa, Tensor& g_s) {
  const bool broadcast = s.c == 1 && t1w.c != 1;
  g_t1w = Tensor(t1w.n, t1w.c, t1w.h, t1w.w);
  g_fa = Tensor(t1w.n, t1w.c, t1w.h, t1w.w);
  g_s = Tensor(s.n, s.c, s.h, s.w);
  const size_t plane = t1w.plane();
  for (int in = 0; in < t1w.n; ++in)
    for (int c = 0; c < t1w.c; ++c) {
      const float* a = t1w.v.data() + t1w.idx(in, c, 0, 0);
      const float* b = fa.v.data() + fa.idx(in, c, 0, 0);
      const float* coeff = s.v.data() + s.idx(in, broadcast ? 0 : c, 0, 0);
      const float* g = gy.v.data() + gy.idx(in, c, 0, 0);
      float* ga = g_t1w.v.data() + g_t1w.idx(in, c, 0, 0);
      float* gb = g_fa.v.data() + g_fa.idx(in, c, 0, 0);
      float* gs = g_s.v.data() + g_s.idx(in, broadcast ? 0 : c, 0, 0);
      for (size_t i = 0; i < plane; ++i) {
        ga[i] += coeff[i] * g[i];
        gb[i] += (1.0f - coeff[i]) * g[i];
        gs[i] += g[i] * (a[i] - b[i]);
      }
    }
}

// ---------------------------------------------------------- CrossAttention

CrossAttention::CrossAttention(std::string name, int channels_, Rng& rng) : channels(channels_) {
  auto init_dir = [&](Direction& d, const std::string& suffix) {
    d.wq.name = name + ".wq" + suffix;
    d.wk.name = name + ".wk" + suffix;
    d.wv.name = name + ".wv" + suffix;
    d.wq.resize(1, 1, channels, channels);
    d.wk.resize(1, 1, channels, channels);
    d.wv.resize(1, 1, channels, channels);
    init_conv_weight(d.wq, channels, rng);
    init_conv_weight(d.wk, channels, rng);
    init_conv_weight(d.wv, channels, rng);
  };
  init_dir(d_ab_, ".ab");
  init_dir(d_ba_, ".ba");
}

void CrossAttention::collect(std::vector<Param*>& out) {
  for (Direction* d : {&d_ab_, &d_ba_}) {
    out.push_back(&d->wq);
    out.push_back(&d->wk);
    out.push_back(&d->wv);
  }
}

void CrossAttention::dir_forward(Direction& d, const Tensor& xq, const Tensor& xkv, Tensor& y) {
  const int C = channels;
  const int P = xq.h * xq.w;
  const size_t mat = static_cast<size_t>(C) * P;
  d.q.resize(static_cast<size_t>(xq.n) * mat);
  d.kk.resize(static_cast<size_t>(xq.n) * mat);
  d.vv.resize(static_cast<size_t>(xq.n) * mat);
  d.a.assign(xq.n, std::vector<float>(static_cast<size_t>(P) * P));
  y = xq;
  const float scale = 1.0f / std::sqrt(static_cast<float>(C));
  std::vector<float> scores(static_cast<size_t>(P) * P);
  for (int in = 0; in < xq.n; ++in) {
    const float* xa = xq.v.data() + xq.idx(in, 0, 0, 0);
    const float* xb = xkv.v.data() + xkv.idx(in, 0, 0, 0);
    float* Q = d.q.data() + in * mat;
    float* K = d.kk.data() + in * mat;
    float* V = d.vv.data() + in * mat;
    gemm(false, false, C, P, C, 1.0f, d.wq.w.v.data(), C, xa, P, 0.0f, Q, P);
    gemm(false, false, C, P, C, 1.0f, d.wk.w.v.data(), C, xb, P, 0.0f, K, P);
    gemm(false, false, C, P, C, 1.0f, d.wv.w.v.data(), C, xb, P, 0.0f, V, P);
    // scores = Q^T K * scale, rows indexed by query position
    gemm(true, false, P, P, C, scale, Q, P, K, P, 0.0f, scores.data(), P);
    float* A = d.a[in].data();
    for (int i = 0; i < P; ++i) {
      float* row = scores.data() + static_cast<size_t>(i) * P;
      float mx = row[0];
      for (int j = 1; j < P; ++j) mx = std::max(mx, row[j]);
      double sum = 0;
      for (int j = 0; j < P; ++j) {
        row[j] = std::exp(row[j] - mx);
        sum += row[j];
      }
      const float inv = static_cast<float>(1.0 / sum);
      for (int j = 0; j < P; ++j) A[static_cast<size_t>(i) * P + j] = row[j] * inv;
    }
    // out[c,i] = sum_j V[c,j] A[i,j]; residual add onto y
    float* out = y.v.data() + y.idx(in, 0, 0, 0);
    std::vector<float> o(mat);
    gemm(false, true, C, P, P, 1.0f, V, P, A, P, 0.0f, o.data(), P);
    for (size_t i = 0; i < mat; ++i) out[i] += o[i];
  }
}

void CrossAttention::dir_backward(Direction& d, const Tensor& xq, const Tensor& xkv,
                                  const Tensor& gy, Tensor& gxq, Tensor& gxkv) {
  const int C = channels;
  const int P = xq.h * xq.w;
  const size_t mat = static_cast<size_t>(C) * P;
  const float scale = 1.0f / std::sqrt(static_cast<float>(C));
  std::vector<float> gA(static_cast<size_t>(P) * P), gS(static_cast<size_t>(P) * P);
  std::vector<float> gQ(mat), gK(mat), gV(mat), tmp(mat);
  for (int in = 0; in < xq.n; ++in) {
    const float* xa = xq.v.data() + xq.idx(in, 0, 0, 0);
    const float* xb = xkv.v.data() + xkv.idx(in, 0, 0, 0);
    const float* Q = d.q.data() + in * mat;
    const float* K = d.kk.data() + in * mat;
    const float* V = d.vv.data() + in * mat;
    const float* A = d.a[in].data();
    const float* g = gy.v.data() + gy.idx(in, 0, 0, 0);
    // residual path
    float* gq_out = gxq.v.data() + gxq.idx(in, 0, 0, 0);
    for (size_t i = 0; i < mat; ++i) gq_out[i] += g[i];
    // gV = g * A   (C,P) = (C,P)(P,P)
    gemm(false, false, C, P, P, 1.0f, g, P, A, P, 0.0f, gV.data(), P);
    // gA = g^T V   (P,P)
    gemm(true, false, P, P, C, 1.0f, g, P, V, P, 0.0f, gA.data(), P);
    // softmax backward per row
    for (int i = 0; i < P; ++i) {
      const float* arow = A + static_cast<size_t>(i) * P;
      const float* garow = gA.data() + static_cast<size_t>(i) * P;
      double dot = 0;
      for (int j = 0; j < P; ++j) dot += double(arow[j]) * garow[j];
      float* out = gS.data() + static_cast<size_t>(i) * P;
      for (int j = 0; j < P; ++j) out[j] = arow[j] * static_cast<float>(garow[j] - dot);
    }
    // gQ = K gS^T * scale ; gK = Q gS * scale
    gemm(false, true, C, P, P, scale, K, P, gS.data(), P, 0.0f, gQ.data(), P);
    gemm(false, false, C, P, P, scale, Q, P, gS.data(), P, 0.0f, gK.data(), P);
    // parameter grads and input grads through the projections
    gemm(false, true, C, C, P, 1.0f, gQ.data(), P, xa, P, 1.0f, d.wq.g.v.data(), C);
    gemm(false, true, C, C, P, 1.0f, gK.data(), P, xb, P, 1.0f, d.wk.g.v.data(), C);
    gemm(false, true, C, C, P, 1.0f, gV.data(), P, xb, P, 1.0f, d.wv.g.v.data(), C);
    gemm(true, false, C, P, C, 1.0f, d.wq.w.v.data(), C, gQ.data(), P, 0.0f, tmp.data(), P);
    for (size_t i = 0; i < mat; ++i) gq_out[i] += tmp[i];
    float* gkv_out = gxkv.v.data() + gxkv.idx(in, 0, 0, 0);
    gemm(true, false, C, P, C, 1.0f, d.wk.w.v.data(), C, gK.data(), P, 0.0f, tmp.data(), P);
    for (size_t i = 0; i < mat; ++i) gkv_out[i] += tmp[i];
    gemm(true, false, C, P, C, 1.0f, d.wv.w.v.data(), C, gV.data(), P, 0.0f, tmp.data(), P);
    for (size_t i = 0; i < mat; ++i) gkv_out[i] += tmp[i];
  }
}

void CrossAttention::forward(const Tensor& xa, const Tensor& xb, Tensor& ya, Tensor& yb) {
  if (!xa.same_shape(xb)) throw std::runtime_error("CrossAttention: shape mismatch");
  xa_ = xa;
  xb_ = xb;
  dir_forward(d_ab_, xa, xb, ya);
  dir_forward(d_ba_, xb, xa, yb);
  attn_.assign(2, {});
  attn_[0] = d_ab_.a;
  attn_[1] = d_ba_.a;
}

void CrossAttention::backward(const Tensor& gya, const Tensor& gyb, Tensor& gxa, Tensor& gxb) {
  gxa = Tensor(xa_.n, xa_.c, xa_.h, xa_.w);
  gxb = Tensor(xb_.n, xb_.c, xb_.h, xb_.w);
  dir_backward(d_ab_, xa_, xb_, gya, gxa, gxb);
  dir_backward(d_ba_, xb_, xa_, gyb, gxb, gxa);
}

// ------------------------------------------------------------------ misc

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  if (a.n != b.n || a.h != b.h || a.w != b.w) throw std::runtime_error("concat: shape mismatch");
  Tensor y(a.n, a.c + b.c, a.h, a.w);
  const size_t pa = a.plane();
  for (int in = 0; in < a.n; ++in) {
    std::memcpy(y.v.data() + y.idx(in, 0, 0, 0), a.v.data() + a.idx(in, 0, 0, 0),
                sizeof(float) * a.c * pa);
    std::memcpy(y.v.data() + y.idx(in, a.c, 0, 0), b.v.data() + b.idx(in, 0, 0, 0),
                sizeof(float) * b.c * pa);
  }
  return y;
}

void split_channels(const Tensor& g, int ca, Tensor& ga, Tensor& gb) {
  ga = Tensor(g.n, ca, g.h, g.w);
  gb = Tensor(g.n, g.c - ca, g.h, g.w);
  const size_t plane = g.plane();
  for (int in = 0; in < g.n; ++in) {
    std::memcpy(ga.v.data() + ga.idx(in, 0, 0, 0), g.v.data() + g.idx(in, 0, 0, 0),
                sizeof(float) * ca * plane);
    std::memcpy(gb.v.data() + gb.idx(in, 0, 0, 0), g.v.data() + g.idx(in, ca, 0, 0),
                sizeof(float) * (g.c - ca) * plane);
  }
}

Tensor sigmoid_map(const Tensor& x) {
  Tensor y = x;
  for (auto& v : y.v) v = 1.0f / (1.0f + std::exp(-v));
  return y;
}

Tensor sigmoid_backward_from_p(const Tensor& p, const Tensor& gp) {
  Tensor gz = gp;
  for (size_t i = 0; i < gz.size(); ++i) gz.v[i] *= p.v[i] * (1.0f - p.v[i]);
  return gz;
}

}  // namespace dcl::nn
