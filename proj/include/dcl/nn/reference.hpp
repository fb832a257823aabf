#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

namespace dcl::nn::reference {

// Serial single-item kernels, templated on the scalar type. These are the
// slow, obviously-correct implementations the fast float paths are tested
// against; double instantiations also back the exact-arithmetic checks.

template <class T>
T sigmoid(T x) {
  return T(1) / (T(1) + std::exp(-x));
}

// y = fa + s * (t1w - fa). Coefficient map may be per-position-per-channel
// (s.size() == x.size()) or a single spatial map broadcast over channels.
template <class T>
std::vector<T> mix_lerp(const std::vector<T>& t1w, const std::vector<T>& fa,
                        const std::vector<T>& s, int channels) {
  std::vector<T> out(t1w.size());
  const size_t plane = t1w.size() / channels;
  const bool broadcast = s.size() == plane;
  for (int c = 0; c < channels; ++c)
    for (size_t i = 0; i < plane; ++i) {
      const size_t j = c * plane + i;
      const T coeff = broadcast ? s[i] : s[j];
      out[j] = fa[j] + coeff * (t1w[j] - fa[j]);
    }
  return out;
}

// Per-position attention coefficients from the channel-wise energy function:
// S = sigmoid(((t-mu)^2 + 2 var + 2 lambda) / (4 (var + lambda))).
template <class T>
std::vector<T> simam(const std::vector<T>& x, int channels, T lambda) {
  std::vector<T> out(x.size());
  const size_t plane = x.size() / channels;
  for (int c = 0; c < channels; ++c) {
    const T* xc = x.data() + c * plane;
    T mean = 0;
    for (size_t i = 0; i < plane; ++i) mean += xc[i];
    mean /= T(plane);
    T var = 0;
    for (size_t i = 0; i < plane; ++i) var += (xc[i] - mean) * (xc[i] - mean);
    var /= T(plane);
    const T a = T(1) / (T(4) * (var + lambda));
    for (size_t i = 0; i < plane; ++i) {
      const T u = xc[i] - mean;
      out[c * plane + i] = sigmoid(a * (u * u + T(2) * var + T(2) * lambda));
    }
  }
  return out;
}

// Adaptive 1-D kernel size: largest odd integer <= |log2(C)/gamma + b/gamma|,
// floored at 1.
inline int eca_kernel_size(int channels, int gamma = 2, int b = 1) {
  const double t = std::abs(std::log2(static_cast<double>(channels)) / gamma +
                            static_cast<double>(b) / gamma);
  int k = static_cast<int>(std::floor(t));
  if (k % 2 == 0) --k;
  return std::max(1, k);
}

// ECA: global average pool, 1-D convolution across channels, sigmoid;
// returns features reweighted by the per-channel coefficients.
template <class T>
std::vector<T> eca_reweight(const std::vector<T>& x, int channels, const std::vector<T>& w1d) {
  const size_t plane = x.size() / channels;
  std::vector<T> pooled(channels, T(0));
  for (int c = 0; c < channels; ++c) {
    for (size_t i = 0; i < plane; ++i) pooled[c] += x[c * plane + i];
    pooled[c] /= T(plane);
  }
  const int k = static_cast<int>(w1d.size());
  const int half = k / 2;
  std::vector<T> out(x.size());
  for (int c = 0; c < channels; ++c) {
    T z = 0;
    for (int j = 0; j < k; ++j) {
      const int cc = c + j - half;
      if (cc >= 0 && cc < channels) z += w1d[j] * pooled[cc];
    }
    const T s = sigmoid(z);
    for (size_t i = 0; i < plane; ++i) out[c * plane + i] = s * x[c * plane + i];
  }
  return out;
}

// Spatial attention: channel max & mean maps, k x k conv (2 -> 1), sigmoid.
template <class T>
std::vector<T> spatial_attention(const std::vector<T>& x, int channels, int h, int w,
                                 const std::vector<T>& conv_w, T bias) {
  const size_t plane = static_cast<size_t>(h) * w;
  std::vector<T> mx(plane), mn(plane, T(0));
  for (size_t i = 0; i < plane; ++i) {
    T best = x[i];
    for (int c = 1; c < channels; ++c) best = std::max(best, x[c * plane + i]);
    mx[i] = best;
  }
  for (int c = 0; c < channels; ++c)
    for (size_t i = 0; i < plane; ++i) mn[i] += x[c * plane + i];
  for (size_t i = 0; i < plane; ++i) mn[i] /= T(channels);

  const int k = static_cast<int>(std::sqrt(static_cast<double>(conv_w.size() / 2)) + 0.5);
  const int half = k / 2;
  std::vector<T> out(plane);
  for (int y = 0; y < h; ++y)
    for (int xx = 0; xx < w; ++xx) {
      T z = bias;
      for (int ky = 0; ky < k; ++ky)
        for (int kx = 0; kx < k; ++kx) {
          const int yy = y + ky - half, xc = xx + kx - half;
          if (yy < 0 || xc < 0 || yy >= h || xc >= w) continue;
          const size_t p = static_cast<size_t>(yy) * w + xc;
          z += conv_w[ky * k + kx] * mx[p];
          z += conv_w[k * k + ky * k + kx] * mn[p];
        }
      out[static_cast<size_t>(y) * w + xx] = sigmoid(z);
    }
  return out;
}

// Naive 2-D convolution, zero padding, stride 1.
template <class T>
std::vector<T> conv2d(const std::vector<T>& x, int cin, int h, int w,
                      const std::vector<T>& weight, const std::vector<T>& bias,
                      int cout, int kh, int kw, int pad) {
  const size_t plane = static_cast<size_t>(h) * w;
  std::vector<T> out(static_cast<size_t>(cout) * plane);
  for (int oc = 0; oc < cout; ++oc)
    for (int y = 0; y < h; ++y)
      for (int xx = 0; xx < w; ++xx) {
        T acc = bias.empty() ? T(0) : bias[oc];
        for (int ic = 0; ic < cin; ++ic)
          for (int ky = 0; ky < kh; ++ky)
            for (int kx = 0; kx < kw; ++kx) {
              const int yy = y + ky - pad, xc = xx + kx - pad;
              if (yy < 0 || xc < 0 || yy >= h || xc >= w) continue;
              acc += weight[((static_cast<size_t>(oc) * cin + ic) * kh + ky) * kw + kx] *
                     x[ic * plane + static_cast<size_t>(yy) * w + xc];
            }
        out[oc * plane + static_cast<size_t>(y) * w + xx] = acc;
      }
  return out;
}

template <class T>
std::vector<T> maxpool2(const std::vector<T>& x, int channels, int h, int w) {
  const int oh = h / 2, ow = w / 2;
  std::vector<T> out(static_cast<size_t>(channels) * oh * ow);
  for (int c = 0; c < channels; ++c)
    for (int y = 0; y < oh; ++y)
      for (int xx = 0; xx < ow; ++xx) {
        T best = x[(static_cast<size_t>(c) * h + 2 * y) * w + 2 * xx];
        for (int dy = 0; dy < 2; ++dy)
          for (int dx = 0; dx < 2; ++dx)
            best = std::max(best, x[(static_cast<size_t>(c) * h + 2 * y + dy) * w + 2 * xx + dx]);
        out[(static_cast<size_t>(c) * oh + y) * ow + xx] = best;
      }
  return out;
}

}  // namespace dcl::nn::reference
