#include "dcl/nn/kernels.hpp"

#include <algorithm>
#include <cstring>

#include <cblas.h>

namespace dcl::nn {

void im2col(const float* x, int cin, int h, int w, int k, int pad, float* col) {
  const int plane = h * w;
#pragma omp parallel for schedule(static)
  for (int row = 0; row < cin * k * k; ++row) {
    const int ic = row / (k * k);
    const int ky = (row / k) % k;
    const int kx = row % k;
    float* dst = col + static_cast<size_t>(row) * plane;
    const float* src = x + static_cast<size_t>(ic) * plane;
    for (int y = 0; y < h; ++y) {
      const int yy = y + ky - pad;
      float* d = dst + y * w;
      if (yy < 0 || yy >= h) {
        std::memset(d, 0, sizeof(float) * w);
        continue;
      }
      const int shift = kx - pad;
      const int x_lo = std::max(0, -shift);
      const int x_hi = std::min(w, w - shift);
      if (x_lo > 0) std::memset(d, 0, sizeof(float) * x_lo);
      if (x_hi > x_lo) std::memcpy(d + x_lo, src + yy * w + x_lo + shift, sizeof(float) * (x_hi - x_lo));
      if (x_hi < w) std::memset(d + x_hi, 0, sizeof(float) * (w - x_hi));
    }
  }
}

void col2im_acc(const float* col, int cin, int h, int w, int k, int pad, float* x) {
  const int plane = h * w;
  // serial: overlapping writes; accumulation order is fixed
  for (int row = 0; row < cin * k * k; ++row) {
    const int ic = row / (k * k);
    const int ky = (row / k) % k;
    const int kx = row % k;
    const float* src = col + static_cast<size_t>(row) * plane;
    float* dst = x + static_cast<size_t>(ic) * plane;
    for (int y = 0; y < h; ++y) {
      const int yy = y + ky - pad;
      if (yy < 0 || yy >= h) continue;
      const int shift = kx - pad;
      const int x_lo = std::max(0, -shift);
      const int x_hi = std::min(w, w - shift);
      for (int xx = x_lo; xx < x_hi; ++xx) dst[yy * w + xx + shift] += src[y * w + xx];
    }
  }
}

void gemm(bool trans_a, bool trans_b, int m, int n, int k, float alpha, const float* a, int lda,
          const float* b, int ldb, float beta, float* c, int ldc) {
  cblas_sgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans, trans_b ? CblasTrans : CblasNoTrans,
              m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}

Tensor conv2d_fast(const Tensor& x, const Tensor& weight, const float* bias, int k, int pad) {
  const int cout = weight.n, cin = weight.c;
  Tensor y(x.n, cout, x.h, x.w);
  const int plane = x.h * x.w;
  const int rows = cin * k * k;
  std::vector<float> col(static_cast<size_t>(rows) * plane);
  for (int in = 0; in < x.n; ++in) {
    im2col(x.v.data() + x.idx(in, 0, 0, 0), cin, x.h, x.w, k, pad, col.data());
    gemm(false, false, cout, plane, rows, 1.0f, weight.v.data(), rows, col.data(), plane, 0.0f,
         y.v.data() + y.idx(in, 0, 0, 0), plane);
    if (bias) {
      float* out = y.v.data() + y.idx(in, 0, 0, 0);
      for (int oc = 0; oc < cout; ++oc)
        for (int p = 0; p < plane; ++p) out[static_cast<size_t>(oc) * plane + p] += bias[oc];
    }
  }
  return y;
}

}  // namespace dcl::nn
