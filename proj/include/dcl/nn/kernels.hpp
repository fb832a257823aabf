#pragma once

#include "dcl/nn/tensor.hpp"

namespace dcl::nn {

// col has shape (cin*k*k, h*w), row-major. Zero padding, stride 1.
void im2col(const float* x, int cin, int h, int w, int k, int pad, float* col);
void col2im_acc(const float* col, int cin, int h, int w, int k, int pad, float* x);

// Row-major C = alpha * op(A) * op(B) + beta * C.
void gemm(bool trans_a, bool trans_b, int m, int n, int k, float alpha, const float* a, int lda,
          const float* b, int ldb, float beta, float* c, int ldc);

// Batched conv (stride 1, zero pad k/2) built on im2col + GEMM, elementwise
// work parallelized with OpenMP. Tested against reference::conv2d.
Tensor conv2d_fast(const Tensor& x, const Tensor& weight, const float* bias, int k, int pad);

}  // namespace dcl::nn
