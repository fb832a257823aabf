#pragma once

#include <algorithm>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace dcl::nn {

// Dense NCHW float tensor.
struct Tensor {
  int n = 0, c = 0, h = 0, w = 0;
  std::vector<float> v;

  Tensor() = default;
  Tensor(int n_, int c_, int h_, int w_, float fill = 0.0f)
      : n(n_), c(c_), h(h_), w(w_), v(static_cast<size_t>(n_) * c_ * h_ * w_, fill) {}

  size_t size() const { return v.size(); }
  size_t plane() const { return static_cast<size_t>(h) * w; }

  size_t idx(int in, int ic, int iy, int ix) const {
    return ((static_cast<size_t>(in) * c + ic) * h + iy) * w + ix;
  }
  float at(int in, int ic, int iy, int ix) const { return v[idx(in, ic, iy, ix)]; }
  float& at(int in, int ic, int iy, int ix) { return v[idx(in, ic, iy, ix)]; }

  bool same_shape(const Tensor& o) const { return n == o.n && c == o.c && h == o.h && w == o.w; }

  void require_shape(int n_, int c_, int h_, int w_, const char* who) const {
    if (n != n_ || c != c_ || h != h_ || w != w_)
      throw std::runtime_error(std::string(who) + ": unexpected tensor shape");
  }

  void zero() { std::fill(v.begin(), v.end(), 0.0f); }
};

}  // namespace dcl::nn
