// Timing comparison: serial reference kernels vs the im2col+GEMM fast path.
#include <chrono>
#include <cstdio>
#include <vector>

#include "dcl/nn/kernels.hpp"
#include "dcl/nn/reference.hpp"
#include "dcl/rng.hpp"

using Clock = std::chrono::steady_clock;

static double ms_since(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

int main() {
  dcl::Rng rng(7);
  struct Case {
    int cin, cout, h, w, k;
  };
  const Case cases[] = {{4, 8, 80, 64, 3}, {16, 32, 40, 32, 3}, {64, 64, 10, 8, 3},
                        {32, 64, 20, 16, 3}};
  std::printf("%-24s %12s %12s %9s %12s\n", "case", "reference ms", "fast ms", "speedup",
              "max |diff|");
  for (const auto& c : cases) {
    const int pad = c.k / 2;
    std::vector<float> x(static_cast<size_t>(c.cin) * c.h * c.w);
    std::vector<float> wgt(static_cast<size_t>(c.cout) * c.cin * c.k * c.k);
    std::vector<float> bias(c.cout);
    for (auto& v : x) v = static_cast<float>(rng.uniform(-1, 1));
    for (auto& v : wgt) v = static_cast<float>(rng.uniform(-0.2, 0.2));
    for (auto& v : bias) v = static_cast<float>(rng.uniform(-0.1, 0.1));

    const int reps = 20;
    auto t0 = Clock::now();
    std::vector<float> ref;
    for (int r = 0; r < reps; ++r)
      ref = dcl::nn::reference::conv2d(x, c.cin, c.h, c.w, wgt, bias, c.cout, c.k, c.k, pad);
    const double ref_ms = ms_since(t0) / reps;

    dcl::nn::Tensor xt(1, c.cin, c.h, c.w);
    xt.v = x;
    dcl::nn::Tensor wt(c.cout, c.cin, c.k, c.k);
    wt.v = wgt;
    t0 = Clock::now();
    dcl::nn::Tensor fast;
    for (int r = 0; r < reps; ++r) fast = dcl::nn::conv2d_fast(xt, wt, bias.data(), c.k, pad);
    const double fast_ms = ms_since(t0) / reps;

    float diff = 0;
    for (size_t i = 0; i < ref.size(); ++i)
      diff = std::max(diff, std::abs(ref[i] - fast.v[i]));

    char name[64];
    std::snprintf(name, sizeof name, "%dx%d %dx%d k%d", c.cin, c.cout, c.h, c.w, c.k);
    std::printf("%-24s %12.3f %12.3f %8.1fx %12.3e\n", name, ref_ms, fast_ms, ref_ms / fast_ms,
                diff);
  }
  return 0;
}
