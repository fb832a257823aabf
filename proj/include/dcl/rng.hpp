#pragma once

#include <cmath>
#include <cstdint>

namespace dcl {

// Counter-based generator built on splitmix64 output mixing.
// Same (seed, stream) always yields the same value sequence on every
// platform, and substreams derived from distinct keys are independent,
// so per-subject / per-channel generation can run in any order.
class Rng {
 public:
  explicit Rng(uint64_t seed, uint64_t stream = 0)
      : key_(mix(mix(seed + 0x9e3779b97f4a7c15ULL) ^ mix(stream + 0x94d049bb133111ebULL))),
        counter_(0) {}

  Rng substream(uint64_t stream) const {
    Rng r(0);
    r.key_ = mix(key_ ^ mix(stream + 0xbf58476d1ce4e5b9ULL));
    r.counter_ = 0;
    return r;
  }

  uint64_t next_u64() { return mix(key_ + 0x9e3779b97f4a7c15ULL * ++counter_); }

  // uniform in [0, 1)
  double uniform() { return (next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // uniform integer in [0, n)
  uint64_t uniform_int(uint64_t n) { return next_u64() % n; }

  int uniform_range(int lo, int hi) {  // inclusive
    return lo + static_cast<int>(uniform_int(static_cast<uint64_t>(hi - lo + 1)));
  }

  bool bernoulli(double p) { return uniform() < p; }

  // Box-Muller; one value per call, deterministic counter usage.
  double normal(double mu = 0.0, double sd = 1.0) {
    double u1 = uniform();
    double u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    const double z = std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
    return mu + sd * z;
  }

 private:
  static uint64_t mix(uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  uint64_t key_;
  uint64_t counter_;
};

}  // namespace dcl
