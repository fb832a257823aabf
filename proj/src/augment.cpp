#include <cmath>

#include "dcl/train/trainer.hpp"

namespace dcl::train {

namespace {

void hflip(std::vector<float>& plane, int nx, int ny) {
  for (int y = 0; y < ny; ++y) {
    float* row = plane.data() + static_cast<size_t>(y) * nx;
    for (int x = 0; x < nx / 2; ++x) std::swap(row[x], row[nx - 1 - x]);
  }
}

// Brightness/contrast/gamma on z-scored data; the gamma acts on magnitude
// and preserves sign so negatives stay meaningful.
void jitter(std::vector<float>& plane, const AugmentConfig& cfg, Rng& rng) {
  if (cfg.brightness > 0) {
    const float b = static_cast<float>(cfg.brightness * rng.uniform(-1.0, 1.0));
    for (float& v : plane) v += b;
  }
  if (cfg.contrast > 0) {
    const float s = static_cast<float>(1.0 + cfg.contrast * rng.uniform(-1.0, 1.0));
    for (float& v : plane) v *= s;
  }
  if (cfg.hue > 0) {
    const float g = static_cast<float>(1.0 + cfg.hue * rng.uniform(-1.0, 1.0));
    for (float& v : plane) {
      const float m = std::pow(std::fabs(v), g);
      v = v < 0 ? -m : m;
    }
  }
}

}  // namespace

void augment_slice(SliceGroup& g, const AugmentConfig& cfg, Rng& rng) {
  if (cfg.hflip_p > 0 && rng.bernoulli(cfg.hflip_p)) {
    hflip(g.t1w, g.nx, g.ny);
    hflip(g.fa, g.nx, g.ny);
    for (auto& ch : g.precise) hflip(ch, g.nx, g.ny);
    for (auto& ch : g.coarse) hflip(ch, g.nx, g.ny);
  }
  jitter(g.t1w, cfg, rng);
  jitter(g.fa, cfg, rng);
}

}  // namespace dcl::train
