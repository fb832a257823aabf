#include "dcl/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

#include "dcl/rng.hpp"

namespace fs = std::filesystem;

namespace dcl {

void PhantomConfig::validate() const {
  for (int a = 0; a < 3; ++a)
    if (dims[a] < 32) throw std::runtime_error("phantom: dims must be >= 32 in every axis");
  if (!(radius_min > 0) || radius_max < radius_min)
    throw std::runtime_error("phantom: tube radii must be positive and ordered");
  if (boundary_flip_rate < 0 || boundary_flip_rate >= 0.5)
    throw std::runtime_error("phantom: boundary flip rate must lie in [0, 0.5)");
  if (class_names.empty()) throw std::runtime_error("phantom: needs at least one class");
  if (dilation_radius < 0 || max_translation < 0)
    throw std::runtime_error("phantom: degradation parameters must be nonnegative");
}

namespace {

Vec3 bezier(const std::array<Vec3, 4>& p, double t) {
  const double u = 1.0 - t;
  Vec3 out;
  for (int a = 0; a < 3; ++a)
    out[a] = u * u * u * p[0][a] + 3 * u * u * t * p[1][a] + 3 * u * t * t * p[2][a] + t * t * t * p[3][a];
  return out;
}

// Carve one tube into the label channel and track centerline distance for
// the FA falloff. dist holds min distance to the sampled centerline.
void rasterize_tube(const std::array<Vec3, 4>& ctrl, double radius, Volume3D& label, Volume3D& dist) {
  // rough curve length from a coarse polyline
  double len = 0;
  Vec3 prev = bezier(ctrl, 0);
  for (int i = 1; i <= 32; ++i) {
    Vec3 q = bezier(ctrl, i / 32.0);
    len += std::hypot(q[0] - prev[0], q[1] - prev[1], q[2] - prev[2]);
    prev = q;
  }
  const int samples = std::max(64, static_cast<int>(std::ceil(len / 0.15)));
  const int reach = static_cast<int>(std::ceil(radius)) + 1;
  const double r2 = radius * radius;

  for (int i = 0; i <= samples; ++i) {
    const Vec3 c = bezier(ctrl, static_cast<double>(i) / samples);
    const int x0 = static_cast<int>(std::floor(c[0])) - reach;
    const int y0 = static_cast<int>(std::floor(c[1])) - reach;
    const int z0 = static_cast<int>(std::floor(c[2])) - reach;
    for (int z = z0; z <= z0 + 2 * reach + 1; ++z)
      for (int y = y0; y <= y0 + 2 * reach + 1; ++y)
        for (int x = x0; x <= x0 + 2 * reach + 1; ++x) {
          if (!label.in_bounds(x, y, z)) continue;
          const double dx = x - c[0], dy = y - c[1], dz = z - c[2];
          const double d2 = dx * dx + dy * dy + dz * dz;
          if (d2 > r2) continue;
          const size_t idx = label.index(x, y, z);
          label.data[idx] = 1.0f;
          const float d = static_cast<float>(std::sqrt(d2));
          if (d < dist.data[idx]) dist.data[idx] = d;
        }
  }
}

Volume3D shift_binary(const Volume3D& v, int dx, int dy, int dz) {
  Volume3D out(v.geom);
  const int nx = v.geom.dims[0], ny = v.geom.dims[1], nz = v.geom.dims[2];
  for (int z = 0; z < nz; ++z)
    for (int y = 0; y < ny; ++y)
      for (int x = 0; x < nx; ++x) {
        const int sx = x - dx, sy = y - dy, sz = z - dz;
        if (v.in_bounds(sx, sy, sz) && v.at(sx, sy, sz) != 0.0f) out.at(x, y, z) = 1.0f;
      }
  return out;
}

Volume3D dilate6(const Volume3D& v) {
  Volume3D out = v;
  const int nx = v.geom.dims[0], ny = v.geom.dims[1], nz = v.geom.dims[2];
  static const int off[6][3] = {{1, 0, 0}, {-1, 0, 0}, {0, 1, 0}, {0, -1, 0}, {0, 0, 1}, {0, 0, -1}};
  for (int z = 0; z < nz; ++z)
    for (int y = 0; y < ny; ++y)
      for (int x = 0; x < nx; ++x) {
        if (v.at(x, y, z) == 0.0f) continue;
        for (const auto& o : off) {
          const int X = x + o[0], Y = y + o[1], Z = z + o[2];
          if (v.in_bounds(X, Y, Z)) out.at(X, Y, Z) = 1.0f;
        }
      }
  return out;
}

bool is_boundary6(const Volume3D& v, int x, int y, int z) {
  const float c = v.at(x, y, z);
  static const int off[6][3] = {{1, 0, 0}, {-1, 0, 0}, {0, 1, 0}, {0, -1, 0}, {0, 0, 1}, {0, 0, -1}};
  for (const auto& o : off) {
    const int X = x + o[0], Y = y + o[1], Z = z + o[2];
    const float n = v.in_bounds(X, Y, Z) ? v.at(X, Y, Z) : 0.0f;
    if (n != c) return true;
  }
  return false;
}

}  // namespace

ModalitySample generate_phantom(const PhantomConfig& cfg, int subject_index) {
  cfg.validate();
  Rng root(cfg.seed);
  Rng rng = root.substream(0x5348 + static_cast<uint64_t>(subject_index));
  Rng geo_rng = rng.substream(1);
  Rng t1_rng = rng.substream(2);
  Rng fa_rng = rng.substream(3);

  Geometry geom;
  geom.dims = cfg.dims;

  ModalitySample s;
  char idbuf[16];
  std::snprintf(idbuf, sizeof(idbuf), "sub%03d", subject_index);
  s.subject_id = idbuf;
  s.provenance = "phantom";
  s.t1w = Volume3D(geom);
  s.fa = Volume3D(geom);
  s.precise = LabelVolume(geom, cfg.class_names);

  const double nx = geom.dims[0], ny = geom.dims[1], nz = geom.dims[2];
  Volume3D dist(geom, std::numeric_limits<float>::infinity());

  const size_t C = cfg.class_names.size();
  for (size_t c = 0; c < C; ++c) {
    // classes stacked along y so every axial (xy) slice separates them
    // in-plane; tubes mirrored left/right in x, curves run along z
    const double yc = 0.25 + 0.5 * (C > 1 ? static_cast<double>(c) / (C - 1) : 0.5);
    for (int t = 0; t < cfg.tubes_per_class; ++t) {
      const double xc = cfg.tubes_per_class > 1 && t % 2 == 1 ? 0.65 : 0.35;
      std::array<Vec3, 4> ctrl;
      const double zs[4] = {0.18, 0.4, 0.6, 0.82};
      const double bow = (t % 2 == 1 ? -1 : 1) * 0.06;
      for (int i = 0; i < 4; ++i) {
        const double wiggle = (i == 1 || i == 2) ? bow : 0.0;
        ctrl[i] = {(xc + wiggle + geo_rng.uniform(-0.03, 0.03)) * nx,
                   (yc + (i == 2 ? -0.03 : i == 1 ? 0.03 : 0.0) + geo_rng.uniform(-0.02, 0.02)) * ny,
                   zs[i] * nz + geo_rng.uniform(-0.02, 0.02) * nz};
      }
      // per-class caliber: each nerve class gets its own band inside
      // [radius_min, radius_max] so classes differ in local appearance,
      // not just position
      const double frac = C > 1 ? static_cast<double>(c) / (C - 1) : 0.5;
      const double rc = cfg.radius_min + (cfg.radius_max - cfg.radius_min) * frac;
      const double jit = 0.12 * (cfg.radius_max - cfg.radius_min);
      const double radius =
          std::clamp(rc + geo_rng.uniform(-jit, jit), cfg.radius_min, cfg.radius_max);
      rasterize_tube(ctrl, radius, s.precise.channels[c], dist);
    }
  }

  // union of nerve voxels + their radii info drives intensity synthesis
  const double cx = nx / 2, cy = ny / 2, cz = nz / 2;
  const double ax = 0.46 * nx, ay = 0.46 * ny, az = 0.46 * nz;
  for (int z = 0; z < geom.dims[2]; ++z)
    for (int y = 0; y < geom.dims[1]; ++y)
      for (int x = 0; x < geom.dims[0]; ++x) {
        const size_t idx = s.t1w.index(x, y, z);
        const double ex = (x - cx) / ax, ey = (y - cy) / ay, ez = (z - cz) / az;
        const bool in_brain = ex * ex + ey * ey + ez * ez <= 1.0;
        bool in_nerve = false;
        double fa_peak = cfg.fa_nerve;
        for (size_t c = 0; c < C; ++c)
          if (s.precise.channels[c].data[idx] != 0.0f) {
            if (!in_nerve) {
              // per-class anisotropy level: classes occupy distinct FA bands
              const double frac = C > 1 ? static_cast<double>(c) / (C - 1) : 0.0;
              fa_peak = cfg.fa_nerve * (1.0 - 0.45 * frac);
            }
            in_nerve = true;
          }

        double t1 = 0.0, fa = 0.0;
        if (in_brain || in_nerve) {
          t1 = (in_nerve ? cfg.t1w_nerve : cfg.t1w_tissue) + t1_rng.normal(0.0, cfg.t1w_noise_sd);
          fa = cfg.fa_background;
          if (in_nerve) {
            const double d = dist.data[idx];
            const double falloff = std::isfinite(d) ? std::max(0.2, 1.0 - 0.35 * d * d / 9.0) : 1.0;
            fa = cfg.fa_background + (fa_peak - cfg.fa_background) * falloff;
          }
          fa += fa_rng.normal(0.0, cfg.fa_noise_sd);
          fa = std::clamp(fa, 0.0, 1.0);
          t1 = std::max(t1, 1e-4);
        }
        s.t1w.data[idx] = static_cast<float>(t1);
        s.fa.data[idx] = static_cast<float>(fa);
      }

  s.coarse = degrade_to_coarse(s.precise, cfg, root.substream(0xC0A + subject_index).next_u64());
  return s;
}

LabelVolume degrade_to_coarse(const LabelVolume& precise, const PhantomConfig& cfg, uint64_t rng_seed) {
  cfg.validate();
  precise.validate();
  LabelVolume out(precise.geom, precise.class_names);
  for (size_t c = 0; c < precise.channels.size(); ++c) {
    Rng rng = Rng(rng_seed).substream(c);
    Volume3D ch = precise.channels[c];
    if (cfg.max_translation > 0) {
      const int dx = rng.uniform_range(-cfg.max_translation, cfg.max_translation);
      const int dy = rng.uniform_range(-cfg.max_translation, cfg.max_translation);
      const int dz = rng.uniform_range(-cfg.max_translation, cfg.max_translation);
      ch = shift_binary(ch, dx, dy, dz);
    }
    for (int i = 0; i < cfg.dilation_radius; ++i) ch = dilate6(ch);
    if (cfg.boundary_flip_rate > 0) {
      Volume3D flipped = ch;
      const int gx = ch.geom.dims[0], gy = ch.geom.dims[1], gz = ch.geom.dims[2];
      for (int z = 0; z < gz; ++z)
        for (int y = 0; y < gy; ++y)
          for (int x = 0; x < gx; ++x)
            if (is_boundary6(ch, x, y, z) && rng.bernoulli(cfg.boundary_flip_rate))
              flipped.at(x, y, z) = ch.at(x, y, z) == 0.0f ? 1.0f : 0.0f;
      ch = flipped;
    }
    out.channels[c] = std::move(ch);
  }
  return out;
}

Manifest generate_dataset(const PhantomConfig& cfg, int n_subjects, const fs::path& out_dir) {
  cfg.validate();
  if (n_subjects < 1) throw std::runtime_error("generate_dataset: need at least one subject");
  fs::create_directories(out_dir);
  Manifest m;
  m.seed = cfg.seed;
  m.base_dir = out_dir;
  for (int i = 0; i < n_subjects; ++i) {
    ModalitySample s = generate_phantom(cfg, i);
    char buf[16];
    std::snprintf(buf, sizeof(buf), "sub%03d", i);
    const std::string id(buf);
    const fs::path sub = out_dir / id;
    write_volume(s.t1w, sub / "t1w");
    write_volume(s.fa, sub / "fa");
    write_label_volume(s.precise, sub / "precise");
    write_label_volume(s.coarse, sub / "coarse");
    ManifestEntry e;
    e.id = id;
    e.t1w = id + "/t1w";
    e.fa = id + "/fa";
    e.precise = id + "/precise";
    e.coarse = id + "/coarse";
    m.subjects.push_back(e);
  }
  write_manifest(m, out_dir / "manifest.json");
  return m;
}

}  // namespace dcl
