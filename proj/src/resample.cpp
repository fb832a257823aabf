#include "dcl/resample.hpp"

#include <cmath>

namespace dcl {

namespace {

float sample_nearest(const Volume3D& v, const Vec3& p) {
  const int x = static_cast<int>(std::lround(p[0]));
  const int y = static_cast<int>(std::lround(p[1]));
  const int z = static_cast<int>(std::lround(p[2]));
  if (!v.in_bounds(x, y, z)) return 0.0f;
  return v.at(x, y, z);
}

float sample_trilinear(const Volume3D& v, const Vec3& p) {
  const int x0 = static_cast<int>(std::floor(p[0]));
  const int y0 = static_cast<int>(std::floor(p[1]));
  const int z0 = static_cast<int>(std::floor(p[2]));
  const double fx = p[0] - x0, fy = p[1] - y0, fz = p[2] - z0;
  double acc = 0.0;
  for (int dz = 0; dz < 2; ++dz)
    for (int dy = 0; dy < 2; ++dy)
      for (int dx = 0; dx < 2; ++dx) {
        const double w = (dx ? fx : 1 - fx) * (dy ? fy : 1 - fy) * (dz ? fz : 1 - fz);
        if (w == 0.0) continue;
        const int x = x0 + dx, y = y0 + dy, z = z0 + dz;
        const double val = v.in_bounds(x, y, z) ? v.at(x, y, z) : 0.0;
        acc += w * val;
      }
  return static_cast<float>(acc);
}

Volume3D resample_through(const Volume3D& src, const Geometry& target, const Mat4& target_to_src,
                          Interp mode) {
  Volume3D out(target);
  const int nx = target.dims[0], ny = target.dims[1], nz = target.dims[2];
#pragma omp parallel for schedule(static)
  for (int z = 0; z < nz; ++z)
    for (int y = 0; y < ny; ++y)
      for (int x = 0; x < nx; ++x) {
        const Vec3 p = target_to_src.apply({double(x), double(y), double(z)});
        out.at(x, y, z) = mode == Interp::Nearest ? sample_nearest(src, p) : sample_trilinear(src, p);
      }
  return out;
}

}  // namespace

Volume3D resample_with_affine(const Volume3D& src, const Geometry& target, Interp mode) {
  src.validate();
  target.validate();
  const Mat4 target_to_src = src.geom.affine.affine_inverse() * target.affine;
  return resample_through(src, target, target_to_src, mode);
}

Volume3D normalize_zscore(const Volume3D& v) {
  Volume3D out = v;
  double sum = 0.0, sum2 = 0.0;
  size_t n = 0;
  for (float x : v.data)
    if (x != 0.0f) {
      sum += x;
      sum2 += double(x) * x;
      ++n;
    }
  if (n == 0) return out;
  const double mean = sum / n;
  const double var = sum2 / n - mean * mean;
  if (var <= 0.0) {
    for (auto& x : out.data) x = 0.0f;
    return out;
  }
  const double inv_sd = 1.0 / std::sqrt(var);
  for (size_t i = 0; i < out.data.size(); ++i)
    if (v.data[i] != 0.0f) out.data[i] = static_cast<float>((v.data[i] - mean) * inv_sd);
  return out;
}

std::vector<SliceGroup> extract_axial_slices(const ModalitySample& s) {
  const auto [nx, ny, nz] = s.t1w.geom.dims;
  const size_t plane = static_cast<size_t>(nx) * ny;
  const size_t C = s.precise.num_classes();
  std::vector<SliceGroup> out(nz);
  for (int k = 0; k < nz; ++k) {
    SliceGroup& g = out[k];
    g.k = k;
    g.subject_id = s.subject_id;
    g.nx = nx;
    g.ny = ny;
    const size_t off = plane * k;
    g.t1w.assign(s.t1w.data.begin() + off, s.t1w.data.begin() + off + plane);
    g.fa.assign(s.fa.data.begin() + off, s.fa.data.begin() + off + plane);
    g.precise.resize(C);
    g.coarse.resize(s.coarse.num_classes());
    for (size_t c = 0; c < C; ++c)
      g.precise[c].assign(s.precise.channels[c].data.begin() + off,
                          s.precise.channels[c].data.begin() + off + plane);
    for (size_t c = 0; c < s.coarse.num_classes(); ++c)
      g.coarse[c].assign(s.coarse.channels[c].data.begin() + off,
                         s.coarse.channels[c].data.begin() + off + plane);
  }
  return out;
}

Volume3D stack_slices(const std::vector<std::vector<float>>& slices, const Geometry& geom) {
  const auto [nx, ny, nz] = geom.dims;
  if (static_cast<int>(slices.size()) != nz)
    throw std::runtime_error("stack_slices: expected " + std::to_string(nz) + " slices, got " +
                             std::to_string(slices.size()));
  const size_t plane = static_cast<size_t>(nx) * ny;
  Volume3D out(geom);
  for (int k = 0; k < nz; ++k) {
    if (slices[k].size() != plane)
      throw std::runtime_error("stack_slices: slice " + std::to_string(k) + " has wrong shape");
    std::copy(slices[k].begin(), slices[k].end(), out.data.begin() + plane * k);
  }
  return out;
}

LabelVolume transfer_labels(const LabelVolume& atlas, const Mat4& registration,
                            const Geometry& subject_geom) {
  atlas.validate();
  subject_geom.validate();
  // subject voxel -> subject world -> atlas world -> atlas voxel
  const Mat4 target_to_src =
      atlas.geom.affine.affine_inverse() * registration.affine_inverse() * subject_geom.affine;
  LabelVolume out(subject_geom, atlas.class_names);
  for (size_t c = 0; c < atlas.channels.size(); ++c)
    out.channels[c] = resample_through(atlas.channels[c], subject_geom, target_to_src, Interp::Nearest);
  return out;
}

}  // namespace dcl
