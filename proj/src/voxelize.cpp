#include "dcl/voxelize.hpp"

#include <cmath>
#include <limits>

namespace dcl {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Amanatides-Woo style walk from p0 to p1 (continuous index coords).
// Calls visit(x, y, z) for every cell the segment passes through.
template <class Visit>
void traverse_segment(const Vec3& p0, const Vec3& p1, Visit&& visit) {
  int cur[3], end[3], step[3];
  double t_max[3], t_delta[3];
  const double d[3] = {p1[0] - p0[0], p1[1] - p0[1], p1[2] - p0[2]};
  for (int a = 0; a < 3; ++a) {
    cur[a] = static_cast<int>(std::floor(p0[a] + 0.5));
    end[a] = static_cast<int>(std::floor(p1[a] + 0.5));
    if (d[a] > 0) {
      step[a] = 1;
      t_max[a] = (cur[a] + 0.5 - p0[a]) / d[a];
      t_delta[a] = 1.0 / d[a];
    } else if (d[a] < 0) {
      step[a] = -1;
      t_max[a] = (cur[a] - 0.5 - p0[a]) / d[a];
      t_delta[a] = -1.0 / d[a];
    } else {
      step[a] = 0;
      t_max[a] = kInf;
      t_delta[a] = kInf;
    }
  }
  visit(cur[0], cur[1], cur[2]);
  while (cur[0] != end[0] || cur[1] != end[1] || cur[2] != end[2]) {
    int a = 0;
    if (t_max[1] < t_max[a]) a = 1;
    if (t_max[2] < t_max[a]) a = 2;
    if (t_max[a] > 1.0) break;  // numeric guard; end cell unreachable
    cur[a] += step[a];
    t_max[a] += t_delta[a];
    visit(cur[0], cur[1], cur[2]);
  }
}

}  // namespace

std::vector<Volume3D> voxelize_streamlines(const StreamlineBundle& b, const Geometry& geom) {
  geom.validate();
  const Mat4 world_to_voxel = geom.affine.affine_inverse();
  const size_t n = geom.voxel_count();

  std::vector<Volume3D> counts;
  counts.reserve(b.class_names.size());
  for (size_t c = 0; c < b.class_names.size(); ++c) counts.emplace_back(geom);

  std::vector<uint32_t> stamp(n, 0);
  uint32_t sid = 0;

  for (const auto& s : b.streamlines) {
    size_t cls = 0;
    while (cls < b.class_names.size() && b.class_names[cls] != s.class_name) ++cls;
    if (cls == b.class_names.size()) throw std::runtime_error("streamline class '" + s.class_name + "' not in bundle class list");
    Volume3D& vol = counts[cls];
    ++sid;
    for (size_t i = 0; i + 1 < s.points.size(); ++i) {
      const Vec3 a = world_to_voxel.apply(s.points[i]);
      const Vec3 c = world_to_voxel.apply(s.points[i + 1]);
      traverse_segment(a, c, [&](int x, int y, int z) {
        if (!vol.in_bounds(x, y, z)) return;
        const size_t idx = vol.index(x, y, z);
        if (stamp[idx] != sid) {
          stamp[idx] = sid;
          vol.data[idx] += 1.0f;
        }
      });
    }
  }
  return counts;
}

Volume3D threshold_counts(const Volume3D& counts, double tau) {
  Volume3D out(counts.geom);
  for (size_t i = 0; i < counts.data.size(); ++i)
    out.data[i] = counts.data[i] >= tau ? 1.0f : 0.0f;
  return out;
}

LabelVolume streamlines_to_label_volume(const StreamlineBundle& b, const Geometry& geom,
                                        double tau, const IslandPolicy& policy) {
  if (tau < 1) throw std::runtime_error("streamlines_to_label_volume: tau must be >= 1");
  auto counts = voxelize_streamlines(b, geom);
  LabelVolume out(geom, b.class_names);
  for (size_t c = 0; c < counts.size(); ++c)
    out.channels[c] = remove_islands(threshold_counts(counts[c], tau), policy);
  return out;
}

}  // namespace dcl
