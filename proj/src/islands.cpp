#include "dcl/islands.hpp"

#include <algorithm>
#include <stdexcept>

namespace dcl {

std::vector<Component> connected_components(const Volume3D& binary) {
  const int nx = binary.geom.dims[0], ny = binary.geom.dims[1], nz = binary.geom.dims[2];
  const size_t n = binary.geom.voxel_count();
  std::vector<uint8_t> seen(n, 0);
  std::vector<Component> comps;
  std::vector<size_t> stack;

  for (size_t start = 0; start < n; ++start) {
    if (seen[start] || binary.data[start] == 0.0f) continue;
    Component comp;
    comp.seed = start;
    stack.assign(1, start);
    seen[start] = 1;
    while (!stack.empty()) {
      const size_t idx = stack.back();
      stack.pop_back();
      comp.voxels.push_back(idx);
      const int x = static_cast<int>(idx % nx);
      const int y = static_cast<int>((idx / nx) % ny);
      const int z = static_cast<int>(idx / (static_cast<size_t>(nx) * ny));
      for (int dz = -1; dz <= 1; ++dz)
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) {
            if (dx == 0 && dy == 0 && dz == 0) continue;
            const int X = x + dx, Y = y + dy, Z = z + dz;
            if (X < 0 || Y < 0 || Z < 0 || X >= nx || Y >= ny || Z >= nz) continue;
            const size_t j = binary.index(X, Y, Z);
            if (!seen[j] && binary.data[j] != 0.0f) {
              seen[j] = 1;
              stack.push_back(j);
            }
          }
    }
    comp.size = comp.voxels.size();
    comps.push_back(std::move(comp));
  }
  return comps;
}

Volume3D remove_islands(const Volume3D& binary, const IslandPolicy& policy) {
  for (float v : binary.data)
    if (v != 0.0f && v != 1.0f) throw std::runtime_error("remove_islands: input must be binary");

  auto comps = connected_components(binary);
  Volume3D out(binary.geom);
  if (comps.empty()) return out;

  if (policy.keep_largest) {
    // comps are in seed order, so max_element's first-wins tie break keeps
    // the component with the smallest seed index.
    const auto best = std::max_element(comps.begin(), comps.end(),
                                       [](const Component& a, const Component& b) { return a.size < b.size; });
    for (size_t idx : best->voxels) out.data[idx] = 1.0f;
    return out;
  }

  for (const auto& c : comps)
    if (c.size >= policy.min_size)
      for (size_t idx : c.voxels) out.data[idx] = 1.0f;
  return out;
}

}  // namespace dcl
