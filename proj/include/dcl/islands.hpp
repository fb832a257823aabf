#pragma once

#include <cstdint>
#include <vector>

#include "dcl/volume.hpp"

namespace dcl {

struct Component {
  size_t seed = 0;  // smallest linear index in the component
  size_t size = 0;
  std::vector<size_t> voxels;
};

// 26-connected components of a binary volume, in seed (scan) order.
std::vector<Component> connected_components(const Volume3D& binary);

struct IslandPolicy {
  bool keep_largest = false;
  size_t min_size = 5;
};

// Drops small components. keep_largest retains exactly one component (the
// largest; ties resolved toward the smaller seed index). Otherwise every
// component of size >= min_size survives.
Volume3D remove_islands(const Volume3D& binary, const IslandPolicy& policy);

}  // namespace dcl
