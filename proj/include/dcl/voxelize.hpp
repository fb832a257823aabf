#pragma once

#include "dcl/islands.hpp"
#include "dcl/streamlines.hpp"
#include "dcl/volume.hpp"

namespace dcl {

// Visit counts per class: a voxel counts each streamline whose polyline
// passes through it at most once. Exact amortized grid traversal, no
// sampling step. Voxel (i,j,k) owns the half-open cell
// [i-0.5, i+0.5) x ... in continuous index space.
std::vector<Volume3D> voxelize_streamlines(const StreamlineBundle& b, const Geometry& geom);

Volume3D threshold_counts(const Volume3D& counts, double tau);

// voxelize -> threshold at tau -> remove_islands, channel-wise.
LabelVolume streamlines_to_label_volume(const StreamlineBundle& b, const Geometry& geom,
                                        double tau, const IslandPolicy& policy);

}  // namespace dcl
