#pragma once

#include <vector>

#include "dcl/volume.hpp"

namespace dcl {

enum class Interp { Nearest, Trilinear };

// Pull-resample src onto the target geometry. Out-of-bounds samples are 0.
Volume3D resample_with_affine(const Volume3D& src, const Geometry& target, Interp mode);

// Per-volume z-score over the nonzero mask; constant volumes map to zeros.
Volume3D normalize_zscore(const Volume3D& v);

std::vector<SliceGroup> extract_axial_slices(const ModalitySample& s);

// Inverse of extract_axial_slices for a single scalar channel.
Volume3D stack_slices(const std::vector<std::vector<float>>& slices, const Geometry& geom);

// Apply a registration transform (atlas world -> subject world) to every
// channel by nearest-neighbour pull resampling onto the subject geometry.
LabelVolume transfer_labels(const LabelVolume& atlas, const Mat4& registration,
                            const Geometry& subject_geom);

}  // namespace dcl
