#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "dcl/geometry.hpp"

namespace dcl {

struct Geometry {
  std::array<int, 3> dims{1, 1, 1};          // nx, ny, nz
  std::array<double, 3> spacing{1, 1, 1};    // mm
  Mat4 affine = Mat4::identity();            // voxel index -> world mm

  bool operator==(const Geometry& o) const {
    return dims == o.dims && spacing == o.spacing && affine == o.affine;
  }

  size_t voxel_count() const {
    return static_cast<size_t>(dims[0]) * dims[1] * dims[2];
  }

  void validate() const {
    for (int a = 0; a < 3; ++a) {
      if (dims[a] < 1) throw std::runtime_error("geometry: dims must be >= 1");
      if (!(spacing[a] > 0)) throw std::runtime_error("geometry: spacing must be positive");
    }
    if (std::abs(affine.det3()) < 1e-12)
      throw std::runtime_error("geometry: affine upper-left 3x3 is singular");
  }
};

// Scalar f32 grid, x-fastest ordering: index = x + nx*(y + ny*z).
struct Volume3D {
  Geometry geom;
  std::vector<float> data;

  Volume3D() = default;
  explicit Volume3D(const Geometry& g, float fill = 0.0f)
      : geom(g), data(g.voxel_count(), fill) {}

  size_t index(int x, int y, int z) const {
    return static_cast<size_t>(x) + static_cast<size_t>(geom.dims[0]) *
           (static_cast<size_t>(y) + static_cast<size_t>(geom.dims[1]) * z);
  }
  float at(int x, int y, int z) const { return data[index(x, y, z)]; }
  float& at(int x, int y, int z) { return data[index(x, y, z)]; }

  bool in_bounds(int x, int y, int z) const {
    return x >= 0 && y >= 0 && z >= 0 && x < geom.dims[0] && y < geom.dims[1] && z < geom.dims[2];
  }

  void validate() const {
    geom.validate();
    if (data.size() != geom.voxel_count())
      throw std::runtime_error("volume: data length does not match dims");
  }

  bool all_finite() const {
    for (float v : data)
      if (!std::isfinite(v)) return false;
    return true;
  }
};

inline const std::vector<std::string> kDefaultClasses = {"CN II", "CN III", "CN V", "CN VII/VIII"};

// Per-class binary channels sharing one geometry.
struct LabelVolume {
  Geometry geom;
  std::vector<std::string> class_names;
  std::vector<Volume3D> channels;

  LabelVolume() = default;
  LabelVolume(const Geometry& g, std::vector<std::string> names) : geom(g), class_names(std::move(names)) {
    channels.assign(class_names.size(), Volume3D(g));
  }

  size_t num_classes() const { return class_names.size(); }

  void validate() const {
    if (class_names.empty()) throw std::runtime_error("label volume: needs at least one class");
    if (channels.size() != class_names.size())
      throw std::runtime_error("label volume: channel/class count mismatch");
    for (const auto& ch : channels) {
      if (!(ch.geom == geom)) throw std::runtime_error("label volume: channel geometry mismatch");
      ch.validate();
      for (float v : ch.data)
        if (v != 0.0f && v != 1.0f)
          throw std::runtime_error("label volume: values must be binary");
    }
  }
};

struct ModalitySample {
  std::string subject_id;
  Volume3D t1w;
  Volume3D fa;
  LabelVolume precise;  // expert-style ground truth G
  LabelVolume coarse;   // atlas-style coarse labels
  std::string provenance = "phantom";  // phantom | imported

  void validate() const {
    t1w.validate();
    fa.validate();
    precise.validate();
    coarse.validate();
    if (!(fa.geom == t1w.geom) || !(precise.geom == t1w.geom) || !(coarse.geom == t1w.geom))
      throw std::runtime_error("sample: volumes do not share geometry");
  }
};

// One axial plane (z = k) of every channel of a sample.
struct SliceGroup {
  int k = 0;
  std::string subject_id;
  int nx = 0, ny = 0;
  std::vector<float> t1w;
  std::vector<float> fa;
  std::vector<std::vector<float>> precise;  // per class
  std::vector<std::vector<float>> coarse;
};

}  // namespace dcl
