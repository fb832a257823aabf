#pragma once

#include <array>
#include <cmath>
#include <stdexcept>

namespace dcl {

using Vec3 = std::array<double, 3>;

// Row-major 4x4 homogeneous transform (voxel index -> world mm, or general).
struct Mat4 {
  std::array<double, 16> m{};

  static Mat4 identity() {
    Mat4 a;
    a.m = {1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1};
    return a;
  }

  static Mat4 translation(double tx, double ty, double tz) {
    Mat4 a = identity();
    a.m[3] = tx;
    a.m[7] = ty;
    a.m[11] = tz;
    return a;
  }

  static Mat4 scaling(double sx, double sy, double sz) {
    Mat4 a = identity();
    a.m[0] = sx;
    a.m[5] = sy;
    a.m[10] = sz;
    return a;
  }

  double& at(int r, int c) { return m[r * 4 + c]; }
  double at(int r, int c) const { return m[r * 4 + c]; }

  Vec3 apply(const Vec3& p) const {
    Vec3 out;
    for (int r = 0; r < 3; ++r)
      out[r] = m[r * 4 + 0] * p[0] + m[r * 4 + 1] * p[1] + m[r * 4 + 2] * p[2] + m[r * 4 + 3];
    return out;
  }

  Mat4 operator*(const Mat4& b) const {
    Mat4 out;
    for (int r = 0; r < 4; ++r)
      for (int c = 0; c < 4; ++c) {
        double s = 0;
        for (int k = 0; k < 4; ++k) s += at(r, k) * b.at(k, c);
        out.at(r, c) = s;
      }
    return out;
  }

  bool operator==(const Mat4& b) const { return m == b.m; }

  double det3() const {
    return at(0, 0) * (at(1, 1) * at(2, 2) - at(1, 2) * at(2, 1)) -
           at(0, 1) * (at(1, 0) * at(2, 2) - at(1, 2) * at(2, 0)) +
           at(0, 2) * (at(1, 0) * at(2, 1) - at(1, 1) * at(2, 0));
  }

  // Inverse of an affine transform (last row assumed 0 0 0 1).
  Mat4 affine_inverse() const {
    const double d = det3();
    if (std::abs(d) < 1e-12) throw std::runtime_error("affine matrix is singular");
    Mat4 inv = identity();
    const double id = 1.0 / d;
    inv.at(0, 0) = (at(1, 1) * at(2, 2) - at(1, 2) * at(2, 1)) * id;
    inv.at(0, 1) = (at(0, 2) * at(2, 1) - at(0, 1) * at(2, 2)) * id;
    inv.at(0, 2) = (at(0, 1) * at(1, 2) - at(0, 2) * at(1, 1)) * id;
    inv.at(1, 0) = (at(1, 2) * at(2, 0) - at(1, 0) * at(2, 2)) * id;
    inv.at(1, 1) = (at(0, 0) * at(2, 2) - at(0, 2) * at(2, 0)) * id;
    inv.at(1, 2) = (at(0, 2) * at(1, 0) - at(0, 0) * at(1, 2)) * id;
    inv.at(2, 0) = (at(1, 0) * at(2, 1) - at(1, 1) * at(2, 0)) * id;
    inv.at(2, 1) = (at(0, 1) * at(2, 0) - at(0, 0) * at(2, 1)) * id;
    inv.at(2, 2) = (at(0, 0) * at(1, 1) - at(0, 1) * at(1, 0)) * id;
    for (int r = 0; r < 3; ++r) {
      double t = 0;
      for (int k = 0; k < 3; ++k) t += inv.at(r, k) * at(k, 3);
      inv.at(r, 3) = -t;
    }
    return inv;
  }
};

}  // namespace dcl
