#pragma once

#include <string>
#include <vector>

#include "prodat/common.hpp"

namespace prodat {

struct PointCloud {
  std::vector<Vec3> coords;
  std::vector<Vec3> normals;  // empty or size() == coords.size()
  std::string source_id;

  std::size_t size() const { return coords.size(); }
  bool has_normals() const { return !normals.empty(); }
};

struct BoundingBox {
  Vec3 p_min{0, 0, 0};
  Vec3 p_max{0, 0, 0};

  static BoundingBox of(const PointCloud& pc) {
    BoundingBox bb;
    bb.p_min = bb.p_max = pc.coords.at(0);
    for (const auto& p : pc.coords) {
      for (int a = 0; a < 3; ++a) {
        bb.p_min[a] = std::min(bb.p_min[a], p[a]);
        bb.p_max[a] = std::max(bb.p_max[a], p[a]);
      }
    }
    return bb;
  }

  // Squared diagonal length, the paper-convention peak value.
  double sq_diagonal() const { return sq_dist(p_max, p_min); }
};

// Affine map c' = c*scale + offset, uniform scale across axes.
struct NormalizeTransform {
  double scale = 1.0;
  Vec3 offset{0, 0, 0};
  double padding = 0.0;

  Vec3 apply(const Vec3& p) const {
    return {p[0] * scale + offset[0], p[1] * scale + offset[1],
            p[2] * scale + offset[2]};
  }
  Vec3 invert(const Vec3& p) const {
    return {(p[0] - offset[0]) / scale, (p[1] - offset[1]) / scale,
            (p[2] - offset[2]) / scale};
  }
};

}  // namespace prodat
