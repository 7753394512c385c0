#pragma once

#include <vector>

#include "prodat/pointcloud.hpp"

namespace prodat::geo {

// k nearest neighbors per query, distances ascending, ties broken by
// lower reference index. Exact by construction.
struct NeighborIndex {
  std::size_t k = 0;
  std::vector<int> indices;      // queries.size() * k
  std::vector<double> distances; // same layout, Euclidean

  int index(std::size_t q, std::size_t j) const { return indices[q * k + j]; }
  double distance(std::size_t q, std::size_t j) const {
    return distances[q * k + j];
  }
};

NeighborIndex knn(const PointCloud& reference, const PointCloud& queries,
                  std::size_t k);

// Brute-force O(N*Q) scan with the same tie rule. Reference oracle for
// the grid index; also the fallback the index itself uses on tiny inputs.
NeighborIndex knn_brute_force(const PointCloud& reference,
                              const PointCloud& queries, std::size_t k);

// Farthest point sampling, seeded at the point nearest the centroid.
// Returns the selected indices in emission order.
std::vector<int> farthest_point_sample(const PointCloud& pc, std::size_t m);

inline std::size_t downsample_count(std::size_t n, double factor) {
  return static_cast<std::size_t>(
      std::ceil(factor * static_cast<double>(n) - 1e-12));
}

PointCloud select_points(const PointCloud& pc, const std::vector<int>& idx);

// j -> nearest downsampled index, plus the inverse buckets. Buckets
// partition {0..N-1}; asserted in debug builds.
struct AssignmentMap {
  std::vector<int> nearest;                // size N
  std::vector<std::vector<int>> buckets;   // size M
};

AssignmentMap nearest_assignment(const PointCloud& original,
                                 const PointCloud& downsampled);

struct NormalEstimate {
  PointCloud cloud;                 // input coords plus unit normals
  std::vector<bool> degenerate;     // rank < 2 neighborhoods
};

// PCA normal per point over its k-NN, sign chosen to point away from the
// local neighborhood centroid. Degenerate neighborhoods get +z and a flag.
NormalEstimate estimate_normals(const PointCloud& pc, std::size_t k = 16);

}  // namespace prodat::geo
