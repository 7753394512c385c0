#include "prodat/geometry.hpp"

#include <algorithm>
#include <cassert>
#include <queue>

namespace prodat::geo {

namespace {

struct Cand {
  double d2;
  int idx;
  bool operator<(const Cand& o) const {  // max-heap: worst candidate on top
    if (d2 != o.d2) return d2 < o.d2;
    return idx < o.idx;
  }
};

void finalize(const std::vector<Cand>& heap_sorted, std::size_t q,
              std::size_t k, NeighborIndex& out) {
  for (std::size_t j = 0; j < k; ++j) {
    out.indices[q * k + j] = heap_sorted[j].idx;
    out.distances[q * k + j] = std::sqrt(heap_sorted[j].d2);
  }
}

// Uniform grid over the reference bbox; ring expansion keeps the search
// exact. Cell lists hold reference indices in ascending order.
class GridIndex {
 public:
  explicit GridIndex(const PointCloud& ref) : ref_(ref) {
    bb_ = BoundingBox::of(ref);
    const Vec3 ext = bb_.p_max - bb_.p_min;
    const double longest = std::max({ext[0], ext[1], ext[2]});
    const int target = std::max(
        1, static_cast<int>(std::cbrt(static_cast<double>(ref.size()))));
    cell_ = longest > 0.0 ? longest / target : 1.0;
    for (int a = 0; a < 3; ++a) {
      dims_[a] = std::max(1, static_cast<int>(ext[a] / cell_) + 1);
    }
    cells_.resize(static_cast<std::size_t>(dims_[0]) * dims_[1] * dims_[2]);
    for (std::size_t i = 0; i < ref.size(); ++i)
      cells_[cell_of(ref.coords[i])].push_back(static_cast<int>(i));
  }

  void query(const Vec3& q, std::size_t k, std::size_t qi,
             NeighborIndex& out) const {
    std::vector<Cand> heap;
    heap.reserve(k + 1);
    int cx, cy, cz;
    coords_of(q, cx, cy, cz);
    const int max_ring =
        std::max({dims_[0], dims_[1], dims_[2]});
    for (int ring = 0; ring <= max_ring; ++ring) {
      // Any point in a cell at Chebyshev ring r is at least (r-1)*cell away.
      if (heap.size() == k && ring >= 1) {
        const double lb = static_cast<double>(ring - 1) * cell_;
        if (lb * lb > heap.front().d2) break;
      }
      visit_ring(q, cx, cy, cz, ring, k, heap);
    }
    std::sort_heap(heap.begin(), heap.end());
    finalize(heap, qi, k, out);
  }

 private:
  std::size_t cell_of(const Vec3& p) const {
    int x, y, z;
    coords_of(p, x, y, z);
    return (static_cast<std::size_t>(z) * dims_[1] + y) * dims_[0] + x;
  }

  void coords_of(const Vec3& p, int& x, int& y, int& z) const {
    x = std::clamp(static_cast<int>((p[0] - bb_.p_min[0]) / cell_), 0, dims_[0] - 1);
    y = std::clamp(static_cast<int>((p[1] - bb_.p_min[1]) / cell_), 0, dims_[1] - 1);
    z = std::clamp(static_cast<int>((p[2] - bb_.p_min[2]) / cell_), 0, dims_[2] - 1);
  }

  void scan_cell(const Vec3& q, int x, int y, int z, std::size_t k,
                 std::vector<Cand>& heap) const {
    if (x < 0 || y < 0 || z < 0 || x >= dims_[0] || y >= dims_[1] || z >= dims_[2])
      return;
    const auto& cell =
        cells_[(static_cast<std::size_t>(z) * dims_[1] + y) * dims_[0] + x];
    for (int idx : cell) {
      const Cand c{sq_dist(ref_.coords[static_cast<std::size_t>(idx)], q), idx};
      if (heap.size() < k) {
        heap.push_back(c);
        std::push_heap(heap.begin(), heap.end());
      } else if (c < heap.front()) {
        std::pop_heap(heap.begin(), heap.end());
        heap.back() = c;
        std::push_heap(heap.begin(), heap.end());
      }
    }
  }

  void visit_ring(const Vec3& q, int cx, int cy, int cz, int ring,
                  std::size_t k, std::vector<Cand>& heap) const {
    if (ring == 0) {
      scan_cell(q, cx, cy, cz, k, heap);
      return;
    }
    for (int dz = -ring; dz <= ring; ++dz) {
      for (int dy = -ring; dy <= ring; ++dy) {
        for (int dx = -ring; dx <= ring; ++dx) {
          if (std::max({std::abs(dx), std::abs(dy), std::abs(dz)}) != ring)
            continue;
          scan_cell(q, cx + dx, cy + dy, cz + dz, k, heap);
        }
      }
    }
  }

  const PointCloud& ref_;
  BoundingBox bb_;
  double cell_ = 1.0;
  int dims_[3] = {1, 1, 1};
  std::vector<std::vector<int>> cells_;
};

}  // namespace

NeighborIndex knn_brute_force(const PointCloud& reference,
                              const PointCloud& queries, std::size_t k) {
  if (k > reference.size())
    throw ArgumentError("knn: k exceeds reference size");
  NeighborIndex out;
  out.k = k;
  out.indices.resize(queries.size() * k);
  out.distances.resize(queries.size() * k);
  std::vector<Cand> heap;
  for (std::size_t q = 0; q < queries.size(); ++q) {
    heap.clear();
    for (std::size_t i = 0; i < reference.size(); ++i) {
      const Cand c{sq_dist(reference.coords[i], queries.coords[q]),
                   static_cast<int>(i)};
      if (heap.size() < k) {
        heap.push_back(c);
        std::push_heap(heap.begin(), heap.end());
      } else if (c < heap.front()) {
        std::pop_heap(heap.begin(), heap.end());
        heap.back() = c;
        std::push_heap(heap.begin(), heap.end());
      }
    }
    std::sort_heap(heap.begin(), heap.end());
    finalize(heap, q, k, out);
  }
  return out;
}

NeighborIndex knn(const PointCloud& reference, const PointCloud& queries,
                  std::size_t k) {
  if (k > reference.size())
    throw ArgumentError("knn: k exceeds reference size");
  if (reference.size() <= 64) return knn_brute_force(reference, queries, k);
  GridIndex index(reference);
  NeighborIndex out;
  out.k = k;
  out.indices.resize(queries.size() * k);
  out.distances.resize(queries.size() * k);
  for (std::size_t q = 0; q < queries.size(); ++q)
    index.query(queries.coords[q], k, q, out);
  return out;
}

std::vector<int> farthest_point_sample(const PointCloud& pc, std::size_t m) {
  const std::size_t n = pc.size();
  if (m < 1 || m > n) throw ArgumentError("fps: bad sample count");
  Vec3 centroid{0, 0, 0};
  for (const auto& p : pc.coords) centroid = centroid + p;
  centroid = centroid * (1.0 / static_cast<double>(n));
  std::size_t seed = 0;
  double best = sq_dist(pc.coords[0], centroid);
  for (std::size_t i = 1; i < n; ++i) {
    const double d = sq_dist(pc.coords[i], centroid);
    if (d < best) {
      best = d;
      seed = i;
    }
  }
  std::vector<int> selected;
  selected.reserve(m);
  selected.push_back(static_cast<int>(seed));
  std::vector<double> mind(n);
  for (std::size_t i = 0; i < n; ++i)
    mind[i] = sq_dist(pc.coords[i], pc.coords[seed]);
  while (selected.size() < m) {
    std::size_t far = 0;
    double fd = -1.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (mind[i] > fd) {  // strict: ties keep the lower index
        fd = mind[i];
        far = i;
      }
    }
    selected.push_back(static_cast<int>(far));
    for (std::size_t i = 0; i < n; ++i)
      mind[i] = std::min(mind[i], sq_dist(pc.coords[i], pc.coords[far]));
  }
  return selected;
}

PointCloud select_points(const PointCloud& pc, const std::vector<int>& idx) {
  PointCloud out;
  out.source_id = pc.source_id;
  out.coords.reserve(idx.size());
  for (int i : idx) {
    out.coords.push_back(pc.coords[static_cast<std::size_t>(i)]);
    if (pc.has_normals())
      out.normals.push_back(pc.normals[static_cast<std::size_t>(i)]);
  }
  return out;
}

AssignmentMap nearest_assignment(const PointCloud& original,
                                 const PointCloud& downsampled) {
  if (original.size() == 0 || downsampled.size() == 0)
    throw ArgumentError("nearest_assignment: empty cloud");
  const NeighborIndex nn = knn(downsampled, original, 1);
  AssignmentMap map;
  map.nearest.resize(original.size());
  map.buckets.resize(downsampled.size());
  for (std::size_t j = 0; j < original.size(); ++j) {
    const int i = nn.index(j, 0);
    map.nearest[j] = i;
    map.buckets[static_cast<std::size_t>(i)].push_back(static_cast<int>(j));
  }
#ifndef NDEBUG
  std::size_t total = 0;
  for (const auto& b : map.buckets) total += b.size();
  assert(total == original.size());
#endif
  return map;
}

namespace {

// Jacobi eigen decomposition of a symmetric 3x3 matrix. Returns
// eigenvalues ascending with matching unit eigenvectors as columns.
void eigen_sym3(double a[3][3], double eval[3], double evec[3][3]) {
  double v[3][3] = {{1, 0, 0}, {0, 1, 0}, {0, 0, 1}};
  for (int sweep = 0; sweep < 50; ++sweep) {
    double off = std::abs(a[0][1]) + std::abs(a[0][2]) + std::abs(a[1][2]);
    if (off < 1e-300) break;
    for (int p = 0; p < 2; ++p) {
      for (int q = p + 1; q < 3; ++q) {
        if (std::abs(a[p][q]) < 1e-300) continue;
        const double theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
        const double t = (theta >= 0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (int r = 0; r < 3; ++r) {
          const double arp = a[r][p], arq = a[r][q];
          a[r][p] = c * arp - s * arq;
          a[r][q] = s * arp + c * arq;
        }
        for (int r = 0; r < 3; ++r) {
          const double apr = a[p][r], aqr = a[q][r];
          a[p][r] = c * apr - s * aqr;
          a[q][r] = s * apr + c * aqr;
        }
        for (int r = 0; r < 3; ++r) {
          const double vrp = v[r][p], vrq = v[r][q];
          v[r][p] = c * vrp - s * vrq;
          v[r][q] = s * vrp + c * vrq;
        }
      }
    }
  }
  int order[3] = {0, 1, 2};
  double d[3] = {a[0][0], a[1][1], a[2][2]};
  std::sort(order, order + 3, [&](int x, int y) { return d[x] < d[y]; });
  for (int i = 0; i < 3; ++i) {
    eval[i] = d[order[i]];
    for (int r = 0; r < 3; ++r) evec[r][i] = v[r][order[i]];
  }
}

}  // namespace

NormalEstimate estimate_normals(const PointCloud& pc, std::size_t k) {
  if (pc.size() < k) throw ArgumentError("estimate_normals: N < k");
  const NeighborIndex nn = knn(pc, pc, k);
  NormalEstimate est;
  est.cloud = pc;
  est.cloud.normals.assign(pc.size(), Vec3{0, 0, 1});
  est.degenerate.assign(pc.size(), false);
  for (std::size_t i = 0; i < pc.size(); ++i) {
    Vec3 mean{0, 0, 0};
    for (std::size_t j = 0; j < k; ++j)
      mean = mean + pc.coords[static_cast<std::size_t>(nn.index(i, j))];
    mean = mean * (1.0 / static_cast<double>(k));
    double cov[3][3] = {};
    for (std::size_t j = 0; j < k; ++j) {
      const Vec3 d = pc.coords[static_cast<std::size_t>(nn.index(i, j))] - mean;
      for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) cov[r][c] += d[r] * d[c];
    }
    double eval[3], evec[3][3];
    eigen_sym3(cov, eval, evec);
    // rank < 2: the two largest eigenvalues must both be nonzero.
    const double scale = std::max(eval[2], 1e-300);
    if (eval[1] <= 1e-9 * scale || eval[2] <= 0.0) {
      est.degenerate[i] = true;
      continue;
    }
    Vec3 n{evec[0][0], evec[1][0], evec[2][0]};
    n = n * (1.0 / norm(n));
    if (dot(n, pc.coords[i] - mean) < 0.0) n = n * -1.0;
    est.cloud.normals[i] = n;
  }
  return est;
}

}  // namespace prodat::geo
