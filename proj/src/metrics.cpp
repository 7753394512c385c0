#include "prodat/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "prodat/geometry.hpp"

namespace prodat::metrics {

double chamfer_distance(const PointCloud& a, const PointCloud& b) {
  if (a.size() == 0 || b.size() == 0)
    throw ArgumentError("chamfer_distance: empty cloud");
  const geo::NeighborIndex ab = geo::knn(b, a, 1);
  const geo::NeighborIndex ba = geo::knn(a, b, 1);
  double sum_ab = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = ab.distance(i, 0);
    sum_ab += d * d;
  }
  double sum_ba = 0.0;
  for (std::size_t i = 0; i < b.size(); ++i) {
    const double d = ba.distance(i, 0);
    sum_ba += d * d;
  }
  return sum_ab / static_cast<double>(a.size()) +
         sum_ba / static_cast<double>(b.size());
}

namespace {

// Directional mean of D1 (squared NN distance) or D2 (squared projection
// onto the reference normal, which always lives on the original cloud).
double directional_mse(const PointCloud& from, const PointCloud& to,
                       PsnrMode mode, const PointCloud& original,
                       bool from_is_original) {
  const geo::NeighborIndex nn = geo::knn(to, from, 1);
  double acc = 0.0;
  for (std::size_t i = 0; i < from.size(); ++i) {
    const std::size_t j = static_cast<std::size_t>(nn.index(i, 0));
    if (mode == PsnrMode::D1) {
      const double d = nn.distance(i, 0);
      acc += d * d;
    } else {
      const Vec3 disp = from.coords[i] - to.coords[j];
      // o->r: this point's own normal; r->o: the matched original's normal.
      const Vec3& n = from_is_original ? original.normals[i] : original.normals[j];
      const double proj = dot(disp, n);
      acc += proj * proj;
    }
  }
  return acc / static_cast<double>(from.size());
}

}  // namespace

double psnr_d(const PointCloud& original, const PointCloud& reconstruction,
              const PsnrOptions& opts) {
  if (original.size() == 0 || reconstruction.size() == 0)
    throw ArgumentError("psnr_d: empty cloud");
  const BoundingBox bb = BoundingBox::of(original);
  const double peak = bb.sq_diagonal();  // squared diagonal length
  if (peak <= 0.0) throw ArgumentError("psnr_d: zero-extent original");

  PointCloud orig = original;
  if (opts.mode == PsnrMode::D2 && !orig.has_normals())
    orig = geo::estimate_normals(original, opts.normal_k).cloud;

  const double mse_or =
      directional_mse(orig, reconstruction, opts.mode, orig, true);
  const double mse_ro =
      directional_mse(reconstruction, orig, opts.mode, orig, false);
  const double mse_max = std::max(mse_or, mse_ro);
  if (mse_max == 0.0) return kPsnrInfinity;
  const double peak_term = opts.conventional_peak ? peak : peak * peak;
  return 10.0 * std::log10(3.0 * peak_term / mse_max);
}

namespace {

// Least-squares cubic fit y(quality) = sum c_i q^i via normal equations
// with partial-pivot elimination.
std::array<double, 4> fit_cubic(const std::vector<double>& q,
                                const std::vector<double>& y) {
  double a[4][5] = {};
  for (std::size_t s = 0; s < q.size(); ++s) {
    double powq[7] = {1, 0, 0, 0, 0, 0, 0};
    for (int i = 1; i < 7; ++i) powq[i] = powq[i - 1] * q[s];
    for (int r = 0; r < 4; ++r) {
      for (int c = 0; c < 4; ++c) a[r][c] += powq[r + c];
      a[r][4] += powq[r] * y[s];
    }
  }
  for (int col = 0; col < 4; ++col) {
    int pivot = col;
    for (int r = col + 1; r < 4; ++r)
      if (std::abs(a[r][col]) > std::abs(a[pivot][col])) pivot = r;
    std::swap(a[col], a[pivot]);
    if (std::abs(a[col][col]) < 1e-300)
      throw ArgumentError("bd_rate: singular fit (degenerate curve)");
    for (int r = 0; r < 4; ++r) {
      if (r == col) continue;
      const double f = a[r][col] / a[col][col];
      for (int c = col; c < 5; ++c) a[r][c] -= f * a[col][c];
    }
  }
  return {a[0][4] / a[0][0], a[1][4] / a[1][1], a[2][4] / a[2][2],
          a[3][4] / a[3][3]};
}

double integrate_cubic(const std::array<double, 4>& c, double lo, double hi) {
  auto antideriv = [&](double x) {
    return c[0] * x + c[1] * x * x / 2 + c[2] * x * x * x / 3 +
           c[3] * x * x * x * x / 4;
  };
  return antideriv(hi) - antideriv(lo);
}

}  // namespace

double bd_rate(const std::vector<RDPoint>& anchor,
               const std::vector<RDPoint>& test) {
  if (anchor.size() < 4 || test.size() < 4)
    throw ArgumentError("bd_rate: need at least 4 points per curve");
  auto prep = [](std::vector<RDPoint> curve) {
    std::sort(curve.begin(), curve.end(),
              [](const RDPoint& a, const RDPoint& b) {
                return a.quality < b.quality;
              });
    std::vector<double> q, lr;
    for (const auto& p : curve) {
      if (!(p.bpp > 0.0)) throw ArgumentError("bd_rate: nonpositive rate");
      q.push_back(p.quality);
      lr.push_back(std::log10(p.bpp));
    }
    return std::pair{q, lr};
  };
  const auto [qa, la] = prep(anchor);
  const auto [qt, lt] = prep(test);
  const double lo = std::max(qa.front(), qt.front());
  const double hi = std::min(qa.back(), qt.back());
  if (!(hi > lo))
    throw ArgumentError("bd_rate: no overlapping quality interval");
  const auto ca = fit_cubic(qa, la);
  const auto ct = fit_cubic(qt, lt);
  const double diff =
      (integrate_cubic(ct, lo, hi) - integrate_cubic(ca, lo, hi)) / (hi - lo);
  return (std::pow(10.0, diff) - 1.0) * 100.0;
}

void write_rd_csv(const std::string& path, const std::vector<RDPoint>& points) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot write " + path);
  f << "label,bpp,quality\n";
  f.precision(12);
  for (const auto& p : points)
    f << p.label << "," << p.bpp << "," << p.quality << "\n";
}

std::vector<RDPoint> read_rd_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open " + path);
  std::vector<RDPoint> points;
  std::string line;
  bool first = true;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    if (first && line.rfind("label,", 0) == 0) {
      first = false;
      continue;
    }
    first = false;
    std::istringstream ls(line);
    RDPoint p;
    std::string bpp, quality;
    if (!std::getline(ls, p.label, ',') || !std::getline(ls, bpp, ',') ||
        !std::getline(ls, quality))
      throw ParseError(path + ": malformed RD csv line");
    p.bpp = std::stod(bpp);
    p.quality = std::stod(quality);
    points.push_back(std::move(p));
  }
  return points;
}

}  // namespace prodat::metrics
