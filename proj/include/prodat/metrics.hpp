#pragma once

#include <limits>
#include <string>
#include <vector>

#include "prodat/pointcloud.hpp"

namespace prodat::metrics {

// Symmetric squared-form Chamfer distance: sum of the two directional
// means of squared nearest-neighbor distances.
double chamfer_distance(const PointCloud& a, const PointCloud& b);

enum class PsnrMode { D1, D2 };

struct PsnrOptions {
  PsnrMode mode = PsnrMode::D1;
  // The printed formula squares the already-squared diagonal; the
  // conventional flag uses the squared diagonal once.
  bool conventional_peak = false;
  std::size_t normal_k = 16;  // fallback normal estimation for D2
};

constexpr double kPsnrInfinity = std::numeric_limits<double>::infinity();

// PSNR in dB; identical clouds return the +infinity sentinel. Throws on a
// zero-extent original.
double psnr_d(const PointCloud& original, const PointCloud& reconstruction,
              const PsnrOptions& opts);

inline double psnr_d(const PointCloud& original, const PointCloud& recon,
                     PsnrMode mode) {
  PsnrOptions o;
  o.mode = mode;
  return psnr_d(original, recon, o);
}

struct RDPoint {
  double bpp = 0.0;
  double quality = 0.0;  // dB or CD
  std::string label;
};

// Bjontegaard delta rate in percent: cubic fit of log10(rate) over
// quality, integrated over the common quality interval.
double bd_rate(const std::vector<RDPoint>& anchor,
               const std::vector<RDPoint>& test);

void write_rd_csv(const std::string& path, const std::vector<RDPoint>& points);
std::vector<RDPoint> read_rd_csv(const std::string& path);

}  // namespace prodat::metrics
