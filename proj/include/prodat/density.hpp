#pragma once

#include <vector>

#include "prodat/geometry.hpp"

namespace prodat::density {

struct DensityStats {
  std::vector<double> d_num;   // per downsampled point, bucket size
  std::vector<double> d_dist;  // mean distance of the bucket to its sample
};

// EMA-tracked upper bounds used to normalize the density statistics.
struct NormalizationState {
  double d_max = 0.0;
  double m_max = 0.0;
  double gamma = 0.1;
  std::uint64_t t = 0;

  bool initialized() const { return t > 0; }
};

struct DensityScore {
  std::vector<double> delta;  // in [0,1]
};

DensityStats compute_density_stats(const geo::AssignmentMap& assignment,
                                   const PointCloud& original,
                                   const PointCloud& downsampled);

// delta = 0.5 * (d_num/d_max + (1 - d_dist/m_max)), ratios clamped to
// [0,1] before combining.
DensityScore composite_score(const DensityStats& stats,
                             const NormalizationState& norm);

// rho = rho_max - (rho_max - rho_min) * delta, per point.
std::vector<double> drop_ratio(const DensityScore& delta,
                               double rho_min = 0.15, double rho_max = 0.40);

double drop_ratio_scalar(double delta, double rho_min = 0.15,
                         double rho_max = 0.40);

// Nearest-rank percentile: element at 1-based index ceil(0.95*n) of the
// ascending sort.
double percentile_95(const std::vector<double>& values);

// theta <- (1-gamma)*theta + gamma*P95(batch); the first call seeds each
// bound with max(P95(batch), 1e-6).
void ema_update(NormalizationState& norm, const std::vector<double>& batch_d_num,
                const std::vector<double>& batch_d_dist);

// Scene-level drop ratio: mean of per-point rho over the downsampled set.
double scene_drop_ratio(const DensityScore& delta, double rho_min = 0.15,
                        double rho_max = 0.40);

// Mean composite score over the scene, used by the training-drop policy.
double scene_delta(const DensityScore& delta);

}  // namespace prodat::density
