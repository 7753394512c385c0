#include "prodat/density.hpp"

#include <algorithm>
#include <cmath>

namespace prodat::density {

DensityStats compute_density_stats(const geo::AssignmentMap& assignment,
                                   const PointCloud& original,
                                   const PointCloud& downsampled) {
  const std::size_t m = downsampled.size();
  if (assignment.buckets.size() != m || assignment.nearest.size() != original.size())
    throw ArgumentError("compute_density_stats: assignment inconsistent");
  DensityStats stats;
  stats.d_num.assign(m, 0.0);
  stats.d_dist.assign(m, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    const auto& bucket = assignment.buckets[i];
    stats.d_num[i] = static_cast<double>(bucket.size());
    if (bucket.empty()) continue;
    double total = 0.0;
    for (int j : bucket)
      total += std::sqrt(sq_dist(original.coords[static_cast<std::size_t>(j)],
                                 downsampled.coords[i]));
    stats.d_dist[i] = total / static_cast<double>(bucket.size());
  }
  return stats;
}

DensityScore composite_score(const DensityStats& stats,
                             const NormalizationState& norm) {
  if (!norm.initialized())
    throw ArgumentError("composite_score: normalization state not initialized");
  DensityScore score;
  score.delta.resize(stats.d_num.size());
  for (std::size_t i = 0; i < stats.d_num.size(); ++i) {
    const double rn = std::clamp(stats.d_num[i] / norm.d_max, 0.0, 1.0);
    const double rd = std::clamp(stats.d_dist[i] / norm.m_max, 0.0, 1.0);
    score.delta[i] = 0.5 * (rn + (1.0 - rd));
  }
  return score;
}

double drop_ratio_scalar(double delta, double rho_min, double rho_max) {
  if (!(rho_min >= 0.0 && rho_min <= rho_max && rho_max <= 1.0))
    throw ArgumentError("drop_ratio: need 0 <= rho_min <= rho_max <= 1");
  return rho_max - (rho_max - rho_min) * delta;
}

std::vector<double> drop_ratio(const DensityScore& delta, double rho_min,
                               double rho_max) {
  std::vector<double> rho(delta.delta.size());
  for (std::size_t i = 0; i < rho.size(); ++i)
    rho[i] = drop_ratio_scalar(delta.delta[i], rho_min, rho_max);
  return rho;
}

double percentile_95(const std::vector<double>& values) {
  if (values.empty()) throw ArgumentError("percentile_95: empty input");
  std::vector<double> sorted = values;
  std::sort(sorted.begin(), sorted.end());
  const std::size_t rank = static_cast<std::size_t>(
      std::ceil(0.95 * static_cast<double>(sorted.size())));
  return sorted[std::max<std::size_t>(rank, 1) - 1];
}

void ema_update(NormalizationState& norm, const std::vector<double>& batch_d_num,
                const std::vector<double>& batch_d_dist) {
  if (batch_d_num.empty() || batch_d_dist.empty())
    throw ArgumentError("ema_update: empty batch");
  const double p_num = percentile_95(batch_d_num);
  const double p_dist = percentile_95(batch_d_dist);
  constexpr double eps = 1e-6;
  if (!norm.initialized()) {
    norm.d_max = std::max(p_num, eps);
    norm.m_max = std::max(p_dist, eps);
  } else {
    norm.d_max = (1.0 - norm.gamma) * norm.d_max + norm.gamma * p_num;
    norm.m_max = (1.0 - norm.gamma) * norm.m_max + norm.gamma * p_dist;
  }
  ++norm.t;
}

double scene_delta(const DensityScore& delta) {
  if (delta.delta.empty()) throw ArgumentError("scene_delta: empty score");
  double sum = 0.0;
  for (double d : delta.delta) sum += d;
  return sum / static_cast<double>(delta.delta.size());
}

double scene_drop_ratio(const DensityScore& delta, double rho_min,
                        double rho_max) {
  double sum = 0.0;
  for (double d : delta.delta) sum += drop_ratio_scalar(d, rho_min, rho_max);
  return sum / static_cast<double>(delta.delta.size());
}

}  // namespace prodat::density
