#include "prodat/taildrop.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "prodat/density.hpp"

namespace prodat::taildrop {

namespace {

// Min-max across channels; a constant vector maps to all zeros.
void minmax_normalize(std::vector<double>& v) {
  const auto [lo_it, hi_it] = std::minmax_element(v.begin(), v.end());
  const double lo = *lo_it;
  const double span = *hi_it - lo;
  if (span <= 0.0) {
    std::fill(v.begin(), v.end(), 0.0);
    return;
  }
  for (double& x : v) x = (x - lo) / span;
}

}  // namespace

std::vector<int> ChannelImportance::ranking() const {
  std::vector<int> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return scores[static_cast<std::size_t>(a)] > scores[static_cast<std::size_t>(b)];
  });
  return order;
}

std::size_t DropMask::popcount() const {
  std::size_t n = 0;
  for (auto b : bits) n += b;
  return n;
}

ChannelImportance channel_importance(const nn::Tensor& z, double beta) {
  const int m = z.rows;
  const int c = z.cols;
  if (m < 1 || c < 1) throw ArgumentError("channel_importance: empty latent");
  std::vector<double> var(static_cast<std::size_t>(c), 0.0);
  std::vector<double> grad(static_cast<std::size_t>(c), 0.0);
  for (int ch = 0; ch < c; ++ch) {
    double mean = 0.0;
    for (int j = 0; j < m; ++j) mean += z.at(j, ch);
    mean /= static_cast<double>(m);
    double acc = 0.0;
    for (int j = 0; j < m; ++j) {
      const double d = z.at(j, ch) - mean;
      acc += d * d;
    }
    var[static_cast<std::size_t>(ch)] = acc / static_cast<double>(m);
    if (m >= 2) {
      double g = 0.0;
      for (int j = 0; j + 1 < m; ++j) g += std::abs(z.at(j + 1, ch) - z.at(j, ch));
      grad[static_cast<std::size_t>(ch)] = g / static_cast<double>(m - 1);
    }
  }
  minmax_normalize(var);
  minmax_normalize(grad);
  ChannelImportance imp;
  imp.beta = beta;
  imp.provenance = ImportanceKind::combined;
  imp.scores.resize(static_cast<std::size_t>(c));
  for (int ch = 0; ch < c; ++ch)
    imp.scores[static_cast<std::size_t>(ch)] =
        beta * var[static_cast<std::size_t>(ch)] +
        (1.0 - beta) * grad[static_cast<std::size_t>(ch)];
  return imp;
}

DropMask mask_from_ranking(const std::vector<int>& ranking, std::size_t k,
                           double rho) {
  DropMask mask;
  mask.rho = rho;
  mask.k = k;
  mask.bits.assign(ranking.size(), 0);
  for (std::size_t i = 0; i < k; ++i)
    mask.bits[static_cast<std::size_t>(ranking[i])] = 1;
  return mask;
}

DropMask build_mask(const ChannelImportance& importance, double rho,
                    bool evaluation_mode) {
  if (rho < 0.0 || rho > 1.0) throw ArgumentError("build_mask: rho outside [0,1]");
  const std::size_t c = importance.scores.size();
  std::size_t k = static_cast<std::size_t>(
      std::ceil((1.0 - rho) * static_cast<double>(c) - 1e-12));
  if (k == 0 && !evaluation_mode) k = 1;  // training floor
  return mask_from_ranking(importance.ranking(), k, rho);
}

nn::Tensor apply_tail_drop(const nn::Tensor& z, const DropMask& mask) {
  nn::Tensor out = z;
  apply_tail_drop_inplace(out, mask);
  return out;
}

void apply_tail_drop_inplace(nn::Tensor& z, const DropMask& mask) {
  if (static_cast<std::size_t>(z.cols) != mask.bits.size())
    throw ArgumentError("apply_tail_drop: mask length != channel count");
  for (int j = 0; j < z.rows; ++j)
    for (int ch = 0; ch < z.cols; ++ch)
      if (!mask.bits[static_cast<std::size_t>(ch)]) z.at(j, ch) = 0.0;
}

double sample_training_drop(double delta_scene, Rng& rng,
                            const TrainingDropPolicy& policy) {
  if (delta_scene < 0.0 || delta_scene > 1.0)
    throw ArgumentError("sample_training_drop: delta outside [0,1]");
  if (rng.uniform() < policy.density_mix)
    return density::drop_ratio_scalar(delta_scene, policy.rho_min, policy.rho_max);
  const double hi = static_cast<double>(policy.channels - 1) /
                    static_cast<double>(policy.channels);
  return rng.uniform(0.0, hi);
}

}  // namespace prodat::taildrop
