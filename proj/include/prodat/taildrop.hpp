#pragma once

#include <vector>

#include "prodat/common.hpp"
#include "prodat/nn.hpp"

namespace prodat::taildrop {

enum class ImportanceKind { variance, gradient, combined };

struct ChannelImportance {
  std::vector<double> scores;  // per channel
  ImportanceKind provenance = ImportanceKind::combined;
  double beta = 0.6;

  // Channel indices sorted by descending score, ties to lower index.
  std::vector<int> ranking() const;
};

struct DropMask {
  std::vector<std::uint8_t> bits;  // 1 = retained
  double rho = 0.0;
  std::size_t k = 0;

  std::size_t popcount() const;
};

// Latent laid out as [M positions, C channels]; position order is the
// encoder's emission order. Var_c is the population variance over
// positions, Grad_c the mean absolute adjacent-position difference; both
// are min-max normalized across channels before the beta blend.
ChannelImportance channel_importance(const nn::Tensor& z_positions_by_channels,
                                     double beta = 0.6);

// Retains the top k = ceil((1-rho)*C) channels by score, ties to lower
// channel index. k = 0 is only legal in evaluation mode.
DropMask build_mask(const ChannelImportance& importance, double rho,
                    bool evaluation_mode = false);

DropMask mask_from_ranking(const std::vector<int>& ranking, std::size_t k,
                           double rho);

// Zeroes masked channels across all positions. z is [M, C].
nn::Tensor apply_tail_drop(const nn::Tensor& z, const DropMask& mask);

void apply_tail_drop_inplace(nn::Tensor& z, const DropMask& mask);

struct TrainingDropPolicy {
  double rho_min = 0.15;
  double rho_max = 0.40;
  double density_mix = 0.5;  // probability of the density-derived branch
  int channels = 32;
};

// With probability density_mix returns the density-derived rho for the
// scene; otherwise a uniform draw over [0, (C-1)/C] so training visits
// every truncation depth used at inference.
double sample_training_drop(double delta_scene, Rng& rng,
                            const TrainingDropPolicy& policy);

}  // namespace prodat::taildrop
