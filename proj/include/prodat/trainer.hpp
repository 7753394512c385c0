#pragma once

#include <iosfwd>
#include <optional>
#include <vector>

#include "prodat/checkpoint.hpp"
#include "prodat/codec.hpp"

namespace prodat::train {

struct EpochRecord {
  int epoch = 0;       // 0-based
  double lr = 0.0;
  double mean_total = 0.0;
  codec::LossBreakdown mean;  // component means over the epoch's steps
};

class Trainer {
 public:
  Trainer(const RunConfig& cfg, std::vector<PointCloud> dataset);

  // One optimizer step over the given cloud indices. Throws ModelError on
  // a non-finite loss (divergence); the parameters are left untouched in
  // that case.
  codec::LossBreakdown step(const std::vector<std::size_t>& batch, double lr);

  // Full epoch loop: deterministic shuffle, lr schedule, per-epoch log
  // lines to `log` when given. Returns false if training diverged; the
  // model then holds the last end-of-epoch state.
  bool run(std::ostream* log = nullptr);

  Checkpoint checkpoint() const;

  codec::ProdatModel& model() { return model_; }
  const RunConfig& config() const { return cfg_; }
  const std::vector<double>& step_losses() const { return step_losses_; }
  const std::vector<EpochRecord>& epoch_log() const { return epoch_log_; }
  density::NormalizationState& norm() { return norm_; }
  std::uint64_t steps_done() const { return adam_.step; }

 private:
  codec::LossBreakdown step_cloud(std::size_t cloud, double inv_batch);
  const codec::GeometryCache& cache(std::size_t cloud);

  RunConfig cfg_;
  std::vector<PointCloud> dataset_;
  std::vector<std::optional<codec::GeometryCache>> caches_;
  codec::ProdatModel model_;
  nn::AdamState adam_;
  density::NormalizationState norm_;
  Rng rng_;
  std::vector<double> step_losses_;
  std::vector<EpochRecord> epoch_log_;
  std::uint64_t epochs_completed_ = 0;
};

}  // namespace prodat::train
