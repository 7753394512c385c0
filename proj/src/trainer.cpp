#include "prodat/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

#include "prodat/entropy.hpp"
#include "prodat/geometry.hpp"

namespace prodat::train {

Trainer::Trainer(const RunConfig& cfg, std::vector<PointCloud> dataset)
    : cfg_(cfg),
      dataset_(std::move(dataset)),
      caches_(dataset_.size()),
      model_(cfg.model),
      rng_(cfg.seed) {
  cfg_.validate();
  if (dataset_.empty()) throw ArgumentError("trainer: empty dataset");
  adam_.base_lr = cfg_.base_lr;
  norm_.gamma = cfg_.gamma;
  model_.init_params();
}

const codec::GeometryCache& Trainer::cache(std::size_t cloud) {
  auto& slot = caches_.at(cloud);
  if (!slot) slot = codec::GeometryCache::build(dataset_[cloud], cfg_.model);
  return *slot;
}

codec::LossBreakdown Trainer::step_cloud(std::size_t cloud, double inv_batch) {
  using Id = nn::Tape::Id;
  const codec::GeometryCache& geom = cache(cloud);
  const PointCloud& pc = dataset_[cloud];
  const auto n = static_cast<double>(pc.size());
  const int c = cfg_.model.feature_channels;
  const int cx = cfg_.model.coord_channels;

  nn::Tape tape;
  const auto p = model_.leaf_params(tape, true);
  const auto enc = model_.build_encoder(tape, geom, p);

  // Scene drop ratio: density branch with probability density_mix, else a
  // uniform draw over the truncation grid.
  if (!norm_.initialized()) density::ema_update(norm_, geom.d_num, geom.d_dist);
  const density::DensityScore score =
      density::composite_score({geom.d_num, geom.d_dist}, norm_);
  taildrop::TrainingDropPolicy policy;
  policy.rho_min = cfg_.rho_min;
  policy.rho_max = cfg_.rho_max;
  policy.density_mix = cfg_.density_mix;
  policy.channels = c;
  const double rho = taildrop::sample_training_drop(
      density::scene_delta(score), rng_, policy);

  const auto imp_z = taildrop::channel_importance(tape.value(enc.z), cfg_.beta);
  const auto mask_z = taildrop::build_mask(imp_z, rho);
  const auto imp_x =
      taildrop::channel_importance(tape.value(enc.z_xyz), cfg_.beta);
  const double rho_x =
      cfg_.drop_strategy == DropStrategy::feature_only ? 0.0 : rho;
  const auto mask_x = taildrop::build_mask(imp_x, rho_x);

  // Train-mode quantization: uniform noise, then the hard channel mask so
  // dropped channels are exactly zero, matching inference.
  auto masked_noisy = [&](Id zid, const taildrop::DropMask& mask) {
    const nn::Tensor& v = tape.value(zid);
    Id noisy = tape.add(zid, tape.leaf(entropy::uniform_noise_like(v, rng_)));
    nn::Tensor m(v.rows, v.cols);
    for (int i = 0; i < v.rows; ++i)
      for (int j = 0; j < v.cols; ++j)
        m.at(i, j) = mask.bits[static_cast<std::size_t>(j)] ? 1.0 : 0.0;
    return tape.multiply(noisy, tape.leaf(std::move(m)));
  };
  const Id zt = masked_noisy(enc.z, mask_z);
  const Id xt = masked_noisy(enc.z_xyz, mask_x);

  // Rate over retained channels, in bits per point.
  Id rate = tape.leaf(nn::Tensor::scalar(0.0));
  for (int ch = 0; ch < c; ++ch)
    if (mask_z.bits[static_cast<std::size_t>(ch)])
      rate = tape.add(rate, model_.entropy_z().rate_nats(
                                tape, tape.slice_cols(zt, ch, 1), ch, p));
  for (int ch = 0; ch < cx; ++ch)
    if (mask_x.bits[static_cast<std::size_t>(ch)])
      rate = tape.add(rate, model_.entropy_xyz().rate_nats(
                                tape, tape.slice_cols(xt, ch, 1), ch, p));
  const Id bpp = tape.scale(rate, 1.0 / (std::log(2.0) * n));

  const auto dec = model_.build_decoder(tape, zt, xt, geom.d_num, p);

  // Chamfer with correspondences frozen at the current iterate.
  const nn::Tensor& child_v = tape.value(dec.children);
  PointCloud rec;
  rec.coords = codec::points_from_tensor(child_v);
  const geo::NeighborIndex o2c = geo::knn(rec, pc, 1);
  const geo::NeighborIndex c2o = geo::knn(pc, rec, 1);
  std::vector<int> idx_o2c(pc.size());
  for (std::size_t i = 0; i < pc.size(); ++i) idx_o2c[i] = o2c.index(i, 0);
  nn::Tensor orig_t = codec::tensor_from_points(pc.coords);
  nn::Tensor matched(child_v.rows, 3);
  for (int j = 0; j < child_v.rows; ++j) {
    const Vec3& q = pc.coords[static_cast<std::size_t>(
        c2o.index(static_cast<std::size_t>(j), 0))];
    for (int a = 0; a < 3; ++a) matched.at(j, a) = q[a];
  }
  auto mean_sq = [&](Id a, Id b, double count) {
    Id d = tape.sub(a, b);
    return tape.scale(tape.reduce_sum(tape.multiply(d, d)), 1.0 / count);
  };
  const Id cd_fwd = mean_sq(tape.gather_rows(dec.children, idx_o2c),
                            tape.leaf(std::move(orig_t)), n);
  const Id cd_bwd = mean_sq(dec.children, tape.leaf(std::move(matched)),
                            static_cast<double>(child_v.rows));
  const Id cd = tape.add(cd_fwd, cd_bwd);

  // Density head regression against the observed bucket sizes.
  nn::Tensor dnum_t(static_cast<int>(geom.d_num.size()), 1);
  for (int i = 0; i < dnum_t.rows; ++i)
    dnum_t.at(i, 0) = geom.d_num[static_cast<std::size_t>(i)];
  Id ddiff = tape.sub(dec.counts, tape.leaf(std::move(dnum_t)));
  const Id dens = tape.reduce_mean(tape.multiply(ddiff, ddiff));

  // Coordinate-latent consistency; shrinks dropped coordinate channels.
  Id cdiff = tape.sub(enc.z_xyz, xt);
  const Id coord = tape.reduce_mean(tape.multiply(cdiff, cdiff));

  // Emitted-point budget: |sum(counts) - N| / N.
  const Id points = tape.scale(
      tape.elementwise_abs(tape.add_const(tape.reduce_sum(dec.counts), -n)),
      1.0 / n);

  Id total = cd;
  total = tape.add(total, tape.scale(dens, cfg_.weights.sigma));
  total = tape.add(total, tape.scale(coord, cfg_.weights.omega));
  total = tape.add(total, tape.scale(points, cfg_.weights.eta));
  total = tape.add(total, tape.scale(bpp, cfg_.weights.lambda));

  const codec::LossBreakdown breakdown = codec::make_loss_breakdown(
      tape.value(cd).data[0], tape.value(dens).data[0],
      tape.value(coord).data[0], tape.value(points).data[0],
      tape.value(bpp).data[0], cfg_.weights);

  tape.backward(tape.scale(total, inv_batch));
  for (const auto& [name, id] : p) {
    nn::Parameter& param = model_.params().get(name);
    const nn::Tensor& g = tape.grad(id);
    for (std::size_t i = 0; i < g.data.size(); ++i) param.grad.data[i] += g.data[i];
  }
  return breakdown;
}

codec::LossBreakdown Trainer::step(const std::vector<std::size_t>& batch,
                                   double lr) {
  if (batch.empty()) throw ArgumentError("trainer: empty batch");
  model_.params().zero_grads();
  const double inv = 1.0 / static_cast<double>(batch.size());
  codec::LossBreakdown mean;
  std::vector<double> batch_dnum, batch_ddist;
  for (std::size_t cloud : batch) {
    const codec::LossBreakdown b = step_cloud(cloud, inv);
    mean.cd += inv * b.cd;
    mean.dens += inv * b.dens;
    mean.coord += inv * b.coord;
    mean.points += inv * b.points;
    mean.bpp += inv * b.bpp;
    const auto& geom = cache(cloud);
    batch_dnum.insert(batch_dnum.end(), geom.d_num.begin(), geom.d_num.end());
    batch_ddist.insert(batch_ddist.end(), geom.d_dist.begin(), geom.d_dist.end());
  }
  mean.weights = cfg_.weights;
  mean = codec::make_loss_breakdown(mean.cd, mean.dens, mean.coord, mean.points,
                                    mean.bpp, cfg_.weights);
  if (!std::isfinite(mean.total))
    throw ModelError("training diverged: non-finite loss");
  nn::adam_step(model_.params(), adam_, lr);
  density::ema_update(norm_, batch_dnum, batch_ddist);
  step_losses_.push_back(mean.total);
  return mean;
}

bool Trainer::run(std::ostream* log) {
  Checkpoint last_good = checkpoint();
  for (int epoch = 0; epoch < cfg_.epochs; ++epoch) {
    const double lr = nn::lr_schedule(static_cast<std::uint64_t>(epoch),
                                      cfg_.base_lr);
    std::vector<std::size_t> order(dataset_.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[rng_.uniform_index(i)]);

    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = lr;
    int steps = 0;
    const auto bs = static_cast<std::size_t>(cfg_.batch_size);
    for (std::size_t start = 0; start < order.size(); start += bs) {
      const std::vector<std::size_t> batch(
          order.begin() + static_cast<long>(start),
          order.begin() + static_cast<long>(std::min(start + bs, order.size())));
      codec::LossBreakdown b;
      try {
        b = step(batch, lr);
      } catch (const ModelError&) {
        // Divergence: drop back to the last end-of-epoch state.
        model_.params() = last_good.params;
        adam_ = last_good.adam;
        norm_ = last_good.norm;
        epochs_completed_ = last_good.epochs_completed;
        if (log) *log << "epoch " << epoch << " diverged; keeping epoch "
                      << epochs_completed_ << " state\n";
        return false;
      }
      rec.mean.cd += b.cd;
      rec.mean.dens += b.dens;
      rec.mean.coord += b.coord;
      rec.mean.points += b.points;
      rec.mean.bpp += b.bpp;
      rec.mean_total += b.total;
      ++steps;
    }
    const double inv = 1.0 / std::max(steps, 1);
    rec.mean_total *= inv;
    rec.mean = codec::make_loss_breakdown(rec.mean.cd * inv, rec.mean.dens * inv,
                                          rec.mean.coord * inv,
                                          rec.mean.points * inv,
                                          rec.mean.bpp * inv, cfg_.weights);
    epoch_log_.push_back(rec);
    epochs_completed_ = static_cast<std::uint64_t>(epoch) + 1;
    if (log)
      *log << "epoch " << epoch << " lr " << lr << " loss " << rec.mean_total
           << " cd " << rec.mean.cd << " bpp " << rec.mean.bpp << "\n";
    last_good = checkpoint();
  }
  return true;
}

Checkpoint Trainer::checkpoint() const {
  Checkpoint cp;
  cp.run = cfg_;
  cp.params = model_.params();
  cp.adam = adam_;
  cp.norm = norm_;
  cp.epochs_completed = epochs_completed_;
  return cp;
}

}  // namespace prodat::train
