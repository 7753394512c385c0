#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "prodat/codec.hpp"

using namespace prodat;
using codec::GeometryCache;
using codec::ModelConfig;
using codec::ProdatModel;
using nn::Tensor;

namespace {

PointCloud random_cloud(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  PointCloud pc;
  for (std::size_t i = 0; i < n; ++i)
    pc.coords.push_back(
        {rng.uniform(0.05, 0.95), rng.uniform(0.05, 0.95),
         rng.uniform(0.05, 0.95)});
  return pc;
}

ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.feature_channels = 4;
  cfg.coord_channels = 4;
  cfg.hidden = 6;
  cfg.neighborhood_k = 4;
  cfg.stage_factors = {1.0 / 2, 1.0 / 2};
  cfg.seed = 3;
  return cfg;
}

}  // namespace

TEST_CASE("stage cardinalities: 96 -> 4 and 2048 -> 86") {
  const ModelConfig cfg;
  CHECK(cfg.latent_count(96) == 4);
  CHECK(cfg.latent_count(2048) == 86);
  CHECK(cfg.upsample_total() == 24);
  CHECK(cfg.upsample_stages() == std::vector<int>{4, 3, 2});
}

TEST_CASE("encode shapes on a 96-point cloud") {
  ProdatModel model{ModelConfig{}};
  model.init_params();
  const PointCloud pc = random_cloud(96, 1);
  const auto code = model.encode(pc);
  CHECK(code.M == 4);
  CHECK(code.z.rows == 4);
  CHECK(code.z.cols == 32);
  CHECK(code.z_xyz.rows == 4);
  CHECK(code.z_xyz.cols == 16);
  CHECK(code.d.size() == 4);
  CHECK(code.sample_coords.size() == 4);
  double total = 0;
  for (double d : code.d) total += d;
  CHECK(total == doctest::Approx(96.0));
  for (double v : code.z.data) CHECK(std::isfinite(v));
  for (double v : code.z_xyz.data) CHECK(std::isfinite(v));
}

TEST_CASE("encoding is invariant to input point order") {
  ProdatModel model{tiny_config()};
  model.init_params();
  const PointCloud pc = random_cloud(64, 2);
  PointCloud shuffled = pc;
  Rng rng(9);
  for (std::size_t i = shuffled.size(); i > 1; --i)
    std::swap(shuffled.coords[i - 1],
              shuffled.coords[rng.uniform_index(i)]);
  const auto a = model.encode(pc);
  const auto b = model.encode(shuffled);
  REQUIRE(a.M == b.M);
  // Anchors come out in farthest-point order, which depends only on the
  // geometry, so rows line up directly.
  for (std::size_t i = 0; i < a.M; ++i) {
    for (int ax = 0; ax < 3; ++ax)
      CHECK(a.sample_coords[i][ax] ==
            doctest::Approx(b.sample_coords[i][ax]).epsilon(1e-9));
  }
  for (std::size_t i = 0; i < a.z.data.size(); ++i)
    CHECK(a.z.data[i] == doctest::Approx(b.z.data[i]).epsilon(1e-6));
  for (std::size_t i = 0; i < a.z_xyz.data.size(); ++i)
    CHECK(a.z_xyz.data[i] == doctest::Approx(b.z_xyz.data[i]).epsilon(1e-6));
}

TEST_CASE("a degenerate constant-position cloud stays finite") {
  ProdatModel model{tiny_config()};
  model.init_params();
  PointCloud pc;
  for (int i = 0; i < 32; ++i) pc.coords.push_back({0.5, 0.5, 0.5});
  const auto code = model.encode(pc);
  for (double v : code.z.data) CHECK(std::isfinite(v));
  for (double v : code.z_xyz.data) CHECK(std::isfinite(v));
  const PointCloud out = model.decode(code.z, code.z_xyz, code.d);
  for (const auto& p : out.coords)
    for (int ax = 0; ax < 3; ++ax) CHECK(std::isfinite(p[ax]));
}

TEST_CASE("decode accepts every mask cardinality") {
  ProdatModel model{ModelConfig{}};
  model.init_params();
  const PointCloud pc = random_cloud(128, 3);
  const auto code = model.encode(pc);
  const auto q = entropy::QuantizedLatent::from(code.z, code.z_xyz);
  const auto imp_z = taildrop::channel_importance(code.z, 0.6);
  const auto imp_x = taildrop::channel_importance(code.z_xyz, 0.6);
  const std::size_t max_pts =
      code.M * static_cast<std::size_t>(model.config().upsample_total());
  for (int k = 1; k <= 32; k += 7) {
    const double rho = 1.0 - double(k) / 32;
    Tensor z = taildrop::apply_tail_drop(q.zq, taildrop::build_mask(imp_z, rho, true));
    Tensor zx = taildrop::apply_tail_drop(
        q.zxyzq, taildrop::build_mask(imp_x, rho, true));
    const PointCloud out = model.decode(z, zx, code.d);
    CHECK(out.size() >= code.M);
    CHECK(out.size() <= max_pts);
    for (const auto& p : out.coords)
      for (int ax = 0; ax < 3; ++ax) CHECK(std::isfinite(p[ax]));
  }
}

TEST_CASE("emission counts round and clamp against capacity") {
  Tensor counts(4, 1);
  counts.at(0, 0) = 1.2;
  counts.at(1, 0) = 23.7;
  counts.at(2, 0) = 0.2;   // below the soft floor, still >= 1 after rounding
  counts.at(3, 0) = 99.0;  // above capacity, clamped
  const auto em = codec::ProdatModel::emission_counts(counts, 24);
  CHECK(em == std::vector<int>{1, 24, 1, 24});
}

TEST_CASE("loss breakdown identities") {
  codec::LossWeights w;
  const auto zero = codec::make_loss_breakdown(0, 0, 0, 0, 0, w);
  CHECK(zero.total == 0.0);

  const auto a = codec::make_loss_breakdown(0.2, 3.0, 7.0, 0.1, 4.0, w);
  CHECK(a.total == doctest::Approx(0.2 + w.sigma * 3.0 + w.omega * 7.0 +
                                   w.eta * 0.1 + w.lambda * 4.0)
                       .epsilon(1e-12));

  // Total is affine in lambda with slope bpp.
  codec::LossWeights w2 = w;
  w2.lambda = w.lambda + 0.5;
  const auto b = codec::make_loss_breakdown(0.2, 3.0, 7.0, 0.1, 4.0, w2);
  CHECK(b.total - a.total == doctest::Approx(0.5 * 4.0).epsilon(1e-12));
}

TEST_CASE("geometry cache matches the model's stage plan") {
  const ModelConfig cfg = tiny_config();
  const PointCloud pc = random_cloud(40, 4);
  const auto geom = GeometryCache::build(pc, cfg);
  REQUIRE(geom.stages.size() == 2);
  CHECK(geom.stages[0].fps_idx.size() == 20);
  CHECK(geom.stages[1].fps_idx.size() == 10);
  CHECK(geom.sample_coords.size() == 10);
  CHECK(geom.d_num.size() == 10);
  CHECK(geom.n_points == 40);
  double total = 0;
  for (double d : geom.d_num) total += d;
  CHECK(total == doctest::Approx(40.0));
  // knn indices address the stage input cloud.
  for (int idx : geom.stages[1].knn_flat) {
    CHECK(idx >= 0);
    CHECK(idx < 20);
  }
}

TEST_CASE("end-to-end graph gradients match finite differences") {
  ModelConfig cfg = tiny_config();
  cfg.neighborhood_k = 3;
  ProdatModel model{cfg};
  model.init_params();
  const PointCloud pc = random_cloud(12, 5);
  const auto geom = GeometryCache::build(pc, cfg);

  auto forward = [&](bool with_grads, nn::Tape& tape) {
    const auto p = model.leaf_params(tape, with_grads);
    const auto enc = model.build_encoder(tape, geom, p);
    const auto dec = model.build_decoder(tape, enc.z, enc.z_xyz, geom.d_num, p);
    const auto scalar =
        tape.add(tape.add(tape.reduce_mean(dec.children),
                          tape.reduce_mean(dec.counts)),
                 tape.reduce_mean(tape.multiply(enc.z, enc.z)));
    if (with_grads) {
      tape.backward(scalar);
      for (const auto& [name, id] : p) {
        nn::Parameter& param = model.params().get(name);
        const nn::Tensor& g = tape.grad(id);
        for (std::size_t i = 0; i < g.data.size(); ++i)
          param.grad.data[i] += g.data[i];
      }
    }
    return tape.value(scalar).data[0];
  };

  nn::Tape tape;
  model.params().zero_grads();
  forward(true, tape);

  // Spot-check a spread of coordinates in every parameter tensor.
  const double h = 1e-5;
  std::size_t total = 0, good = 0;
  Rng rng(6);
  for (auto& [name, param] : model.params().params) {
    for (int probe = 0; probe < 3; ++probe) {
      const std::size_t i = rng.uniform_index(param.value.data.size());
      const double keep = param.value.data[i];
      param.value.data[i] = keep + h;
      nn::Tape tp;
      const double up = forward(false, tp);
      param.value.data[i] = keep - h;
      nn::Tape tm;
      const double dn = forward(false, tm);
      param.value.data[i] = keep;
      const double fd = (up - dn) / (2 * h);
      const double an = param.grad.data[i];
      const double denom = std::max({std::abs(fd), std::abs(an), 1e-6});
      ++total;
      if (std::abs(fd - an) / denom <= 2e-4) ++good;
    }
  }
  // Allow a handful of kinks (relu corners, max-pool argmax flips).
  CHECK(good >= static_cast<std::size_t>(std::ceil(0.95 * double(total))));
}
