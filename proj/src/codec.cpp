#include "prodat/codec.hpp"

#include <algorithm>
#include <cmath>

namespace prodat::codec {

void ModelConfig::validate() const {
  if (feature_channels < 2 || coord_channels < 2)
    throw ArgumentError("ModelConfig: need C >= 2 and C_xyz >= 2");
  if (literal_xyz && coord_channels != 3)
    throw ArgumentError("ModelConfig: literal mode requires C_xyz = 3");
  for (double f : stage_factors) {
    const bool known = std::abs(f - 0.5) < 1e-12 || std::abs(f - 1.0 / 3) < 1e-12 ||
                       std::abs(f - 0.25) < 1e-12;
    if (!known)
      throw ArgumentError("ModelConfig: stage factors must be 1/2, 1/3, or 1/4");
  }
  if (stage_factors.empty()) throw ArgumentError("ModelConfig: no stages");
  if (neighborhood_k < 1 || hidden < 4) throw ArgumentError("ModelConfig: bad sizes");
}

std::size_t ModelConfig::latent_count(std::size_t n) const {
  std::size_t m = n;
  for (double f : stage_factors) m = geo::downsample_count(m, f);
  return m;
}

std::vector<int> ModelConfig::upsample_stages() const {
  std::vector<int> u;
  for (auto it = stage_factors.rbegin(); it != stage_factors.rend(); ++it)
    u.push_back(static_cast<int>(std::lround(1.0 / *it)));
  return u;
}

int ModelConfig::upsample_total() const {
  int total = 1;
  for (int e : upsample_stages()) total *= e;
  return total;
}

GeometryCache GeometryCache::build(const PointCloud& pc, const ModelConfig& cfg) {
  cfg.validate();
  const std::size_t min_n = static_cast<std::size_t>(cfg.upsample_total());
  if (pc.size() < min_n)
    throw ArgumentError("encode: need at least " + std::to_string(min_n) + " points");
  GeometryCache geom;
  geom.n_points = pc.size();
  PointCloud current = pc;
  const std::size_t k = static_cast<std::size_t>(cfg.neighborhood_k);
  for (double f : cfg.stage_factors) {
    Stage st;
    st.coords_in = current.coords;
    const std::size_t m = geo::downsample_count(current.size(), f);
    st.fps_idx = geo::farthest_point_sample(current, m);
    PointCloud samples = geo::select_points(current, st.fps_idx);
    const std::size_t kk = std::min(k, current.size());
    const geo::NeighborIndex nn = geo::knn(current, samples, kk);
    st.knn_flat.resize(m * k);
    st.repeat_idx.resize(m * k);
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < k; ++j) {
        // If the stage has fewer points than k, repeat the nearest.
        st.knn_flat[i * k + j] = nn.index(i, std::min(j, kk - 1));
        st.repeat_idx[i * k + j] = static_cast<int>(i);
      }
    }
    st.coords_out = samples.coords;
    geom.stages.push_back(std::move(st));
    current = std::move(samples);
  }
  geom.sample_coords = current.coords;
  const geo::AssignmentMap assign = geo::nearest_assignment(pc, current);
  const density::DensityStats stats =
      density::compute_density_stats(assign, pc, current);
  geom.d_num = stats.d_num;
  geom.d_dist = stats.d_dist;
  return geom;
}

nn::Tensor tensor_from_points(const std::vector<Vec3>& pts) {
  nn::Tensor t(static_cast<int>(pts.size()), 3);
  for (std::size_t i = 0; i < pts.size(); ++i)
    for (int a = 0; a < 3; ++a) t.at(static_cast<int>(i), a) = pts[i][a];
  return t;
}

std::vector<Vec3> points_from_tensor(const nn::Tensor& t) {
  std::vector<Vec3> pts(static_cast<std::size_t>(t.rows));
  for (int i = 0; i < t.rows; ++i)
    pts[static_cast<std::size_t>(i)] = {t.at(i, 0), t.at(i, 1), t.at(i, 2)};
  return pts;
}

ProdatModel::ProdatModel(ModelConfig cfg)
    : cfg_(std::move(cfg)),
      ent_z_("entz", cfg_.feature_channels),
      ent_xyz_("entxyz", cfg_.coord_channels) {
  cfg_.validate();
}

void ProdatModel::init_params() {
  Rng rng(cfg_.seed);
  const int h = cfg_.hidden;
  const int c = cfg_.feature_channels;
  const int cx = cfg_.coord_channels;
  auto linear = [&](const std::string& name, int in, int out, double gain = 1.0) {
    params_.add(name + ".w", nn::init_uniform(in, out, gain, rng));
    params_.add(name + ".b", nn::Tensor(1, out));
  };
  linear("enc.in", 3, h);
  for (std::size_t s = 0; s < cfg_.stage_factors.size(); ++s) {
    const std::string base = "enc.s" + std::to_string(s);
    linear(base + ".l1", h + 3, h);
    linear(base + ".l2", h, h);
  }
  linear("enc.zhead", h, c);
  linear("enc.xyzhead.l1", h + 3, h);
  // Small-gain head: the structured base carries coordinates at init.
  linear("enc.xyzhead.l2", h, cx, 0.1);

  linear("dec.anchor.l1", cx, h);
  linear("dec.anchor.l2", h, 3, 0.1);
  linear("dec.in.l1", c + 1, h);
  linear("dec.in.l2", h, h);
  linear("dec.count", h, 1);
  const auto ups = cfg_.upsample_stages();
  for (std::size_t s = 0; s < ups.size(); ++s) {
    const std::string base = "dec.u" + std::to_string(s);
    linear(base + ".off", h, ups[s] * 3, 0.3);
    if (s + 1 < ups.size()) linear(base + ".feat", h, ups[s] * h);
  }
  ent_z_.init_params(params_, rng);
  ent_xyz_.init_params(params_, rng);
}

std::map<std::string, nn::Tape::Id> ProdatModel::leaf_params(
    nn::Tape& tape, bool with_grads) const {
  std::map<std::string, nn::Tape::Id> ids;
  for (const auto& [name, p] : params_.params)
    ids[name] = tape.leaf(p.value, with_grads);
  return ids;
}

namespace {

using Id = nn::Tape::Id;
using IdMap = std::map<std::string, Id>;

Id linear_op(nn::Tape& t, const IdMap& p, const std::string& name, Id x) {
  return t.add_rowvec(t.matmul(x, p.at(name + ".w")), p.at(name + ".b"));
}

}  // namespace

ProdatModel::EncodeIds ProdatModel::build_encoder(nn::Tape& tape,
                                                  const GeometryCache& geom,
                                                  const IdMap& p) const {
  const std::size_t k = static_cast<std::size_t>(cfg_.neighborhood_k);
  Id coords = tape.leaf(tensor_from_points(geom.stages.front().coords_in));
  Id feats = tape.leaky_relu(linear_op(tape, p, "enc.in", coords));
  for (std::size_t s = 0; s < geom.stages.size(); ++s) {
    const auto& st = geom.stages[s];
    Id in_coords = tape.leaf(tensor_from_points(st.coords_in));
    Id samples = tape.leaf(tensor_from_points(st.coords_out));
    Id nf = tape.gather_rows(feats, st.knn_flat);
    Id np = tape.gather_rows(in_coords, st.knn_flat);
    Id centers = tape.gather_rows(samples, st.repeat_idx);
    Id rel = tape.sub(np, centers);
    Id x = tape.concat_cols(nf, rel);
    const std::string base = "enc.s" + std::to_string(s);
    Id h1 = tape.leaky_relu(linear_op(tape, p, base + ".l1", x));
    Id h2 = tape.leaky_relu(linear_op(tape, p, base + ".l2", h1));
    feats = tape.group_max_rows(h2, static_cast<int>(k));
  }
  Id z = linear_op(tape, p, "enc.zhead", feats);

  // Coordinate latent: structured base (first 3 channels carry scaled
  // centered sample coordinates) plus a learned residual head.
  const std::size_t m = geom.sample_coords.size();
  nn::Tensor base_emb(static_cast<int>(m), cfg_.coord_channels);
  for (std::size_t i = 0; i < m; ++i)
    for (int a = 0; a < 3 && a < cfg_.coord_channels; ++a)
      base_emb.at(static_cast<int>(i), a) =
          cfg_.xyz_gain * (geom.sample_coords[i][a] - 0.5);
  Id base_id = tape.leaf(std::move(base_emb));
  Id samples_final = tape.leaf(tensor_from_points(geom.sample_coords));
  Id xin = tape.concat_cols(feats, samples_final);
  Id xh = tape.leaky_relu(linear_op(tape, p, "enc.xyzhead.l1", xin));
  Id res = linear_op(tape, p, "enc.xyzhead.l2", xh);
  Id z_xyz = tape.add(base_id, res);
  return {z, z_xyz};
}

ProdatModel::DecodeIds ProdatModel::build_decoder(nn::Tape& tape, Id zq,
                                                  Id zxyzq,
                                                  const std::vector<double>& d,
                                                  const IdMap& p) const {
  const int m = tape.value(zq).rows;
  if (tape.value(zq).cols != cfg_.feature_channels ||
      tape.value(zxyzq).cols != cfg_.coord_channels ||
      tape.value(zxyzq).rows != m || static_cast<int>(d.size()) != m)
    throw ArgumentError("decode: latent shapes do not match config");
  const int u_total = cfg_.upsample_total();

  // Anchors: invert the structured coordinate base, then learned residual.
  nn::Tensor sel(cfg_.coord_channels, 3);
  for (int a = 0; a < 3 && a < cfg_.coord_channels; ++a)
    sel.at(a, a) = 1.0 / cfg_.xyz_gain;
  Id base = tape.add_const(tape.matmul(zxyzq, tape.leaf(std::move(sel))), 0.5);
  Id ah = tape.leaky_relu(linear_op(tape, p, "dec.anchor.l1", zxyzq));
  Id anchors = tape.add(base, linear_op(tape, p, "dec.anchor.l2", ah));

  // Density conditioning: d_num scaled to O(1) by the emission capacity.
  nn::Tensor dcond(m, 1);
  for (int i = 0; i < m; ++i)
    dcond.at(i, 0) = d[static_cast<std::size_t>(i)] / static_cast<double>(u_total);
  Id dnode = tape.leaf(std::move(dcond));
  Id hin = tape.concat_cols(zq, dnode);
  Id h = tape.leaky_relu(linear_op(tape, p, "dec.in.l1", hin));
  h = tape.leaky_relu(linear_op(tape, p, "dec.in.l2", h));

  // Soft emission count in [1, u_total].
  Id counts = tape.add_const(
      tape.scale(tape.sigmoid(linear_op(tape, p, "dec.count", h)),
                 static_cast<double>(u_total - 1)),
      1.0);

  const auto ups = cfg_.upsample_stages();
  Id pts = anchors;
  Id hh = h;
  int rows = m;
  for (std::size_t s = 0; s < ups.size(); ++s) {
    const int e = ups[s];
    const std::string basename = "dec.u" + std::to_string(s);
    std::vector<int> rep(static_cast<std::size_t>(rows) * e);
    for (int i = 0; i < rows; ++i)
      for (int j = 0; j < e; ++j) rep[static_cast<std::size_t>(i) * e + j] = i;
    Id off = tape.reshape(linear_op(tape, p, basename + ".off", hh), rows * e, 3);
    pts = tape.add(tape.gather_rows(pts, rep), off);
    if (s + 1 < ups.size()) {
      Id hf = tape.reshape(linear_op(tape, p, basename + ".feat", hh),
                           rows * e, cfg_.hidden);
      hh = tape.leaky_relu(tape.add(tape.gather_rows(hh, rep), hf));
    }
    rows *= e;
  }
  return {anchors, pts, counts};
}

LatentCode ProdatModel::encode(const PointCloud& pc) const {
  return encode(GeometryCache::build(pc, cfg_));
}

LatentCode ProdatModel::encode(const GeometryCache& geom) const {
  nn::Tape tape;
  const auto p = leaf_params(tape, false);
  const EncodeIds ids = build_encoder(tape, geom, p);
  LatentCode code;
  code.z = tape.value(ids.z);
  code.z_xyz = tape.value(ids.z_xyz);
  code.d = geom.d_num;
  code.sample_coords = geom.sample_coords;
  code.M = geom.sample_coords.size();
  return code;
}

std::vector<int> ProdatModel::emission_counts(const nn::Tensor& counts,
                                              int u_total) {
  std::vector<int> out(static_cast<std::size_t>(counts.rows));
  for (int i = 0; i < counts.rows; ++i) {
    const long c = std::lround(counts.at(i, 0));
    out[static_cast<std::size_t>(i)] =
        static_cast<int>(std::clamp(c, 1l, static_cast<long>(u_total)));
  }
  return out;
}

PointCloud ProdatModel::decode(const nn::Tensor& zq, const nn::Tensor& zxyzq,
                               const std::vector<double>& d) const {
  nn::Tape tape;
  const auto p = leaf_params(tape, false);
  Id zid = tape.leaf(zq);
  Id xid = tape.leaf(zxyzq);
  const DecodeIds ids = build_decoder(tape, zid, xid, d, p);
  const nn::Tensor& children = tape.value(ids.children);
  const std::vector<int> counts =
      emission_counts(tape.value(ids.counts), cfg_.upsample_total());
  const int u = cfg_.upsample_total();
  PointCloud out;
  out.source_id = "decoded";
  for (std::size_t i = 0; i < counts.size(); ++i) {
    for (int j = 0; j < counts[i]; ++j) {
      const int row = static_cast<int>(i) * u + j;
      out.coords.push_back({children.at(row, 0), children.at(row, 1),
                            children.at(row, 2)});
    }
  }
  return out;
}

LossBreakdown make_loss_breakdown(double cd, double dens, double coord,
                                  double points, double bpp,
                                  const LossWeights& w) {
  for (double v : {cd, dens, coord, points, bpp}) {
    if (!std::isfinite(v)) throw ModelError("loss term not finite");
  }
  LossBreakdown b;
  b.cd = cd;
  b.dens = dens;
  b.coord = coord;
  b.points = points;
  b.bpp = bpp;
  b.weights = w;
  b.total = cd + w.sigma * dens + w.omega * coord + w.eta * points + w.lambda * bpp;
  return b;
}

}  // namespace prodat::codec
