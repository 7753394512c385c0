#pragma once

#include <map>
#include <string>
#include <vector>

#include "prodat/density.hpp"
#include "prodat/entropy.hpp"
#include "prodat/geometry.hpp"
#include "prodat/nn.hpp"
#include "prodat/taildrop.hpp"

namespace prodat::codec {

struct ModelConfig {
  int feature_channels = 32;   // C
  int coord_channels = 16;     // C_xyz (3 in literal mode)
  std::vector<double> stage_factors = {1.0 / 2, 1.0 / 3, 1.0 / 4};
  int neighborhood_k = 8;
  int hidden = 32;
  double xyz_gain = 40.0;      // coordinate-latent integer spread
  bool literal_xyz = false;    // C_xyz = 3, latent = scaled raw coords + residual
  std::uint64_t seed = 1;

  void validate() const;
  // M = ceil(ceil(ceil(N*f1)*f2)*f3)
  std::size_t latent_count(std::size_t n) const;
  // Per-anchor emission capacity: product of per-stage expansions.
  int upsample_total() const;
  std::vector<int> upsample_stages() const;  // reversed round(1/f)
};

// Per-cloud deterministic geometry, independent of model parameters.
// Cached by the trainer so repeated epochs skip the spatial work.
struct GeometryCache {
  struct Stage {
    std::vector<int> fps_idx;     // into the stage's input cloud
    std::vector<int> knn_flat;    // m*k indices into the stage's input cloud
    std::vector<int> repeat_idx;  // m*k, sample row repeated k times
    std::vector<Vec3> coords_in;
    std::vector<Vec3> coords_out;
  };
  std::vector<Stage> stages;
  std::vector<Vec3> sample_coords;  // final stage output, size M
  std::vector<double> d_num;        // per final sample, vs. the original cloud
  std::vector<double> d_dist;
  std::size_t n_points = 0;

  static GeometryCache build(const PointCloud& pc, const ModelConfig& cfg);
};

struct LatentCode {
  nn::Tensor z;       // [M, C]
  nn::Tensor z_xyz;   // [M, C_xyz]
  std::vector<double> d;        // M density values (d_num)
  std::vector<Vec3> sample_coords;
  std::size_t M = 0;
};

struct LossWeights {
  double sigma = 1e-4;   // density term
  double omega = 5e-5;   // coordinate term
  double eta = 1e-3;     // point-count term
  double lambda = 1e-3;  // rate term
};

struct LossBreakdown {
  double cd = 0.0;
  double dens = 0.0;
  double coord = 0.0;
  double points = 0.0;
  double bpp = 0.0;
  LossWeights weights;
  double total = 0.0;
};

class ProdatModel {
 public:
  explicit ProdatModel(ModelConfig cfg);

  const ModelConfig& config() const { return cfg_; }
  nn::ParamStore& params() { return params_; }
  const nn::ParamStore& params() const { return params_; }
  const entropy::FactorizedEntropyModel& entropy_z() const { return ent_z_; }
  const entropy::FactorizedEntropyModel& entropy_xyz() const { return ent_xyz_; }

  void init_params();

  // --- differentiable graph builders ---
  struct EncodeIds {
    nn::Tape::Id z;
    nn::Tape::Id z_xyz;
  };
  struct DecodeIds {
    nn::Tape::Id anchors;    // [M,3]
    nn::Tape::Id children;   // [M*U, 3], anchor-major deterministic order
    nn::Tape::Id counts;     // [M,1], soft per-anchor emission counts
  };

  std::map<std::string, nn::Tape::Id> leaf_params(nn::Tape& tape,
                                                  bool with_grads) const;

  EncodeIds build_encoder(nn::Tape& tape, const GeometryCache& geom,
                          const std::map<std::string, nn::Tape::Id>& p) const;

  DecodeIds build_decoder(nn::Tape& tape, nn::Tape::Id zq, nn::Tape::Id zxyzq,
                          const std::vector<double>& d,
                          const std::map<std::string, nn::Tape::Id>& p) const;

  // --- inference wrappers (frozen parameters, pure) ---
  LatentCode encode(const PointCloud& pc) const;
  LatentCode encode(const GeometryCache& geom) const;

  // Decodes (possibly masked/quantized) latents into a cloud. Emission
  // keeps the first round(count_i) children of each anchor.
  PointCloud decode(const nn::Tensor& zq, const nn::Tensor& zxyzq,
                    const std::vector<double>& d) const;

  // Per-anchor emission counts from the soft count head.
  static std::vector<int> emission_counts(const nn::Tensor& counts, int u_total);

 private:
  ModelConfig cfg_;
  nn::ParamStore params_;
  entropy::FactorizedEntropyModel ent_z_;
  entropy::FactorizedEntropyModel ent_xyz_;
};

// Recomputes total = cd + sigma*dens + omega*coord + eta*points + lambda*bpp.
LossBreakdown make_loss_breakdown(double cd, double dens, double coord,
                                  double points, double bpp,
                                  const LossWeights& w);

nn::Tensor tensor_from_points(const std::vector<Vec3>& pts);
std::vector<Vec3> points_from_tensor(const nn::Tensor& t);

}  // namespace prodat::codec
