#pragma once

#include <cstdint>
#include <vector>

#include "prodat/codec.hpp"
#include "prodat/entropy.hpp"
#include "prodat/taildrop.hpp"

namespace prodat::bitstream {

// Container layout (all integers little-endian):
//   fixed 16 bytes: magic "PDAT", version u8, flags u8, N u32, M u32,
//                   C u8, C_xyz u8
//   layer length table: u32 per xyz layer (C_xyz), then u32 per z layer (C)
//   permutations: C_xyz bytes (xyz), then C bytes (z), channel ids in
//                 descending importance
//   body: density payload (u32 length + that many bytes of u16 d values),
//         then channel layers in the progressive interleave order.
// Each layer payload: i16 lo, i16 hi, then the range-coded symbols.
constexpr std::uint8_t kVersion = 1;
constexpr std::uint8_t kFlagFeatureOnly = 0x01;

struct Layer {
  bool is_xyz = false;
  int rank = 0;  // importance rank within its space, 0 = most important
  std::vector<std::uint8_t> payload;
};

struct ProgressiveBitstream {
  std::uint8_t version = kVersion;
  std::uint8_t flags = 0;
  std::uint32_t n_points = 0;
  std::uint32_t m_latent = 0;
  std::vector<std::uint8_t> perm_z;    // channel of z layer rank i
  std::vector<std::uint8_t> perm_xyz;
  std::vector<std::uint16_t> density;  // M values of d_num
  std::vector<Layer> layers;           // in body order

  int channels_z() const { return static_cast<int>(perm_z.size()); }
  int channels_xyz() const { return static_cast<int>(perm_xyz.size()); }
  bool feature_only() const { return flags & kFlagFeatureOnly; }
  std::size_t header_bytes() const;
  std::size_t body_bytes() const;

  std::vector<std::uint8_t> to_bytes() const;
  static ProgressiveBitstream from_bytes(const std::vector<std::uint8_t>& bytes);
};

// Progressive interleave: xyz and z layers merged so that the prefix
// ending at z rank k contains exactly ceil(k * C_xyz / C) xyz layers.
// Feature-only mode puts every xyz layer before any z layer.
std::vector<std::pair<bool, int>> layer_order(int c, int c_xyz,
                                              bool feature_only);

// Full encode pipeline: latent inference, round-half-even quantization,
// importance ranking on the continuous latents, entropy-coded container.
ProgressiveBitstream compress_cloud(const codec::ProdatModel& model,
                                    const PointCloud& pc,
                                    bool feature_only = false,
                                    double beta = 0.6);

ProgressiveBitstream serialize_progressive(
    const entropy::QuantizedLatent& quantized,
    const taildrop::ChannelImportance& importance_z,
    const taildrop::ChannelImportance& importance_xyz,
    const std::vector<double>& d, const codec::ProdatModel& model,
    std::size_t n_points, bool feature_only = false);

// Retains header + density + the first ceil(alpha*C) z layers and
// ceil(alpha*C_xyz) xyz layers (all xyz layers in feature-only mode).
// The result's body is a byte prefix of the input's at layer granularity.
ProgressiveBitstream truncate(const ProgressiveBitstream& bs, double alpha);

struct DecodedLatent {
  entropy::QuantizedLatent quantized;  // missing channels zero
  std::vector<double> d;
  std::vector<int> retained_z;    // channel ids present in the stream
  std::vector<int> retained_xyz;
};

DecodedLatent decode_latent(const ProgressiveBitstream& bs,
                            const codec::ProdatModel& model);

PointCloud progressive_decode(const ProgressiveBitstream& bs,
                              const codec::ProdatModel& model);

}  // namespace prodat::bitstream
