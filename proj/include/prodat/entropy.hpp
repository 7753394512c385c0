#pragma once

#include <cstdint>
#include <vector>

#include "prodat/nn.hpp"

namespace prodat::entropy {

// Per-channel monotone CDF network:
//   CDF(x) = sigmoid(softplus(a)*x + w3+^T tanh(W2+ tanh(W1+ x + b1) + b2) + b3)
// with W+ = softplus(W) elementwise. The linear slope term forces limits
// 0 and 1 and strict monotonicity; the bounded branch shapes the body.
class FactorizedEntropyModel {
 public:
  FactorizedEntropyModel(std::string param_prefix, int channels)
      : prefix_(std::move(param_prefix)), channels_(channels) {}

  int channels() const { return channels_; }
  const std::string& prefix() const { return prefix_; }

  void init_params(nn::ParamStore& store, Rng& rng) const;

  // Direct double-precision evaluation (used by table building, BPP
  // estimation, and decoding; bit-identical across encoder and decoder).
  double cdf(const nn::ParamStore& store, int channel, double x) const;
  double pmf(const nn::ParamStore& store, int channel, int symbol) const;

  // Differentiable rate: given a column-vector node of (possibly
  // noise-perturbed) latent values for one channel, returns a scalar node
  // of sum(-log(pmf)) in nats.
  nn::Tape::Id rate_nats(nn::Tape& tape, nn::Tape::Id values, int channel,
                         const std::map<std::string, nn::Tape::Id>& param_ids) const;

  std::vector<std::string> param_names(int channel) const;

 private:
  std::string prefix_;
  int channels_;
};

// Round-to-nearest-even quantization of every element.
nn::Tensor quantize_round(const nn::Tensor& t);

// Training surrogate: adds Uniform(-1/2, 1/2) noise per element.
nn::Tensor uniform_noise_like(const nn::Tensor& t, Rng& rng);

struct QuantizedLatent {
  nn::Tensor zq;      // [M, C], integer-valued
  nn::Tensor zxyzq;   // [M, C_xyz], integer-valued
  std::vector<std::pair<int, int>> bounds_z;     // per channel [lo, hi]
  std::vector<std::pair<int, int>> bounds_xyz;

  static QuantizedLatent from(const nn::Tensor& z, const nn::Tensor& zxyz);
};

// Eq-16-style entropy estimate in bits per point over the retained
// channel sets, plus the density side payload bits.
double estimate_bpp(const QuantizedLatent& q,
                    const FactorizedEntropyModel& model_z,
                    const FactorizedEntropyModel& model_xyz,
                    const nn::ParamStore& store,
                    const std::vector<int>& retained_z,
                    const std::vector<int>& retained_xyz, std::size_t n_points,
                    std::size_t density_payload_bits);

// --- lossless range coder, 16-bit quantized frequencies ---

struct FreqTable {
  int lo = 0;                      // symbol value of alphabet index 0
  std::vector<std::uint32_t> freq; // sums to 65536
  std::vector<std::uint32_t> cum;  // exclusive prefix sums, size freq.size()+1

  std::size_t alphabet() const { return freq.size(); }
};

// Quantizes the model pmf over [lo, hi] to 16-bit frequencies, every
// symbol >= 1. Deterministic.
FreqTable build_freq_table(const FactorizedEntropyModel& model,
                           const nn::ParamStore& store, int channel, int lo,
                           int hi);

std::vector<std::uint8_t> range_encode(const std::vector<int>& symbols,
                                       const FreqTable& table);
std::vector<int> range_decode(const std::vector<std::uint8_t>& bytes,
                              const FreqTable& table, std::size_t count);

}  // namespace prodat::entropy
