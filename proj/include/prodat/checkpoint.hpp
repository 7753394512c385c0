#pragma once

#include <string>

#include "prodat/codec.hpp"
#include "prodat/density.hpp"
#include "prodat/nn.hpp"
#include "prodat/taildrop.hpp"

namespace prodat::train {

enum class DropStrategy { combined, feature_only };

DropStrategy strategy_from_name(const std::string& name);
std::string strategy_name(DropStrategy s);

struct RunConfig {
  codec::ModelConfig model;
  codec::LossWeights weights;
  double rho_min = 0.15;
  double rho_max = 0.40;
  double beta = 0.6;        // importance blend
  double gamma = 0.1;       // EMA factor
  double density_mix = 0.5; // probability of the density-derived rho branch
  int epochs = 50;
  int batch_size = 32;
  double base_lr = 1e-3;
  std::uint64_t seed = 7;
  DropStrategy drop_strategy = DropStrategy::combined;

  // Throws on negative weights or invalid ranges; returns a warning
  // string (empty if none) for the soft lambda band check.
  std::string validate() const;
};

// Everything needed to resume training or run inference reproducibly.
struct Checkpoint {
  RunConfig run;
  nn::ParamStore params;  // values + Adam moments
  nn::AdamState adam;
  density::NormalizationState norm;
  std::uint64_t epochs_completed = 0;

  codec::ProdatModel make_model() const;
};

// Binary container, magic "PDCK", version 1, all integers little-endian.
void save_checkpoint(const std::string& path, const Checkpoint& cp);
Checkpoint load_checkpoint(const std::string& path);

std::vector<std::uint8_t> checkpoint_to_bytes(const Checkpoint& cp);
Checkpoint checkpoint_from_bytes(const std::vector<std::uint8_t>& bytes);

}  // namespace prodat::train
