#pragma once

#include <map>
#include <string>
#include <vector>

#include "prodat/checkpoint.hpp"
#include "prodat/pc_io.hpp"

namespace prodat::config {

using KvMap = std::map<std::string, std::string>;

// Flat key=value text file; '#' starts a comment, blank lines ignored.
KvMap parse_config_file(const std::string& path);

// "--key=value" command-line overrides, applied on top of the file.
void apply_override(KvMap& kv, const std::string& arg);

// Either a directory of cloud files or a synthetic generation spec.
struct DataSpec {
  std::string dir;  // empty => synthetic
  io::SyntheticShape shape = io::SyntheticShape::sphere_surface;
  std::size_t cloud_count = 64;
  std::size_t points = 2048;
  double density_contrast = 4.0;
  std::uint64_t seed = 11;
};

// Builds the run config from the recognized key set; unknown keys are a
// config error so typos never pass silently.
train::RunConfig run_config_from(const KvMap& kv);
DataSpec data_spec_from(const KvMap& kv);

// Loads (or generates) the dataset and normalizes every cloud to the
// padded unit cube the codec operates in.
std::vector<PointCloud> load_dataset(const DataSpec& spec);

}  // namespace prodat::config
