#include "prodat/config.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>

namespace prodat::config {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

double to_double(const KvMap& kv, const std::string& key, double fallback) {
  const auto it = kv.find(key);
  if (it == kv.end()) return fallback;
  try {
    std::size_t used = 0;
    const double v = std::stod(it->second, &used);
    if (used != it->second.size()) throw std::invalid_argument(it->second);
    return v;
  } catch (const std::exception&) {
    throw ArgumentError("config: " + key + " is not a number: " + it->second);
  }
}

long long to_int(const KvMap& kv, const std::string& key, long long fallback) {
  const auto it = kv.find(key);
  if (it == kv.end()) return fallback;
  try {
    std::size_t used = 0;
    const long long v = std::stoll(it->second, &used);
    if (used != it->second.size()) throw std::invalid_argument(it->second);
    return v;
  } catch (const std::exception&) {
    throw ArgumentError("config: " + key + " is not an integer: " + it->second);
  }
}

std::string to_str(const KvMap& kv, const std::string& key,
                   const std::string& fallback) {
  const auto it = kv.find(key);
  return it == kv.end() ? fallback : it->second;
}

const std::set<std::string>& known_keys() {
  static const std::set<std::string> keys = {
      "model.C",        "model.Cxyz",     "model.k",       "model.hidden",
      "model.xyz_gain", "model.seed",     "train.lambda",  "train.sigma",
      "train.omega",    "train.eta",      "train.epochs",  "train.batch",
      "train.lr",       "train.seed",     "train.strategy", "drop.rho_min",
      "drop.rho_max",   "drop.beta",      "drop.gamma",    "drop.mix",
      "data.dir",       "data.shape",     "data.count",    "data.points",
      "data.contrast",  "data.seed",
  };
  return keys;
}

}  // namespace

KvMap parse_config_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open config " + path);
  KvMap kv;
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ParseError(path + ":" + std::to_string(lineno) +
                       ": expected key=value");
    const std::string key = trim(line.substr(0, eq));
    if (!known_keys().count(key))
      throw ArgumentError(path + ":" + std::to_string(lineno) +
                          ": unknown key " + key);
    kv[key] = trim(line.substr(eq + 1));
  }
  return kv;
}

void apply_override(KvMap& kv, const std::string& arg) {
  if (arg.rfind("--", 0) != 0)
    throw ArgumentError("override must look like --key=value: " + arg);
  const auto eq = arg.find('=');
  if (eq == std::string::npos)
    throw ArgumentError("override missing '=': " + arg);
  const std::string key = arg.substr(2, eq - 2);
  if (!known_keys().count(key))
    throw ArgumentError("unknown config key " + key);
  kv[key] = arg.substr(eq + 1);
}

train::RunConfig run_config_from(const KvMap& kv) {
  for (const auto& [key, value] : kv)
    if (!known_keys().count(key))
      throw ArgumentError("unknown config key " + key);
  train::RunConfig c;
  c.model.feature_channels =
      static_cast<int>(to_int(kv, "model.C", c.model.feature_channels));
  c.model.coord_channels =
      static_cast<int>(to_int(kv, "model.Cxyz", c.model.coord_channels));
  c.model.neighborhood_k =
      static_cast<int>(to_int(kv, "model.k", c.model.neighborhood_k));
  c.model.hidden = static_cast<int>(to_int(kv, "model.hidden", c.model.hidden));
  c.model.xyz_gain = to_double(kv, "model.xyz_gain", c.model.xyz_gain);
  c.model.seed =
      static_cast<std::uint64_t>(to_int(kv, "model.seed",
                                        static_cast<long long>(c.model.seed)));
  c.weights.lambda = to_double(kv, "train.lambda", c.weights.lambda);
  c.weights.sigma = to_double(kv, "train.sigma", c.weights.sigma);
  c.weights.omega = to_double(kv, "train.omega", c.weights.omega);
  c.weights.eta = to_double(kv, "train.eta", c.weights.eta);
  c.epochs = static_cast<int>(to_int(kv, "train.epochs", c.epochs));
  c.batch_size = static_cast<int>(to_int(kv, "train.batch", c.batch_size));
  c.base_lr = to_double(kv, "train.lr", c.base_lr);
  c.seed = static_cast<std::uint64_t>(
      to_int(kv, "train.seed", static_cast<long long>(c.seed)));
  c.drop_strategy = train::strategy_from_name(
      to_str(kv, "train.strategy", train::strategy_name(c.drop_strategy)));
  c.rho_min = to_double(kv, "drop.rho_min", c.rho_min);
  c.rho_max = to_double(kv, "drop.rho_max", c.rho_max);
  c.beta = to_double(kv, "drop.beta", c.beta);
  c.gamma = to_double(kv, "drop.gamma", c.gamma);
  c.density_mix = to_double(kv, "drop.mix", c.density_mix);
  return c;
}

DataSpec data_spec_from(const KvMap& kv) {
  DataSpec s;
  s.dir = to_str(kv, "data.dir", s.dir);
  s.shape = io::shape_from_name(to_str(kv, "data.shape", "sphere_surface"));
  s.cloud_count = static_cast<std::size_t>(
      to_int(kv, "data.count", static_cast<long long>(s.cloud_count)));
  s.points = static_cast<std::size_t>(
      to_int(kv, "data.points", static_cast<long long>(s.points)));
  s.density_contrast = to_double(kv, "data.contrast", s.density_contrast);
  s.seed = static_cast<std::uint64_t>(
      to_int(kv, "data.seed", static_cast<long long>(s.seed)));
  return s;
}

std::vector<PointCloud> load_dataset(const DataSpec& spec) {
  std::vector<PointCloud> clouds;
  if (spec.dir.empty()) {
    if (spec.cloud_count == 0) throw ArgumentError("data.count must be > 0");
    for (std::size_t i = 0; i < spec.cloud_count; ++i) {
      PointCloud pc = io::generate_synthetic(spec.shape, spec.points,
                                             spec.density_contrast,
                                             spec.seed + i);
      clouds.push_back(io::normalize_to_unit_cube(pc).first);
    }
    return clouds;
  }
  std::vector<std::string> paths;
  for (const auto& e : std::filesystem::directory_iterator(spec.dir)) {
    if (!e.is_regular_file()) continue;
    const std::string ext = e.path().extension().string();
    if (ext == ".ply" || ext == ".bin" || ext == ".csv" || ext == ".xyz")
      paths.push_back(e.path().string());
  }
  std::sort(paths.begin(), paths.end());
  if (paths.empty())
    throw IoError("no point-cloud files found in " + spec.dir);
  for (const auto& path : paths) {
    PointCloud pc = io::load_pointcloud(path, io::guess_format(path));
    clouds.push_back(io::normalize_to_unit_cube(pc).first);
  }
  return clouds;
}

}  // namespace prodat::config
