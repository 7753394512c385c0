#include "prodat/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace prodat::train {

DropStrategy strategy_from_name(const std::string& name) {
  if (name == "combined") return DropStrategy::combined;
  if (name == "feature_only") return DropStrategy::feature_only;
  throw ArgumentError("unknown drop strategy: " + name);
}

std::string strategy_name(DropStrategy s) {
  return s == DropStrategy::combined ? "combined" : "feature_only";
}

std::string RunConfig::validate() const {
  model.validate();
  if (weights.sigma < 0 || weights.omega < 0 || weights.eta < 0 ||
      weights.lambda < 0)
    throw ArgumentError("loss weights must be nonnegative");
  if (!(rho_min >= 0 && rho_max <= 1 && rho_min <= rho_max))
    throw ArgumentError("require 0 <= rho_min <= rho_max <= 1");
  if (beta < 0 || beta > 1) throw ArgumentError("beta must lie in [0,1]");
  if (gamma <= 0 || gamma > 1) throw ArgumentError("gamma must lie in (0,1]");
  if (density_mix < 0 || density_mix > 1)
    throw ArgumentError("density_mix must lie in [0,1]");
  if (epochs < 1) throw ArgumentError("epochs must be positive");
  if (batch_size < 1) throw ArgumentError("batch size must be positive");
  if (!(base_lr > 0)) throw ArgumentError("learning rate must be positive");
  if (weights.lambda < 1e-5 || weights.lambda > 1e-2)
    return "lambda outside the studied band [1e-5, 1e-2]";
  return {};
}

codec::ProdatModel Checkpoint::make_model() const {
  codec::ProdatModel model(run.model);
  model.init_params();  // establishes the parameter set and shapes
  for (auto& [name, p] : model.params().params) {
    const auto it = params.params.find(name);
    if (it == params.params.end())
      throw ModelError("checkpoint missing parameter " + name);
    if (!it->second.value.same_shape(p.value))
      throw ModelError("checkpoint shape mismatch for " + name);
    p.value = it->second.value;
  }
  if (params.params.size() != model.params().params.size())
    throw ModelError("checkpoint has extra parameters");
  return model;
}

namespace {

constexpr char kMagic[4] = {'P', 'D', 'C', 'K'};
constexpr std::uint8_t kVersion = 1;

struct Writer {
  std::vector<std::uint8_t> out;
  void u8(std::uint8_t v) { out.push_back(v); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back((v >> (8 * i)) & 0xff);
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back((v >> (8 * i)) & 0xff);
  }
  void f64(double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    u64(bits);
  }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    out.insert(out.end(), s.begin(), s.end());
  }
  void tensor(const nn::Tensor& t) {
    u32(static_cast<std::uint32_t>(t.rows));
    u32(static_cast<std::uint32_t>(t.cols));
    for (double v : t.data) f64(v);
  }
};

struct Reader {
  const std::vector<std::uint8_t>& in;
  std::size_t pos = 0;
  void need(std::size_t n) const {
    if (pos + n > in.size())
      throw ParseError("checkpoint truncated at byte " + std::to_string(pos));
  }
  std::uint8_t u8() {
    need(1);
    return in[pos++];
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(in[pos++]) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t(in[pos++]) << (8 * i);
    return v;
  }
  double f64() {
    const std::uint64_t bits = u64();
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
  }
  std::string str() {
    const std::uint32_t n = u32();
    need(n);
    std::string s(in.begin() + static_cast<long>(pos),
                  in.begin() + static_cast<long>(pos + n));
    pos += n;
    return s;
  }
  nn::Tensor tensor() {
    const int rows = static_cast<int>(u32());
    const int cols = static_cast<int>(u32());
    nn::Tensor t(rows, cols);
    for (double& v : t.data) v = f64();
    return t;
  }
};

void write_run_config(Writer& w, const RunConfig& c) {
  w.u32(static_cast<std::uint32_t>(c.model.feature_channels));
  w.u32(static_cast<std::uint32_t>(c.model.coord_channels));
  w.u32(static_cast<std::uint32_t>(c.model.stage_factors.size()));
  for (double f : c.model.stage_factors) w.f64(f);
  w.u32(static_cast<std::uint32_t>(c.model.neighborhood_k));
  w.u32(static_cast<std::uint32_t>(c.model.hidden));
  w.f64(c.model.xyz_gain);
  w.u8(c.model.literal_xyz ? 1 : 0);
  w.u64(c.model.seed);
  w.f64(c.weights.sigma);
  w.f64(c.weights.omega);
  w.f64(c.weights.eta);
  w.f64(c.weights.lambda);
  w.f64(c.rho_min);
  w.f64(c.rho_max);
  w.f64(c.beta);
  w.f64(c.gamma);
  w.f64(c.density_mix);
  w.u32(static_cast<std::uint32_t>(c.epochs));
  w.u32(static_cast<std::uint32_t>(c.batch_size));
  w.f64(c.base_lr);
  w.u64(c.seed);
  w.u8(c.drop_strategy == DropStrategy::feature_only ? 1 : 0);
}

RunConfig read_run_config(Reader& r) {
  RunConfig c;
  c.model.feature_channels = static_cast<int>(r.u32());
  c.model.coord_channels = static_cast<int>(r.u32());
  c.model.stage_factors.resize(r.u32());
  for (double& f : c.model.stage_factors) f = r.f64();
  c.model.neighborhood_k = static_cast<int>(r.u32());
  c.model.hidden = static_cast<int>(r.u32());
  c.model.xyz_gain = r.f64();
  c.model.literal_xyz = r.u8() != 0;
  c.model.seed = r.u64();
  c.weights.sigma = r.f64();
  c.weights.omega = r.f64();
  c.weights.eta = r.f64();
  c.weights.lambda = r.f64();
  c.rho_min = r.f64();
  c.rho_max = r.f64();
  c.beta = r.f64();
  c.gamma = r.f64();
  c.density_mix = r.f64();
  c.epochs = static_cast<int>(r.u32());
  c.batch_size = static_cast<int>(r.u32());
  c.base_lr = r.f64();
  c.seed = r.u64();
  c.drop_strategy = r.u8() ? DropStrategy::feature_only : DropStrategy::combined;
  return c;
}

}  // namespace

std::vector<std::uint8_t> checkpoint_to_bytes(const Checkpoint& cp) {
  Writer w;
  w.out.insert(w.out.end(), kMagic, kMagic + 4);
  w.u8(kVersion);
  write_run_config(w, cp.run);
  w.u32(static_cast<std::uint32_t>(cp.params.params.size()));
  for (const auto& [name, p] : cp.params.params) {
    w.str(name);
    w.tensor(p.value);
    w.tensor(p.adam_m);
    w.tensor(p.adam_v);
  }
  w.f64(cp.adam.beta1);
  w.f64(cp.adam.beta2);
  w.f64(cp.adam.eps);
  w.f64(cp.adam.base_lr);
  w.u64(cp.adam.step);
  w.f64(cp.norm.d_max);
  w.f64(cp.norm.m_max);
  w.f64(cp.norm.gamma);
  w.u64(cp.norm.t);
  w.u64(cp.epochs_completed);
  return std::move(w.out);
}

Checkpoint checkpoint_from_bytes(const std::vector<std::uint8_t>& bytes) {
  Reader r{bytes};
  r.need(5);
  if (std::memcmp(bytes.data(), kMagic, 4) != 0)
    throw ParseError("not a checkpoint file (bad magic)");
  r.pos = 4;
  const std::uint8_t version = r.u8();
  if (version != kVersion)
    throw ParseError("unsupported checkpoint version " +
                     std::to_string(version));
  Checkpoint cp;
  cp.run = read_run_config(r);
  const std::uint32_t n_params = r.u32();
  for (std::uint32_t i = 0; i < n_params; ++i) {
    const std::string name = r.str();
    nn::Parameter p;
    p.name = name;
    p.value = r.tensor();
    p.adam_m = r.tensor();
    p.adam_v = r.tensor();
    p.grad = nn::Tensor(p.value.rows, p.value.cols);
    cp.params.params.emplace(name, std::move(p));
  }
  cp.adam.beta1 = r.f64();
  cp.adam.beta2 = r.f64();
  cp.adam.eps = r.f64();
  cp.adam.base_lr = r.f64();
  cp.adam.step = r.u64();
  cp.norm.d_max = r.f64();
  cp.norm.m_max = r.f64();
  cp.norm.gamma = r.f64();
  cp.norm.t = r.u64();
  cp.epochs_completed = r.u64();
  if (r.pos != bytes.size())
    throw ParseError("trailing bytes after checkpoint payload");
  return cp;
}

void save_checkpoint(const std::string& path, const Checkpoint& cp) {
  const std::vector<std::uint8_t> bytes = checkpoint_to_bytes(cp);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path);
  f.write(reinterpret_cast<const char*>(bytes.data()),
          static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("short write to " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                                  std::istreambuf_iterator<char>());
  return checkpoint_from_bytes(bytes);
}

}  // namespace prodat::train
