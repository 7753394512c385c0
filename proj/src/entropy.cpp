#include "prodat/entropy.hpp"

#include <algorithm>
#include <cfenv>
#include <cmath>

namespace prodat::entropy {

namespace {

double softplus_d(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }
double sigmoid_d(double x) {
  return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}
double tanh_d(double x) { return std::tanh(x); }

constexpr std::uint32_t kFreqTotal = 1u << 16;
constexpr std::uint32_t kTopValue = 1u << 24;

}  // namespace

std::vector<std::string> FactorizedEntropyModel::param_names(int channel) const {
  const std::string base = prefix_ + ".c" + std::to_string(channel) + ".";
  return {base + "a",  base + "w1", base + "b1", base + "w2",
          base + "b2", base + "w3", base + "b3"};
}

void FactorizedEntropyModel::init_params(nn::ParamStore& store, Rng& rng) const {
  // softplus(-1.05) ~ 0.3: a gentle initial slope so integer symbols out
  // to roughly +-40 keep codable mass.
  for (int c = 0; c < channels_; ++c) {
    const auto names = param_names(c);
    store.add(names[0], nn::Tensor::scalar(-1.05));
    store.add(names[1], nn::init_uniform(1, 3, 0.5, rng));
    store.add(names[2], nn::init_uniform(1, 3, 0.5, rng));
    store.add(names[3], nn::init_uniform(3, 3, 0.5, rng));
    store.add(names[4], nn::init_uniform(1, 3, 0.5, rng));
    store.add(names[5], nn::init_uniform(3, 1, 0.5, rng));
    store.add(names[6], nn::Tensor::scalar(0.0));
  }
}

double FactorizedEntropyModel::cdf(const nn::ParamStore& store, int channel,
                                   double x) const {
  const auto names = param_names(channel);
  const double a = store.get(names[0]).value.data[0];
  const auto& w1 = store.get(names[1]).value;
  const auto& b1 = store.get(names[2]).value;
  const auto& w2 = store.get(names[3]).value;
  const auto& b2 = store.get(names[4]).value;
  const auto& w3 = store.get(names[5]).value;
  const double b3 = store.get(names[6]).value.data[0];
  double h1[3];
  for (int i = 0; i < 3; ++i)
    h1[i] = tanh_d(softplus_d(w1.data[static_cast<std::size_t>(i)]) * x +
                   b1.data[static_cast<std::size_t>(i)]);
  double h2[3];
  for (int i = 0; i < 3; ++i) {
    double acc = b2.data[static_cast<std::size_t>(i)];
    for (int j = 0; j < 3; ++j) acc += softplus_d(w2.at(j, i)) * h1[j];
    h2[i] = tanh_d(acc);
  }
  double g = b3;
  for (int i = 0; i < 3; ++i)
    g += softplus_d(w3.data[static_cast<std::size_t>(i)]) * h2[i];
  return sigmoid_d(softplus_d(a) * x + g);
}

double FactorizedEntropyModel::pmf(const nn::ParamStore& store, int channel,
                                   int symbol) const {
  const double s = static_cast<double>(symbol);
  return cdf(store, channel, s + 0.5) - cdf(store, channel, s - 0.5);
}

nn::Tape::Id FactorizedEntropyModel::rate_nats(
    nn::Tape& tape, nn::Tape::Id values, int channel,
    const std::map<std::string, nn::Tape::Id>& param_ids) const {
  const auto names = param_names(channel);
  auto id_of = [&](const std::string& n) {
    auto it = param_ids.find(n);
    if (it == param_ids.end()) throw ArgumentError("rate_nats: missing param " + n);
    return it->second;
  };
  auto tanh_op = [&](nn::Tape::Id x) {
    // tanh(x) = 2*sigmoid(2x) - 1
    return tape.add_const(tape.scale(tape.sigmoid(tape.scale(x, 2.0)), 2.0), -1.0);
  };
  auto cdf_op = [&](nn::Tape::Id x) {  // x: [M,1]
    auto w1p = tape.softplus(id_of(names[1]));  // [1,3]
    auto h1 = tanh_op(tape.add_rowvec(tape.matmul(x, w1p), id_of(names[2])));
    auto w2p = tape.softplus(id_of(names[3]));  // [3,3]
    auto h2 = tanh_op(tape.add_rowvec(tape.matmul(h1, w2p), id_of(names[4])));
    auto w3p = tape.softplus(id_of(names[5]));  // [3,1]
    auto g = tape.add_rowvec(tape.matmul(h2, w3p),
                             tape.reshape(id_of(names[6]), 1, 1));
    auto slope = tape.softplus(id_of(names[0]));  // [1,1]
    return tape.sigmoid(tape.add(tape.mul_scalar(x, slope), g));
  };
  auto upper = cdf_op(tape.add_const(values, 0.5));
  auto lower = cdf_op(tape.add_const(values, -0.5));
  auto pmf_node = tape.clamp_min(tape.sub(upper, lower), 1e-9);
  return tape.neg(tape.reduce_sum(tape.elementwise_log(pmf_node)));
}

nn::Tensor quantize_round(const nn::Tensor& t) {
  nn::Tensor out = t;
  for (double& v : out.data) v = std::nearbyint(v);  // round half to even
  return out;
}

nn::Tensor uniform_noise_like(const nn::Tensor& t, Rng& rng) {
  nn::Tensor out(t.rows, t.cols);
  for (double& v : out.data) v = rng.uniform() - 0.5;
  return out;
}

QuantizedLatent QuantizedLatent::from(const nn::Tensor& z,
                                      const nn::Tensor& zxyz) {
  QuantizedLatent q;
  q.zq = quantize_round(z);
  q.zxyzq = quantize_round(zxyz);
  auto bounds = [](const nn::Tensor& t) {
    std::vector<std::pair<int, int>> b(static_cast<std::size_t>(t.cols));
    for (int c = 0; c < t.cols; ++c) {
      int lo = 0, hi = 0;
      for (int r = 0; r < t.rows; ++r) {
        const int v = static_cast<int>(t.at(r, c));
        if (r == 0) {
          lo = hi = v;
        } else {
          lo = std::min(lo, v);
          hi = std::max(hi, v);
        }
      }
      b[static_cast<std::size_t>(c)] = {lo, hi};
    }
    return b;
  };
  q.bounds_z = bounds(q.zq);
  q.bounds_xyz = bounds(q.zxyzq);
  return q;
}

double estimate_bpp(const QuantizedLatent& q,
                    const FactorizedEntropyModel& model_z,
                    const FactorizedEntropyModel& model_xyz,
                    const nn::ParamStore& store,
                    const std::vector<int>& retained_z,
                    const std::vector<int>& retained_xyz, std::size_t n_points,
                    std::size_t density_payload_bits) {
  if (n_points == 0) throw ArgumentError("estimate_bpp: N = 0");
  const double ln2 = std::log(2.0);
  double bits = static_cast<double>(density_payload_bits);
  auto channel_bits = [&](const nn::Tensor& t, const FactorizedEntropyModel& m,
                          int c) {
    double acc = 0.0;
    for (int r = 0; r < t.rows; ++r) {
      const double p = m.pmf(store, c, static_cast<int>(t.at(r, c)));
      if (!(p > 0.0))
        throw ModelError("estimate_bpp: nonpositive likelihood in channel " +
                         std::to_string(c));
      acc += -std::log(p) / ln2;
    }
    return acc;
  };
  for (int c : retained_z) {
    if (c < 0 || c >= q.zq.cols) throw ArgumentError("estimate_bpp: bad z channel");
    bits += channel_bits(q.zq, model_z, c);
  }
  for (int c : retained_xyz) {
    if (c < 0 || c >= q.zxyzq.cols)
      throw ArgumentError("estimate_bpp: bad xyz channel");
    bits += channel_bits(q.zxyzq, model_xyz, c);
  }
  return bits / static_cast<double>(n_points);
}

FreqTable build_freq_table(const FactorizedEntropyModel& model,
                           const nn::ParamStore& store, int channel, int lo,
                           int hi) {
  if (hi < lo) throw ArgumentError("build_freq_table: hi < lo");
  const std::size_t alphabet = static_cast<std::size_t>(hi - lo + 1);
  if (alphabet > kFreqTotal)
    throw ArgumentError("build_freq_table: alphabet exceeds 65536 symbols");
  FreqTable t;
  t.lo = lo;
  t.freq.resize(alphabet);
  std::vector<double> p(alphabet);
  double total = 0.0;
  for (std::size_t i = 0; i < alphabet; ++i) {
    p[i] = std::max(model.pmf(store, channel, lo + static_cast<int>(i)), 0.0);
    total += p[i];
  }
  if (total <= 0.0) throw ModelError("build_freq_table: degenerate pmf");
  std::uint32_t sum = 0;
  for (std::size_t i = 0; i < alphabet; ++i) {
    const double share = p[i] / total * static_cast<double>(kFreqTotal);
    t.freq[i] = std::max<std::uint32_t>(
        1, static_cast<std::uint32_t>(std::llround(share)));
    sum += t.freq[i];
  }
  // Deterministically settle the rounding residue on the largest bucket.
  while (sum != kFreqTotal) {
    std::size_t target = 0;
    for (std::size_t i = 1; i < alphabet; ++i)
      if (t.freq[i] > t.freq[target]) target = i;
    if (sum < kFreqTotal) {
      t.freq[target] += kFreqTotal - sum;
      sum = kFreqTotal;
    } else {
      const std::uint32_t excess = sum - kFreqTotal;
      const std::uint32_t take = std::min(excess, t.freq[target] - 1);
      if (take == 0)
        throw ModelError("build_freq_table: cannot normalize frequencies");
      t.freq[target] -= take;
      sum -= take;
    }
  }
  t.cum.resize(alphabet + 1);
  t.cum[0] = 0;
  for (std::size_t i = 0; i < alphabet; ++i) t.cum[i + 1] = t.cum[i] + t.freq[i];
  return t;
}

namespace {

// Carry-propagating byte-oriented range coder (LZMA-style). The leading
// zero cache byte is elided, so an empty payload flushes to 4 bytes.
class RangeEncoder {
 public:
  void encode(std::uint32_t cum, std::uint32_t freq) {
    range_ /= kFreqTotal;
    low_ += static_cast<std::uint64_t>(cum) * range_;
    range_ *= freq;
    while (range_ < kTopValue) {
      shift_low();
      range_ <<= 8;
    }
  }

  std::vector<std::uint8_t> finish() {
    for (int i = 0; i < 5; ++i) shift_low();
    return std::move(out_);
  }

 private:
  void shift_low() {
    if (static_cast<std::uint32_t>(low_) < 0xFF000000u || (low_ >> 32) != 0) {
      if (!first_) out_.push_back(static_cast<std::uint8_t>(cache_ + (low_ >> 32)));
      first_ = false;
      while (pending_ > 0) {
        out_.push_back(static_cast<std::uint8_t>(0xFF + (low_ >> 32)));
        --pending_;
      }
      cache_ = static_cast<std::uint8_t>(low_ >> 24);
    } else {
      ++pending_;
    }
    low_ = (low_ << 8) & 0xFFFFFFFFull;
  }

  std::uint64_t low_ = 0;
  std::uint32_t range_ = 0xFFFFFFFFu;
  std::uint8_t cache_ = 0;
  std::uint64_t pending_ = 0;
  bool first_ = true;
  std::vector<std::uint8_t> out_;
};

class RangeDecoder {
 public:
  explicit RangeDecoder(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {
    for (int i = 0; i < 4; ++i) code_ = (code_ << 8) | next_byte();
  }

  std::uint32_t decode_target() {
    range_ /= kFreqTotal;
    const std::uint32_t target = code_ / range_;
    if (target >= kFreqTotal)
      throw ParseError("range decoder: corrupt stream at byte " +
                       std::to_string(pos_));
    return target;
  }

  void consume(std::uint32_t cum, std::uint32_t freq) {
    code_ -= cum * range_;
    range_ *= freq;
    while (range_ < kTopValue) {
      code_ = (code_ << 8) | next_byte();
      range_ <<= 8;
    }
  }

 private:
  std::uint8_t next_byte() {
    return pos_ < bytes_.size() ? bytes_[pos_++] : 0;
  }

  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 0;
  std::uint32_t code_ = 0;
  std::uint32_t range_ = 0xFFFFFFFFu;
};

}  // namespace

std::vector<std::uint8_t> range_encode(const std::vector<int>& symbols,
                                       const FreqTable& table) {
  RangeEncoder enc;
  for (int s : symbols) {
    const long idx = static_cast<long>(s) - table.lo;
    if (idx < 0 || idx >= static_cast<long>(table.alphabet()))
      throw ArgumentError("range_encode: symbol " + std::to_string(s) +
                          " outside table");
    enc.encode(table.cum[static_cast<std::size_t>(idx)],
               table.freq[static_cast<std::size_t>(idx)]);
  }
  return enc.finish();
}

std::vector<int> range_decode(const std::vector<std::uint8_t>& bytes,
                              const FreqTable& table, std::size_t count) {
  RangeDecoder dec(bytes);
  std::vector<int> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const std::uint32_t target = dec.decode_target();
    // Linear scan is fine at desk-scale alphabets; upper_bound on cum.
    const auto it = std::upper_bound(table.cum.begin() + 1, table.cum.end(), target);
    const std::size_t idx = static_cast<std::size_t>(it - table.cum.begin()) - 1;
    dec.consume(table.cum[idx], table.freq[idx]);
    out.push_back(table.lo + static_cast<int>(idx));
  }
  return out;
}

}  // namespace prodat::entropy
