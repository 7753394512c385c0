#include "prodat/bitstream.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace prodat::bitstream {

namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v >> 16));
  out.push_back(static_cast<std::uint8_t>(v >> 24));
}

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

struct Reader {
  const std::vector<std::uint8_t>& buf;
  std::size_t pos = 0;

  std::uint8_t u8() {
    need(1);
    return buf[pos++];
  }
  std::uint16_t u16() {
    need(2);
    const std::uint16_t v = static_cast<std::uint16_t>(buf[pos]) |
                            static_cast<std::uint16_t>(buf[pos + 1]) << 8;
    pos += 2;
    return v;
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | buf[pos + static_cast<std::size_t>(i)];
    pos += 4;
    return v;
  }
  std::vector<std::uint8_t> bytes(std::size_t n) {
    need(n);
    std::vector<std::uint8_t> out(buf.begin() + static_cast<long>(pos),
                                  buf.begin() + static_cast<long>(pos + n));
    pos += n;
    return out;
  }
  void need(std::size_t n) const {
    if (pos + n > buf.size())
      throw ParseError("bitstream truncated mid-field (byte " +
                       std::to_string(pos) + ")");
  }
};

int layer_channel(const ProgressiveBitstream& bs, const Layer& l) {
  const auto& perm = l.is_xyz ? bs.perm_xyz : bs.perm_z;
  return perm[static_cast<std::size_t>(l.rank)];
}

std::vector<int> encode_layer(const entropy::FactorizedEntropyModel& model,
                              const nn::ParamStore& store, const nn::Tensor& q,
                              int channel, std::vector<std::uint8_t>& payload) {
  std::vector<int> symbols(static_cast<std::size_t>(q.rows));
  int lo = 0, hi = 0;
  for (int r = 0; r < q.rows; ++r) {
    const int v = static_cast<int>(q.at(r, channel));
    symbols[static_cast<std::size_t>(r)] = v;
    if (r == 0) {
      lo = hi = v;
    } else {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  }
  if (lo < -32768 || hi > 32767)
    throw ModelError("latent symbol outside int16 range in channel " +
                     std::to_string(channel));
  const entropy::FreqTable table = entropy::build_freq_table(model, store,
                                                             channel, lo, hi);
  const auto coded = entropy::range_encode(symbols, table);
  put_u16(payload, static_cast<std::uint16_t>(static_cast<std::int16_t>(lo)));
  put_u16(payload, static_cast<std::uint16_t>(static_cast<std::int16_t>(hi)));
  payload.insert(payload.end(), coded.begin(), coded.end());
  return symbols;
}

void decode_layer(const entropy::FactorizedEntropyModel& model,
                  const nn::ParamStore& store, const Layer& layer, int channel,
                  nn::Tensor& q) {
  if (layer.payload.size() < 4)
    throw ParseError("layer payload too short for channel " +
                     std::to_string(channel));
  const int lo = static_cast<std::int16_t>(
      static_cast<std::uint16_t>(layer.payload[0]) |
      static_cast<std::uint16_t>(layer.payload[1]) << 8);
  const int hi = static_cast<std::int16_t>(
      static_cast<std::uint16_t>(layer.payload[2]) |
      static_cast<std::uint16_t>(layer.payload[3]) << 8);
  if (hi < lo) throw ParseError("layer bounds corrupt");
  const entropy::FreqTable table = entropy::build_freq_table(model, store,
                                                             channel, lo, hi);
  const std::vector<std::uint8_t> body(layer.payload.begin() + 4,
                                       layer.payload.end());
  const std::vector<int> symbols =
      entropy::range_decode(body, table, static_cast<std::size_t>(q.rows));
  for (int r = 0; r < q.rows; ++r)
    q.at(r, channel) = static_cast<double>(symbols[static_cast<std::size_t>(r)]);
}

}  // namespace

std::vector<std::pair<bool, int>> layer_order(int c, int c_xyz,
                                              bool feature_only) {
  std::vector<std::pair<bool, int>> order;
  if (feature_only) {
    for (int i = 0; i < c_xyz; ++i) order.emplace_back(true, i);
    for (int i = 0; i < c; ++i) order.emplace_back(false, i);
    return order;
  }
  int emitted_xyz = 0;
  for (int k = 1; k <= c; ++k) {
    const int want = static_cast<int>(std::ceil(
        static_cast<double>(k) * c_xyz / static_cast<double>(c) - 1e-12));
    while (emitted_xyz < std::min(want, c_xyz)) {
      order.emplace_back(true, emitted_xyz);
      ++emitted_xyz;
    }
    order.emplace_back(false, k - 1);
  }
  while (emitted_xyz < c_xyz) {
    order.emplace_back(true, emitted_xyz);
    ++emitted_xyz;
  }
  return order;
}

std::size_t ProgressiveBitstream::header_bytes() const {
  return 16 + 4 * (perm_z.size() + perm_xyz.size()) + perm_z.size() +
         perm_xyz.size();
}

std::size_t ProgressiveBitstream::body_bytes() const {
  std::size_t n = 4 + 2 * density.size();
  for (const auto& l : layers) n += l.payload.size();
  return n;
}

std::vector<std::uint8_t> ProgressiveBitstream::to_bytes() const {
  std::vector<std::uint8_t> out;
  out.reserve(header_bytes() + body_bytes());
  out.insert(out.end(), {'P', 'D', 'A', 'T'});
  out.push_back(version);
  out.push_back(flags);
  put_u32(out, n_points);
  put_u32(out, m_latent);
  out.push_back(static_cast<std::uint8_t>(perm_z.size()));
  out.push_back(static_cast<std::uint8_t>(perm_xyz.size()));
  // Layer length table covers the full-channel layout; absent (truncated)
  // layers keep their length so the cut point is recoverable.
  const auto order = layer_order(channels_z(), channels_xyz(), feature_only());
  std::vector<std::uint32_t> len_xyz(perm_xyz.size(), 0);
  std::vector<std::uint32_t> len_z(perm_z.size(), 0);
  for (const auto& l : layers) {
    auto& lens = l.is_xyz ? len_xyz : len_z;
    lens[static_cast<std::size_t>(l.rank)] =
        static_cast<std::uint32_t>(l.payload.size());
  }
  for (std::uint32_t v : len_xyz) put_u32(out, v);
  for (std::uint32_t v : len_z) put_u32(out, v);
  out.insert(out.end(), perm_xyz.begin(), perm_xyz.end());
  out.insert(out.end(), perm_z.begin(), perm_z.end());
  put_u32(out, static_cast<std::uint32_t>(2 * density.size()));
  for (std::uint16_t v : density) put_u16(out, v);
  // Layers must already be in the canonical order; emit as stored.
  (void)order;
  for (const auto& l : layers)
    out.insert(out.end(), l.payload.begin(), l.payload.end());
  return out;
}

ProgressiveBitstream ProgressiveBitstream::from_bytes(
    const std::vector<std::uint8_t>& bytes) {
  Reader r{bytes};
  if (bytes.size() < 16 || bytes[0] != 'P' || bytes[1] != 'D' ||
      bytes[2] != 'A' || bytes[3] != 'T')
    throw ParseError("bad bitstream magic");
  r.pos = 4;
  ProgressiveBitstream bs;
  bs.version = r.u8();
  if (bs.version != kVersion)
    throw ParseError("unsupported bitstream version " +
                     std::to_string(bs.version));
  bs.flags = r.u8();
  bs.n_points = r.u32();
  bs.m_latent = r.u32();
  const int c = r.u8();
  const int c_xyz = r.u8();
  std::vector<std::uint32_t> len_xyz(static_cast<std::size_t>(c_xyz));
  std::vector<std::uint32_t> len_z(static_cast<std::size_t>(c));
  for (auto& v : len_xyz) v = r.u32();
  for (auto& v : len_z) v = r.u32();
  bs.perm_xyz = r.bytes(static_cast<std::size_t>(c_xyz));
  bs.perm_z = r.bytes(static_cast<std::size_t>(c));
  const std::uint32_t dens_len = r.u32();
  if (dens_len != 2u * bs.m_latent)
    throw ParseError("density payload length mismatch");
  bs.density.resize(bs.m_latent);
  for (auto& v : bs.density) v = r.u16();
  // Read layers in canonical order until the stream ends; a stream may be
  // a truncation, so trailing layers are simply absent.
  for (const auto& [is_xyz, rank] : layer_order(c, c_xyz, bs.feature_only())) {
    const std::uint32_t len = is_xyz ? len_xyz[static_cast<std::size_t>(rank)]
                                     : len_z[static_cast<std::size_t>(rank)];
    if (r.pos == bytes.size()) break;
    Layer l;
    l.is_xyz = is_xyz;
    l.rank = rank;
    l.payload = r.bytes(len);
    bs.layers.push_back(std::move(l));
  }
  if (r.pos != bytes.size())
    throw ParseError("trailing bytes after last layer (byte " +
                     std::to_string(r.pos) + ")");
  return bs;
}

ProgressiveBitstream compress_cloud(const codec::ProdatModel& model,
                                    const PointCloud& pc, bool feature_only,
                                    double beta) {
  const codec::LatentCode code = model.encode(pc);
  const entropy::QuantizedLatent q =
      entropy::QuantizedLatent::from(code.z, code.z_xyz);
  const auto imp_z = taildrop::channel_importance(code.z, beta);
  const auto imp_xyz = taildrop::channel_importance(code.z_xyz, beta);
  return serialize_progressive(q, imp_z, imp_xyz, code.d, model, pc.size(),
                               feature_only);
}

ProgressiveBitstream serialize_progressive(
    const entropy::QuantizedLatent& quantized,
    const taildrop::ChannelImportance& importance_z,
    const taildrop::ChannelImportance& importance_xyz,
    const std::vector<double>& d, const codec::ProdatModel& model,
    std::size_t n_points, bool feature_only) {
  const int c = quantized.zq.cols;
  const int c_xyz = quantized.zxyzq.cols;
  if (static_cast<int>(importance_z.scores.size()) != c ||
      static_cast<int>(importance_xyz.scores.size()) != c_xyz)
    throw ArgumentError("serialize_progressive: importance size mismatch");
  ProgressiveBitstream bs;
  bs.flags = feature_only ? kFlagFeatureOnly : 0;
  bs.m_latent = static_cast<std::uint32_t>(quantized.zq.rows);
  bs.n_points = static_cast<std::uint32_t>(n_points);
  const auto rank_z = importance_z.ranking();
  const auto rank_xyz = importance_xyz.ranking();
  bs.perm_z.assign(rank_z.begin(), rank_z.end());
  bs.perm_xyz.assign(rank_xyz.begin(), rank_xyz.end());
  bs.density.resize(d.size());
  for (std::size_t i = 0; i < d.size(); ++i) {
    const double v = std::clamp(d[i], 0.0, 65535.0);
    bs.density[i] = static_cast<std::uint16_t>(std::lround(v));
  }
  for (const auto& [is_xyz, rank] : layer_order(c, c_xyz, feature_only)) {
    Layer l;
    l.is_xyz = is_xyz;
    l.rank = rank;
    const int channel = is_xyz ? rank_xyz[static_cast<std::size_t>(rank)]
                               : rank_z[static_cast<std::size_t>(rank)];
    encode_layer(is_xyz ? model.entropy_xyz() : model.entropy_z(),
                 model.params(), is_xyz ? quantized.zxyzq : quantized.zq,
                 channel, l.payload);
    bs.layers.push_back(std::move(l));
  }
  return bs;
}

ProgressiveBitstream truncate(const ProgressiveBitstream& bs, double alpha) {
  if (!(alpha > 0.0 && alpha <= 1.0))
    throw ArgumentError("truncate: alpha must be in (0,1]");
  const int c = bs.channels_z();
  const int c_xyz = bs.channels_xyz();
  const int k_z = static_cast<int>(
      std::ceil(alpha * static_cast<double>(c) - 1e-12));
  // k_xyz follows the grid-aligned alpha k_z/C so the retained layers are
  // always a contiguous prefix of the canonical interleave.
  const int k_xyz =
      bs.feature_only()
          ? c_xyz
          : static_cast<int>(std::ceil(static_cast<double>(k_z) * c_xyz /
                                           static_cast<double>(c) -
                                       1e-12));
  if (k_z == 0)
    throw ArgumentError("truncate: alpha keeps no feature layer");
  ProgressiveBitstream out = bs;
  out.layers.clear();
  for (const auto& l : bs.layers) {
    if ((l.is_xyz && l.rank < k_xyz) || (!l.is_xyz && l.rank < k_z))
      out.layers.push_back(l);
  }
  return out;
}

DecodedLatent decode_latent(const ProgressiveBitstream& bs,
                            const codec::ProdatModel& model) {
  const auto& cfg = model.config();
  if (bs.channels_z() != cfg.feature_channels ||
      bs.channels_xyz() != cfg.coord_channels)
    throw ModelError("bitstream/checkpoint channel mismatch");
  DecodedLatent out;
  const int m = static_cast<int>(bs.m_latent);
  out.quantized.zq = nn::Tensor(m, cfg.feature_channels);
  out.quantized.zxyzq = nn::Tensor(m, cfg.coord_channels);
  out.d.resize(bs.density.size());
  for (std::size_t i = 0; i < bs.density.size(); ++i)
    out.d[i] = static_cast<double>(bs.density[i]);
  for (const auto& l : bs.layers) {
    const int channel = layer_channel(bs, l);
    if (l.is_xyz) {
      decode_layer(model.entropy_xyz(), model.params(), l, channel,
                   out.quantized.zxyzq);
      out.retained_xyz.push_back(channel);
    } else {
      decode_layer(model.entropy_z(), model.params(), l, channel,
                   out.quantized.zq);
      out.retained_z.push_back(channel);
    }
  }
  return out;
}

PointCloud progressive_decode(const ProgressiveBitstream& bs,
                              const codec::ProdatModel& model) {
  const DecodedLatent latent = decode_latent(bs, model);
  return model.decode(latent.quantized.zq, latent.quantized.zxyzq, latent.d);
}

}  // namespace prodat::bitstream
