#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "prodat/bitstream.hpp"

using namespace prodat;
using bitstream::ProgressiveBitstream;
using codec::ModelConfig;
using codec::ProdatModel;

namespace {

PointCloud random_cloud(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  PointCloud pc;
  for (std::size_t i = 0; i < n; ++i)
    pc.coords.push_back({rng.uniform(0.05, 0.95), rng.uniform(0.05, 0.95),
                         rng.uniform(0.05, 0.95)});
  return pc;
}

struct Fixture {
  ProdatModel model{ModelConfig{}};
  PointCloud pc = random_cloud(128, 21);
  ProgressiveBitstream bs;
  Fixture() {
    model.init_params();
    bs = bitstream::compress_cloud(model, pc);
  }
};

}  // namespace

TEST_CASE("interleave order for C=2, C_xyz=2") {
  const auto order = bitstream::layer_order(2, 2, false);
  const std::vector<std::pair<bool, int>> expect = {
      {true, 0}, {false, 0}, {true, 1}, {false, 1}};
  CHECK(order == expect);
}

TEST_CASE("interleave keeps the xyz prefix proportional for C=32, C_xyz=16") {
  const auto order = bitstream::layer_order(32, 16, false);
  REQUIRE(order.size() == 48);
  int seen_xyz = 0, seen_z = 0;
  for (const auto& [is_xyz, rank] : order) {
    if (is_xyz) {
      CHECK(rank == seen_xyz);
      ++seen_xyz;
    } else {
      ++seen_z;
      // Prefix through z rank k must contain ceil(k * 16 / 32) xyz layers.
      CHECK(seen_xyz == (seen_z * 16 + 31) / 32);
    }
  }
  CHECK(seen_xyz == 16);
  CHECK(seen_z == 32);
}

TEST_CASE("feature-only order fronts every xyz layer") {
  const auto order = bitstream::layer_order(4, 3, true);
  for (int i = 0; i < 3; ++i) CHECK(order[static_cast<std::size_t>(i)].first);
  for (int i = 3; i < 7; ++i) CHECK(!order[static_cast<std::size_t>(i)].first);
}

TEST_CASE("header size formula matches the serialized layout") {
  Fixture f;
  const auto bytes = f.bs.to_bytes();
  // 16 fixed + u32 length per layer + one permutation byte per channel.
  CHECK(f.bs.header_bytes() == 16 + 4 * (32 + 16) + 32 + 16);
  CHECK(bytes.size() == f.bs.header_bytes() + f.bs.body_bytes());
  CHECK(bytes[0] == 'P');
  CHECK(bytes[1] == 'D');
  CHECK(bytes[2] == 'A');
  CHECK(bytes[3] == 'T');
  CHECK(bytes[4] == 1);  // version
}

TEST_CASE("byte round-trip reproduces the container exactly") {
  Fixture f;
  const auto bytes = f.bs.to_bytes();
  const auto back = ProgressiveBitstream::from_bytes(bytes);
  CHECK(back.n_points == f.bs.n_points);
  CHECK(back.m_latent == f.bs.m_latent);
  CHECK(back.perm_z == f.bs.perm_z);
  CHECK(back.perm_xyz == f.bs.perm_xyz);
  CHECK(back.density == f.bs.density);
  REQUIRE(back.layers.size() == f.bs.layers.size());
  for (std::size_t i = 0; i < back.layers.size(); ++i) {
    CHECK(back.layers[i].is_xyz == f.bs.layers[i].is_xyz);
    CHECK(back.layers[i].rank == f.bs.layers[i].rank);
    CHECK(back.layers[i].payload == f.bs.layers[i].payload);
  }
  CHECK(back.to_bytes() == bytes);
}

TEST_CASE("decode_latent at alpha 1 recovers the quantized latent exactly") {
  Fixture f;
  const auto code = f.model.encode(f.pc);
  const auto q = entropy::QuantizedLatent::from(code.z, code.z_xyz);
  const auto dec = bitstream::decode_latent(f.bs, f.model);
  REQUIRE(dec.quantized.zq.rows == q.zq.rows);
  for (std::size_t i = 0; i < q.zq.data.size(); ++i)
    CHECK(dec.quantized.zq.data[i] == q.zq.data[i]);
  for (std::size_t i = 0; i < q.zxyzq.data.size(); ++i)
    CHECK(dec.quantized.zxyzq.data[i] == q.zxyzq.data[i]);
  CHECK(dec.retained_z.size() == 32);
  CHECK(dec.retained_xyz.size() == 16);
  // Density payload carries d_num exactly (small integer counts).
  REQUIRE(dec.d.size() == code.d.size());
  for (std::size_t i = 0; i < dec.d.size(); ++i)
    CHECK(dec.d[i] == doctest::Approx(code.d[i]));
}

TEST_CASE("truncate at alpha 1 is the identity") {
  Fixture f;
  const auto cut = bitstream::truncate(f.bs, 1.0);
  CHECK(cut.to_bytes() == f.bs.to_bytes());
}

TEST_CASE("alpha 0.03 keeps one z layer and one xyz layer") {
  Fixture f;
  const auto cut = bitstream::truncate(f.bs, 0.03);
  int z = 0, xyz = 0;
  for (const auto& l : cut.layers) (l.is_xyz ? xyz : z)++;
  CHECK(z == 1);
  CHECK(xyz == 1);
}

TEST_CASE("alpha 0 has no retained z layer and is rejected") {
  Fixture f;
  CHECK_THROWS_AS(bitstream::truncate(f.bs, 0.0), ArgumentError);
  CHECK_THROWS_AS(bitstream::truncate(f.bs, -0.1), ArgumentError);
  CHECK_THROWS_AS(bitstream::truncate(f.bs, 1.1), ArgumentError);
}

TEST_CASE("truncations nest as byte prefixes at layer granularity") {
  Fixture f;
  const auto full = f.bs.to_bytes();
  std::size_t prev_layers = 0;
  for (int k = 1; k <= 32; ++k) {
    const auto cut = bitstream::truncate(f.bs, double(k) / 32);
    CHECK(cut.layers.size() >= prev_layers);
    prev_layers = cut.layers.size();
    // The retained layers are the canonical-order prefix of the full set.
    for (std::size_t i = 0; i < cut.layers.size(); ++i) {
      CHECK(cut.layers[i].is_xyz == f.bs.layers[i].is_xyz);
      CHECK(cut.layers[i].rank == f.bs.layers[i].rank);
      CHECK(cut.layers[i].payload == f.bs.layers[i].payload);
    }
  }
}

TEST_CASE("truncation and masking agree bit for bit") {
  Fixture f;
  const auto code = f.model.encode(f.pc);
  const auto q = entropy::QuantizedLatent::from(code.z, code.z_xyz);
  for (int k = 1; k <= 32; k += 5) {
    const auto cut = bitstream::truncate(f.bs, double(k) / 32);
    const auto dec = bitstream::decode_latent(cut, f.model);
    // Build the equivalent mask directly from the stream permutation.
    nn::Tensor mz(q.zq.rows, q.zq.cols);
    for (int r = 0; r < mz.rows; ++r)
      for (int c : dec.retained_z) mz.at(r, c) = q.zq.at(r, c);
    nn::Tensor mx(q.zxyzq.rows, q.zxyzq.cols);
    for (int r = 0; r < mx.rows; ++r)
      for (int c : dec.retained_xyz) mx.at(r, c) = q.zxyzq.at(r, c);
    for (std::size_t i = 0; i < mz.data.size(); ++i)
      CHECK(dec.quantized.zq.data[i] == mz.data[i]);
    for (std::size_t i = 0; i < mx.data.size(); ++i)
      CHECK(dec.quantized.zxyzq.data[i] == mx.data[i]);
    // Retained channel ids are the first k entries of the permutation.
    REQUIRE(dec.retained_z.size() == static_cast<std::size_t>(k));
    for (int i = 0; i < k; ++i)
      CHECK(dec.retained_z[static_cast<std::size_t>(i)] ==
            static_cast<int>(cut.perm_z[static_cast<std::size_t>(i)]));
  }
}

TEST_CASE("progressive_decode of a truncated stream yields a finite cloud") {
  Fixture f;
  const auto cut = bitstream::truncate(f.bs, 0.25);
  const PointCloud out = bitstream::progressive_decode(cut, f.model);
  CHECK(out.size() >= f.bs.m_latent);
  for (const auto& p : out.coords)
    for (int ax = 0; ax < 3; ++ax) CHECK(std::isfinite(p[ax]));
}

TEST_CASE("trailing garbage is rejected") {
  Fixture f;
  auto bytes = f.bs.to_bytes();
  bytes.push_back(0x00);
  CHECK_THROWS_AS(ProgressiveBitstream::from_bytes(bytes), ParseError);
}

TEST_CASE("bad magic and unsupported version are rejected") {
  Fixture f;
  auto bytes = f.bs.to_bytes();
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  CHECK_THROWS_AS(ProgressiveBitstream::from_bytes(bad_magic), ParseError);
  auto bad_ver = bytes;
  bad_ver[4] = 9;
  CHECK_THROWS_AS(ProgressiveBitstream::from_bytes(bad_ver), ParseError);
}

TEST_CASE("a truncated byte stream is rejected") {
  Fixture f;
  const auto bytes = f.bs.to_bytes();
  // Chop mid-body and mid-header.
  for (const std::size_t cut : {bytes.size() - 3, f.bs.header_bytes() - 2,
                                std::size_t{7}}) {
    std::vector<std::uint8_t> part(bytes.begin(),
                                   bytes.begin() + static_cast<long>(cut));
    CHECK_THROWS_AS(ProgressiveBitstream::from_bytes(part), ParseError);
  }
}

TEST_CASE("file bpp stays close to the entropy estimate") {
  Fixture f;
  const auto dec = bitstream::decode_latent(f.bs, f.model);
  const std::size_t density_bits = 8 * (4 + 2 * f.bs.m_latent);
  const double est = entropy::estimate_bpp(
      dec.quantized, f.model.entropy_z(), f.model.entropy_xyz(),
      f.model.params(), dec.retained_z, dec.retained_xyz, f.pc.size(),
      density_bits);
  const double body_bpp =
      8.0 * static_cast<double>(f.bs.body_bytes()) / double(f.pc.size());
  // Each of the 48 layers pays bounds plus flush: <= 8 bytes overhead.
  CHECK(body_bpp >= est - 1e-9);
  CHECK(body_bpp <= 1.05 * est + 8.0 * 48 * 8 / double(f.pc.size()));
}

TEST_CASE("file size grows monotonically with alpha") {
  Fixture f;
  std::size_t prev = 0;
  for (int k = 1; k <= 32; ++k) {
    const auto cut = bitstream::truncate(f.bs, double(k) / 32);
    const std::size_t sz = cut.to_bytes().size();
    CHECK(sz > prev);
    prev = sz;
  }
  CHECK(prev == f.bs.to_bytes().size());
}
