#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <cstdio>

#include "doctest.h"
#include "prodat/geometry.hpp"
#include "prodat/metrics.hpp"

using namespace prodat;
using metrics::PsnrMode;
using metrics::PsnrOptions;
using metrics::RDPoint;

namespace {

PointCloud random_cloud(std::size_t n, std::uint64_t seed, double span = 1.0) {
  Rng rng(seed);
  PointCloud pc;
  for (std::size_t i = 0; i < n; ++i)
    pc.coords.push_back({rng.uniform(0, span), rng.uniform(0, span),
                         rng.uniform(0, span)});
  return pc;
}

double brute_cd(const PointCloud& a, const PointCloud& b) {
  auto dir = [](const PointCloud& from, const PointCloud& to) {
    double acc = 0;
    for (const auto& p : from.coords) {
      double best = sq_dist(p, to.coords[0]);
      for (const auto& q : to.coords) best = std::min(best, sq_dist(p, q));
      acc += best;
    }
    return acc / static_cast<double>(from.size());
  };
  return dir(a, b) + dir(b, a);
}

double brute_psnr_d1(const PointCloud& o, const PointCloud& r,
                     bool conventional) {
  auto dir = [](const PointCloud& from, const PointCloud& to) {
    double acc = 0;
    for (const auto& p : from.coords) {
      double best = sq_dist(p, to.coords[0]);
      for (const auto& q : to.coords) best = std::min(best, sq_dist(p, q));
      acc += best;
    }
    return acc / static_cast<double>(from.size());
  };
  const double mse = std::max(dir(o, r), dir(r, o));
  const double peak = BoundingBox::of(o).sq_diagonal();
  const double peak_term = conventional ? peak : peak * peak;
  return 10.0 * std::log10(3.0 * peak_term / mse);
}

}  // namespace

TEST_CASE("chamfer distance of identical clouds is zero") {
  const PointCloud pc = random_cloud(50, 1);
  CHECK(metrics::chamfer_distance(pc, pc) == 0.0);
}

TEST_CASE("single points at unit distance give CD 2") {
  PointCloud a, b;
  a.coords = {{0, 0, 0}};
  b.coords = {{1, 0, 0}};
  CHECK(metrics::chamfer_distance(a, b) == doctest::Approx(2.0).epsilon(1e-12));
}

TEST_CASE("chamfer matches brute force and is symmetric") {
  for (std::uint64_t seed = 2; seed < 6; ++seed) {
    const PointCloud a = random_cloud(120, seed);
    const PointCloud b = random_cloud(75, seed + 100);
    const double cd = metrics::chamfer_distance(a, b);
    CHECK(cd == doctest::Approx(brute_cd(a, b)).epsilon(1e-12));
    CHECK(metrics::chamfer_distance(b, a) == doctest::Approx(cd).epsilon(1e-12));
  }
}

TEST_CASE("identical clouds hit the +infinity sentinel") {
  const PointCloud pc = random_cloud(30, 7);
  CHECK(metrics::psnr_d(pc, pc, PsnrMode::D1) == metrics::kPsnrInfinity);
  CHECK(metrics::psnr_d(pc, pc, PsnrMode::D2) == metrics::kPsnrInfinity);
}

TEST_CASE("a zero-extent original is rejected") {
  PointCloud o, r;
  o.coords = {{0.5, 0.5, 0.5}, {0.5, 0.5, 0.5}};
  r.coords = {{0.4, 0.5, 0.5}};
  CHECK_THROWS_AS(metrics::psnr_d(o, r, PsnrMode::D1), ArgumentError);
}

TEST_CASE("d1 psnr matches an independent two-pass oracle") {
  Rng rng(8);
  for (int trial = 0; trial < 10; ++trial) {
    const PointCloud o = random_cloud(90, 10 + trial);
    PointCloud r = random_cloud(60, 40 + trial);
    const double got = metrics::psnr_d(o, r, PsnrMode::D1);
    CHECK(got == doctest::Approx(brute_psnr_d1(o, r, false)).epsilon(1e-9));
    PsnrOptions conv;
    conv.conventional_peak = true;
    CHECK(metrics::psnr_d(o, r, conv) ==
          doctest::Approx(brute_psnr_d1(o, r, true)).epsilon(1e-9));
  }
}

TEST_CASE("unit-cube corners displaced by 0.1 give a closed-form value") {
  PointCloud o;
  for (int i = 0; i < 8; ++i)
    o.coords.push_back({double(i & 1), double((i >> 1) & 1), double(i >> 2)});
  PointCloud r = o;
  for (auto& p : r.coords) p[0] += 0.1;
  // mse = 0.01 both ways; peak = squared diagonal = 3; printed-formula
  // peak term squares it again: 10*log10(3*9/0.01).
  CHECK(metrics::psnr_d(o, r, PsnrMode::D1) ==
        doctest::Approx(10.0 * std::log10(2700.0)).epsilon(1e-12));
}

TEST_CASE("the paper peak and the conventional peak differ by 10 log10 peak") {
  const PointCloud o = random_cloud(80, 11, 2.0);
  const PointCloud r = random_cloud(80, 12, 2.0);
  const BoundingBox bb = BoundingBox::of(o);
  PsnrOptions conv;
  conv.conventional_peak = true;
  const double diff =
      metrics::psnr_d(o, r, PsnrMode::D1) - metrics::psnr_d(o, r, conv);
  CHECK(diff == doctest::Approx(10.0 * std::log10(bb.sq_diagonal())).epsilon(1e-9));
}

TEST_CASE("d2 with plane normals ignores tangential error") {
  PointCloud o;
  Rng rng(13);
  for (int i = 0; i < 64; ++i) {
    o.coords.push_back({rng.uniform(), rng.uniform(), 0.0});
    o.normals.push_back({0, 0, 1});
  }
  PointCloud r = o;
  r.normals.clear();
  for (auto& p : r.coords) p[0] += 0.01;  // purely tangential
  CHECK(metrics::psnr_d(o, r, PsnrMode::D2) == metrics::kPsnrInfinity);
  // A normal-direction shift of the same size is fully charged.
  PointCloud rz = o;
  rz.normals.clear();
  for (auto& p : rz.coords) p[2] += 0.01;
  const double d2 = metrics::psnr_d(o, rz, PsnrMode::D2);
  const double d1 = metrics::psnr_d(o, rz, PsnrMode::D1);
  CHECK(d2 == doctest::Approx(d1).epsilon(1e-9));
}

TEST_CASE("d2 dominates d1 on random pairs") {
  for (std::uint64_t seed = 20; seed < 25; ++seed) {
    const PointCloud o = random_cloud(150, seed);
    const PointCloud r = random_cloud(140, seed + 50);
    CHECK(metrics::psnr_d(o, r, PsnrMode::D2) >=
          metrics::psnr_d(o, r, PsnrMode::D1) - 1e-9);
  }
}

TEST_CASE("psnr decreases as the perturbation grows") {
  const PointCloud o = random_cloud(100, 30);
  Rng rng(31);
  std::vector<Vec3> dir(o.size());
  for (auto& d : dir) d = {rng.normal(), rng.normal(), rng.normal()};
  double prev = metrics::kPsnrInfinity;
  for (double amp = 1e-3; amp < 0.2; amp *= 4) {
    PointCloud r = o;
    for (std::size_t i = 0; i < r.size(); ++i)
      r.coords[i] = r.coords[i] + dir[i] * amp;
    const double now = metrics::psnr_d(o, r, PsnrMode::D1);
    CHECK(now < prev);
    prev = now;
  }
}

TEST_CASE("bd-rate of a curve against itself is zero") {
  std::vector<RDPoint> curve;
  for (int i = 0; i < 5; ++i)
    curve.push_back({0.5 * (i + 1), 30.0 + 3.0 * i, ""});
  CHECK(metrics::bd_rate(curve, curve) == doctest::Approx(0.0).epsilon(1e-9));
}

TEST_CASE("doubling every rate costs +100 percent, halving -50") {
  std::vector<RDPoint> anchor, twice;
  for (int i = 0; i < 6; ++i) {
    const double q = 28.0 + 2.5 * i;
    const double r = 0.3 * std::pow(1.6, i);
    anchor.push_back({r, q, ""});
    twice.push_back({2 * r, q, ""});
  }
  CHECK(metrics::bd_rate(anchor, twice) == doctest::Approx(100.0).epsilon(1e-6));
  CHECK(metrics::bd_rate(twice, anchor) == doctest::Approx(-50.0).epsilon(1e-6));
}

TEST_CASE("bd-rate matches a lagrange-fit trapezoid oracle") {
  // Four points per curve: the cubic fit interpolates them exactly, so an
  // independent Lagrange evaluation plus dense trapezoid quadrature must
  // agree with the analytic integration.
  const std::vector<RDPoint> anchor = {
      {0.30, 30.0, ""}, {0.55, 34.0, ""}, {1.05, 38.5, ""}, {2.10, 42.0, ""}};
  const std::vector<RDPoint> test = {
      {0.24, 29.0, ""}, {0.50, 33.0, ""}, {0.90, 39.0, ""}, {1.70, 43.0, ""}};
  auto lagrange = [](const std::vector<RDPoint>& pts, double q) {
    double acc = 0;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      double term = std::log10(pts[i].bpp);
      for (std::size_t j = 0; j < pts.size(); ++j)
        if (j != i)
          term *= (q - pts[j].quality) / (pts[i].quality - pts[j].quality);
      acc += term;
    }
    return acc;
  };
  const double lo = 30.0, hi = 42.0;  // common quality interval
  const int steps = 200000;
  double integral = 0;
  for (int s = 0; s < steps; ++s) {
    const double q0 = lo + (hi - lo) * s / steps;
    const double q1 = lo + (hi - lo) * (s + 1) / steps;
    const double f0 = lagrange(test, q0) - lagrange(anchor, q0);
    const double f1 = lagrange(test, q1) - lagrange(anchor, q1);
    integral += 0.5 * (f0 + f1) * (q1 - q0);
  }
  const double expect = (std::pow(10.0, integral / (hi - lo)) - 1.0) * 100.0;
  CHECK(metrics::bd_rate(anchor, test) ==
        doctest::Approx(expect).epsilon(1e-4));
}

TEST_CASE("bd-rate rejects short curves and disjoint quality ranges") {
  std::vector<RDPoint> a = {{0.1, 30, ""}, {0.2, 32, ""}, {0.4, 34, ""}};
  std::vector<RDPoint> b = {{0.1, 30, ""}, {0.2, 32, ""}, {0.4, 34, ""},
                            {0.8, 36, ""}};
  CHECK_THROWS_AS(metrics::bd_rate(a, b), ArgumentError);
  std::vector<RDPoint> high;
  for (int i = 0; i < 4; ++i) high.push_back({0.1 * (i + 1), 50.0 + i, ""});
  CHECK_THROWS_AS(metrics::bd_rate(b, high), ArgumentError);
}

TEST_CASE("rd csv round-trips values and labels") {
  const std::string path = "/tmp/prodat_rd_test.csv";
  std::vector<RDPoint> pts = {{0.125, 31.75, "alpha=0.25"},
                              {0.5, 38.0625, "alpha=0.5"},
                              {1.0, 44.5, "alpha=1"}};
  metrics::write_rd_csv(path, pts);
  const auto back = metrics::read_rd_csv(path);
  REQUIRE(back.size() == pts.size());
  for (std::size_t i = 0; i < pts.size(); ++i) {
    CHECK(back[i].bpp == doctest::Approx(pts[i].bpp).epsilon(1e-12));
    CHECK(back[i].quality == doctest::Approx(pts[i].quality).epsilon(1e-12));
    CHECK(back[i].label == pts[i].label);
  }
  std::remove(path.c_str());
}
