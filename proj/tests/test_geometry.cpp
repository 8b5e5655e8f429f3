#include <doctest.h>

#include <cmath>

#include "fusedet/geometry.hpp"
#include "fusedet/rng.hpp"
#include "oracles.hpp"

using namespace fusedet;
using namespace fusedet::geom;

namespace {

Box3D random_box(Rng& rng) {
  return Box3D(rng.uniform(-4.0, 4.0), rng.uniform(-1.0, 1.0), rng.uniform(-4.0, 4.0),
               rng.uniform(0.5, 2.5), rng.uniform(0.5, 2.5), rng.uniform(0.5, 3.5),
               rng.uniform(-kPi, kPi));
}

Box3D rigid_transform(const Box3D& b, double phi, double tx, double tz) {
  const double c = std::cos(phi), s = std::sin(phi);
  return Box3D(c * b.x - s * b.z + tx, b.y, s * b.x + c * b.z + tz, b.h, b.w, b.l, b.theta + phi);
}

}  // namespace

TEST_SUITE_BEGIN("geometry");

TEST_CASE("project_points pinhole cases") {
  const CalibMatrix calib = CalibMatrix::pinhole(1.0, 0.0, 0.0, 10, 10);
  const auto proj = project_points({{2, 4, 2}, {1, 1, 0}, {0, 0, 5}}, calib);

  // Independent 3x4 oracle: u = (1*2 + 0 + 0*2 + 0) / 2, v = 4/2.
  CHECK(proj.uv[0][0] == doctest::Approx(1.0));
  CHECK(proj.uv[0][1] == doctest::Approx(2.0));

  CHECK_FALSE(proj.in_frustum[1]);  // depth exactly zero

  CHECK(proj.uv[2][0] == doctest::Approx(0.0));  // optical axis hits principal point
  CHECK(proj.uv[2][1] == doctest::Approx(0.0));

  const CalibMatrix offcenter = CalibMatrix::pinhole(2.5, 3.5, 4.5, 100, 100);
  const auto proj2 = project_points({{0, 0, 7.0}}, offcenter);
  CHECK(proj2.uv[0][0] == doctest::Approx(3.5));
  CHECK(proj2.uv[0][1] == doctest::Approx(4.5));
  CHECK(proj2.in_frustum[0]);
}

TEST_CASE("project_points is scale invariant in homogeneous coordinates") {
  Rng rng(21);
  for (int trial = 0; trial < 10; ++trial) {
    std::array<double, 12> m{};
    for (double& v : m) v = rng.uniform(-1.0, 1.0);
    m[10] += 2.0;  // keep the third row away from zero
    const CalibMatrix calib(m, 64, 48);
    const double k = rng.uniform(0.1, 9.0);
    std::array<double, 12> scaled = m;
    for (double& v : scaled) v *= k;
    const CalibMatrix calib_scaled(scaled, 64, 48);
    const Vec3 pt{rng.uniform(-5, 5), rng.uniform(-5, 5), rng.uniform(1.0, 9.0)};
    const auto a = project_points({pt}, calib);
    const auto b = project_points({pt}, calib_scaled);
    CHECK(a.uv[0][0] == doctest::Approx(b.uv[0][0]).epsilon(1e-12));
    CHECK(a.uv[0][1] == doctest::Approx(b.uv[0][1]).epsilon(1e-12));
    CHECK(a.in_frustum[0] == b.in_frustum[0]);
  }
}

TEST_CASE("bilinear sampling exact cases") {
  Tape t;
  // 2x2 map, one channel: [[1,2],[3,4]].
  DiffArray map = t.leaf(DiffArray({2, 2, 1}, {1, 2, 3, 4}));

  DiffArray at_integer = bilinear_sample(t, map, t.leaf(DiffArray({1, 2}, {1.0, 0.0})));
  CHECK(at_integer.data[0] == doctest::Approx(3.0));

  DiffArray at_mid = bilinear_sample(t, map, t.leaf(DiffArray({1, 2}, {0.5, 0.5})));
  CHECK(at_mid.data[0] == doctest::Approx(2.5));  // mean of the four texels

  // Hand-evaluated tensor-product weights at (0.25, 0.75):
  // 0.1875*1 + 0.5625*2 + 0.0625*3 + 0.1875*4 = 2.25.
  DiffArray at_frac = bilinear_sample(t, map, t.leaf(DiffArray({1, 2}, {0.25, 0.75})));
  CHECK(at_frac.data[0] == doctest::Approx(2.25).epsilon(1e-14));

  const auto ref = oracles::bilinear_reference({1, 2, 3, 4}, 2, 2, 1, 0.25, 0.75);
  CHECK(at_frac.data[0] == doctest::Approx(ref[0]).epsilon(1e-14));

  // More than one pixel outside the map samples pure padding.
  DiffArray outside = bilinear_sample(t, map, t.leaf(DiffArray({1, 2}, {-2.5, 0.5})));
  CHECK(outside.data[0] == 0.0);
}

TEST_CASE("bilinear sampling matches reference on random maps") {
  Rng rng(31);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t rows = 2 + rng.below(4), cols = 2 + rng.below(4), ch = 1 + rng.below(3);
    DiffArray map = DiffArray::zeros({rows, cols, ch});
    for (double& v : map.data) v = rng.uniform(-2, 2);
    const double r = rng.uniform(-1.5, static_cast<double>(rows) + 0.5);
    const double c = rng.uniform(-1.5, static_cast<double>(cols) + 0.5);
    Tape t;
    DiffArray got = bilinear_sample(t, t.leaf(map), t.leaf(DiffArray({1, 2}, {r, c})));
    const auto want = oracles::bilinear_reference(map.data, rows, cols, ch, r, c);
    for (std::size_t k = 0; k < ch; ++k)
      CHECK(got.data[k] == doctest::Approx(want[k]).epsilon(1e-12));
  }
}

TEST_CASE("bilinear gradients pass finite differences away from the lattice") {
  Rng rng(41);
  DiffArray map = DiffArray::zeros({4, 5, 3});
  for (double& v : map.data) v = rng.uniform(-1, 1);
  // Coordinates bounded away from integer lines by at least 1e-3.
  DiffArray coords = DiffArray::zeros({6, 2});
  for (std::size_t i = 0; i < 6; ++i) {
    coords.data[2 * i] = rng.below(3) + rng.uniform(0.1, 0.9);
    coords.data[2 * i + 1] = rng.below(4) + rng.uniform(0.1, 0.9);
  }

  const auto wrt_map = [&coords](Tape& t, const DiffArray& m) {
    DiffArray s = bilinear_sample(t, m, t.leaf(coords));
    return t.sum(t.mul(s, s));
  };
  CHECK(finite_diff_check(wrt_map, map, 1e-5) < 1e-4);

  const auto wrt_coords = [&map](Tape& t, const DiffArray& c) {
    DiffArray s = bilinear_sample(t, t.leaf(map), c);
    return t.sum(t.mul(s, s));
  };
  CHECK(finite_diff_check(wrt_coords, coords, 1e-5) < 1e-4);
}

TEST_CASE("iou trivial cases") {
  const Box3D a(1, 0.5, 2, 1.5, 1.5, 3.0, 0.7);
  CHECK(iou_bev(a, a) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(iou_3d(a, a) == doctest::Approx(1.0).epsilon(1e-12));

  const Box3D far_box(50, 0.5, 50, 1.5, 1.5, 3.0, -0.3);
  CHECK(iou_bev(a, far_box) == 0.0);
  CHECK(iou_3d(a, far_box) == 0.0);

  // Same footprint, stacked with no vertical overlap.
  const Box3D low(0, 0, 0, 1, 2, 2, 0);
  const Box3D high(0, 5, 0, 1, 2, 2, 0);
  CHECK(iou_bev(low, high) == doctest::Approx(1.0));
  CHECK(iou_3d(low, high) == 0.0);
}

TEST_CASE("axis-aligned overlap against hand values") {
  // 2x2 squares offset by 1 along x: intersection 2, union 6.
  const Box3D a(0, 0, 0, 1, 2, 2, 0);
  const Box3D b(1, 0, 0, 1, 2, 2, 0);
  CHECK(iou_bev(a, b) == doctest::Approx(2.0 / 6.0).epsilon(1e-9));
  CHECK(oracles::mc_iou_bev(a, b, 1000000, 9) == doctest::Approx(2.0 / 6.0).epsilon(5e-3));

  // Unit cubes offset by 0.5 along x: 0.5 / 1.5.
  const Box3D ca(0, 0, 0, 1, 1, 1, 0);
  const Box3D cb(0.5, 0, 0, 1, 1, 1, 0);
  CHECK(iou_3d(ca, cb) == doctest::Approx(1.0 / 3.0).epsilon(1e-9));
  CHECK(oracles::mc_iou_3d(ca, cb, 1000000, 10) == doctest::Approx(1.0 / 3.0).epsilon(5e-3));
}

TEST_CASE("rotated iou agrees with Monte-Carlo oracle") {
  Rng rng(77);
  for (int trial = 0; trial < 12; ++trial) {
    Box3D a = random_box(rng);
    Box3D b = random_box(rng);
    // Pull the second box near the first so intersections are common.
    b = Box3D(a.x + rng.uniform(-2, 2), a.y + rng.uniform(-0.5, 0.5), a.z + rng.uniform(-2, 2),
              b.h, b.w, b.l, b.theta);
    const double got_bev = iou_bev(a, b);
    const double got_3d = iou_3d(a, b);
    CHECK(got_bev == doctest::Approx(oracles::mc_iou_bev(a, b, 400000, 100 + trial)).epsilon(0).scale(1).epsilon(0.01));
    CHECK(std::abs(got_bev - oracles::mc_iou_bev(a, b, 400000, 100 + trial)) < 4e-3);
    CHECK(std::abs(got_3d - oracles::mc_iou_3d(a, b, 400000, 200 + trial)) < 4e-3);
    CHECK(got_3d <= got_bev + 1e-12);
  }
}

TEST_CASE("iou symmetry and rigid invariance") {
  Rng rng(88);
  for (int trial = 0; trial < 30; ++trial) {
    Box3D a = random_box(rng);
    Box3D b = random_box(rng);
    b = Box3D(a.x + rng.uniform(-2.5, 2.5), a.y + rng.uniform(-0.5, 0.5),
              a.z + rng.uniform(-2.5, 2.5), b.h, b.w, b.l, b.theta);
    CHECK(iou_bev(a, b) == doctest::Approx(iou_bev(b, a)).epsilon(1e-12));
    CHECK(iou_3d(a, b) == doctest::Approx(iou_3d(b, a)).epsilon(1e-12));

    const double phi = rng.uniform(-kPi, kPi);
    const double tx = rng.uniform(-10, 10), tz = rng.uniform(-10, 10);
    const Box3D ra = rigid_transform(a, phi, tx, tz);
    const Box3D rb = rigid_transform(b, phi, tx, tz);
    CHECK(std::abs(iou_bev(ra, rb) - iou_bev(a, b)) < 1e-9);
    CHECK(std::abs(iou_3d(ra, rb) - iou_3d(a, b)) < 1e-9);
  }
}

TEST_CASE("iou_3d equals iou_bev when vertical extents coincide") {
  Rng rng(99);
  for (int trial = 0; trial < 20; ++trial) {
    Box3D a = random_box(rng);
    Box3D b = random_box(rng);
    b = Box3D(a.x + rng.uniform(-2, 2), a.y, a.z + rng.uniform(-2, 2), a.h, b.w, b.l, b.theta);
    CHECK(iou_3d(a, b) == doctest::Approx(iou_bev(a, b)).epsilon(1e-12));
  }
}

TEST_CASE("bin encoding quantization") {
  BinConfig cfg;
  cfg.xz_extent = 1.5;
  cfg.xz_bin_width = 0.5;

  // Hand quantization: offset 1.3 in [-1.5, 1.5) with width 0.5 lands in
  // bin 5 of 6 with residual 0.05.
  const Box3D target(1.3, 0, 0.0, 1, 1, 1, 0);
  const BinEncoding enc = encode_bins(target, {0, 0, 0}, cfg);
  CHECK(enc.bin_x == 5);
  CHECK(static_cast<int>(cfg.xz_bins()) == 6);
  CHECK(enc.residuals[0] == doctest::Approx(0.05).epsilon(1e-12));

  // Exactly at a bin center: zero residual.
  const Box3D centered(-1.25, 0, 0.25, 1, 1, 1, 0);
  const BinEncoding enc2 = encode_bins(centered, {0, 0, 0}, cfg);
  CHECK(enc2.bin_x == 0);
  CHECK(enc2.residuals[0] == doctest::Approx(0.0));

  CHECK_THROWS_AS(encode_bins(Box3D(2.0, 0, 0, 1, 1, 1, 0), Vec3{0, 0, 0}, cfg),
                  fusedet::DomainError);
}

TEST_CASE("bin encode/decode round trip is exact for in-range boxes") {
  Rng rng(123);
  const BinConfig cfg;  // defaults: +/-3 m, 0.5 m bins, 12 theta bins
  for (int trial = 0; trial < 100; ++trial) {
    const Vec3 anchor{rng.uniform(-10, 10), rng.uniform(-1, 1), rng.uniform(-10, 10)};
    const Box3D target(anchor.x + rng.uniform(-2.9, 2.9), anchor.y + rng.uniform(-1, 1),
                       anchor.z + rng.uniform(-2.9, 2.9), rng.uniform(0.5, 2.0),
                       rng.uniform(0.5, 2.0), rng.uniform(0.5, 4.0), rng.uniform(-kPi, kPi));
    const BinEncoding enc = encode_bins(target, anchor, cfg);
    CHECK(std::abs(enc.residuals[0]) <= 0.5 * cfg.xz_bin_width + 1e-12);
    CHECK(std::abs(enc.residuals[2]) <= 0.5 * cfg.xz_bin_width + 1e-12);
    CHECK(std::abs(enc.residuals[6]) <= 0.5 * cfg.theta_bin_width() + 1e-12);
    const Box3D back = decode_bins(enc, anchor);
    CHECK(back.x == doctest::Approx(target.x).epsilon(1e-12));
    CHECK(back.y == doctest::Approx(target.y).epsilon(1e-12));
    CHECK(back.z == doctest::Approx(target.z).epsilon(1e-12));
    CHECK(back.h == doctest::Approx(target.h).epsilon(1e-12));
    CHECK(back.w == doctest::Approx(target.w).epsilon(1e-12));
    CHECK(back.l == doctest::Approx(target.l).epsilon(1e-12));
    CHECK(back.theta == doctest::Approx(target.theta).epsilon(1e-12));
  }
}

TEST_CASE("box construction normalizes and validates") {
  const Box3D b(0, 0, 0, 1, 1, 1, 3.5 * kPi);
  CHECK(b.theta >= -kPi);
  CHECK(b.theta < kPi);
  CHECK(b.theta == doctest::Approx(-0.5 * kPi));
  CHECK_THROWS_AS(Box3D(0, 0, 0, -1, 1, 1, 0), fusedet::ContractError);
}

TEST_SUITE_END();
