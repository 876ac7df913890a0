#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <random>

#include "c2freg/grad_check.hpp"
#include "c2freg/loss.hpp"
#include "c2freg/ops.hpp"
#include "oracles.hpp"

using namespace c2freg;

namespace {

Volume3D random_volume(const Dims& d, std::uint64_t seed, double lo = 0.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  Volume3D v = Volume3D::filled(d, 0.0);
  for (double& x : v.values()) x = u(rng);
  return v;
}

LabelVolume box_labels(const Dims& d, std::size_t i0, std::size_t i1, std::size_t j0, std::size_t j1,
                       std::size_t k0, std::size_t k1) {
  std::vector<Label> l(d.count(), 0);
  for (std::size_t i = i0; i < i1; ++i)
    for (std::size_t j = j0; j < j1; ++j)
      for (std::size_t k = k0; k < k1; ++k) l[(i * d.w + j) * d.d + k] = 1;
  return LabelVolume(d, l, 1);
}

}  // namespace

TEST_CASE("loss configuration defaults and validation") {
  LossConfig c;
  CHECK(c.levels == 3);
  CHECK(c.lambda == 0.5);
  CHECK(c.window == 7);
  CHECK_NOTHROW(c.validate());
  c.window = 4;
  CHECK_THROWS(c.validate());
  c = {};
  c.levels = 0;
  CHECK_THROWS(c.validate());
  c = {};
  c.lambda = -1;
  CHECK_THROWS(c.validate());
  c = {};
  c.eps = 0;
  CHECK_THROWS(c.validate());
}

TEST_CASE("self-correlation and affine-intensity invariance") {
  const Volume3D v = random_volume(Dims::cube(12), 1);
  CHECK(local_ncc(v, v, 7) >= 0.999);
  Volume3D w = v;
  for (double& x : w.values()) x = 2.5 * x + 4.0;
  CHECK(local_ncc(v, w, 7) >= 0.999);
}

TEST_CASE("local NCC matches the brute-force window oracle") {
  for (std::size_t w : {3u, 5u, 7u}) {
    const Volume3D a = random_volume(Dims::cube(9), 10 + w), b = random_volume(Dims::cube(9), 20 + w);
    CHECK(std::abs(local_ncc(a, b, w, 1e-5) - oracle::local_ncc(a, b, w, 1e-5)) < 1e-10);
  }
  const Volume3D a = random_volume({7, 9, 8}, 3), b = random_volume({7, 9, 8}, 4);
  CHECK(std::abs(local_ncc(a, b, 5, 1e-5) - oracle::local_ncc(a, b, 5, 1e-5)) < 1e-10);
}

TEST_CASE("local NCC is symmetric and bounded") {
  for (std::uint64_t s = 0; s < 10; ++s) {
    const Volume3D a = random_volume(Dims::cube(10), 100 + s, -1, 1);
    const Volume3D b = random_volume(Dims::cube(10), 200 + s, -1, 1);
    const double ab = local_ncc(a, b, 7), ba = local_ncc(b, a, 7);
    CHECK(std::abs(ab - ba) < 1e-12);
    const NdArray m = local_ncc_map(a, b, 7);
    for (double x : m.data()) {
      CHECK(x <= 1.0 + 1e-6);
      CHECK(x >= -1.0 - 1e-6);
    }
    const NdArray self = local_ncc_map(a, a, 7);
    for (double x : self.data()) CHECK(x <= 1.0 + 1e-6);
  }
}

TEST_CASE("local NCC rejects mismatched dims") {
  CHECK_THROWS(local_ncc(random_volume({8, 8, 8}, 1), random_volume({8, 8, 9}, 2), 7));
}

TEST_CASE("local NCC gradient matches finite differences on 9^3") {
  const Volume3D a = random_volume(Dims::cube(9), 30), b = random_volume(Dims::cube(9), 31);
  const auto r = ad::grad_check(
      [](ad::Tape&, const std::vector<ad::Var>& x) { return local_ncc(x[0], x[1], 7, 1e-5); },
      {a.to_ndarray(), b.to_ndarray()}, 1e-5);
  CHECK(r.max_rel_error < 1e-5);
}

TEST_CASE("identical three-level pyramids give -1.75") {
  const Volume3D v = random_volume(Dims::cube(16), 40);
  const ImagePyramid p = build_pyramid(v, 3);
  const double l = similarity_pyramid_loss(p, p, 7);
  CHECK(std::abs(l + 1.75) < 1e-3);
  CHECK(l >= -1.75);
}

TEST_CASE("single-level pyramid is minus the finest NCC") {
  const Volume3D a = random_volume(Dims::cube(10), 41), b = random_volume(Dims::cube(10), 42);
  CHECK(similarity_pyramid_loss(build_pyramid(a, 1), build_pyramid(b, 1), 7) == -local_ncc(a, b, 7));
}

TEST_CASE("two-level pyramid equals the per-level recomputation") {
  const Volume3D a = random_volume(Dims::cube(16), 43), b = random_volume(Dims::cube(16), 44);
  const ImagePyramid pa = build_pyramid(a, 2), pb = build_pyramid(b, 2);
  const double expect =
      -(0.5 * oracle::local_ncc(pa.levels[0], pb.levels[0], 7, 1e-5) +
        oracle::local_ncc(pa.levels[1], pb.levels[1], 7, 1e-5));
  CHECK(std::abs(similarity_pyramid_loss(pa, pb, 7) - expect) < 1e-10);
}

TEST_CASE("pyramid loss is bounded below by the weight sum") {
  for (std::uint64_t s = 0; s < 5; ++s) {
    const Volume3D a = random_volume(Dims::cube(16), 50 + s), b = random_volume(Dims::cube(16), 60 + s);
    CHECK(similarity_pyramid_loss(build_pyramid(a, 3), build_pyramid(b, 3), 5) >= -1.75 - 1e-6);
  }
}

TEST_CASE("pyramid loss rejects mismatched pyramids") {
  const Volume3D a = random_volume(Dims::cube(16), 1);
  CHECK_THROWS(similarity_pyramid_loss(build_pyramid(a, 3), build_pyramid(a, 2), 7));
  const Volume3D b = random_volume(Dims::cube(18), 1);
  CHECK_THROWS(similarity_pyramid_loss(build_pyramid(a, 2), build_pyramid(b, 2), 7));
}

TEST_CASE("differentiable pyramid loss matches the plain one") {
  const Volume3D a = random_volume(Dims::cube(16), 70), b = random_volume(Dims::cube(16), 71);
  ad::Tape t;
  const double v = similarity_pyramid_loss(build_pyramid(t.constant(a.to_ndarray()), 3),
                                           build_pyramid(t.constant(b.to_ndarray()), 3), 7, 1e-5)
                       .value()[0];
  CHECK(std::abs(v - similarity_pyramid_loss(build_pyramid(a, 3), build_pyramid(b, 3), 7)) < 1e-12);
}

TEST_CASE("Dice loss anchors") {
  const Dims d = Dims::cube(10);
  const LabelVolume a = box_labels(d, 0, 4, 0, 5, 0, 5);
  CHECK(dice_loss(a, a, 1) <= 1e-6);
  const LabelVolume far = box_labels(d, 6, 10, 0, 5, 0, 5);
  CHECK(std::abs(dice_loss(a, far, 1) - 1.0) < 1e-6);
  // |F| = |M| = 100, overlap 50.
  const LabelVolume half = box_labels(d, 2, 6, 0, 5, 0, 5);
  CHECK(std::abs(dice_loss(a, half, 1) - 0.5) < 1e-6);
  CHECK_THROWS(dice_loss(a, a, 0));
}

TEST_CASE("Dice loss averages over structures") {
  const Dims d = Dims::cube(8);
  std::vector<Label> f(d.count(), 0), m(d.count(), 0);
  for (std::size_t i = 0; i < 4; ++i) f[i] = m[i] = 1;
  for (std::size_t i = 10; i < 14; ++i) f[i] = 2;
  for (std::size_t i = 20; i < 24; ++i) m[i] = 2;
  CHECK(std::abs(dice_loss(LabelVolume(d, f, 2), LabelVolume(d, m, 2), 2) - 0.5) < 1e-6);
}

TEST_CASE("soft Dice stays in [0, 1] and its gradient matches finite differences") {
  std::mt19937_64 rng(80);
  std::vector<NdArray> f, m;
  for (int k = 0; k < 2; ++k) {
    f.push_back(oracle::random_array({4, 5, 3}, rng, 0.0, 1.0));
    m.push_back(oracle::random_array({4, 5, 3}, rng, 0.0, 1.0));
  }
  auto loss = [](ad::Tape&, const std::vector<ad::Var>& x) {
    return soft_dice_loss({x[0], x[1]}, {x[2], x[3]}, 1e-5);
  };
  const auto r = ad::grad_check(loss, {f[0], f[1], m[0], m[1]}, 1e-5);
  CHECK(r.max_rel_error < 1e-5);
  ad::Tape t;
  const double v = loss(t, {t.constant(f[0]), t.constant(f[1]), t.constant(m[0]), t.constant(m[1])}).value()[0];
  CHECK(v >= 0.0);
  CHECK(v <= 1.0);
}

TEST_CASE("one-hot masks of a label map") {
  const Dims d{2, 2, 2};
  const LabelVolume lv(d, {0, 1, 2, 1, 0, 0, 2, 2}, 2);
  const auto oh = one_hot(lv, 2);
  REQUIRE(oh.size() == 2);
  CHECK(oh[0] == NdArray({2, 2, 2}, {0, 1, 0, 1, 0, 0, 0, 0}));
  CHECK(oh[1] == NdArray({2, 2, 2}, {0, 0, 1, 0, 0, 0, 1, 1}));
}

TEST_CASE("semi-supervised combination") {
  CHECK(semi_supervised_loss(-1.2, 0.7, 0.0) == -1.2);
  CHECK(semi_supervised_loss(-1.75, 0.5, 0.5) == -1.5);
  ad::Tape t;
  const ad::Var v = semi_supervised_loss(t.constant(NdArray::scalar(-1.75)), t.constant(NdArray::scalar(0.5)), 0.5);
  CHECK(v.value()[0] == -1.5);
}
