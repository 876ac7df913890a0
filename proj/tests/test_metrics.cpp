#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "c2freg/metrics.hpp"
#include "c2freg/phantom.hpp"
#include "oracles.hpp"

using namespace c2freg;

namespace {

LabelVolume box(const Dims& d, std::size_t i0, std::size_t i1, std::size_t j0, std::size_t j1, std::size_t k0,
                std::size_t k1, Label value = 1) {
  std::vector<Label> l(d.count(), 0);
  for (std::size_t i = i0; i < i1; ++i)
    for (std::size_t j = j0; j < j1; ++j)
      for (std::size_t k = k0; k < k1; ++k) l[(i * d.w + j) * d.d + k] = value;
  return LabelVolume(d, l, value);
}

// A few random boxes plus scattered voxels; never empty.
LabelVolume random_blob(const Dims& d, std::mt19937_64& rng) {
  std::vector<Label> l(d.count(), 0);
  auto pick = [&](std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng); };
  const std::size_t boxes = 1 + pick(3);
  for (std::size_t b = 0; b < boxes; ++b) {
    const std::size_t i0 = pick(d.h), j0 = pick(d.w), k0 = pick(d.d);
    const std::size_t i1 = std::min(d.h, i0 + 1 + pick(d.h / 2 + 1));
    const std::size_t j1 = std::min(d.w, j0 + 1 + pick(d.w / 2 + 1));
    const std::size_t k1 = std::min(d.d, k0 + 1 + pick(d.d / 2 + 1));
    for (std::size_t i = i0; i < i1; ++i)
      for (std::size_t j = j0; j < j1; ++j)
        for (std::size_t k = k0; k < k1; ++k) l[(i * d.w + j) * d.d + k] = 1;
  }
  for (std::size_t n = pick(6); n > 0; --n) l[pick(d.count())] = 1;
  return LabelVolume(d, l, 1);
}

AffineMatrix translate_voxels(const Dims& d, double vx, double vy, double vz) {
  return AffineMatrix::translation({2.0 * vx / double(d.h - 1), 2.0 * vy / double(d.w - 1),
                                    2.0 * vz / double(d.d - 1)});
}

}  // namespace

TEST_CASE("Dice anchors") {
  const Dims d = Dims::cube(10);
  const LabelVolume a = box(d, 0, 4, 0, 5, 0, 5);
  CHECK(dice_score(a, a, 1) == 1.0);
  CHECK(dice_score(a, box(d, 6, 10, 0, 5, 0, 5), 1) == 0.0);
  // |A| = |B| = 100, overlap 50.
  CHECK(dice_score(a, box(d, 2, 6, 0, 5, 0, 5), 1) == 0.5);
  const LabelVolume empty = box(d, 0, 0, 0, 0, 0, 0);
  CHECK(dice_score(empty, empty, 1) == 1.0);
  CHECK(dice_score(a, empty, 1) == 0.0);
  CHECK(dice_score(empty, a, 1) == 0.0);
  CHECK_THROWS(dice_score(a, box(Dims::cube(9), 0, 4, 0, 5, 0, 5), 1));
}

TEST_CASE("Dice is symmetric, bounded and invariant under a shared voxel permutation") {
  std::mt19937_64 rng(1);
  const Dims d{7, 9, 8};
  for (int n = 0; n < 20; ++n) {
    const LabelVolume a = random_blob(d, rng), b = random_blob(d, rng);
    const double ab = dice_score(a, b, 1);
    CHECK(ab == dice_score(b, a, 1));
    CHECK(ab >= 0.0);
    CHECK(ab <= 1.0);
    std::vector<std::size_t> perm(d.count());
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<Label> pa(d.count()), pb(d.count());
    for (std::size_t i = 0; i < d.count(); ++i) {
      pa[i] = a.labels()[perm[i]];
      pb[i] = b.labels()[perm[i]];
    }
    CHECK(dice_score(LabelVolume(d, pa, 1), LabelVolume(d, pb, 1), 1) == ab);
  }
}

TEST_CASE("DSC30 on enumerated lists") {
  const std::vector<double> tenths{0.5, 0.1, 0.9, 0.3, 1.0, 0.2, 0.7, 0.4, 0.8, 0.6};
  CHECK(std::abs(dsc30(tenths) - 0.2) < 1e-15);
  CHECK(dsc30(std::vector<double>{0.5}) == 0.5);
  CHECK(std::abs(dsc30(std::vector<double>(7, 0.7)) - 0.7) < 1e-15);
  // ceil(0.3 * 4) = 2 and ceil(0.3 * 11) = 4.
  CHECK(std::abs(dsc30(std::vector<double>{0.9, 0.2, 0.8, 0.4}) - 0.3) < 1e-15);
  const std::vector<double> eleven{0.95, 0.91, 0.5, 0.6, 0.99, 0.7, 0.98, 0.8, 0.97, 0.96, 0.93};
  CHECK(std::abs(dsc30(eleven) - (0.5 + 0.6 + 0.7 + 0.8) / 4.0) < 1e-15);
  CHECK_THROWS(dsc30(std::vector<double>{}));
}

TEST_CASE("DSC30 never exceeds the mean") {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int n = 1; n <= 40; ++n) {
    std::vector<double> s(n);
    for (double& x : s) x = u(rng);
    CHECK(dsc30(s) <= std::accumulate(s.begin(), s.end(), 0.0) / n + 1e-15);
  }
}

TEST_CASE("percentile interpolates between order statistics") {
  const std::vector<double> v{4.0, 1.0, 3.0, 2.0, 5.0};
  CHECK(percentile(v, 0) == 1.0);
  CHECK(percentile(v, 100) == 5.0);
  CHECK(percentile(v, 50) == 3.0);
  CHECK(std::abs(percentile(v, 95) - 4.8) < 1e-12);
  CHECK(percentile({7.0}, 95) == 7.0);
  CHECK_THROWS(percentile({}, 50));
  CHECK_THROWS(percentile(v, 101));
}

TEST_CASE("boundary voxels of a solid box") {
  const Dims d = Dims::cube(6);
  // 4^3 box: all but the 2^3 core touch the outside.
  CHECK(boundary_voxels(box(d, 1, 5, 1, 5, 1, 5), 1).size() == 64 - 8);
  // Grid faces count as outside.
  CHECK(boundary_voxels(box(d, 0, 6, 0, 6, 0, 6), 1).size() == 216 - 64);
}

TEST_CASE("HD95 anchors") {
  const Dims d = Dims::cube(8);
  const LabelVolume a = box(d, 2, 5, 2, 5, 2, 5);
  REQUIRE(hd95(a, a, 1).has_value());
  CHECK(*hd95(a, a, 1) == 0.0);
  const auto shifted = hd95(a, box(d, 3, 6, 2, 5, 2, 5), 1);
  REQUIRE(shifted.has_value());
  CHECK(std::abs(*shifted - 1.0) < 1e-12);
  CHECK_FALSE(hd95(a, box(d, 0, 0, 0, 0, 0, 0), 1).has_value());
}

TEST_CASE("HD95 matches the all-pairs oracle on 50 random mask pairs") {
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<std::size_t> side(3, 12);
  double worst = 0.0;
  for (int n = 0; n < 50; ++n) {
    const Dims d{side(rng), side(rng), side(rng)};
    const LabelVolume a = random_blob(d, rng), b = random_blob(d, rng);
    const auto h = hd95(a, b, 1);
    REQUIRE(h.has_value());
    worst = std::max(worst, std::abs(*h - oracle::hd95(a, b, 1)));
    CHECK(*h >= 0.0);
    CHECK(*h <= oracle::boundary_distances(a, b, 1).back() + 1e-12);
  }
  CHECK(worst < 1e-9);
}

TEST_CASE("global NCC anchors") {
  const PhantomImage p = make_phantom(Dims::cube(16), 4);
  Volume3D flipped = p.image, scaled = p.image;
  for (double& x : flipped.values()) x = -x;
  for (double& x : scaled.values()) x = 3.0 * x + 2.0;
  CHECK(std::abs(global_ncc(p.image, p.image) - 1.0) < 1e-12);
  CHECK(std::abs(global_ncc(p.image, scaled) - 1.0) < 1e-12);
  CHECK(std::abs(global_ncc(p.image, flipped) + 1.0) < 1e-12);
  CHECK_THROWS(global_ncc(p.image, Volume3D::filled(Dims::cube(16), 1.0)));
  CHECK_THROWS(global_ncc(p.image, make_phantom(Dims::cube(17), 4).image));
}

TEST_CASE("evaluating identical labels under the identity") {
  const LabelVolume l = make_phantom(Dims::cube(24), 5).labels;
  const CaseResult r = evaluate_case(l, l, AffineMatrix(), "self");
  CHECK(r.id == "self");
  REQUIRE(r.dice.size() == l.num_structures());
  REQUIRE(r.hd95.size() == l.num_structures());
  for (double x : r.dice) CHECK(x == 1.0);
  for (const auto& h : r.hd95) {
    REQUIRE(h.has_value());
    CHECK(*h == 0.0);
  }
  CHECK(r.mean_dice() == 1.0);
  CHECK(r.mean_hd95() == 0.0);
}

TEST_CASE("evaluating a known integer translation against pre-shifted labels") {
  const Dims d = Dims::cube(24);
  const LabelVolume fixed = make_phantom(d, 6).labels;
  // moving(i + 3, j, k - 2) = fixed(i, j, k); the phantom stays clear of the border.
  std::vector<Label> m(d.count(), 0);
  for (std::size_t i = 0; i + 3 < d.h; ++i)
    for (std::size_t j = 0; j < d.w; ++j)
      for (std::size_t k = 2; k < d.d; ++k) m[((i + 3) * d.w + j) * d.d + (k - 2)] = fixed.at(i, j, k);
  const LabelVolume moving(d, m, fixed.num_structures());
  const CaseResult r = evaluate_case(fixed, moving, translate_voxels(d, 3, 0, -2));
  for (double x : r.dice) CHECK(x == 1.0);
  CHECK(evaluate_case(fixed, moving, AffineMatrix()).mean_dice() < 1.0);
}

TEST_CASE("a missing structure is excluded from the HD95 mean") {
  const Dims d = Dims::cube(8);
  std::vector<Label> f(d.count(), 0), w(d.count(), 0);
  for (std::size_t i = 0; i < 10; ++i) f[i] = w[i] = 1;
  for (std::size_t i = 100; i < 110; ++i) f[i] = 2;
  const CaseResult r = score_labels(LabelVolume(d, f, 2), LabelVolume(d, w, 2));
  CHECK(r.dice == std::vector<double>{1.0, 0.0});
  CHECK(r.hd95[0] == 0.0);
  CHECK_FALSE(r.hd95[1].has_value());
  CHECK(r.mean_hd95() == 0.0);
  CHECK(r.mean_dice() == 0.5);
}
