#pragma once

// Synthetic head phantoms and ground-truth misalignments.
//
// A phantom is an analytic function of normalized position: a smooth head
// ellipsoid containing a few labelled ellipsoidal structures, with a mild
// intensity gradient and low-frequency texture. Rendering evaluates the
// function at every grid point, optionally under a transform A * x.

#include <cstdint>
#include <vector>

#include "c2freg/affine.hpp"
#include "c2freg/volume.hpp"

namespace c2freg {

struct Ellipsoid {
  Vec3 center{0.0, 0.0, 0.0};
  Vec3 radii{1.0, 1.0, 1.0};
  double yaw = 0.0;  // rotation of the axes about the last axis
  double intensity = 1.0;

  /// Scaled radius: < 1 inside, 1 on the surface.
  double rho(const Vec3& p) const;
};

struct Phantom {
  Ellipsoid head;
  std::vector<Ellipsoid> structures;  // label i + 1; later entries win overlaps
  Vec3 gradient{0.0, 0.0, 0.0};       // relative intensity slope
  Vec3 texture_freq{0.0, 0.0, 0.0};
  double texture_amp = 0.0;
  double edge = 0.08;  // width of intensity transitions, normalized units

  std::size_t num_structures() const { return structures.size(); }
  double intensity(const Vec3& p) const;
  Label label(const Vec3& p) const;

  Volume3D render(const Dims& dims, const AffineMatrix& a = AffineMatrix()) const;
  LabelVolume render_labels(const Dims& dims, const AffineMatrix& a = AffineMatrix()) const;
};

/// Deterministic phantom with 3 to 5 structures.
Phantom make_phantom_model(std::uint64_t seed);

struct PhantomImage {
  Volume3D image;
  LabelVolume labels;
};
/// Rendered phantom; every dimension must be >= 16.
PhantomImage make_phantom(const Dims& dims, std::uint64_t seed);

/// Uniform draw from the parameter box shrunk towards identity by
/// magnitude in (0, 1].
GeometricParams sample_random_affine(std::uint64_t seed, double magnitude);

struct SyntheticPair {
  Volume3D fixed, moving;
  LabelVolume fixed_labels, moving_labels;
  GeometricParams params;
  /// Maps fixed coordinates to moving ones: compose(params) pivoting at the
  /// fixed image's centre of mass.
  AffineMatrix truth;
};

/// Renders the phantom as the fixed image; the moving image and labels are
/// the fixed ones warped by the inverse of the ground truth (trilinear and
/// nearest neighbour respectively).
SyntheticPair make_pair(const Phantom& phantom, const Dims& dims, const GeometricParams& params);
SyntheticPair make_pair(const Dims& dims, std::uint64_t phantom_seed, std::uint64_t affine_seed,
                        double magnitude);

}  // namespace c2freg
