#pragma once

// Decoupled affine transformation model.
//
// Parameters t, r, s, h (translation, rotation, scale, shear) build the
// elementary matrices T, Rx, Ry, Rz, S, H, composed as A = T * R * S * H with
// R = Rx * Ry * Rz. Matrices act on normalized coordinates in [-1, 1]^3 and
// map fixed-domain points to moving-domain points.

#include <array>
#include <span>
#include <string_view>

#include "c2freg/autodiff.hpp"

namespace c2freg {

using Vec3 = std::array<double, 3>;

class Volume3D;

/// 4x4 homogeneous transform, row-major, last row (0,0,0,1), finite.
class AffineMatrix {
 public:
  AffineMatrix();  // identity
  explicit AffineMatrix(const std::array<double, 16>& row_major);

  static AffineMatrix identity() { return AffineMatrix(); }
  static AffineMatrix translation(const Vec3& t);
  static AffineMatrix from_ndarray(const NdArray& a);

  double operator()(std::size_t r, std::size_t c) const { return m_[r * 4 + c]; }
  const std::array<double, 16>& values() const { return m_; }

  AffineMatrix operator*(const AffineMatrix& rhs) const;
  Vec3 apply(const Vec3& p) const;
  AffineMatrix inverse() const;
  /// Determinant of the linear 3x3 block.
  double linear_det() const;
  NdArray to_ndarray() const;

  friend bool operator==(const AffineMatrix& a, const AffineMatrix& b) { return a.m_ == b.m_; }

 private:
  std::array<double, 16> m_;
};

double max_abs_diff(const AffineMatrix& a, const AffineMatrix& b);

struct GeometricParams {
  Vec3 t{0.0, 0.0, 0.0};
  Vec3 r{0.0, 0.0, 0.0};
  Vec3 s{1.0, 1.0, 1.0};
  Vec3 h{0.0, 0.0, 0.0};

  static GeometricParams identity() { return {}; }
  /// Order: t, r, s, h.
  std::array<double, 12> flat() const;
  static GeometricParams from_flat(std::span<const double> v);
  bool in_bounds() const;
};

inline constexpr double kMaxTranslation = 1.0;
inline constexpr double kScaleSpread = 0.5;

enum class ElementaryKind { T, Rx, Ry, Rz, S, H };

/// "T", "Rx", "Ry", "Rz", "S", "H"; anything else throws.
ElementaryKind parse_elementary_kind(std::string_view name);

/// T, S, H take three values; Rx, Ry, Rz take one angle.
AffineMatrix elementary_matrix(ElementaryKind kind, std::span<const double> params);
AffineMatrix rotation_matrix(const Vec3& r);

AffineMatrix compose(const GeometricParams& p);

/// Maps 12 unbounded reals (t, r, s, h order) into the parameter box.
GeometricParams constrain(std::span<const double> raw);
/// Inverse of constrain for parameters strictly inside the box.
std::array<double, 12> unconstrain(const GeometricParams& p);

/// T(c) * A * T(-c): linear part pivots about c.
AffineMatrix recenter(const AffineMatrix& a, const Vec3& c);

/// Pure translation that brings the moving image's centre of mass onto the
/// fixed image's under the sampling convention: T(c_M - c_F).
AffineMatrix com_initialization(const Volume3D& fixed, const Volume3D& moving);

/// Identity plus raw on the flattened top 3x4 block.
AffineMatrix direct_matrix(std::span<const double> raw);

/// Which parameters a rigid-only / similarity-only setting may move.
using FreezeMask = std::array<bool, 12>;
FreezeMask rigid_mask();

// Tape versions. raw and params are [12]; matrices are [4,4].
ad::Var constrain(const ad::Var& raw);
ad::Var compose(const ad::Var& params);
ad::Var recenter(const ad::Var& a, const Vec3& c);
ad::Var direct_matrix(const ad::Var& raw);

}  // namespace c2freg
