#include "c2freg/affine.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

#include "c2freg/ops.hpp"
#include "c2freg/volume.hpp"

namespace c2freg {

namespace {

constexpr std::array<double, 16> kIdentity = {1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1};

}  // namespace

AffineMatrix::AffineMatrix() : m_(kIdentity) {}

AffineMatrix::AffineMatrix(const std::array<double, 16>& row_major) : m_(row_major) {
  for (double v : m_)
    if (!std::isfinite(v)) throw std::invalid_argument("AffineMatrix: non-finite entry");
  if (m_[12] != 0.0 || m_[13] != 0.0 || m_[14] != 0.0 || m_[15] != 1.0)
    throw std::invalid_argument("AffineMatrix: last row must be (0,0,0,1)");
}

AffineMatrix AffineMatrix::translation(const Vec3& t) {
  auto m = kIdentity;
  m[3] = t[0];
  m[7] = t[1];
  m[11] = t[2];
  return AffineMatrix(m);
}

AffineMatrix AffineMatrix::from_ndarray(const NdArray& a) {
  if (a.shape() != Shape{4, 4}) throw_shape_error("AffineMatrix::from_ndarray", a.shape(), {4, 4});
  std::array<double, 16> m;
  for (std::size_t i = 0; i < 16; ++i) m[i] = a[i];
  return AffineMatrix(m);
}

AffineMatrix AffineMatrix::operator*(const AffineMatrix& rhs) const {
  std::array<double, 16> out{};
  for (std::size_t r = 0; r < 4; ++r)
    for (std::size_t c = 0; c < 4; ++c) {
      double acc = 0.0;
      for (std::size_t k = 0; k < 4; ++k) acc += m_[r * 4 + k] * rhs.m_[k * 4 + c];
      out[r * 4 + c] = acc;
    }
  return AffineMatrix(out);
}

Vec3 AffineMatrix::apply(const Vec3& p) const {
  Vec3 q;
  for (std::size_t r = 0; r < 3; ++r)
    q[r] = m_[r * 4] * p[0] + m_[r * 4 + 1] * p[1] + m_[r * 4 + 2] * p[2] + m_[r * 4 + 3];
  return q;
}

double AffineMatrix::linear_det() const {
  const auto& a = m_;
  return a[0] * (a[5] * a[10] - a[6] * a[9]) - a[1] * (a[4] * a[10] - a[6] * a[8]) +
         a[2] * (a[4] * a[9] - a[5] * a[8]);
}

AffineMatrix AffineMatrix::inverse() const {
  const double det = linear_det();
  if (std::abs(det) < 1e-300) throw std::domain_error("AffineMatrix::inverse: singular");
  const auto& a = m_;
  double inv[9];
  inv[0] = (a[5] * a[10] - a[6] * a[9]) / det;
  inv[1] = (a[2] * a[9] - a[1] * a[10]) / det;
  inv[2] = (a[1] * a[6] - a[2] * a[5]) / det;
  inv[3] = (a[6] * a[8] - a[4] * a[10]) / det;
  inv[4] = (a[0] * a[10] - a[2] * a[8]) / det;
  inv[5] = (a[2] * a[4] - a[0] * a[6]) / det;
  inv[6] = (a[4] * a[9] - a[5] * a[8]) / det;
  inv[7] = (a[1] * a[8] - a[0] * a[9]) / det;
  inv[8] = (a[0] * a[5] - a[1] * a[4]) / det;
  std::array<double, 16> out = kIdentity;
  for (std::size_t r = 0; r < 3; ++r) {
    for (std::size_t c = 0; c < 3; ++c) out[r * 4 + c] = inv[r * 3 + c];
    out[r * 4 + 3] = -(inv[r * 3] * a[3] + inv[r * 3 + 1] * a[7] + inv[r * 3 + 2] * a[11]);
  }
  return AffineMatrix(out);
}

NdArray AffineMatrix::to_ndarray() const {
  return NdArray({4, 4}, std::vector<double>(m_.begin(), m_.end()));
}

double max_abs_diff(const AffineMatrix& a, const AffineMatrix& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < 16; ++i) m = std::max(m, std::abs(a.values()[i] - b.values()[i]));
  return m;
}

std::array<double, 12> GeometricParams::flat() const {
  return {t[0], t[1], t[2], r[0], r[1], r[2], s[0], s[1], s[2], h[0], h[1], h[2]};
}

GeometricParams GeometricParams::from_flat(std::span<const double> v) {
  if (v.size() != 12) throw std::invalid_argument("GeometricParams: need 12 values");
  GeometricParams p;
  for (std::size_t i = 0; i < 3; ++i) {
    p.t[i] = v[i];
    p.r[i] = v[3 + i];
    p.s[i] = v[6 + i];
    p.h[i] = v[9 + i];
  }
  return p;
}

bool GeometricParams::in_bounds() const {
  constexpr double pi = std::numbers::pi;
  for (std::size_t i = 0; i < 3; ++i) {
    if (!(std::abs(t[i]) <= kMaxTranslation)) return false;
    if (!(std::abs(r[i]) <= pi)) return false;
    if (!(s[i] >= 1.0 - kScaleSpread && s[i] <= 1.0 + kScaleSpread)) return false;
    if (!(std::abs(h[i]) <= pi)) return false;
  }
  return true;
}

ElementaryKind parse_elementary_kind(std::string_view name) {
  if (name == "T") return ElementaryKind::T;
  if (name == "Rx") return ElementaryKind::Rx;
  if (name == "Ry") return ElementaryKind::Ry;
  if (name == "Rz") return ElementaryKind::Rz;
  if (name == "S") return ElementaryKind::S;
  if (name == "H") return ElementaryKind::H;
  throw std::invalid_argument("unknown elementary matrix kind '" + std::string(name) + "'");
}

AffineMatrix elementary_matrix(ElementaryKind kind, std::span<const double> p) {
  const bool rotation =
      kind == ElementaryKind::Rx || kind == ElementaryKind::Ry || kind == ElementaryKind::Rz;
  if (p.size() != (rotation ? 1u : 3u))
    throw std::invalid_argument("elementary_matrix: wrong parameter count");
  for (double v : p)
    if (!std::isfinite(v)) throw std::invalid_argument("elementary_matrix: non-finite parameter");
  auto m = kIdentity;
  switch (kind) {
    case ElementaryKind::T:
      m[3] = p[0];
      m[7] = p[1];
      m[11] = p[2];
      break;
    case ElementaryKind::Rx: {
      const double c = std::cos(p[0]), s = std::sin(p[0]);
      m[5] = c;
      m[6] = s;
      m[9] = -s;
      m[10] = c;
      break;
    }
    case ElementaryKind::Ry: {
      const double c = std::cos(p[0]), s = std::sin(p[0]);
      m[0] = c;
      m[2] = -s;
      m[8] = s;
      m[10] = c;
      break;
    }
    case ElementaryKind::Rz: {
      const double c = std::cos(p[0]), s = std::sin(p[0]);
      m[0] = c;
      m[1] = -s;
      m[4] = s;
      m[5] = c;
      break;
    }
    case ElementaryKind::S:
      m[0] = p[0];
      m[5] = p[1];
      m[10] = p[2];
      break;
    case ElementaryKind::H:
      // (hx, hy, hz) -> (h_xy, h_xz, h_yz)
      m[1] = p[0];
      m[2] = p[1];
      m[6] = p[2];
      break;
  }
  return AffineMatrix(m);
}

AffineMatrix rotation_matrix(const Vec3& r) {
  return elementary_matrix(ElementaryKind::Rx, std::span(&r[0], 1)) *
         elementary_matrix(ElementaryKind::Ry, std::span(&r[1], 1)) *
         elementary_matrix(ElementaryKind::Rz, std::span(&r[2], 1));
}

AffineMatrix compose(const GeometricParams& p) {
  if (!p.in_bounds()) throw std::domain_error("compose: parameters outside the constraint box");
  return elementary_matrix(ElementaryKind::T, p.t) * rotation_matrix(p.r) *
         elementary_matrix(ElementaryKind::S, p.s) * elementary_matrix(ElementaryKind::H, p.h);
}

GeometricParams constrain(std::span<const double> raw) {
  if (raw.size() != 12) throw std::invalid_argument("constrain: need 12 values");
  constexpr double pi = std::numbers::pi;
  GeometricParams p;
  for (std::size_t i = 0; i < 3; ++i) {
    p.t[i] = kMaxTranslation * std::tanh(raw[i]);
    p.r[i] = pi * std::tanh(raw[3 + i]);
    p.s[i] = 1.0 + kScaleSpread * std::tanh(raw[6 + i]);
    p.h[i] = pi * std::tanh(raw[9 + i]);
  }
  return p;
}

std::array<double, 12> unconstrain(const GeometricParams& p) {
  constexpr double pi = std::numbers::pi;
  std::array<double, 12> raw;
  for (std::size_t i = 0; i < 3; ++i) {
    raw[i] = std::atanh(p.t[i] / kMaxTranslation);
    raw[3 + i] = std::atanh(p.r[i] / pi);
    raw[6 + i] = std::atanh((p.s[i] - 1.0) / kScaleSpread);
    raw[9 + i] = std::atanh(p.h[i] / pi);
  }
  return raw;
}

AffineMatrix recenter(const AffineMatrix& a, const Vec3& c) {
  return AffineMatrix::translation(c) * a * AffineMatrix::translation({-c[0], -c[1], -c[2]});
}

AffineMatrix com_initialization(const Volume3D& fixed, const Volume3D& moving) {
  const Vec3 cf = center_of_mass(fixed);
  const Vec3 cm = center_of_mass(moving);
  return AffineMatrix::translation({cm[0] - cf[0], cm[1] - cf[1], cm[2] - cf[2]});
}

AffineMatrix direct_matrix(std::span<const double> raw) {
  if (raw.size() != 12) throw std::invalid_argument("direct_matrix: need 12 values");
  auto m = kIdentity;
  for (std::size_t i = 0; i < 12; ++i) m[i] += raw[i];
  return AffineMatrix(m);
}

FreezeMask rigid_mask() {
  FreezeMask m{};
  for (std::size_t i = 6; i < 12; ++i) m[i] = true;
  return m;
}

// ---- tape versions ----

ad::Var constrain(const ad::Var& raw) {
  if (raw.shape() != Shape{12}) throw_shape_error("constrain", raw.shape(), {12});
  constexpr double pi = std::numbers::pi;
  NdArray gain({12}), offset({12}, 0.0);
  for (std::size_t i = 0; i < 3; ++i) {
    gain[i] = kMaxTranslation;
    gain[3 + i] = pi;
    gain[6 + i] = kScaleSpread;
    gain[9 + i] = pi;
    offset[6 + i] = 1.0;
  }
  ad::Tape& tape = raw.tape();
  return ad::add(ad::mul(ad::tanh(raw), tape.constant(gain)), tape.constant(offset));
}

namespace {

ad::Var assemble(const std::vector<ad::Var>& entries) {
  return ad::reshape(ad::concat(entries, 0), {4, 4});
}

}  // namespace

ad::Var compose(const ad::Var& params) {
  if (params.shape() != Shape{12}) throw_shape_error("compose", params.shape(), {12});
  ad::Tape& tape = params.tape();
  const ad::Var zero = tape.constant(NdArray::scalar(0.0));
  const ad::Var one = tape.constant(NdArray::scalar(1.0));
  auto p = [&](std::size_t i) { return ad::slice(params, 0, i, i + 1); };

  const ad::Var t = assemble({one, zero, zero, p(0),   //
                                    zero, one, zero, p(1),   //
                                    zero, zero, one, p(2),   //
                                    zero, zero, zero, one});
  const ad::Var cx = ad::cos(p(3)), sx = ad::sin(p(3));
  const ad::Var cy = ad::cos(p(4)), sy = ad::sin(p(4));
  const ad::Var cz = ad::cos(p(5)), sz = ad::sin(p(5));
  const ad::Var rx = assemble({one, zero, zero, zero,          //
                                     zero, cx, sx, zero,             //
                                     zero, ad::neg(sx), cx, zero,    //
                                     zero, zero, zero, one});
  const ad::Var ry = assemble({cy, zero, ad::neg(sy), zero,    //
                                     zero, one, zero, zero,          //
                                     sy, zero, cy, zero,             //
                                     zero, zero, zero, one});
  const ad::Var rz = assemble({cz, ad::neg(sz), zero, zero,    //
                                     sz, cz, zero, zero,             //
                                     zero, zero, one, zero,          //
                                     zero, zero, zero, one});
  const ad::Var s = assemble({p(6), zero, zero, zero,   //
                                    zero, p(7), zero, zero,   //
                                    zero, zero, p(8), zero,   //
                                    zero, zero, zero, one});
  const ad::Var h = assemble({one, p(9), p(10), zero,   //
                                    zero, one, p(11), zero,   //
                                    zero, zero, one, zero,    //
                                    zero, zero, zero, one});
  const ad::Var r = ad::matmul(ad::matmul(rx, ry), rz);
  return ad::matmul(ad::matmul(ad::matmul(t, r), s), h);
}

ad::Var recenter(const ad::Var& a, const Vec3& c) {
  ad::Tape& tape = a.tape();
  const ad::Var fwd = tape.constant(AffineMatrix::translation(c).to_ndarray());
  const ad::Var back = tape.constant(AffineMatrix::translation({-c[0], -c[1], -c[2]}).to_ndarray());
  return ad::matmul(ad::matmul(fwd, a), back);
}

ad::Var direct_matrix(const ad::Var& raw) {
  if (raw.shape() != Shape{12}) throw_shape_error("direct_matrix", raw.shape(), {12});
  ad::Tape& tape = raw.tape();
  const ad::Var block = ad::concat({raw, tape.constant(NdArray({4}, 0.0))}, 0);
  return ad::add(ad::reshape(block, {4, 4}),
                 tape.constant(AffineMatrix::identity().to_ndarray()));
}

}  // namespace c2freg
