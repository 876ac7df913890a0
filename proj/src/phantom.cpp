#include "c2freg/phantom.hpp"

#include <cmath>
#include <numbers>
#include <random>
#include <stdexcept>

namespace c2freg {

double Ellipsoid::rho(const Vec3& p) const {
  const double dx = p[0] - center[0], dy = p[1] - center[1], dz = p[2] - center[2];
  const double c = std::cos(yaw), s = std::sin(yaw);
  const double u = c * dx + s * dy, v = -s * dx + c * dy;
  return std::sqrt(u * u / (radii[0] * radii[0]) + v * v / (radii[1] * radii[1]) +
                   dz * dz / (radii[2] * radii[2]));
}

namespace {

// 1 well inside, 0 from the surface outwards; C1 ramp of width w (in rho).
double inside_weight(double rho, double w, double offset) {
  const double x = (rho - (1.0 - w) - offset) / w;
  if (x <= 0.0) return 1.0;
  if (x >= 1.0) return 0.0;
  return 1.0 - x * x * (3.0 - 2.0 * x);
}

}  // namespace

double Phantom::intensity(const Vec3& p) const {
  const double wh = edge / std::min({head.radii[0], head.radii[1], head.radii[2]});
  const double head_w = inside_weight(head.rho(p), wh, 0.0);
  if (head_w == 0.0) return 0.0;
  double v = head.intensity;
  for (const Ellipsoid& e : structures) {
    const double we = edge / std::min({e.radii[0], e.radii[1], e.radii[2]});
    // centred on the label surface
    const double w = inside_weight(e.rho(p), we, 0.5 * we);
    v += w * (e.intensity - v);
  }
  const double shade = 1.0 + gradient[0] * p[0] + gradient[1] * p[1] + gradient[2] * p[2];
  const double tex = 1.0 + texture_amp * std::sin(texture_freq[0] * p[0]) *
                               std::sin(texture_freq[1] * p[1] + 0.7) *
                               std::sin(texture_freq[2] * p[2] + 1.3);
  return head_w * v * shade * tex;
}

Label Phantom::label(const Vec3& p) const {
  if (head.rho(p) >= 1.0) return 0;
  Label out = 0;
  for (std::size_t i = 0; i < structures.size(); ++i)
    if (structures[i].rho(p) < 1.0) out = static_cast<Label>(i + 1);
  return out;
}

Volume3D Phantom::render(const Dims& dims, const AffineMatrix& a) const {
  std::vector<double> v(dims.count());
  std::size_t n = 0;
  for (std::size_t i = 0; i < dims.h; ++i)
    for (std::size_t j = 0; j < dims.w; ++j)
      for (std::size_t k = 0; k < dims.d; ++k)
        v[n++] = intensity(a.apply({normalized_coord(i, dims.h), normalized_coord(j, dims.w),
                                    normalized_coord(k, dims.d)}));
  return Volume3D(dims, std::move(v));
}

LabelVolume Phantom::render_labels(const Dims& dims, const AffineMatrix& a) const {
  std::vector<Label> v(dims.count());
  std::size_t n = 0;
  for (std::size_t i = 0; i < dims.h; ++i)
    for (std::size_t j = 0; j < dims.w; ++j)
      for (std::size_t k = 0; k < dims.d; ++k)
        v[n++] = label(a.apply({normalized_coord(i, dims.h), normalized_coord(j, dims.w),
                                normalized_coord(k, dims.d)}));
  return LabelVolume(dims, std::move(v), structures.size());
}

Phantom make_phantom_model(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto uni = [&rng](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
  Phantom p;
  p.head.center = {uni(-0.03, 0.03), uni(-0.03, 0.03), uni(-0.03, 0.03)};
  p.head.radii = {uni(0.82, 0.9), uni(0.82, 0.9), uni(0.66, 0.74)};
  p.head.yaw = uni(-0.2, 0.2);
  p.head.intensity = uni(0.3, 0.4);

  const std::size_t k = 3 + static_cast<std::size_t>(std::uniform_int_distribution<int>(0, 2)(rng));
  // Structures sit on a ring around the head centre, one slot each, so
  // they stay apart and inside the head.
  const double phase = uni(0.0, 2.0 * std::numbers::pi);
  for (std::size_t i = 0; i < k; ++i) {
    Ellipsoid e;
    const double ang = phase + 2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(k);
    const double ring = uni(0.36, 0.40);
    e.center = {p.head.center[0] + ring * std::cos(ang), p.head.center[1] + ring * std::sin(ang),
                p.head.center[2] + uni(-0.1, 0.1)};
    const double size = k == 3 ? 0.44 : k == 4 ? 0.38 : 0.33;
    e.radii = {size * uni(0.9, 1.15), size * uni(0.9, 1.15), size * uni(1.1, 1.4)};
    e.yaw = uni(0.0, std::numbers::pi);
    e.intensity = 0.55 + 0.45 * static_cast<double>(i + 1) / static_cast<double>(k) + uni(-0.03, 0.03);
    p.structures.push_back(e);
  }
  p.gradient = {uni(-0.15, 0.15), uni(-0.15, 0.15), uni(-0.15, 0.15)};
  p.texture_freq = {uni(3.0, 5.0), uni(3.0, 5.0), uni(3.0, 5.0)};
  p.texture_amp = uni(0.05, 0.1);
  return p;
}

PhantomImage make_phantom(const Dims& dims, std::uint64_t seed) {
  if (dims.h < 16 || dims.w < 16 || dims.d < 16)
    throw std::invalid_argument("make_phantom: dims must be at least 16^3, got " + dims_str(dims));
  const Phantom p = make_phantom_model(seed);
  return {p.render(dims), p.render_labels(dims)};
}

GeometricParams sample_random_affine(std::uint64_t seed, double magnitude) {
  if (!(magnitude > 0.0 && magnitude <= 1.0))
    throw std::invalid_argument("sample_random_affine: magnitude must be in (0, 1]");
  std::mt19937_64 rng(seed);
  auto sym = [&rng](double bound) {
    return std::uniform_real_distribution<double>(-bound, bound)(rng);
  };
  constexpr double pi = std::numbers::pi;
  GeometricParams g;
  for (double& v : g.t) v = sym(magnitude * kMaxTranslation);
  for (double& v : g.r) v = sym(magnitude * pi);
  for (double& v : g.s) v = 1.0 + sym(magnitude * kScaleSpread);
  for (double& v : g.h) v = sym(magnitude * pi);
  return g;
}

SyntheticPair make_pair(const Phantom& phantom, const Dims& dims, const GeometricParams& params) {
  if (dims.h < 16 || dims.w < 16 || dims.d < 16)
    throw std::invalid_argument("make_pair: dims must be at least 16^3, got " + dims_str(dims));
  SyntheticPair s;
  s.fixed = phantom.render(dims);
  s.fixed_labels = phantom.render_labels(dims);
  s.params = params;
  s.truth = recenter(compose(params), center_of_mass(s.fixed));
  const AffineMatrix inv = s.truth.inverse();
  s.moving = warp_affine(s.fixed, inv, dims);
  s.moving_labels = warp_labels(s.fixed_labels, inv, dims);
  return s;
}

SyntheticPair make_pair(const Dims& dims, std::uint64_t phantom_seed, std::uint64_t affine_seed,
                        double magnitude) {
  return make_pair(make_phantom_model(phantom_seed), dims,
                   sample_random_affine(affine_seed, magnitude));
}

}  // namespace c2freg
