#include "c2freg/volume.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "c2freg/ops.hpp"

namespace c2freg {

std::string dims_str(const Dims& d) {
  return std::to_string(d.h) + "x" + std::to_string(d.w) + "x" + std::to_string(d.d);
}

double normalized_coord(std::size_t index, std::size_t n) {
  return static_cast<double>(2 * static_cast<long>(index) - static_cast<long>(n) + 1) /
         static_cast<double>(n - 1);
}

double voxel_coord(double normalized, std::size_t n) {
  return (normalized + 1.0) * 0.5 * static_cast<double>(n - 1);
}

namespace {

void validate_dims(const Dims& dims, const char* who) {
  if (dims.h < 2 || dims.w < 2 || dims.d < 2)
    throw std::invalid_argument(std::string(who) + ": every dimension must be >= 2, got " +
                                dims_str(dims));
}

void validate_spacing(const Spacing& s, const char* who) {
  for (double v : s)
    if (!(v > 0.0) || !std::isfinite(v))
      throw std::invalid_argument(std::string(who) + ": spacing must be positive and finite");
}

}  // namespace

Volume3D::Volume3D(Dims dims, std::vector<double> values, Spacing spacing)
    : dims_(dims), spacing_(spacing), values_(std::move(values)) {
  validate_dims(dims_, "Volume3D");
  validate_spacing(spacing_, "Volume3D");
  if (values_.size() != dims_.count())
    throw std::invalid_argument("Volume3D: " + std::to_string(values_.size()) +
                                " values for dims " + dims_str(dims_));
  for (double v : values_)
    if (!std::isfinite(v)) throw std::invalid_argument("Volume3D: non-finite intensity");
}

Volume3D Volume3D::filled(Dims dims, double value, Spacing spacing) {
  return Volume3D(dims, std::vector<double>(dims.count(), value), spacing);
}

LabelVolume::LabelVolume(Dims dims, std::vector<Label> labels, std::size_t num_structures,
                         Spacing spacing)
    : dims_(dims), spacing_(spacing), labels_(std::move(labels)), k_(num_structures) {
  validate_dims(dims_, "LabelVolume");
  validate_spacing(spacing_, "LabelVolume");
  if (labels_.size() != dims_.count())
    throw std::invalid_argument("LabelVolume: " + std::to_string(labels_.size()) +
                                " labels for dims " + dims_str(dims_));
  for (Label l : labels_)
    if (l > k_)
      throw std::invalid_argument("LabelVolume: label " + std::to_string(l) + " exceeds K=" +
                                  std::to_string(k_));
}

Dims scaled_dims(const Dims& dims, double factor) {
  auto s = [factor](std::size_t n) {
    return static_cast<std::size_t>(std::lround(static_cast<double>(n) * factor));
  };
  return {s(dims.h), s(dims.w), s(dims.d)};
}

NdArray grid_coords(const Dims& dims) {
  NdArray g({dims.count(), 4});
  std::size_t p = 0;
  for (std::size_t i = 0; i < dims.h; ++i)
    for (std::size_t j = 0; j < dims.w; ++j)
      for (std::size_t k = 0; k < dims.d; ++k, ++p) {
        g[4 * p + 0] = normalized_coord(i, dims.h);
        g[4 * p + 1] = normalized_coord(j, dims.w);
        g[4 * p + 2] = normalized_coord(k, dims.d);
        g[4 * p + 3] = 1.0;
      }
  return g;
}

namespace {

NdArray identity_sample_coords(const Dims& dims) {
  NdArray g({dims.count(), 3});
  std::size_t p = 0;
  for (std::size_t i = 0; i < dims.h; ++i)
    for (std::size_t j = 0; j < dims.w; ++j)
      for (std::size_t k = 0; k < dims.d; ++k, ++p) {
        g[3 * p + 0] = normalized_coord(i, dims.h);
        g[3 * p + 1] = normalized_coord(j, dims.w);
        g[3 * p + 2] = normalized_coord(k, dims.d);
      }
  return g;
}

}  // namespace

ad::Var warp_affine(const ad::Var& vol, const ad::Var& a, const Dims& out_dims) {
  if (a.shape() != Shape{4, 4}) throw_shape_error("warp_affine", a.shape(), {4, 4});
  if (!a.value().all_finite()) throw std::invalid_argument("warp_affine: non-finite matrix");
  validate_dims(out_dims, "warp_affine");
  ad::Tape& tape = vol.tape();
  // coords[P,3] = grid[P,4] * (rows 0..2 of A)^T
  const ad::Var rows = ad::slice(ad::transpose(a), 1, 0, 3);
  const ad::Var coords = ad::matmul(tape.constant(grid_coords(out_dims)), rows);
  return ad::reshape(ad::grid_sample(vol, coords), out_dims.shape());
}

ad::Var resample(const ad::Var& vol, const Dims& out_dims) {
  validate_dims(out_dims, "resample");
  ad::Tape& tape = vol.tape();
  return ad::reshape(ad::grid_sample(vol, tape.constant(identity_sample_coords(out_dims))),
                     out_dims.shape());
}

std::vector<Dims> pyramid_dims(const Dims& finest, std::size_t levels) {
  if (levels < 1) throw std::invalid_argument("pyramid: level count must be >= 1");
  std::vector<Dims> out;
  for (std::size_t i = 1; i <= levels; ++i) {
    const Dims d = scaled_dims(finest, std::pow(0.5, static_cast<double>(levels - i)));
    if (d.h < 2 || d.w < 2 || d.d < 2)
      throw std::invalid_argument("pyramid: " + dims_str(finest) + " too small for " +
                                  std::to_string(levels) + " levels");
    out.push_back(d);
  }
  return out;
}

std::vector<ad::Var> build_pyramid(const ad::Var& vol, std::size_t levels) {
  const Shape& s = vol.shape();
  const auto dims = pyramid_dims({s[0], s[1], s[2]}, levels);
  std::vector<ad::Var> out;
  for (std::size_t i = 0; i + 1 < levels; ++i) out.push_back(resample(vol, dims[i]));
  out.push_back(vol);
  return out;
}

Volume3D downsample_trilinear(const Volume3D& v, double factor) {
  if (!(factor > 0.0 && factor <= 1.0))
    throw std::invalid_argument("downsample_trilinear: factor must be in (0,1]");
  const Dims out = scaled_dims(v.dims(), factor);
  validate_dims(out, "downsample_trilinear");
  ad::Tape tape(false);
  const ad::Var r = resample(tape.constant(v.to_ndarray()), out);
  const Spacing sp = {v.spacing()[0] / factor, v.spacing()[1] / factor, v.spacing()[2] / factor};
  return Volume3D(out, r.value().vec(), sp);
}

ImagePyramid build_pyramid(const Volume3D& v, std::size_t levels) {
  pyramid_dims(v.dims(), levels);
  ImagePyramid p;
  for (std::size_t i = 1; i < levels; ++i)
    p.levels.push_back(downsample_trilinear(v, std::pow(0.5, static_cast<double>(levels - i))));
  p.levels.push_back(v);
  return p;
}

Vec3 center_of_mass(const Volume3D& v) {
  const Dims& d = v.dims();
  double total = 0.0;
  Vec3 acc{0.0, 0.0, 0.0};
  for (std::size_t i = 0; i < d.h; ++i)
    for (std::size_t j = 0; j < d.w; ++j)
      for (std::size_t k = 0; k < d.d; ++k) {
        const double m = v.at(i, j, k);
        if (m < 0.0) throw std::invalid_argument("center_of_mass: negative intensity");
        total += m;
        acc[0] += m * normalized_coord(i, d.h);
        acc[1] += m * normalized_coord(j, d.w);
        acc[2] += m * normalized_coord(k, d.d);
      }
  if (!(total > 0.0)) throw std::invalid_argument("center_of_mass: all-zero volume");
  return {acc[0] / total, acc[1] / total, acc[2] / total};
}

Volume3D warp_affine(const Volume3D& v, const AffineMatrix& a, const Dims& out_dims) {
  ad::Tape tape(false);
  const ad::Var r =
      warp_affine(tape.constant(v.to_ndarray()), tape.constant(a.to_ndarray()), out_dims);
  return Volume3D(out_dims, r.value().vec(), v.spacing());
}

LabelVolume warp_labels(const LabelVolume& lv, const AffineMatrix& a, const Dims& out_dims) {
  validate_dims(out_dims, "warp_labels");
  const Dims& src = lv.dims();
  std::vector<Label> out(out_dims.count(), 0);
  std::size_t p = 0;
  auto nearest = [](double normalized, std::size_t n) -> long {
    return static_cast<long>(std::floor(voxel_coord(normalized, n) + 0.5));
  };
  for (std::size_t i = 0; i < out_dims.h; ++i)
    for (std::size_t j = 0; j < out_dims.w; ++j)
      for (std::size_t k = 0; k < out_dims.d; ++k, ++p) {
        const Vec3 q = a.apply({normalized_coord(i, out_dims.h), normalized_coord(j, out_dims.w),
                                normalized_coord(k, out_dims.d)});
        const long si = nearest(q[0], src.h), sj = nearest(q[1], src.w), sk = nearest(q[2], src.d);
        if (si < 0 || sj < 0 || sk < 0 || si >= static_cast<long>(src.h) ||
            sj >= static_cast<long>(src.w) || sk >= static_cast<long>(src.d))
          continue;
        out[p] = lv.at(static_cast<std::size_t>(si), static_cast<std::size_t>(sj),
                       static_cast<std::size_t>(sk));
      }
  return LabelVolume(out_dims, std::move(out), lv.num_structures(), lv.spacing());
}

}  // namespace c2freg
