#pragma once

// Volumetric grids, pyramids, centre of mass and affine warping.
//
// Voxel index i on an axis of n samples sits at normalized coordinate
// 2i/(n-1) - 1. A warp samples the source at A * x for every output
// coordinate x; trilinear neighbours outside the grid read as zero, nearest
// neighbour lookups outside the grid return background.

#include <array>
#include <cstdint>
#include <vector>

#include "c2freg/affine.hpp"
#include "c2freg/ndarray.hpp"

namespace c2freg {

struct Dims {
  std::size_t h = 0, w = 0, d = 0;

  std::size_t count() const { return h * w * d; }
  Shape shape() const { return {h, w, d}; }
  std::size_t operator[](std::size_t axis) const { return axis == 0 ? h : axis == 1 ? w : d; }
  static Dims cube(std::size_t n) { return {n, n, n}; }
  friend bool operator==(const Dims&, const Dims&) = default;
};

std::string dims_str(const Dims& d);

using Spacing = std::array<double, 3>;

double normalized_coord(std::size_t index, std::size_t n);
double voxel_coord(double normalized, std::size_t n);

class Volume3D {
 public:
  Volume3D() = default;
  Volume3D(Dims dims, std::vector<double> values, Spacing spacing = {1.0, 1.0, 1.0});
  static Volume3D filled(Dims dims, double value, Spacing spacing = {1.0, 1.0, 1.0});

  const Dims& dims() const { return dims_; }
  const Spacing& spacing() const { return spacing_; }
  const std::vector<double>& values() const { return values_; }
  std::vector<double>& values() { return values_; }
  std::size_t index(std::size_t i, std::size_t j, std::size_t k) const {
    return (i * dims_.w + j) * dims_.d + k;
  }
  double at(std::size_t i, std::size_t j, std::size_t k) const { return values_[index(i, j, k)]; }
  double& at(std::size_t i, std::size_t j, std::size_t k) { return values_[index(i, j, k)]; }

  NdArray to_ndarray() const { return NdArray(dims_.shape(), values_); }

  friend bool operator==(const Volume3D&, const Volume3D&) = default;

 private:
  Dims dims_;
  Spacing spacing_{1.0, 1.0, 1.0};
  std::vector<double> values_;
};

using Label = std::uint16_t;

class LabelVolume {
 public:
  LabelVolume() = default;
  LabelVolume(Dims dims, std::vector<Label> labels, std::size_t num_structures,
              Spacing spacing = {1.0, 1.0, 1.0});

  const Dims& dims() const { return dims_; }
  const Spacing& spacing() const { return spacing_; }
  std::size_t num_structures() const { return k_; }
  const std::vector<Label>& labels() const { return labels_; }
  Label at(std::size_t i, std::size_t j, std::size_t k) const {
    return labels_[(i * dims_.w + j) * dims_.d + k];
  }

  friend bool operator==(const LabelVolume&, const LabelVolume&) = default;

 private:
  Dims dims_;
  Spacing spacing_{1.0, 1.0, 1.0};
  std::vector<Label> labels_;
  std::size_t k_ = 0;
};

/// levels[0] is the coarsest, levels.back() the source itself.
struct ImagePyramid {
  std::vector<Volume3D> levels;
  std::size_t size() const { return levels.size(); }
  const Volume3D& finest() const { return levels.back(); }
};

Dims scaled_dims(const Dims& dims, double factor);

Volume3D downsample_trilinear(const Volume3D& v, double factor);
ImagePyramid build_pyramid(const Volume3D& v, std::size_t levels);
/// Level dims for a pyramid without building it.
std::vector<Dims> pyramid_dims(const Dims& finest, std::size_t levels);

/// Intensity-weighted mean position in normalized coordinates.
Vec3 center_of_mass(const Volume3D& v);

Volume3D warp_affine(const Volume3D& v, const AffineMatrix& a, const Dims& out_dims);
LabelVolume warp_labels(const LabelVolume& lv, const AffineMatrix& a, const Dims& out_dims);

/// Homogeneous normalized coordinates of every voxel of `dims`, shape [P,4].
NdArray grid_coords(const Dims& dims);

// Tape versions. Volumes are [H,W,D] Vars; a is [4,4].
ad::Var warp_affine(const ad::Var& vol, const ad::Var& a, const Dims& out_dims);
ad::Var resample(const ad::Var& vol, const Dims& out_dims);
std::vector<ad::Var> build_pyramid(const ad::Var& vol, std::size_t levels);

}  // namespace c2freg
