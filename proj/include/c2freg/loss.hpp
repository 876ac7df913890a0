#pragma once

// Registration objectives: windowed local NCC, the multi-resolution
// similarity pyramid, soft Dice over label channels, and their weighted sum.

#include <vector>

#include "c2freg/autodiff.hpp"
#include "c2freg/volume.hpp"

namespace c2freg {

struct LossConfig {
  std::size_t levels = 3;
  std::size_t window = 7;  // edge length, odd
  double lambda = 0.5;
  double eps = 1e-5;

  void validate() const;
};

/// Mean over voxels of the windowed correlation
///   sum(a_hat * b_hat) / sqrt(sum(a_hat^2) * sum(b_hat^2) + eps)
/// where a_hat, b_hat are deviations from the window mean. Windows are
/// centred on each voxel and clipped to the grid.
ad::Var local_ncc(const ad::Var& a, const ad::Var& b, std::size_t window, double eps);
double local_ncc(const Volume3D& a, const Volume3D& b, std::size_t window, double eps = 1e-5);
/// Per-voxel windowed correlation (the map local_ncc averages).
NdArray local_ncc_map(const Volume3D& a, const Volume3D& b, std::size_t window, double eps = 1e-5);

/// sum_i -(1 / 2^(L-i)) * local_ncc(F_i, M_i), levels ordered coarse to fine.
ad::Var similarity_pyramid_loss(const std::vector<ad::Var>& fixed, const std::vector<ad::Var>& moving,
                                std::size_t window, double eps);
double similarity_pyramid_loss(const ImagePyramid& fixed, const ImagePyramid& moving,
                               std::size_t window, double eps = 1e-5);

/// (1/K) sum_k (1 - 2|F_k . M_k| / (|F_k| + |M_k| + eps)) over K soft mask pairs.
ad::Var soft_dice_loss(const std::vector<ad::Var>& fixed, const std::vector<ad::Var>& moving,
                       double eps);
double dice_loss(const LabelVolume& fixed, const LabelVolume& moving, std::size_t k,
                 double eps = 1e-5);

/// Indicator mask of each label 1..k, each shaped like the volume.
std::vector<NdArray> one_hot(const LabelVolume& lv, std::size_t k);

ad::Var semi_supervised_loss(const ad::Var& sim, const ad::Var& seg, double lambda);
double semi_supervised_loss(double sim, double seg, double lambda);

}  // namespace c2freg
