#pragma once

// Overlap and surface-distance measures for label maps.

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "c2freg/affine.hpp"
#include "c2freg/volume.hpp"

namespace c2freg {

/// 2|A & B| / (|A| + |B|) for one label; 1 when both are empty, 0 when
/// exactly one is.
double dice_score(const LabelVolume& a, const LabelVolume& b, Label label);

/// Mean of the ceil(0.3 n) smallest scores.
double dsc30(std::span<const double> scores);

/// Voxels of the label with at least one 6-neighbour outside the label
/// (grid exterior counts as outside).
std::vector<std::array<long, 3>> boundary_voxels(const LabelVolume& lv, Label label);

/// 95th percentile (linear interpolation) of the pooled directed boundary
/// distances in voxel units. nullopt when either structure is empty.
std::optional<double> hd95(const LabelVolume& a, const LabelVolume& b, Label label);

/// Percentile p in [0,100] of values, linear interpolation between order
/// statistics at rank (n-1) p / 100.
double percentile(std::vector<double> values, double p);

/// Pearson correlation of all voxel intensities. Throws when either volume
/// is constant or the dims differ.
double global_ncc(const Volume3D& a, const Volume3D& b);

struct CaseResult {
  std::string id;
  std::vector<double> dice;                 // labels 1..K
  std::vector<std::optional<double>> hd95;  // labels 1..K
  double mean_dice() const;
  /// Mean over labels where HD95 is defined; nullopt if none is.
  std::optional<double> mean_hd95() const;
};

/// Warps the moving labels with `a` (nearest neighbour) onto the fixed grid
/// and scores every structure 1..K of the fixed labels.
CaseResult evaluate_case(const LabelVolume& fixed, const LabelVolume& moving, const AffineMatrix& a,
                         std::string id = "");

/// Scores two label maps already on the same grid.
CaseResult score_labels(const LabelVolume& fixed, const LabelVolume& warped, std::string id = "");

}  // namespace c2freg
