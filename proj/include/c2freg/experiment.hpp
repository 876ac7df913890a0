#pragma once

// Synthetic training and held-out evaluation protocol shared by the CLI and
// the acceptance runner, plus model inference with optional centre-of-mass
// initialization.

#include <cstdint>
#include <functional>
#include <vector>

#include "c2freg/metrics.hpp"
#include "c2freg/optim.hpp"
#include "c2freg/phantom.hpp"

namespace c2freg {

struct SyntheticProtocol {
  ModelConfig model = ModelConfig::desk();
  double lr = 1e-4;
  std::size_t steps = 2000;
  std::size_t train_pairs = 200;  // visited cyclically, one pair per step
  std::size_t held_out = 20;
  double magnitude = 0.3;
  bool semi = false;
  LossConfig loss{};
  std::uint64_t init_seed = 1;
  // Pair i of a set uses phantom seed phantom_base + i and affine seed affine_base + i.
  std::uint64_t train_phantom_base = 10000, train_affine_base = 20000;
  std::uint64_t test_phantom_base = 30000, test_affine_base = 40000;

  void validate() const;
  SyntheticPair train_pair(std::size_t i) const;
  SyntheticPair test_pair(std::size_t j) const;
};

using StepCallback = std::function<void(const StepResult&)>;

/// Fresh weights trained for protocol.steps steps.
TrainingState train_synthetic(const SyntheticProtocol& p, const StepCallback& on_step = {});

/// Continues training `state` up to protocol.steps total optimizer steps.
void continue_training(TrainingState& state, const SyntheticProtocol& p, const StepCallback& on_step = {});

struct HeldOutResult {
  std::vector<CaseResult> before, after;  // identity vs predicted matrix
  std::vector<double> improvement;        // per-case mean DSC gain
  double median_before = 0.0, median_after = 0.0, median_improvement = 0.0;
};

HeldOutResult evaluate_held_out(const ModelState& state, const SyntheticProtocol& p);

/// Median with the midpoint of the two central values for even sizes.
double median(std::vector<double> v);

/// Network prediction mapping fixed to moving coordinates. With com_init the
/// moving image is first resampled by com_initialization and the result
/// composed with it.
AffineMatrix register_with_model(const Volume3D& fixed, const Volume3D& moving, const ModelState& state,
                                 const ModelConfig& cfg, bool com_init);

}  // namespace c2freg
