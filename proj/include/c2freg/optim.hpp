#pragma once

// Adam, the network training step, and the classical iterative
// coarse-to-fine affine optimizer.

#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "c2freg/affine.hpp"
#include "c2freg/loss.hpp"
#include "c2freg/model.hpp"

namespace c2freg {

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  friend bool operator==(const AdamConfig&, const AdamConfig&) = default;
};

struct AdamState {
  AdamConfig cfg;
  std::size_t step = 0;
  std::map<std::string, NdArray> m, v;  // created on first use

  friend bool operator==(const AdamState&, const AdamState&) = default;
};

class NonFiniteGradient : public std::runtime_error {
 public:
  explicit NonFiniteGradient(const std::string& param)
      : std::runtime_error("adam_step: non-finite gradient for '" + param + "'"), param_(param) {}
  const std::string& param() const { return param_; }

 private:
  std::string param_;
};

/// One bias-corrected Adam update of every parameter that has a gradient.
/// Grads must be finite and shaped like their parameters; otherwise nothing
/// is modified.
void adam_step(AdamState& state, std::map<std::string, NdArray>& params,
               const std::map<std::string, NdArray>& grads);

struct TrainingState {
  ModelConfig config;
  ModelState model;
  AdamState adam;
};

struct SegmentationPair {
  LabelVolume fixed, moving;
};

struct LossTerms {
  ad::Var total, sim, seg;  // seg is empty without segmentations
};

/// Similarity pyramid between fixed and moving warped by `matrix` (warped at
/// full resolution, then downsampled), plus lambda * soft Dice of the
/// trilinearly warped one-hot moving labels when `seg` is given.
LossTerms registration_loss(const ad::Var& fixed, const ad::Var& moving, const ad::Var& matrix,
                            const LossConfig& cfg, const SegmentationPair* seg = nullptr);

struct StepResult {
  std::size_t step = 0;  // optimizer step count after the update
  double loss = 0.0;     // before the update
  double sim = 0.0;
  double seg = 0.0;
  bool has_seg = false;
};

StepResult train_step(const Volume3D& fixed, const Volume3D& moving, const SegmentationPair* seg,
                      TrainingState& state, const LossConfig& loss_cfg);

/// "step=12 loss=-1.52 sim=-1.52" (plus " seg=..." when present).
std::string format_log_line(const StepResult& r);

struct IterRegConfig {
  std::vector<std::size_t> iterations{100, 100, 50};  // per level, coarse to fine
  std::vector<double> lr{0.01, 0.005, 0.002};
  FreezeMask frozen{};  // true = held at its initial value
  std::size_t window = 7;
  double eps = 1e-5;
  /// A level stops early once the largest free gradient entry drops below this.
  double grad_tolerance = 1e-4;
  /// When > 0, the whole coarse-to-fine run is repeated from six extra
  /// starts rotated by +-restart_angle about each axis, and the run with the
  /// lowest final loss wins (earlier starts win ties).
  double restart_angle = 0.5;

  std::size_t levels() const { return iterations.size(); }
  void validate() const;
};

struct TraceEntry {
  std::size_t level = 0;
  std::size_t iteration = 0;
  double loss = 0.0;
  double grad_max = 0.0;
};

struct IterRegResult {
  std::array<double, 12> raw{};
  GeometricParams params;
  AffineMatrix matrix;  // recentred at the fixed image's centre of mass
  std::vector<TraceEntry> trace;  // of the winning start
  std::size_t start = 0;          // 0 is the caller's initialization
};

class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(const std::string& msg, std::vector<TraceEntry> trace)
      : std::runtime_error(msg), trace_(std::move(trace)) {}
  const std::vector<TraceEntry>& trace() const { return trace_; }

 private:
  std::vector<TraceEntry> trace_;
};

/// Adam over the 12 raw decoupled parameters. Level l (1-based, coarse to
/// fine) registers the level-l images under the similarity pyramid of its
/// own l levels, warm-started from the previous level.
IterRegResult iterative_register(const Volume3D& fixed, const Volume3D& moving,
                                 const IterRegConfig& cfg,
                                 const std::array<double, 12>& init_raw = {});

}  // namespace c2freg
