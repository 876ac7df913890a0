#include "c2freg/experiment.hpp"

#include <algorithm>
#include <stdexcept>

#include "c2freg/phantom.hpp"

namespace c2freg {

void SyntheticProtocol::validate() const {
  model.validate();
  loss.validate();
  if (!(lr > 0.0)) throw std::invalid_argument("protocol: lr must be positive");
  if (train_pairs == 0) throw std::invalid_argument("protocol: need at least one training pair");
  if (held_out == 0) throw std::invalid_argument("protocol: need at least one held-out pair");
  if (!(magnitude > 0.0 && magnitude <= 1.0)) throw std::invalid_argument("protocol: magnitude must be in (0, 1]");
}

SyntheticPair SyntheticProtocol::train_pair(std::size_t i) const {
  return make_pair(model.input_dims, train_phantom_base + i, train_affine_base + i, magnitude);
}

SyntheticPair SyntheticProtocol::test_pair(std::size_t j) const {
  return make_pair(model.input_dims, test_phantom_base + j, test_affine_base + j, magnitude);
}

void continue_training(TrainingState& state, const SyntheticProtocol& p, const StepCallback& on_step) {
  p.validate();
  if (!(state.config == p.model)) throw std::invalid_argument("continue_training: state and protocol configs differ");
  while (state.adam.step < p.steps) {
    const SyntheticPair pair = p.train_pair(state.adam.step % p.train_pairs);
    const SegmentationPair seg{pair.fixed_labels, pair.moving_labels};
    const StepResult r = train_step(pair.fixed, pair.moving, p.semi ? &seg : nullptr, state, p.loss);
    if (on_step) on_step(r);
  }
}

TrainingState train_synthetic(const SyntheticProtocol& p, const StepCallback& on_step) {
  p.validate();
  TrainingState state{p.model, init_weights(p.model, p.init_seed), {}};
  state.adam.cfg.lr = p.lr;
  continue_training(state, p, on_step);
  return state;
}

double median(std::vector<double> v) {
  if (v.empty()) throw std::invalid_argument("median: empty list");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

HeldOutResult evaluate_held_out(const ModelState& state, const SyntheticProtocol& p) {
  p.validate();
  HeldOutResult r;
  std::vector<double> before, after;
  for (std::size_t j = 0; j < p.held_out; ++j) {
    const SyntheticPair pair = p.test_pair(j);
    const std::string id = "test" + std::to_string(j);
    const Prediction pred = model_forward(pair.fixed, pair.moving, state, p.model);
    r.before.push_back(evaluate_case(pair.fixed_labels, pair.moving_labels, AffineMatrix(), id));
    r.after.push_back(evaluate_case(pair.fixed_labels, pair.moving_labels, pred.matrix, id));
    before.push_back(r.before.back().mean_dice());
    after.push_back(r.after.back().mean_dice());
    r.improvement.push_back(after.back() - before.back());
  }
  r.median_before = median(before);
  r.median_after = median(after);
  r.median_improvement = median(r.improvement);
  return r;
}

AffineMatrix register_with_model(const Volume3D& fixed, const Volume3D& moving, const ModelState& state,
                                 const ModelConfig& cfg, bool com_init) {
  if (!com_init) return model_forward(fixed, moving, state, cfg).matrix;
  const AffineMatrix c = com_initialization(fixed, moving);
  const Volume3D centred = warp_affine(moving, c, moving.dims());
  return c * model_forward(fixed, centred, state, cfg).matrix;
}

}  // namespace c2freg
