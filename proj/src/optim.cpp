#include "c2freg/optim.hpp"

#include <cmath>
#include <algorithm>
#include <limits>
#include <numbers>
#include <sstream>

#include "c2freg/ops.hpp"

namespace c2freg {

void adam_step(AdamState& state, std::map<std::string, NdArray>& params,
               const std::map<std::string, NdArray>& grads) {
  for (const auto& [name, g] : grads) {
    auto it = params.find(name);
    if (it == params.end()) throw std::invalid_argument("adam_step: unknown parameter '" + name + "'");
    if (g.shape() != it->second.shape()) throw_shape_error("adam_step", g.shape(), it->second.shape());
    if (!g.all_finite()) throw NonFiniteGradient(name);
  }
  ++state.step;
  const AdamConfig& c = state.cfg;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(c.beta1, t);
  const double bc2 = 1.0 - std::pow(c.beta2, t);
  for (const auto& [name, g] : grads) {
    NdArray& p = params.at(name);
    NdArray& m = state.m.try_emplace(name, p.shape(), 0.0).first->second;
    NdArray& v = state.v.try_emplace(name, p.shape(), 0.0).first->second;
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
      v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      p[i] -= c.lr * mhat / (std::sqrt(vhat) + c.eps);
    }
  }
}

LossTerms registration_loss(const ad::Var& fixed, const ad::Var& moving, const ad::Var& matrix,
                            const LossConfig& cfg, const SegmentationPair* seg) {
  cfg.validate();
  const Shape& s = fixed.shape();
  const Dims dims{s[0], s[1], s[2]};
  ad::Tape& tape = fixed.tape();
  LossTerms out;
  const ad::Var warped = warp_affine(moving, matrix, dims);
  out.sim = similarity_pyramid_loss(build_pyramid(fixed, cfg.levels),
                                    build_pyramid(warped, cfg.levels), cfg.window, cfg.eps);
  out.total = out.sim;
  if (seg != nullptr) {
    if (seg->fixed.dims() != dims || seg->moving.dims() != dims)
      throw std::invalid_argument("registration_loss: segmentation dims differ from the images");
    const std::size_t k = seg->fixed.num_structures();
    std::vector<ad::Var> f, m;
    for (auto& a : one_hot(seg->fixed, k)) f.push_back(tape.constant(std::move(a)));
    for (auto& a : one_hot(seg->moving, k))
      m.push_back(warp_affine(tape.constant(std::move(a)), matrix, dims));
    out.seg = soft_dice_loss(f, m, cfg.eps);
    out.total = semi_supervised_loss(out.sim, out.seg, cfg.lambda);
  }
  return out;
}

StepResult train_step(const Volume3D& fixed, const Volume3D& moving, const SegmentationPair* seg,
                      TrainingState& state, const LossConfig& loss_cfg) {
  const ModelConfig& cfg = state.config;
  if (fixed.dims() != cfg.input_dims || moving.dims() != cfg.input_dims)
    throw std::invalid_argument("train_step: images must be " + dims_str(cfg.input_dims));
  ad::Tape tape;
  const BoundModel m = bind(state.model, tape);
  const ad::Var f = tape.constant(fixed.to_ndarray());
  const ad::Var mv = tape.constant(moving.to_ndarray());
  const ForwardResult fwd = model_forward(f, mv, m, cfg);
  const LossTerms terms = registration_loss(f, mv, fwd.matrix, loss_cfg, seg);

  StepResult r;
  r.loss = terms.total.value().item();
  r.sim = terms.sim.value().item();
  if (terms.seg) {
    r.seg = terms.seg.value().item();
    r.has_seg = true;
  }
  if (!std::isfinite(r.loss)) throw std::runtime_error("train_step: non-finite loss");

  const ad::Gradients g = tape.backprop(terms.total);
  std::map<std::string, NdArray> named;
  for (const auto& [name, var] : m.vars) named.emplace(name, g.at(var.param_id()));
  adam_step(state.adam, state.model.params, named);
  r.step = state.adam.step;
  return r;
}

std::string format_log_line(const StepResult& r) {
  std::ostringstream os;
  os.precision(9);
  os << "step=" << r.step << " loss=" << r.loss << " sim=" << r.sim;
  if (r.has_seg) os << " seg=" << r.seg;
  return os.str();
}

void IterRegConfig::validate() const {
  if (iterations.empty()) throw std::invalid_argument("IterRegConfig: levels must be >= 1");
  if (lr.size() != iterations.size())
    throw std::invalid_argument("IterRegConfig: need one learning rate per level");
  for (std::size_t n : iterations)
    if (n == 0) throw std::invalid_argument("IterRegConfig: iterations must be > 0");
  for (double v : lr)
    if (!(v > 0.0) || !std::isfinite(v))
      throw std::invalid_argument("IterRegConfig: learning rates must be positive");
  if (window < 3 || window % 2 == 0)
    throw std::invalid_argument("IterRegConfig: window must be odd and >= 3");
  if (!(eps > 0.0)) throw std::invalid_argument("IterRegConfig: eps must be > 0");
  if (!(grad_tolerance >= 0.0)) throw std::invalid_argument("IterRegConfig: grad_tolerance must be >= 0");
  if (!(restart_angle >= 0.0 && restart_angle < std::numbers::pi))
    throw std::invalid_argument("IterRegConfig: restart_angle must be in [0, pi)");
}

namespace {

IterRegResult register_from(const ImagePyramid& fp, const ImagePyramid& mp, const Vec3& pivot,
                            const IterRegConfig& cfg, const std::array<double, 12>& init_raw) {
  IterRegResult res;
  std::map<std::string, NdArray> params;
  params.emplace("raw", NdArray({12}, std::vector<double>(init_raw.begin(), init_raw.end())));

  for (std::size_t l = 0; l < cfg.levels(); ++l) {
    AdamState adam;
    adam.cfg.lr = cfg.lr[l];
    LossConfig lc;
    lc.levels = l + 1;
    lc.window = cfg.window;
    lc.eps = cfg.eps;
    const NdArray f_level = fp.levels[l].to_ndarray();
    const NdArray m_level = mp.levels[l].to_ndarray();
    for (std::size_t it = 0; it < cfg.iterations[l]; ++it) {
      ad::Tape tape;
      const ad::Var raw = tape.parameter(params.at("raw"));
      const ad::Var a = recenter(compose(constrain(raw)), pivot);
      const LossTerms terms =
          registration_loss(tape.constant(f_level), tape.constant(m_level), a, lc);
      const double loss = terms.total.value().item();
      NdArray g = tape.backprop(terms.total).at(raw.param_id());
      double gmax = 0.0;
      for (std::size_t i = 0; i < 12; ++i) {
        if (cfg.frozen[i]) g[i] = 0.0;
        gmax = std::max(gmax, std::abs(g[i]));
      }
      res.trace.push_back({l, it, loss, gmax});
      if (!std::isfinite(loss) || !g.all_finite())
        throw DivergenceError("iterative_register: non-finite loss at level " +
                                  std::to_string(l + 1) + " iteration " + std::to_string(it),
                              res.trace);
      if (gmax < cfg.grad_tolerance) break;
      adam_step(adam, params, {{"raw", std::move(g)}});
    }
  }
  const NdArray& raw = params.at("raw");
  std::copy(raw.data().begin(), raw.data().end(), res.raw.begin());
  res.params = constrain(res.raw);
  res.matrix = recenter(compose(res.params), pivot);
  return res;
}

// Loss of the final parameters at the finest level.
double final_loss(const ImagePyramid& fp, const ImagePyramid& mp, const IterRegConfig& cfg,
                  const AffineMatrix& a) {
  LossConfig lc;
  lc.levels = cfg.levels();
  lc.window = cfg.window;
  lc.eps = cfg.eps;
  ad::Tape tape(false);
  return registration_loss(tape.constant(fp.finest().to_ndarray()),
                           tape.constant(mp.finest().to_ndarray()), tape.constant(a.to_ndarray()), lc)
      .total.value()
      .item();
}

}  // namespace

IterRegResult iterative_register(const Volume3D& fixed, const Volume3D& moving,
                                 const IterRegConfig& cfg, const std::array<double, 12>& init_raw) {
  cfg.validate();
  if (fixed.dims() != moving.dims())
    throw std::invalid_argument("iterative_register: dims mismatch " + dims_str(fixed.dims()) +
                                " vs " + dims_str(moving.dims()));
  const Vec3 pivot = center_of_mass(fixed);
  const ImagePyramid fp = build_pyramid(fixed, cfg.levels());
  const ImagePyramid mp = build_pyramid(moving, cfg.levels());

  std::vector<std::array<double, 12>> starts{init_raw};
  if (cfg.restart_angle > 0.0) {
    for (std::size_t axis = 0; axis < 3; ++axis) {
      if (cfg.frozen[3 + axis]) continue;
      for (double sign : {1.0, -1.0}) {
        // offset the rotation angle, then map back to raw space
        GeometricParams p = constrain(init_raw);
        p.r[axis] = std::clamp(p.r[axis] + sign * cfg.restart_angle, -0.99 * std::numbers::pi,
                               0.99 * std::numbers::pi);
        std::array<double, 12> raw = init_raw;
        raw[3 + axis] = unconstrain(p)[3 + axis];
        starts.push_back(raw);
      }
    }
  }
  IterRegResult best;
  double best_loss = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < starts.size(); ++i) {
    IterRegResult r = register_from(fp, mp, pivot, cfg, starts[i]);
    const double loss = final_loss(fp, mp, cfg, r.matrix);
    if (loss < best_loss) {
      best_loss = loss;
      best = std::move(r);
      best.start = i;
    }
  }
  return best;
}

}  // namespace c2freg
