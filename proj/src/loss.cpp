#include "c2freg/loss.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "c2freg/ops.hpp"

namespace c2freg {

void LossConfig::validate() const {
  if (levels < 1) throw std::invalid_argument("LossConfig: levels must be >= 1");
  if (window < 3 || window % 2 == 0)
    throw std::invalid_argument("LossConfig: window must be odd and >= 3");
  if (!(lambda >= 0.0)) throw std::invalid_argument("LossConfig: lambda must be >= 0");
  if (!(eps > 0.0)) throw std::invalid_argument("LossConfig: eps must be > 0");
}

namespace {

void check_window(std::size_t window) {
  if (window < 3 || window % 2 == 0)
    throw std::invalid_argument("local_ncc: window must be odd and >= 3, got " +
                                std::to_string(window));
}

ad::Var ncc_map(const ad::Var& a, const ad::Var& b, std::size_t window, double eps) {
  if (a.shape() != b.shape()) throw_shape_error("local_ncc", a.shape(), b.shape());
  if (a.value().rank() != 3) throw ShapeError("local_ncc: expected a volume, got " + shape_str(a.shape()));
  check_window(window);
  const std::size_t r = window / 2;
  ad::Tape& tape = a.tape();

  NdArray inv_count = ad::box_sum3d(tape.constant(NdArray(a.shape(), 1.0)), r).value();
  for (std::size_t i = 0; i < inv_count.size(); ++i) inv_count[i] = 1.0 / inv_count[i];
  const ad::Var inv_n = tape.constant(std::move(inv_count));

  const ad::Var sa = ad::box_sum3d(a, r);
  const ad::Var sb = ad::box_sum3d(b, r);
  const ad::Var saa = ad::box_sum3d(ad::square(a), r);
  const ad::Var sbb = ad::box_sum3d(ad::square(b), r);
  const ad::Var sab = ad::box_sum3d(ad::mul(a, b), r);

  const ad::Var cross = ad::sub(sab, ad::mul(ad::mul(sa, sb), inv_n));
  const ad::Var var_a = ad::sub(saa, ad::mul(ad::square(sa), inv_n));
  const ad::Var var_b = ad::sub(sbb, ad::mul(ad::square(sb), inv_n));
  const ad::Var denom = ad::sqrt(ad::add_scalar(ad::mul(var_a, var_b), eps));
  return ad::div(cross, denom);
}

}  // namespace

ad::Var local_ncc(const ad::Var& a, const ad::Var& b, std::size_t window, double eps) {
  return ad::mean(ncc_map(a, b, window, eps));
}

NdArray local_ncc_map(const Volume3D& a, const Volume3D& b, std::size_t window, double eps) {
  ad::Tape tape(false);
  return ncc_map(tape.constant(a.to_ndarray()), tape.constant(b.to_ndarray()), window, eps).value();
}

double local_ncc(const Volume3D& a, const Volume3D& b, std::size_t window, double eps) {
  if (a.dims() != b.dims())
    throw std::invalid_argument("local_ncc: dims mismatch " + dims_str(a.dims()) + " vs " +
                                dims_str(b.dims()));
  ad::Tape tape(false);
  return local_ncc(tape.constant(a.to_ndarray()), tape.constant(b.to_ndarray()), window, eps)
      .value()
      .item();
}

ad::Var similarity_pyramid_loss(const std::vector<ad::Var>& fixed, const std::vector<ad::Var>& moving,
                                std::size_t window, double eps) {
  if (fixed.empty() || fixed.size() != moving.size())
    throw std::invalid_argument("similarity_pyramid_loss: pyramids need equal, non-zero level counts");
  const std::size_t levels = fixed.size();
  ad::Var total;
  for (std::size_t i = 0; i < levels; ++i) {
    const double weight = -1.0 / std::pow(2.0, static_cast<double>(levels - 1 - i));
    const ad::Var term = ad::scale(local_ncc(fixed[i], moving[i], window, eps), weight);
    total = total ? ad::add(total, term) : term;
  }
  return total;
}

double similarity_pyramid_loss(const ImagePyramid& fixed, const ImagePyramid& moving,
                               std::size_t window, double eps) {
  if (fixed.size() != moving.size() || fixed.size() == 0)
    throw std::invalid_argument("similarity_pyramid_loss: pyramids need equal, non-zero level counts");
  ad::Tape tape(false);
  std::vector<ad::Var> f, m;
  for (std::size_t i = 0; i < fixed.size(); ++i) {
    if (fixed.levels[i].dims() != moving.levels[i].dims())
      throw std::invalid_argument("similarity_pyramid_loss: level " + std::to_string(i) +
                                  " dims mismatch");
    f.push_back(tape.constant(fixed.levels[i].to_ndarray()));
    m.push_back(tape.constant(moving.levels[i].to_ndarray()));
  }
  return similarity_pyramid_loss(f, m, window, eps).value().item();
}

ad::Var soft_dice_loss(const std::vector<ad::Var>& fixed, const std::vector<ad::Var>& moving,
                       double eps) {
  if (fixed.empty()) throw std::invalid_argument("dice_loss: K must be >= 1");
  if (fixed.size() != moving.size())
    throw std::invalid_argument("dice_loss: channel count mismatch");
  const double k = static_cast<double>(fixed.size());
  ad::Var total;
  for (std::size_t c = 0; c < fixed.size(); ++c) {
    if (fixed[c].shape() != moving[c].shape())
      throw_shape_error("dice_loss", fixed[c].shape(), moving[c].shape());
    const ad::Var inter = ad::sum(ad::mul(fixed[c], moving[c]));
    const ad::Var sizes = ad::add_scalar(ad::add(ad::sum(fixed[c]), ad::sum(moving[c])), eps);
    // 1 - 2 * inter / sizes, scaled by 1/K
    const ad::Var term = ad::add_scalar(ad::scale(ad::div(inter, sizes), -2.0 / k), 1.0 / k);
    total = total ? ad::add(total, term) : term;
  }
  return total;
}

std::vector<NdArray> one_hot(const LabelVolume& lv, std::size_t k) {
  std::vector<NdArray> out;
  for (std::size_t c = 1; c <= k; ++c) {
    NdArray m(lv.dims().shape(), 0.0);
    for (std::size_t i = 0; i < m.size(); ++i) m[i] = lv.labels()[i] == c ? 1.0 : 0.0;
    out.push_back(std::move(m));
  }
  return out;
}

double dice_loss(const LabelVolume& fixed, const LabelVolume& moving, std::size_t k, double eps) {
  if (k == 0) throw std::invalid_argument("dice_loss: K must be >= 1");
  if (fixed.dims() != moving.dims())
    throw std::invalid_argument("dice_loss: dims mismatch " + dims_str(fixed.dims()) + " vs " +
                                dims_str(moving.dims()));
  ad::Tape tape(false);
  std::vector<ad::Var> f, m;
  for (auto& a : one_hot(fixed, k)) f.push_back(tape.constant(std::move(a)));
  for (auto& a : one_hot(moving, k)) m.push_back(tape.constant(std::move(a)));
  return soft_dice_loss(f, m, eps).value().item();
}

ad::Var semi_supervised_loss(const ad::Var& sim, const ad::Var& seg, double lambda) {
  return ad::add(sim, ad::scale(seg, lambda));
}

double semi_supervised_loss(double sim, double seg, double lambda) { return sim + lambda * seg; }

}  // namespace c2freg
