#include "c2freg/grad_check.hpp"

#include <cmath>
#include <string>

namespace c2freg::ad {

namespace {

double evaluate(const ScalarFn& f, const std::vector<NdArray>& point) {
  Tape tape(false);
  std::vector<Var> vars;
  vars.reserve(point.size());
  for (const auto& p : point) vars.push_back(tape.constant(p));
  return f(tape, vars).value().item();
}

std::string where_str(Coordinate c) {
  return "input " + std::to_string(c.input) + " index " + std::to_string(c.index);
}

}  // namespace

GradCheckResult grad_check(const ScalarFn& f, const std::vector<NdArray>& point, double step,
                           std::span<const Coordinate> coords) {
  if (!(step > 0.0)) throw std::invalid_argument("grad_check: step must be positive");

  Tape tape;
  std::vector<Var> vars;
  for (const auto& p : point) vars.push_back(tape.parameter(p));
  const Var out = f(tape, vars);
  if (!std::isfinite(out.value().item()))
    throw NonFiniteError("grad_check: non-finite output at the base point", {0, 0});
  const Gradients grads = tape.backprop(out);

  std::vector<Coordinate> all;
  if (coords.empty()) {
    for (std::size_t i = 0; i < point.size(); ++i)
      for (std::size_t j = 0; j < point[i].size(); ++j) all.push_back({i, j});
    coords = all;
  }

  GradCheckResult result;
  std::vector<NdArray> probe = point;
  for (const Coordinate& c : coords) {
    const double analytic = grads.at(vars[c.input].param_id())[c.index];
    if (!std::isfinite(analytic))
      throw NonFiniteError("grad_check: non-finite analytic gradient at " + where_str(c), c);
    const double x0 = point[c.input][c.index];
    probe[c.input][c.index] = x0 + step;
    const double fp = evaluate(f, probe);
    probe[c.input][c.index] = x0 - step;
    const double fm = evaluate(f, probe);
    probe[c.input][c.index] = x0;
    if (!std::isfinite(fp) || !std::isfinite(fm))
      throw NonFiniteError("grad_check: non-finite function value at " + where_str(c), c);
    const double numeric = (fp - fm) / (2.0 * step);
    const double err = std::abs(analytic - numeric) / std::max(1.0, std::abs(numeric));
    if (err > result.max_rel_error || &c == &coords.front()) {
      result.max_rel_error = err;
      result.worst = c;
      result.analytic = analytic;
      result.numeric = numeric;
    }
  }
  return result;
}

}  // namespace c2freg::ad
