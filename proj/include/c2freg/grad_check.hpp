#pragma once

#include <functional>
#include <span>
#include <stdexcept>
#include <vector>

#include "c2freg/autodiff.hpp"

namespace c2freg::ad {

/// Builds a shape-[1] output from one Var per input array.
using ScalarFn = std::function<Var(Tape&, const std::vector<Var>&)>;

struct Coordinate {
  std::size_t input;
  std::size_t index;
};

class NonFiniteError : public std::runtime_error {
 public:
  NonFiniteError(const std::string& what, Coordinate where)
      : std::runtime_error(what), where_(where) {}
  Coordinate where() const { return where_; }

 private:
  Coordinate where_;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  Coordinate worst{0, 0};
  double analytic = 0.0;
  double numeric = 0.0;
};

/// Compares backprop gradients with central differences.
/// Error per coordinate is |analytic - numeric| / max(1, |numeric|); the
/// maximum is reported. An empty `coords` checks every coordinate.
GradCheckResult grad_check(const ScalarFn& f, const std::vector<NdArray>& point, double step,
                           std::span<const Coordinate> coords = {});

}  // namespace c2freg::ad
