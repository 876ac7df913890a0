#pragma once

// Differentiable primitives. Each one computes its forward value and, when
// the tape records and an input requires grad, registers its adjoint rule.
// Shape violations raise ShapeError naming the primitive and the operands.

#include <array>
#include <cstddef>
#include <vector>

#include "c2freg/autodiff.hpp"

namespace c2freg::ad {

using Index3 = std::array<std::size_t, 3>;

// Elementwise, identical shapes.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);

Var scale(const Var& a, double c);
Var add_scalar(const Var& a, double c);
Var neg(const Var& a);
Var square(const Var& a);
Var sqrt(const Var& a);
Var tanh(const Var& a);
Var relu(const Var& a);
Var sin(const Var& a);
Var cos(const Var& a);

/// a[..., C] + b[C], broadcast over leading axes.
Var add_bias(const Var& a, const Var& b);

/// a[M,K] · b[K,N].
Var matmul(const Var& a, const Var& b);
/// a[M,N] -> [N,M].
Var transpose(const Var& a);

/// Softmax over the last axis.
Var softmax_last(const Var& a);

/// Sum / mean of all elements, shape [1].
Var sum(const Var& a);
Var mean(const Var& a);
/// Mean over one axis; the axis is removed (rank-1 input gives shape [1]).
Var mean_axis(const Var& a, std::size_t axis);

Var concat(const std::vector<Var>& parts, std::size_t axis);
Var reshape(const Var& a, Shape shape);
/// Elements [begin, end) along axis.
Var slice(const Var& a, std::size_t axis, std::size_t begin, std::size_t end);

/// x[C,H,W,D] * w[O,C,kx,ky,kz] + b[O] with per-axis stride and zero padding.
/// Output [O,Ho,Wo,Do].
Var conv3d(const Var& x, const Var& w, const Var& b, Index3 stride, Index3 pad);

/// Per-channel convolution, stride 1: x[C,H,W,D], w[C,kx,ky,kz], b[C].
Var depthwise_conv3d(const Var& x, const Var& w, const Var& b, Index3 pad);

/// Trilinear sample of vol[H,W,D] at normalized coordinates coords[P,3]
/// (voxel i <-> 2i/(n-1)-1). Neighbors outside the grid read as zero.
Var grid_sample(const Var& vol, const Var& coords);

/// Sum over the (2r+1)^3 window centred on each voxel, clipped to the grid.
Var box_sum3d(const Var& x, std::size_t radius);

}  // namespace c2freg::ad
