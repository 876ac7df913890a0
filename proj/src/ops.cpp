#include "c2freg/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <memory>

namespace c2freg::ad {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using MapConstMat = Eigen::Map<const RowMat>;

Node& input(Node& n, std::size_t i) { return *n.inputs[i]; }

void require_same(std::string_view op, const Var& a, const Var& b) {
  if (a.shape() != b.shape()) throw_shape_error(op, a.shape(), b.shape());
}

void require_rank(std::string_view op, const Var& a, std::size_t rank) {
  if (a.value().rank() != rank)
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) +
                     ", got " + shape_str(a.shape()));
}

// dy/dx given x and y = f(x).
template <class F, class D>
Var unary(std::string_view kind, const Var& a, F f, D dydx) {
  NdArray out(a.shape());
  const auto& x = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(x[i]);
  return a.tape().record(kind, std::move(out), {a}, [dydx](Node& self) {
    Node& in = input(self, 0);
    if (!in.requires_grad) return;
    NdArray& g = in.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i)
      g[i] += self.grad[i] * dydx(in.value[i], self.value[i]);
  });
}

struct AxisSplit {
  std::size_t outer, extent, inner;
};

AxisSplit split_axis(const Shape& s, std::size_t axis) {
  AxisSplit r{1, s[axis], 1};
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

}  // namespace

Var add(const Var& a, const Var& b) {
  require_same("add", a, b);
  NdArray out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] + b.value()[i];
  return a.tape().record("add", std::move(out), {a, b}, [](Node& self) {
    for (std::size_t k = 0; k < 2; ++k)
      if (input(self, k).requires_grad) input(self, k).add_grad(self.grad);
  });
}

Var sub(const Var& a, const Var& b) {
  require_same("sub", a, b);
  NdArray out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] - b.value()[i];
  return a.tape().record("sub", std::move(out), {a, b}, [](Node& self) {
    if (input(self, 0).requires_grad) input(self, 0).add_grad(self.grad);
    if (input(self, 1).requires_grad) {
      NdArray& g = input(self, 1).grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

Var mul(const Var& a, const Var& b) {
  require_same("mul", a, b);
  NdArray out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * b.value()[i];
  return a.tape().record("mul", std::move(out), {a, b}, [](Node& self) {
    Node& x = input(self, 0);
    Node& y = input(self, 1);
    if (x.requires_grad) {
      NdArray& g = x.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * y.value[i];
    }
    if (y.requires_grad) {
      NdArray& g = y.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * x.value[i];
    }
  });
}

Var div(const Var& a, const Var& b) {
  require_same("div", a, b);
  NdArray out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] / b.value()[i];
  return a.tape().record("div", std::move(out), {a, b}, [](Node& self) {
    Node& x = input(self, 0);
    Node& y = input(self, 1);
    if (x.requires_grad) {
      NdArray& g = x.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] / y.value[i];
    }
    if (y.requires_grad) {
      NdArray& g = y.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i)
        g[i] -= self.grad[i] * self.value[i] / y.value[i];
    }
  });
}

Var scale(const Var& a, double c) {
  return unary("scale", a, [c](double x) { return c * x; },
               [c](double, double) { return c; });
}

Var add_scalar(const Var& a, double c) {
  return unary("add_scalar", a, [c](double x) { return x + c; },
               [](double, double) { return 1.0; });
}

Var neg(const Var& a) { return scale(a, -1.0); }

Var square(const Var& a) {
  return unary("square", a, [](double x) { return x * x; },
               [](double x, double) { return 2.0 * x; });
}

Var sqrt(const Var& a) {
  return unary("sqrt", a, [](double x) { return std::sqrt(x); },
               [](double, double y) { return 0.5 / y; });
}

Var tanh(const Var& a) {
  return unary("tanh", a, [](double x) { return std::tanh(x); },
               [](double, double y) { return 1.0 - y * y; });
}

Var relu(const Var& a) {
  return unary("relu", a, [](double x) { return x > 0.0 ? x : 0.0; },
               [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var sin(const Var& a) {
  return unary("sin", a, [](double x) { return std::sin(x); },
               [](double x, double) { return std::cos(x); });
}

Var cos(const Var& a) {
  return unary("cos", a, [](double x) { return std::cos(x); },
               [](double x, double) { return -std::sin(x); });
}

Var add_bias(const Var& a, const Var& b) {
  require_rank("add_bias", b, 1);
  const std::size_t c = b.size();
  if (a.shape().back() != c) throw_shape_error("add_bias", a.shape(), b.shape());
  NdArray out = a.value();
  const std::size_t rows = out.size() / c;
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < c; ++j) out[r * c + j] += b.value()[j];
  return a.tape().record("add_bias", std::move(out), {a, b}, [c, rows](Node& self) {
    if (input(self, 0).requires_grad) input(self, 0).add_grad(self.grad);
    if (input(self, 1).requires_grad) {
      NdArray& g = input(self, 1).grad_buffer();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < c; ++j) g[j] += self.grad[r * c + j];
    }
  });
}

Var matmul(const Var& a, const Var& b) {
  require_rank("matmul", a, 2);
  require_rank("matmul", b, 2);
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  if (b.shape()[0] != k) throw_shape_error("matmul", a.shape(), b.shape());
  NdArray out({m, n});
  MapMat(out.ptr(), m, n).noalias() =
      MapConstMat(a.value().ptr(), m, k) * MapConstMat(b.value().ptr(), k, n);
  return a.tape().record("matmul", std::move(out), {a, b}, [m, k, n](Node& self) {
    Node& x = input(self, 0);
    Node& y = input(self, 1);
    MapConstMat g(self.grad.ptr(), m, n);
    if (x.requires_grad)
      MapMat(x.grad_buffer().ptr(), m, k).noalias() +=
          g * MapConstMat(y.value.ptr(), k, n).transpose();
    if (y.requires_grad)
      MapMat(y.grad_buffer().ptr(), k, n).noalias() +=
          MapConstMat(x.value.ptr(), m, k).transpose() * g;
  });
}

Var transpose(const Var& a) {
  require_rank("transpose", a, 2);
  const std::size_t m = a.shape()[0], n = a.shape()[1];
  NdArray out({n, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = a.value()[i * n + j];
  return a.tape().record("transpose", std::move(out), {a}, [m, n](Node& self) {
    Node& x = input(self, 0);
    if (!x.requires_grad) return;
    NdArray& g = x.grad_buffer();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) g[i * n + j] += self.grad[j * m + i];
  });
}

Var softmax_last(const Var& a) {
  const std::size_t c = a.shape().back();
  const std::size_t rows = a.size() / c;
  NdArray out(a.shape());
  const auto& x = a.value();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x.ptr() + r * c;
    double* yr = out.ptr() + r * c;
    const double mx = *std::max_element(xr, xr + c);
    double total = 0.0;
    for (std::size_t j = 0; j < c; ++j) total += (yr[j] = std::exp(xr[j] - mx));
    for (std::size_t j = 0; j < c; ++j) yr[j] /= total;
  }
  return a.tape().record("softmax", std::move(out), {a}, [c, rows](Node& self) {
    Node& in = input(self, 0);
    if (!in.requires_grad) return;
    NdArray& g = in.grad_buffer();
    for (std::size_t r = 0; r < rows; ++r) {
      const double* y = self.value.ptr() + r * c;
      const double* gy = self.grad.ptr() + r * c;
      double dot = 0.0;
      for (std::size_t j = 0; j < c; ++j) dot += gy[j] * y[j];
      for (std::size_t j = 0; j < c; ++j) g[r * c + j] += y[j] * (gy[j] - dot);
    }
  });
}

Var sum(const Var& a) {
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  return a.tape().record("sum", NdArray::scalar(s), {a}, [](Node& self) {
    Node& in = input(self, 0);
    if (!in.requires_grad) return;
    NdArray& g = in.grad_buffer();
    const double gs = self.grad[0];
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += gs;
  });
}

Var mean(const Var& a) { return scale(sum(a), 1.0 / static_cast<double>(a.size())); }

Var mean_axis(const Var& a, std::size_t axis) {
  if (axis >= a.value().rank())
    throw ShapeError("mean_axis: axis " + std::to_string(axis) + " out of range for " +
                     shape_str(a.shape()));
  const AxisSplit sp = split_axis(a.shape(), axis);
  Shape out_shape;
  for (std::size_t i = 0; i < a.value().rank(); ++i)
    if (i != axis) out_shape.push_back(a.shape()[i]);
  if (out_shape.empty()) out_shape = {1};
  NdArray out(out_shape, 0.0);
  const double inv = 1.0 / static_cast<double>(sp.extent);
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t e = 0; e < sp.extent; ++e)
      for (std::size_t i = 0; i < sp.inner; ++i)
        out[o * sp.inner + i] += a.value()[(o * sp.extent + e) * sp.inner + i] * inv;
  return a.tape().record("mean_axis", std::move(out), {a}, [sp, inv](Node& self) {
    Node& in = input(self, 0);
    if (!in.requires_grad) return;
    NdArray& g = in.grad_buffer();
    for (std::size_t o = 0; o < sp.outer; ++o)
      for (std::size_t e = 0; e < sp.extent; ++e)
        for (std::size_t i = 0; i < sp.inner; ++i)
          g[(o * sp.extent + e) * sp.inner + i] += self.grad[o * sp.inner + i] * inv;
  });
}

Var concat(const std::vector<Var>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Shape& first = parts[0].shape();
  if (axis >= first.size())
    throw ShapeError("concat: axis " + std::to_string(axis) + " out of range for " +
                     shape_str(first));
  Shape out_shape = first;
  out_shape[axis] = 0;
  std::vector<std::size_t> extents;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == first.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = (i == axis) || s[i] == first[i];
    if (!ok) throw_shape_error("concat", first, s);
    extents.push_back(s[axis]);
    out_shape[axis] += s[axis];
  }
  const AxisSplit sp = split_axis(out_shape, axis);
  NdArray out(out_shape);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto& v = parts[k].value();
    const std::size_t ext = extents[k];
    for (std::size_t o = 0; o < sp.outer; ++o)
      std::copy_n(v.ptr() + o * ext * sp.inner, ext * sp.inner,
                  out.ptr() + (o * sp.extent + offset) * sp.inner);
    offset += ext;
  }
  return parts[0].tape().record("concat", std::move(out), parts, [sp, extents](Node& self) {
    std::size_t offset = 0;
    for (std::size_t k = 0; k < extents.size(); ++k) {
      Node& in = input(self, k);
      const std::size_t ext = extents[k];
      if (in.requires_grad) {
        NdArray& g = in.grad_buffer();
        for (std::size_t o = 0; o < sp.outer; ++o)
          for (std::size_t j = 0; j < ext * sp.inner; ++j)
            g[o * ext * sp.inner + j] += self.grad[(o * sp.extent + offset) * sp.inner + j];
      }
      offset += ext;
    }
  });
}

Var reshape(const Var& a, Shape shape) {
  NdArray out = a.value().reshaped(std::move(shape));
  return a.tape().record("reshape", std::move(out), {a}, [](Node& self) {
    Node& in = input(self, 0);
    if (!in.requires_grad) return;
    NdArray& g = in.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

Var slice(const Var& a, std::size_t axis, std::size_t begin, std::size_t end) {
  if (axis >= a.value().rank() || begin >= end || end > a.shape()[axis])
    throw ShapeError("slice: range [" + std::to_string(begin) + "," + std::to_string(end) +
                     ") on axis " + std::to_string(axis) + " invalid for " +
                     shape_str(a.shape()));
  const AxisSplit sp = split_axis(a.shape(), axis);
  Shape out_shape = a.shape();
  out_shape[axis] = end - begin;
  const std::size_t len = (end - begin) * sp.inner;
  NdArray out(out_shape);
  for (std::size_t o = 0; o < sp.outer; ++o)
    std::copy_n(a.value().ptr() + (o * sp.extent + begin) * sp.inner, len,
                out.ptr() + o * len);
  return a.tape().record("slice", std::move(out), {a}, [sp, begin, len](Node& self) {
    Node& in = input(self, 0);
    if (!in.requires_grad) return;
    NdArray& g = in.grad_buffer();
    for (std::size_t o = 0; o < sp.outer; ++o)
      for (std::size_t j = 0; j < len; ++j)
        g[(o * sp.extent + begin) * sp.inner + j] += self.grad[o * len + j];
  });
}

namespace {

struct ConvGeometry {
  std::size_t c, h, w, d;     // input
  std::size_t kx, ky, kz;     // kernel
  Index3 stride, pad;
  std::size_t oh, ow, od;     // output spatial
  std::size_t cols() const { return c * kx * ky * kz; }
  std::size_t positions() const { return oh * ow * od; }
};

// Visits (row, col, input offset) for every in-bounds im2col entry.
template <class F>
void for_each_patch_entry(const ConvGeometry& g, F&& f) {
  const std::size_t ncol = g.cols();
  std::size_t row = 0;
  for (std::size_t oi = 0; oi < g.oh; ++oi)
    for (std::size_t oj = 0; oj < g.ow; ++oj)
      for (std::size_t ok = 0; ok < g.od; ++ok, ++row) {
        const long bi = static_cast<long>(oi * g.stride[0]) - static_cast<long>(g.pad[0]);
        const long bj = static_cast<long>(oj * g.stride[1]) - static_cast<long>(g.pad[1]);
        const long bk = static_cast<long>(ok * g.stride[2]) - static_cast<long>(g.pad[2]);
        for (std::size_t ch = 0; ch < g.c; ++ch)
          for (std::size_t a = 0; a < g.kx; ++a) {
            const long i = bi + static_cast<long>(a);
            if (i < 0 || i >= static_cast<long>(g.h)) continue;
            for (std::size_t b = 0; b < g.ky; ++b) {
              const long j = bj + static_cast<long>(b);
              if (j < 0 || j >= static_cast<long>(g.w)) continue;
              const std::size_t col0 = ((ch * g.kx + a) * g.ky + b) * g.kz;
              const std::size_t in0 = ((ch * g.h + i) * g.w + j) * g.d;
              const long k_lo = std::max(0L, -bk);
              const long k_hi = std::min(static_cast<long>(g.kz), static_cast<long>(g.d) - bk);
              if (k_lo < k_hi)
                f(row * ncol + col0 + k_lo, in0 + static_cast<std::size_t>(bk + k_lo),
                  static_cast<std::size_t>(k_hi - k_lo));
            }
          }
      }
}

}  // namespace

Var conv3d(const Var& x, const Var& w, const Var& b, Index3 stride, Index3 pad) {
  require_rank("conv3d", x, 4);
  require_rank("conv3d", w, 5);
  require_rank("conv3d", b, 1);
  const Shape& xs = x.shape();
  const Shape& ws = w.shape();
  if (ws[1] != xs[0]) throw_shape_error("conv3d", xs, ws);
  if (b.size() != ws[0]) throw_shape_error("conv3d", ws, b.shape());
  ConvGeometry g{xs[0], xs[1], xs[2], xs[3], ws[2], ws[3], ws[4], stride, pad, 0, 0, 0};
  const std::size_t in_ext[3] = {g.h, g.w, g.d};
  const std::size_t k_ext[3] = {g.kx, g.ky, g.kz};
  std::size_t out_ext[3];
  for (int a = 0; a < 3; ++a) {
    if (stride[a] == 0 || in_ext[a] + 2 * pad[a] < k_ext[a]) throw_shape_error("conv3d", xs, ws);
    out_ext[a] = (in_ext[a] + 2 * pad[a] - k_ext[a]) / stride[a] + 1;
  }
  g.oh = out_ext[0];
  g.ow = out_ext[1];
  g.od = out_ext[2];
  const std::size_t o = ws[0], n = g.positions(), k = g.cols();

  auto cols = std::make_shared<std::vector<double>>(n * k, 0.0);
  const double* xv = x.value().ptr();
  for_each_patch_entry(g, [&](std::size_t dst, std::size_t src, std::size_t len) {
    std::copy_n(xv + src, len, cols->data() + dst);
  });

  NdArray out({o, g.oh, g.ow, g.od});
  MapMat om(out.ptr(), o, n);
  om.noalias() = MapConstMat(w.value().ptr(), o, k) * MapConstMat(cols->data(), n, k).transpose();
  for (std::size_t c = 0; c < o; ++c) om.row(c).array() += b.value()[c];

  return x.tape().record("conv3d", std::move(out), {x, w, b}, [g, o, n, k, cols](Node& self) {
    Node& xn = input(self, 0);
    Node& wn = input(self, 1);
    Node& bn = input(self, 2);
    MapConstMat gm(self.grad.ptr(), o, n);
    if (wn.requires_grad)
      MapMat(wn.grad_buffer().ptr(), o, k).noalias() += gm * MapConstMat(cols->data(), n, k);
    if (bn.requires_grad) {
      NdArray& gb = bn.grad_buffer();
      const double* gp = self.grad.ptr();
      for (std::size_t c = 0; c < o; ++c) {
        double acc = 0.0;
        for (std::size_t j = 0; j < n; ++j) acc += gp[c * n + j];
        gb[c] += acc;
      }
    }
    if (xn.requires_grad) {
      RowMat dcols = gm.transpose() * MapConstMat(wn.value.ptr(), o, k);
      double* gx = xn.grad_buffer().ptr();
      for_each_patch_entry(g, [&](std::size_t src, std::size_t dst, std::size_t len) {
        const double* s = dcols.data() + src;
        for (std::size_t t = 0; t < len; ++t) gx[dst + t] += s[t];
      });
    }
  });
}

Var depthwise_conv3d(const Var& x, const Var& w, const Var& b, Index3 pad) {
  require_rank("depthwise_conv3d", x, 4);
  require_rank("depthwise_conv3d", w, 4);
  require_rank("depthwise_conv3d", b, 1);
  const Shape& xs = x.shape();
  const Shape& ws = w.shape();
  if (ws[0] != xs[0]) throw_shape_error("depthwise_conv3d", xs, ws);
  if (b.size() != xs[0]) throw_shape_error("depthwise_conv3d", xs, b.shape());
  const std::size_t c = xs[0], h = xs[1], wd = xs[2], d = xs[3];
  const std::size_t kx = ws[1], ky = ws[2], kz = ws[3];
  for (int a = 0; a < 3; ++a)
    if (xs[a + 1] + 2 * pad[a] < ws[a + 1]) throw_shape_error("depthwise_conv3d", xs, ws);
  const std::size_t oh = h + 2 * pad[0] - kx + 1;
  const std::size_t ow = wd + 2 * pad[1] - ky + 1;
  const std::size_t od = d + 2 * pad[2] - kz + 1;

  // Calls f(channel, out index, in index, kernel index) for in-bounds taps.
  auto visit = [=](auto&& f) {
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t i = 0; i < oh; ++i)
        for (std::size_t j = 0; j < ow; ++j)
          for (std::size_t l = 0; l < od; ++l) {
            const std::size_t oidx = ((ch * oh + i) * ow + j) * od + l;
            for (std::size_t a = 0; a < kx; ++a) {
              const long ii = static_cast<long>(i + a) - static_cast<long>(pad[0]);
              if (ii < 0 || ii >= static_cast<long>(h)) continue;
              for (std::size_t bb = 0; bb < ky; ++bb) {
                const long jj = static_cast<long>(j + bb) - static_cast<long>(pad[1]);
                if (jj < 0 || jj >= static_cast<long>(wd)) continue;
                for (std::size_t e = 0; e < kz; ++e) {
                  const long ll = static_cast<long>(l + e) - static_cast<long>(pad[2]);
                  if (ll < 0 || ll >= static_cast<long>(d)) continue;
                  const std::size_t iidx =
                      ((ch * h + static_cast<std::size_t>(ii)) * wd + static_cast<std::size_t>(jj)) * d +
                      static_cast<std::size_t>(ll);
                  f(ch, oidx, iidx, ((ch * kx + a) * ky + bb) * kz + e);
                }
              }
            }
          }
  };

  NdArray out({c, oh, ow, od});
  for (std::size_t ch = 0; ch < c; ++ch)
    std::fill_n(out.ptr() + ch * oh * ow * od, oh * ow * od, b.value()[ch]);
  const double* xv = x.value().ptr();
  const double* wv = w.value().ptr();
  visit([&](std::size_t, std::size_t oi, std::size_t ii, std::size_t ki) {
    out[oi] += wv[ki] * xv[ii];
  });
  const std::size_t per_channel = oh * ow * od;
  return x.tape().record("depthwise_conv3d", std::move(out), {x, w, b},
                         [visit, per_channel, c](Node& self) {
                           Node& xn = input(self, 0);
                           Node& wn = input(self, 1);
                           Node& bn = input(self, 2);
                           const double* gy = self.grad.ptr();
                           double* gx = xn.requires_grad ? xn.grad_buffer().ptr() : nullptr;
                           double* gw = wn.requires_grad ? wn.grad_buffer().ptr() : nullptr;
                           const double* xv = xn.value.ptr();
                           const double* wv = wn.value.ptr();
                           if (gx || gw)
                             visit([&](std::size_t, std::size_t oi, std::size_t ii, std::size_t ki) {
                               if (gx) gx[ii] += wv[ki] * gy[oi];
                               if (gw) gw[ki] += xv[ii] * gy[oi];
                             });
                           if (bn.requires_grad) {
                             NdArray& gb = bn.grad_buffer();
                             for (std::size_t ch = 0; ch < c; ++ch)
                               for (std::size_t t = 0; t < per_channel; ++t)
                                 gb[ch] += gy[ch * per_channel + t];
                           }
                         });
}

namespace {

struct Corner {
  long i0, j0, k0;
  double fx, fy, fz;
};

// Normalized -> voxel coordinate. Values within 1e-9 of a grid point are
// snapped onto it so that identity resampling reproduces the input exactly.
inline double to_voxel(double x, std::size_t n) {
  const double u = (x + 1.0) * 0.5 * static_cast<double>(n - 1);
  const double r = std::nearbyint(u);
  return std::abs(u - r) < 1e-9 ? r : u;
}

inline Corner locate(const double* p, std::size_t h, std::size_t w, std::size_t d) {
  const double u = to_voxel(p[0], h);
  const double v = to_voxel(p[1], w);
  const double s = to_voxel(p[2], d);
  Corner c;
  c.i0 = static_cast<long>(std::floor(u));
  c.j0 = static_cast<long>(std::floor(v));
  c.k0 = static_cast<long>(std::floor(s));
  c.fx = u - static_cast<double>(c.i0);
  c.fy = v - static_cast<double>(c.j0);
  c.fz = s - static_cast<double>(c.k0);
  return c;
}

}  // namespace

Var grid_sample(const Var& vol, const Var& coords) {
  require_rank("grid_sample", vol, 3);
  require_rank("grid_sample", coords, 2);
  if (coords.shape()[1] != 3) throw_shape_error("grid_sample", vol.shape(), coords.shape());
  const std::size_t h = vol.shape()[0], w = vol.shape()[1], d = vol.shape()[2];
  if (h < 2 || w < 2 || d < 2)
    throw ShapeError("grid_sample: every extent must be >= 2, got " + shape_str(vol.shape()));
  const std::size_t np = coords.shape()[0];
  const double* vv = vol.value().ptr();
  const double* cv = coords.value().ptr();

  auto at = [=](const double* data, long i, long j, long k) -> double {
    if (i < 0 || j < 0 || k < 0 || i >= static_cast<long>(h) || j >= static_cast<long>(w) ||
        k >= static_cast<long>(d))
      return 0.0;
    return data[(static_cast<std::size_t>(i) * w + static_cast<std::size_t>(j)) * d +
                static_cast<std::size_t>(k)];
  };

  NdArray out({np});
  for (std::size_t p = 0; p < np; ++p) {
    const Corner c = locate(cv + 3 * p, h, w, d);
    double acc = 0.0;
    for (int a = 0; a < 2; ++a)
      for (int b = 0; b < 2; ++b)
        for (int e = 0; e < 2; ++e) {
          const double wt = (a ? c.fx : 1.0 - c.fx) * (b ? c.fy : 1.0 - c.fy) *
                            (e ? c.fz : 1.0 - c.fz);
          if (wt != 0.0) acc += wt * at(vv, c.i0 + a, c.j0 + b, c.k0 + e);
        }
    out[p] = acc;
  }

  return vol.tape().record("grid_sample", std::move(out), {vol, coords}, [=](Node& self) {
    Node& vn = input(self, 0);
    Node& cn = input(self, 1);
    const double* vdata = vn.value.ptr();
    const double* cdata = cn.value.ptr();
    double* gv = vn.requires_grad ? vn.grad_buffer().ptr() : nullptr;
    double* gc = cn.requires_grad ? cn.grad_buffer().ptr() : nullptr;
    const double sx = 0.5 * static_cast<double>(h - 1);
    const double sy = 0.5 * static_cast<double>(w - 1);
    const double sz = 0.5 * static_cast<double>(d - 1);
    for (std::size_t p = 0; p < np; ++p) {
      const double g = self.grad[p];
      if (g == 0.0) continue;
      const Corner c = locate(cdata + 3 * p, h, w, d);
      if (gv)
        for (int a = 0; a < 2; ++a)
          for (int b = 0; b < 2; ++b)
            for (int e = 0; e < 2; ++e) {
              const long i = c.i0 + a, j = c.j0 + b, k = c.k0 + e;
              if (i < 0 || j < 0 || k < 0 || i >= static_cast<long>(h) ||
                  j >= static_cast<long>(w) || k >= static_cast<long>(d))
                continue;
              const double wt = (a ? c.fx : 1.0 - c.fx) * (b ? c.fy : 1.0 - c.fy) *
                                (e ? c.fz : 1.0 - c.fz);
              gv[(static_cast<std::size_t>(i) * w + static_cast<std::size_t>(j)) * d +
                 static_cast<std::size_t>(k)] += g * wt;
            }
      double du = 0.0, dv = 0.0, ds = 0.0;
      if (gc) {
        // Slope along one axis; exactly on a grid point the interpolant has a
        // kink and the mean of the two one-sided slopes is used.
        auto slope = [&](int axis, long i, long j, long k, double f) {
          long di = axis == 0, dj = axis == 1, dk = axis == 2;
          if (f == 0.0)
            return 0.5 * (at(vdata, i + di, j + dj, k + dk) - at(vdata, i - di, j - dj, k - dk));
          return at(vdata, i + di, j + dj, k + dk) - at(vdata, i, j, k);
        };
        for (int b = 0; b < 2; ++b)
          for (int e = 0; e < 2; ++e) {
            const double wy = b ? c.fy : 1.0 - c.fy, wz = e ? c.fz : 1.0 - c.fz;
            if (wy * wz != 0.0) du += wy * wz * slope(0, c.i0, c.j0 + b, c.k0 + e, c.fx);
            const double wx = b ? c.fx : 1.0 - c.fx;
            if (wx * wz != 0.0) dv += wx * wz * slope(1, c.i0 + b, c.j0, c.k0 + e, c.fy);
            const double wy2 = e ? c.fy : 1.0 - c.fy;
            if (wx * wy2 != 0.0) ds += wx * wy2 * slope(2, c.i0 + b, c.j0 + e, c.k0, c.fz);
          }
      }
      if (gc) {
        gc[3 * p + 0] += g * du * sx;
        gc[3 * p + 1] += g * dv * sy;
        gc[3 * p + 2] += g * ds * sz;
      }
    }
  });
}

namespace {

// Clipped running-window sum along one axis of an [n0,n1,n2] block.
void box_pass(const double* in, double* out, const std::size_t n[3], int axis, std::size_t r) {
  const std::size_t len = n[axis];
  std::size_t stride = 1;
  for (int a = axis + 1; a < 3; ++a) stride *= n[a];
  const std::size_t total = n[0] * n[1] * n[2];
  std::vector<double> prefix(len + 1);
  for (std::size_t base = 0; base < total; ++base) {
    // base must be the first element of a line along `axis`
    if ((base / stride) % len != 0) continue;
    prefix[0] = 0.0;
    for (std::size_t t = 0; t < len; ++t) prefix[t + 1] = prefix[t] + in[base + t * stride];
    for (std::size_t t = 0; t < len; ++t) {
      const std::size_t lo = t >= r ? t - r : 0;
      const std::size_t hi = std::min(len, t + r + 1);
      out[base + t * stride] = prefix[hi] - prefix[lo];
    }
  }
}

NdArray box_apply(const NdArray& x, std::size_t r) {
  const std::size_t n[3] = {x.shape()[0], x.shape()[1], x.shape()[2]};
  NdArray a(x.shape()), b(x.shape());
  box_pass(x.ptr(), a.ptr(), n, 0, r);
  box_pass(a.ptr(), b.ptr(), n, 1, r);
  box_pass(b.ptr(), a.ptr(), n, 2, r);
  return a;
}

}  // namespace

Var box_sum3d(const Var& x, std::size_t radius) {
  require_rank("box_sum3d", x, 3);
  NdArray out = box_apply(x.value(), radius);
  return x.tape().record("box_sum3d", std::move(out), {x}, [radius](Node& self) {
    Node& in = input(self, 0);
    if (!in.requires_grad) return;
    // The clipped window operator is symmetric, so it is its own adjoint.
    in.add_grad(box_apply(self.grad, radius));
  });
}

}  // namespace c2freg::ad
