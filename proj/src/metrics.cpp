#include "c2freg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace c2freg {

namespace {

void require_same_dims(const LabelVolume& a, const LabelVolume& b, const char* who) {
  if (a.dims() != b.dims())
    throw std::invalid_argument(std::string(who) + ": dims mismatch " + dims_str(a.dims()) +
                                " vs " + dims_str(b.dims()));
}

constexpr double kInf = std::numeric_limits<double>::infinity();

// Exact 1D squared distance transform (lower envelope of parabolas).
void edt_1d(const double* f, double* d, std::size_t n, std::size_t stride, std::vector<double>& buf_f,
            std::vector<long>& v, std::vector<double>& z) {
  buf_f.resize(n);
  for (std::size_t i = 0; i < n; ++i) buf_f[i] = f[i * stride];
  v.assign(n, 0);
  z.assign(n + 1, 0.0);
  long k = -1;
  for (std::size_t q = 0; q < n; ++q) {
    if (buf_f[q] == kInf) continue;
    const double fq = buf_f[q] + static_cast<double>(q * q);
    while (k >= 0) {
      const long p = v[k];
      const double s = (fq - (buf_f[p] + static_cast<double>(p * p))) /
                       (2.0 * static_cast<double>(static_cast<long>(q) - p));
      if (s <= z[k]) {
        --k;
        continue;
      }
      v[++k] = static_cast<long>(q);
      z[k] = s;
      z[k + 1] = kInf;
      break;
    }
    if (k < 0) {
      k = 0;
      v[0] = static_cast<long>(q);
      z[0] = -kInf;
      z[1] = kInf;
    }
  }
  if (k < 0) {
    for (std::size_t i = 0; i < n; ++i) d[i * stride] = kInf;
    return;
  }
  long j = 0;
  for (std::size_t q = 0; q < n; ++q) {
    while (z[j + 1] < static_cast<double>(q)) ++j;
    const double diff = static_cast<double>(static_cast<long>(q) - v[j]);
    d[q * stride] = diff * diff + buf_f[v[j]];
  }
}

// Squared Euclidean distance from every voxel to the nearest seed voxel.
std::vector<double> squared_edt(const Dims& dims, const std::vector<char>& seeds) {
  std::vector<double> g(dims.count());
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = seeds[i] ? 0.0 : kInf;
  std::vector<double> out(g.size()), bf, z;
  std::vector<long> v;
  const std::size_t sh = dims.w * dims.d, sw = dims.d;
  // axis d
  for (std::size_t i = 0; i < dims.h; ++i)
    for (std::size_t j = 0; j < dims.w; ++j) {
      const std::size_t base = i * sh + j * sw;
      edt_1d(&g[base], &out[base], dims.d, 1, bf, v, z);
    }
  g.swap(out);
  // axis w
  for (std::size_t i = 0; i < dims.h; ++i)
    for (std::size_t k = 0; k < dims.d; ++k) {
      const std::size_t base = i * sh + k;
      edt_1d(&g[base], &out[base], dims.w, sw, bf, v, z);
    }
  g.swap(out);
  // axis h
  for (std::size_t j = 0; j < dims.w; ++j)
    for (std::size_t k = 0; k < dims.d; ++k) {
      const std::size_t base = j * sw + k;
      edt_1d(&g[base], &out[base], dims.h, sh, bf, v, z);
    }
  return out;
}

}  // namespace

double dice_score(const LabelVolume& a, const LabelVolume& b, Label label) {
  require_same_dims(a, b, "dice_score");
  std::size_t na = 0, nb = 0, both = 0;
  for (std::size_t i = 0; i < a.labels().size(); ++i) {
    const bool ia = a.labels()[i] == label, ib = b.labels()[i] == label;
    na += ia;
    nb += ib;
    both += ia && ib;
  }
  if (na == 0 && nb == 0) return 1.0;
  return 2.0 * static_cast<double>(both) / static_cast<double>(na + nb);
}

double dsc30(std::span<const double> scores) {
  if (scores.empty()) throw std::invalid_argument("dsc30: empty score list");
  std::vector<double> s(scores.begin(), scores.end());
  std::sort(s.begin(), s.end());
  const auto n = static_cast<std::size_t>(std::ceil(0.3 * static_cast<double>(s.size()) - 1e-12));
  const std::size_t m = std::max<std::size_t>(n, 1);
  return std::accumulate(s.begin(), s.begin() + static_cast<long>(m), 0.0) / static_cast<double>(m);
}

std::vector<std::array<long, 3>> boundary_voxels(const LabelVolume& lv, Label label) {
  const Dims& d = lv.dims();
  std::vector<std::array<long, 3>> out;
  const long H = static_cast<long>(d.h), W = static_cast<long>(d.w), D = static_cast<long>(d.d);
  auto inside = [&](long i, long j, long k) {
    if (i < 0 || j < 0 || k < 0 || i >= H || j >= W || k >= D) return false;
    return lv.at(static_cast<std::size_t>(i), static_cast<std::size_t>(j),
                 static_cast<std::size_t>(k)) == label;
  };
  for (long i = 0; i < H; ++i)
    for (long j = 0; j < W; ++j)
      for (long k = 0; k < D; ++k) {
        if (!inside(i, j, k)) continue;
        if (!inside(i - 1, j, k) || !inside(i + 1, j, k) || !inside(i, j - 1, k) ||
            !inside(i, j + 1, k) || !inside(i, j, k - 1) || !inside(i, j, k + 1))
          out.push_back({i, j, k});
      }
  return out;
}

double global_ncc(const Volume3D& a, const Volume3D& b) {
  if (a.dims() != b.dims())
    throw std::invalid_argument("global_ncc: dims differ, " + dims_str(a.dims()) + " vs " +
                                dims_str(b.dims()));
  const auto& x = a.values();
  const auto& y = b.values();
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) throw std::invalid_argument("global_ncc: constant volume");
  return sxy / std::sqrt(sxx * syy);
}

double percentile(std::vector<double> values, double p) {
  if (values.empty()) throw std::invalid_argument("percentile: no values");
  if (!(p >= 0.0 && p <= 100.0)) throw std::invalid_argument("percentile: p outside [0,100]");
  std::sort(values.begin(), values.end());
  const double rank = static_cast<double>(values.size() - 1) * p / 100.0;
  const auto lo = static_cast<std::size_t>(std::floor(rank));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  const double frac = rank - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

std::optional<double> hd95(const LabelVolume& a, const LabelVolume& b, Label label) {
  require_same_dims(a, b, "hd95");
  const auto ba = boundary_voxels(a, label);
  const auto bb = boundary_voxels(b, label);
  if (ba.empty() || bb.empty()) return std::nullopt;
  const Dims& dims = a.dims();
  auto seeds = [&](const std::vector<std::array<long, 3>>& pts) {
    std::vector<char> s(dims.count(), 0);
    for (const auto& p : pts)
      s[(static_cast<std::size_t>(p[0]) * dims.w + static_cast<std::size_t>(p[1])) * dims.d +
        static_cast<std::size_t>(p[2])] = 1;
    return s;
  };
  const std::vector<double> to_b = squared_edt(dims, seeds(bb));
  const std::vector<double> to_a = squared_edt(dims, seeds(ba));
  std::vector<double> dist;
  dist.reserve(ba.size() + bb.size());
  auto flat = [&](const std::array<long, 3>& p) {
    return (static_cast<std::size_t>(p[0]) * dims.w + static_cast<std::size_t>(p[1])) * dims.d +
           static_cast<std::size_t>(p[2]);
  };
  for (const auto& p : ba) dist.push_back(std::sqrt(to_b[flat(p)]));
  for (const auto& p : bb) dist.push_back(std::sqrt(to_a[flat(p)]));
  return percentile(std::move(dist), 95.0);
}

double CaseResult::mean_dice() const {
  if (dice.empty()) return 0.0;
  return std::accumulate(dice.begin(), dice.end(), 0.0) / static_cast<double>(dice.size());
}

std::optional<double> CaseResult::mean_hd95() const {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& h : hd95)
    if (h) {
      sum += *h;
      ++n;
    }
  if (n == 0) return std::nullopt;
  return sum / static_cast<double>(n);
}

CaseResult score_labels(const LabelVolume& fixed, const LabelVolume& warped, std::string id) {
  require_same_dims(fixed, warped, "score_labels");
  CaseResult r;
  r.id = std::move(id);
  for (std::size_t l = 1; l <= fixed.num_structures(); ++l) {
    const auto label = static_cast<Label>(l);
    r.dice.push_back(dice_score(fixed, warped, label));
    r.hd95.push_back(hd95(fixed, warped, label));
  }
  return r;
}

CaseResult evaluate_case(const LabelVolume& fixed, const LabelVolume& moving, const AffineMatrix& a,
                         std::string id) {
  return score_labels(fixed, warp_labels(moving, a, fixed.dims()), std::move(id));
}

}  // namespace c2freg
