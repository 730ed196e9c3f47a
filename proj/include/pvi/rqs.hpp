#pragma once

#include "pvi/common.hpp"
#include "pvi/dual.hpp"

#include <algorithm>
#include <vector>

namespace pvi::rqs {

//! Minimum bin fraction; keeps softmax-derived widths/heights away from zero.
inline constexpr double kMinBinFraction = 1e-3;

//! softplus shift so a zero raw parameter maps to slope exactly 1.
inline const double kSlopeShift = std::log(std::exp(1.0) - 1.0);

template <class S>
struct Knots {
  std::vector<S> x;  // K+1 knot locations on [-B, B]
  std::vector<S> y;  // K+1 knot images
  std::vector<S> d;  // K+1 slopes, d[0] = d[K] = 1 (identity tails)
  double bound = 0.0;
  int bins() const { return static_cast<int>(x.size()) - 1; }
};

template <class S>
S generic_softplus(S v) {
  using std::exp;
  using std::log1p;
  if (value_of(v) > 0.0) return v + log1p(exp(-v));
  return log1p(exp(v));
}

//! Normalized bin fractions: min fraction plus softmax of the raw vector.
template <class S>
std::vector<S> bin_fractions(std::span<const S> raw) {
  using std::exp;
  const int k = static_cast<int>(raw.size());
  double m = value_of(raw[0]);
  for (const S& r : raw) m = std::max(m, value_of(r));
  std::vector<S> f(k);
  S total = 0.0;
  for (int i = 0; i < k; ++i) {
    f[i] = exp(raw[i] - S(m));
    total += f[i];
  }
  const double scale = 1.0 - k * kMinBinFraction;
  for (int i = 0; i < k; ++i) f[i] = S(kMinBinFraction) + S(scale) * (f[i] / total);
  return f;
}

//! Knot grid from unconstrained parameters. raw_w and raw_h have K entries,
//! raw_d has K-1 (interior slopes); boundary slopes are pinned to 1 so the
//! transform continues smoothly into the identity tails. All-zero raw
//! parameters give the identity map on [-B, B].
template <class S>
Knots<S> build_knots(std::span<const S> raw_w, std::span<const S> raw_h,
                     std::span<const S> raw_d, double bound) {
  const int k = static_cast<int>(raw_w.size());
  expect(k >= 2, "rqs: need at least 2 bins");
  expect(static_cast<int>(raw_h.size()) == k, "rqs: widths/heights size mismatch");
  expect(static_cast<int>(raw_d.size()) == k - 1, "rqs: slope raw size must be K-1");
  Knots<S> kn;
  kn.bound = bound;
  kn.x.resize(k + 1);
  kn.y.resize(k + 1);
  kn.d.resize(k + 1);
  const std::vector<S> fw = bin_fractions(raw_w);
  const std::vector<S> fh = bin_fractions(raw_h);
  kn.x[0] = S(-bound);
  kn.y[0] = S(-bound);
  for (int i = 0; i < k; ++i) {
    kn.x[i + 1] = kn.x[i] + S(2.0 * bound) * fw[i];
    kn.y[i + 1] = kn.y[i] + S(2.0 * bound) * fh[i];
  }
  kn.x[k] = S(bound);  // pin the endpoints against accumulated rounding
  kn.y[k] = S(bound);
  kn.d[0] = S(1.0);
  kn.d[k] = S(1.0);
  for (int i = 1; i < k; ++i) kn.d[i] = generic_softplus(raw_d[i - 1] + S(kSlopeShift));
  return kn;
}

//! Bin index such that x lies in [x_k, x_{k+1}); clamps to the edge bins.
template <class S>
int find_bin(const Knots<S>& kn, double x) {
  const int k = kn.bins();
  int lo = 0;
  int hi = k;  // invariant: x >= x[lo], x < x[hi] (after clamping)
  if (x <= value_of(kn.x[0])) return 0;
  if (x >= value_of(kn.x[k])) return k - 1;
  while (hi - lo > 1) {
    const int mid = (lo + hi) / 2;
    if (x < value_of(kn.x[mid]))
      hi = mid;
    else
      lo = mid;
  }
  return lo;
}

template <class S>
int find_bin_by_y(const Knots<S>& kn, double y) {
  const int k = kn.bins();
  int lo = 0;
  int hi = k;
  if (y <= value_of(kn.y[0])) return 0;
  if (y >= value_of(kn.y[k])) return k - 1;
  while (hi - lo > 1) {
    const int mid = (lo + hi) / 2;
    if (y < value_of(kn.y[mid]))
      hi = mid;
    else
      lo = mid;
  }
  return lo;
}

//! Monotone rational-quadratic segment on one bin.
template <class S>
S segment_forward(S xlo, S xhi, S ylo, S yhi, S dlo, S dhi, S x) {
  const S w = xhi - xlo;
  const S h = yhi - ylo;
  const S slope = h / w;
  const S xi = (x - xlo) / w;
  const S omx = S(1.0) - xi;
  const S denom = slope + (dhi + dlo - S(2.0) * slope) * xi * omx;
  return ylo + h * (slope * xi * xi + dlo * xi * omx) / denom;
}

template <class S>
S segment_deriv(S xlo, S xhi, S ylo, S yhi, S dlo, S dhi, S x) {
  const S w = xhi - xlo;
  const S h = yhi - ylo;
  const S slope = h / w;
  const S xi = (x - xlo) / w;
  const S omx = S(1.0) - xi;
  const S denom = slope + (dhi + dlo - S(2.0) * slope) * xi * omx;
  return slope * slope * (dhi * xi * xi + S(2.0) * slope * xi * omx + dlo * omx * omx) /
         (denom * denom);
}

//! Inverse of segment_forward: the root in [0, 1] of the quadratic in xi.
template <class S>
S segment_inverse(S xlo, S xhi, S ylo, S yhi, S dlo, S dhi, S y) {
  using std::sqrt;
  const S w = xhi - xlo;
  const S h = yhi - ylo;
  const S slope = h / w;
  const S delta = y - ylo;
  const S dstar = dhi + dlo - S(2.0) * slope;
  const S a = h * (slope - dlo) + delta * dstar;
  const S b = h * dlo - delta * dstar;
  const S c = S(-1.0) * slope * delta;
  const S xi = S(2.0) * c / (S(-1.0) * b - sqrt(b * b - S(4.0) * a * c));
  return xlo + xi * w;
}

template <class S>
S forward(const Knots<S>& kn, S x) {
  const double xv = value_of(x);
  if (xv <= -kn.bound || xv >= kn.bound) return x;  // identity tails
  const int k = find_bin(kn, xv);
  return segment_forward(kn.x[k], kn.x[k + 1], kn.y[k], kn.y[k + 1], kn.d[k], kn.d[k + 1], x);
}

template <class S>
S forward_deriv(const Knots<S>& kn, S x) {
  const double xv = value_of(x);
  if (xv <= -kn.bound || xv >= kn.bound) return S(1.0);
  const int k = find_bin(kn, xv);
  return segment_deriv(kn.x[k], kn.x[k + 1], kn.y[k], kn.y[k + 1], kn.d[k], kn.d[k + 1], x);
}

template <class S>
S inverse(const Knots<S>& kn, S y) {
  const double yv = value_of(y);
  if (yv <= -kn.bound || yv >= kn.bound) return y;
  const int k = find_bin_by_y(kn, yv);
  return segment_inverse(kn.x[k], kn.x[k + 1], kn.y[k], kn.y[k + 1], kn.d[k], kn.d[k + 1], y);
}

//! Jacobian of the knot grid with respect to the raw parameter vector,
//! computed once per parameter point and reused across draws.
struct KnotJacobian {
  Knots<double> knots;
  Mat dx;  // (K+1) x P
  Mat dy;  // (K+1) x P
  Mat dd;  // (K+1) x P
};

inline KnotJacobian build_knot_jacobian(std::span<const double> raw_w,
                                        std::span<const double> raw_h,
                                        std::span<const double> raw_d, double bound) {
  const int k = static_cast<int>(raw_w.size());
  const int p = 3 * k - 1;
  KnotJacobian jac;
  std::vector<Dual> w(raw_w.begin(), raw_w.end());
  std::vector<Dual> h(raw_h.begin(), raw_h.end());
  std::vector<Dual> d(raw_d.begin(), raw_d.end());
  jac.dx = Mat::Zero(k + 1, p);
  jac.dy = Mat::Zero(k + 1, p);
  jac.dd = Mat::Zero(k + 1, p);
  for (int pi = 0; pi < p; ++pi) {
    Dual* seeded = pi < k ? &w[pi] : (pi < 2 * k ? &h[pi - k] : &d[pi - 2 * k]);
    seeded->d = 1.0;
    const Knots<Dual> kn = build_knots<Dual>(w, h, d, bound);
    seeded->d = 0.0;
    for (int i = 0; i <= k; ++i) {
      jac.dx(i, pi) = kn.x[i].d;
      jac.dy(i, pi) = kn.y[i].d;
      jac.dd(i, pi) = kn.d[i].d;
    }
    if (pi == 0) {
      jac.knots.bound = bound;
      jac.knots.x.resize(k + 1);
      jac.knots.y.resize(k + 1);
      jac.knots.d.resize(k + 1);
      for (int i = 0; i <= k; ++i) {
        jac.knots.x[i] = kn.x[i].v;
        jac.knots.y[i] = kn.y[i].v;
        jac.knots.d[i] = kn.d[i].v;
      }
    }
  }
  return jac;
}

//! Partial derivatives of a per-bin scalar function with respect to the six
//! local knot coordinates, pushed through the knot Jacobian to give the
//! gradient with respect to the raw parameter vector.
template <class LocalFn>
Vec chain_local(const KnotJacobian& jac, int bin, LocalFn&& fn) {
  const Knots<double>& kn = jac.knots;
  Dual coords[6] = {kn.x[bin], kn.x[bin + 1], kn.y[bin],
                    kn.y[bin + 1], kn.d[bin], kn.d[bin + 1]};
  double partials[6];
  for (int s = 0; s < 6; ++s) {
    coords[s].d = 1.0;
    partials[s] = fn(coords[0], coords[1], coords[2], coords[3], coords[4], coords[5]).d;
    coords[s].d = 0.0;
  }
  Vec grad = partials[0] * jac.dx.row(bin).transpose() +
             partials[1] * jac.dx.row(bin + 1).transpose() +
             partials[2] * jac.dy.row(bin).transpose() +
             partials[3] * jac.dy.row(bin + 1).transpose() +
             partials[4] * jac.dd.row(bin).transpose() +
             partials[5] * jac.dd.row(bin + 1).transpose();
  return grad;
}

}  // namespace pvi::rqs
