// Test-only oracles, independent of the library's evaluation paths:
// quadrature, closed-form Gaussian identities, brute-force statistics.
#pragma once

#include <pvi/common.hpp>

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

namespace oracle {

//! 64-node Gauss-Legendre on [a, b].
inline double gauss_legendre(const std::function<double(double)>& f, double a, double b) {
  static const int kN = 64;
  static std::vector<double> nodes, weights;
  if (nodes.empty()) {
    // Newton iteration on Legendre P_64 roots.
    nodes.resize(kN);
    weights.resize(kN);
    for (int i = 0; i < kN; ++i) {
      double x = std::cos(M_PI * (i + 0.75) / (kN + 0.5));
      for (int it = 0; it < 100; ++it) {
        double p0 = 1.0, p1 = x;
        for (int k = 2; k <= kN; ++k) {
          const double pk = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
          p0 = p1;
          p1 = pk;
        }
        const double dp = kN * (x * p1 - p0) / (x * x - 1.0);
        const double dx = p1 / dp;
        x -= dx;
        if (std::abs(dx) < 1e-15) {
          p0 = 1.0;
          p1 = x;
          for (int k = 2; k <= kN; ++k) {
            const double pk = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
            p0 = p1;
            p1 = pk;
          }
          const double d = kN * (x * p1 - p0) / (x * x - 1.0);
          weights[i] = 2.0 / ((1.0 - x * x) * d * d);
          break;
        }
      }
      nodes[i] = x;
    }
  }
  const double mid = 0.5 * (a + b), half = 0.5 * (b - a);
  double s = 0.0;
  for (int i = 0; i < kN; ++i) s += weights[i] * f(mid + half * nodes[i]);
  return s * half;
}

//! Composite quadrature with interior breakpoints (integrand may kink there).
inline double integrate(const std::function<double(double)>& f, std::vector<double> breaks) {
  std::sort(breaks.begin(), breaks.end());
  double s = 0.0;
  for (size_t i = 0; i + 1 < breaks.size(); ++i)
    if (breaks[i + 1] > breaks[i]) s += gauss_legendre(f, breaks[i], breaks[i + 1]);
  return s;
}

inline double normal_pdf(double x, double mu = 0.0, double sigma = 1.0) {
  const double z = (x - mu) / sigma;
  return std::exp(-0.5 * z * z) / (sigma * std::sqrt(2.0 * M_PI));
}

inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

//! Closed-form CRPS of a normal forecast N(mu, sigma) against outcome y.
inline double crps_normal(double mu, double sigma, double y) {
  const double z = (y - mu) / sigma;
  return sigma * (z * (2.0 * normal_cdf(z) - 1.0) + 2.0 * normal_pdf(z) - 1.0 / std::sqrt(M_PI));
}

//! d(-CRPS)/dmu for a normal forecast: 2 Phi((y-mu)/sigma) - 1.
inline double neg_crps_dmu(double mu, double sigma, double y) {
  return 2.0 * normal_cdf((y - mu) / sigma) - 1.0;
}

//! Conjugate normal location model with unit observation noise and
//! N(m0, s0) prior: posterior moments and log evidence.
struct ConjugateNormal {
  double post_mean = 0.0;
  double post_sd = 0.0;
  double log_evidence = 0.0;
};

inline ConjugateNormal conjugate_normal(const std::vector<double>& y, double m0, double s0) {
  const double n = static_cast<double>(y.size());
  double sum = 0.0;
  for (double v : y) sum += v;
  const double prec = 1.0 / (s0 * s0) + n;
  ConjugateNormal c;
  c.post_mean = (m0 / (s0 * s0) + sum) / prec;
  c.post_sd = 1.0 / std::sqrt(prec);
  // log p(y) = log N(y; m0 1, I + s0^2 J) computed sequentially.
  double mu = m0, var = s0 * s0;
  double le = 0.0;
  for (double v : y) {
    le += -0.5 * std::log(2.0 * M_PI * (var + 1.0)) - 0.5 * (v - mu) * (v - mu) / (var + 1.0);
    const double k = var / (var + 1.0);
    mu += k * (v - mu);
    var = var * 1.0 / (var + 1.0);
  }
  c.log_evidence = le;
  return c;
}

//! Brute-force two-sample KS via direct ECDF evaluation on pooled points.
inline double ks_bruteforce(const std::vector<double>& a, const std::vector<double>& b) {
  std::vector<double> pool = a;
  pool.insert(pool.end(), b.begin(), b.end());
  double ks = 0.0;
  for (double v : pool) {
    double fa = 0.0, fb = 0.0;
    for (double x : a) fa += (x <= v) ? 1.0 : 0.0;
    for (double x : b) fb += (x <= v) ? 1.0 : 0.0;
    ks = std::max(ks, std::abs(fa / a.size() - fb / b.size()));
  }
  return ks;
}

struct Moments {
  double mean = 0.0;
  double sd = 0.0;
  double se = 0.0;
};

inline Moments moments(const std::vector<double>& xs) {
  Moments m;
  const double n = static_cast<double>(xs.size());
  for (double x : xs) m.mean += x;
  m.mean /= n;
  double ss = 0.0;
  for (double x : xs) ss += (x - m.mean) * (x - m.mean);
  m.sd = std::sqrt(ss / std::max(1.0, n - 1.0));
  m.se = m.sd / std::sqrt(n);
  return m;
}

}  // namespace oracle
