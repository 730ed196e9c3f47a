#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace pvi {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

//! Precondition / dimension-contract violation.
struct ContractError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

//! Invalid run configuration (rejected before any iteration runs).
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

//! Failure during an otherwise valid run (tolerance breach, bound violation).
struct RuntimeFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline void expect(bool cond, const std::string& msg) {
  if (!cond) throw ContractError(msg);
}

inline bool all_finite(const Vec& v) {
  return v.allFinite();
}

inline constexpr double kLog2Pi = 1.8378770664093454836;
inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

//! log(1 + exp(x)) without overflow.
inline double log1pexp(double x) {
  if (x > 0.0) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

inline double softplus(double x) { return log1pexp(x); }

inline double logistic(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline double logsumexp(std::span<const double> xs) {
  double m = kNegInf;
  for (double x : xs) m = std::max(m, x);
  if (!std::isfinite(m)) return m;  // all -inf (or a nan propagates below)
  double s = 0.0;
  for (double x : xs) s += std::exp(x - m);
  return m + std::log(s);
}

inline double normal_logpdf(double x, double mu, double sigma) {
  const double z = (x - mu) / sigma;
  return -0.5 * z * z - std::log(sigma) - 0.5 * kLog2Pi;
}

inline double normal_cdf(double x) {
  return 0.5 * std::erfc(-x / std::sqrt(2.0));
}

//! Deterministic stream-splittable random source.
//!
//! Draw primitives are hand-rolled on top of mt19937_64 so that sequences
//! depend only on the seed (binomial is the one exception; it delegates to
//! the standard library for large trial counts).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(mix(seed, 0x9e3779b97f4a7c15ull)), seed_(seed) {}

  //! splitmix64-style combiner used to derive independent substreams.
  static std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
    std::uint64_t z = a + 0x9e3779b97f4a7c15ull * (b + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  //! Independent child stream; deterministic in (seed, stream).
  Rng substream(std::uint64_t stream) const { return Rng(mix(seed_, stream)); }

  std::uint64_t raw() { return engine_(); }

  //! Uniform on [0, 1).
  double uniform() { return static_cast<double>(raw() >> 11) * 0x1.0p-53; }

  //! Standard normal (Box-Muller, one cached value).
  double normal() {
    if (has_cached_) {
      has_cached_ = false;
      return cached_;
    }
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * M_PI * u2;
    cached_ = r * std::sin(a);
    has_cached_ = true;
    return r * std::cos(a);
  }

  //! Uniform integer in {0, ..., n-1} by masked rejection.
  int uniform_int(int n) {
    expect(n > 0, "uniform_int: n must be positive");
    const std::uint64_t un = static_cast<std::uint64_t>(n);
    std::uint64_t mask = ~0ull;
    int bits = 64;
    while ((mask >> 1) >= un - 1 && bits > 1) {
      mask >>= 1;
      --bits;
    }
    for (;;) {
      const std::uint64_t v = raw() & mask;
      if (v < un) return static_cast<int>(v);
    }
  }

  int binomial(int n, double p) {
    expect(n >= 0 && p >= 0.0 && p <= 1.0, "binomial: invalid parameters");
    if (n <= 64) {
      int k = 0;
      for (int i = 0; i < n; ++i) k += (uniform() < p) ? 1 : 0;
      return k;
    }
    std::binomial_distribution<int> dist(n, p);
    return dist(engine_);
  }

  Vec normal_vec(int dim) {
    Vec v(dim);
    for (int i = 0; i < dim; ++i) v[i] = normal();
    return v;
  }

  Vec uniform_vec(int dim) {
    Vec v(dim);
    for (int i = 0; i < dim; ++i) v[i] = uniform();
    return v;
  }

  //! k distinct indices from {0..n-1} in draw order (partial Fisher-Yates).
  std::vector<int> sample_without_replacement(int n, int k) {
    expect(0 < k && k <= n, "sample_without_replacement: need 0 < k <= n");
    std::vector<int> pool(n);
    for (int i = 0; i < n; ++i) pool[i] = i;
    std::vector<int> out(k);
    for (int i = 0; i < k; ++i) {
      const int j = i + uniform_int(n - i);
      std::swap(pool[i], pool[j]);
      out[i] = pool[i];
    }
    return out;
  }

 private:
  std::mt19937_64 engine_;
  std::uint64_t seed_;
  double cached_ = 0.0;
  bool has_cached_ = false;
};

}  // namespace pvi
