#pragma once

#include "pvi/common.hpp"
#include "pvi/param_vector.hpp"
#include "pvi/rqs.hpp"

#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace pvi {

//! Diagonal Gaussian prior over the model parameters.
struct GaussianPrior {
  Vec mean;
  Vec scale;

  void validate(int dim) const {
    expect(mean.size() == dim && scale.size() == dim, "prior: dimension mismatch");
    expect((scale.array() > 0.0).all(), "prior: non-positive scale");
  }

  double log_density(const Vec& theta) const {
    double s = 0.0;
    for (int i = 0; i < theta.size(); ++i) s += normal_logpdf(theta[i], mean[i], scale[i]);
    return s;
  }

  Vec grad_log_density(const Vec& theta) const {
    return -((theta - mean).array() / scale.array().square()).matrix();
  }
};

struct KlResult {
  double value = 0.0;
  Vec grad;
  double mc_se = 0.0;   // 0 for closed forms
  bool analytic = true;
};

//! A family evaluated at a fixed parameter point. Immutable; holds whatever
//! precomputation the family wants to share across draws.
class FamilyEval {
 public:
  virtual ~FamilyEval() = default;
  virtual Vec sample(const Vec& u) const = 0;
  virtual double log_density(const Vec& theta) const = 0;
  //! cotangent^T d T_phi(u) / d phi.
  virtual Vec pathwise_jvp(const Vec& u, const Vec& cotangent) const = 0;
  //! d log q_phi(theta) / d phi at fixed theta (score function).
  virtual Vec grad_logq_phi(const Vec& theta) const = 0;
  //! d log q_phi(theta) / d theta.
  virtual Vec grad_logq_theta(const Vec& theta) const = 0;
};

//! Reparameterized variational family q_phi(theta).
class Family {
 public:
  virtual ~Family() = default;

  virtual std::string name() const = 0;
  virtual int theta_dim() const = 0;
  virtual int noise_dim() const = 0;
  virtual ParamLayout layout() const = 0;
  virtual Vec init_params() const { return Vec::Zero(layout().dim()); }
  virtual Vec sample_base(Rng& rng) const = 0;

  //! Bind to a parameter point. Validates phi.
  virtual std::unique_ptr<const FamilyEval> at(const Vec& phi) const = 0;

  //! KL(q_phi || prior) with gradient. Closed form where available, otherwise
  //! a reparameterized Monte Carlo estimate of size mc_size.
  virtual KlResult kl_to_gaussian_prior(const Vec& phi, const GaussianPrior& prior,
                                        int mc_size, Rng* rng) const;

  //! Marginal standard deviations of theta under q_phi.
  virtual Vec theta_stds(const Vec& phi, int mc_draws, Rng* rng) const = 0;
  virtual Vec theta_means(const Vec& phi, int mc_draws, Rng* rng) const = 0;

  // One-shot conveniences.
  Vec sample_reparam(const Vec& phi, const Vec& u) const {
    expect(u.size() == noise_dim(), "sample_reparam: noise dimension mismatch");
    return at(phi)->sample(u);
  }
  double log_density(const Vec& phi, const Vec& theta) const {
    expect(theta.size() == theta_dim(), "log_density: theta dimension mismatch");
    return at(phi)->log_density(theta);
  }
  Vec pathwise_jvp(const Vec& phi, const Vec& u, const Vec& cotangent) const {
    expect(u.size() == noise_dim() && cotangent.size() == theta_dim(),
           "pathwise_jvp: dimension mismatch");
    return at(phi)->pathwise_jvp(u, cotangent);
  }
  Vec grad_logq_wrt_phi(const Vec& phi, const Vec& theta) const {
    expect(theta.size() == theta_dim(), "grad_logq_wrt_phi: theta dimension mismatch");
    return at(phi)->grad_logq_phi(theta);
  }

 protected:
  void check_phi(const Vec& phi) const {
    expect(phi.size() == layout().dim(), "family: phi dimension mismatch");
    expect(all_finite(phi), "family: non-finite phi");
  }
};

// ---------------------------------------------------------------------------
// Diagonal Gaussian
// ---------------------------------------------------------------------------

class GaussianDiagFamily final : public Family {
 public:
  explicit GaussianDiagFamily(int dim) : dim_(dim) { expect(dim >= 1, "dim must be >= 1"); }

  std::string name() const override { return "gaussian_diag"; }
  int theta_dim() const override { return dim_; }
  int noise_dim() const override { return dim_; }
  ParamLayout layout() const override {
    return ParamLayout({{"mean", 0, dim_}, {"log_scale", dim_, dim_}});
  }
  Vec sample_base(Rng& rng) const override { return rng.normal_vec(dim_); }

  std::unique_ptr<const FamilyEval> at(const Vec& phi) const override;

  KlResult kl_to_gaussian_prior(const Vec& phi, const GaussianPrior& prior, int,
                                Rng*) const override {
    check_phi(phi);
    prior.validate(dim_);
    const auto mu = phi.head(dim_);
    const Vec sigma = phi.tail(dim_).array().exp().matrix();
    KlResult r;
    r.grad = Vec::Zero(2 * dim_);
    r.value = 0.0;
    for (int i = 0; i < dim_; ++i) {
      const double s2 = prior.scale[i] * prior.scale[i];
      const double dm = mu[i] - prior.mean[i];
      r.value += std::log(prior.scale[i] / sigma[i]) +
                 (sigma[i] * sigma[i] + dm * dm) / (2.0 * s2) - 0.5;
      r.grad[i] = dm / s2;
      r.grad[dim_ + i] = sigma[i] * sigma[i] / s2 - 1.0;
    }
    return r;
  }

  Vec theta_stds(const Vec& phi, int, Rng*) const override {
    check_phi(phi);
    return phi.tail(dim_).array().exp().matrix();
  }
  Vec theta_means(const Vec& phi, int, Rng*) const override {
    check_phi(phi);
    return phi.head(dim_);
  }

 private:
  int dim_;
};

class GaussianDiagEval final : public FamilyEval {
 public:
  GaussianDiagEval(Vec mu, Vec log_sigma)
      : mu_(std::move(mu)), log_sigma_(std::move(log_sigma)),
        sigma_(log_sigma_.array().exp().matrix()) {}

  Vec sample(const Vec& u) const override { return mu_ + sigma_.cwiseProduct(u); }

  double log_density(const Vec& theta) const override {
    double s = 0.0;
    for (int i = 0; i < theta.size(); ++i) s += normal_logpdf(theta[i], mu_[i], sigma_[i]);
    return s;
  }

  Vec pathwise_jvp(const Vec& u, const Vec& cot) const override {
    const int d = static_cast<int>(mu_.size());
    Vec g(2 * d);
    g.head(d) = cot;
    g.tail(d) = cot.cwiseProduct(sigma_).cwiseProduct(u);
    return g;
  }

  Vec grad_logq_phi(const Vec& theta) const override {
    const int d = static_cast<int>(mu_.size());
    const Vec z = (theta - mu_).cwiseQuotient(sigma_);
    Vec g(2 * d);
    g.head(d) = z.cwiseQuotient(sigma_);
    g.tail(d) = (z.array().square() - 1.0).matrix();
    return g;
  }

  Vec grad_logq_theta(const Vec& theta) const override {
    return -(theta - mu_).cwiseQuotient(sigma_.cwiseProduct(sigma_));
  }

 private:
  Vec mu_, log_sigma_, sigma_;
};

inline std::unique_ptr<const FamilyEval> GaussianDiagFamily::at(const Vec& phi) const {
  check_phi(phi);
  return std::make_unique<GaussianDiagEval>(phi.head(dim_), phi.tail(dim_));
}

// ---------------------------------------------------------------------------
// Dense (full-rank) Gaussian via an unconstrained Cholesky factor
// ---------------------------------------------------------------------------

class GaussianDenseFamily final : public Family {
 public:
  explicit GaussianDenseFamily(int dim) : dim_(dim) { expect(dim >= 1, "dim must be >= 1"); }

  std::string name() const override { return "gaussian_dense"; }
  int theta_dim() const override { return dim_; }
  int noise_dim() const override { return dim_; }
  int tril_size() const { return dim_ * (dim_ + 1) / 2; }
  ParamLayout layout() const override {
    return ParamLayout({{"mean", 0, dim_}, {"chol_raw", dim_, tril_size()}});
  }
  Vec sample_base(Rng& rng) const override { return rng.normal_vec(dim_); }

  //! Lower-triangular factor; diagonal entries are exp of the raw values.
  Mat cholesky_factor(const Vec& phi) const {
    Mat L = Mat::Zero(dim_, dim_);
    int k = dim_;
    for (int i = 0; i < dim_; ++i)
      for (int j = 0; j <= i; ++j, ++k) L(i, j) = (i == j) ? std::exp(phi[k]) : phi[k];
    return L;
  }

  std::unique_ptr<const FamilyEval> at(const Vec& phi) const override;

  KlResult kl_to_gaussian_prior(const Vec& phi, const GaussianPrior& prior, int,
                                Rng*) const override {
    check_phi(phi);
    prior.validate(dim_);
    const Mat L = cholesky_factor(phi);
    const auto mu = phi.head(dim_);
    KlResult r;
    r.grad = Vec::Zero(layout().dim());
    r.value = 0.0;
    for (int i = 0; i < dim_; ++i) {
      const double s2 = prior.scale[i] * prior.scale[i];
      const double dm = mu[i] - prior.mean[i];
      const double sig2 = L.row(i).squaredNorm();
      r.value += std::log(prior.scale[i]) - std::log(L(i, i)) + (sig2 + dm * dm) / (2.0 * s2) -
                 0.5;
      r.grad[i] = dm / s2;
    }
    int k = dim_;
    for (int i = 0; i < dim_; ++i) {
      const double s2 = prior.scale[i] * prior.scale[i];
      for (int j = 0; j <= i; ++j, ++k) {
        if (i == j)
          r.grad[k] = L(i, i) * L(i, i) / s2 - 1.0;  // chain rule through exp
        else
          r.grad[k] = L(i, j) / s2;
      }
    }
    return r;
  }

  Vec theta_stds(const Vec& phi, int, Rng*) const override {
    check_phi(phi);
    const Mat L = cholesky_factor(phi);
    return L.rowwise().norm();
  }
  Vec theta_means(const Vec& phi, int, Rng*) const override {
    check_phi(phi);
    return phi.head(dim_);
  }

 private:
  int dim_;
};

class GaussianDenseEval final : public FamilyEval {
 public:
  GaussianDenseEval(Vec mu, Mat L) : mu_(std::move(mu)), L_(std::move(L)) {
    log_det_ = L_.diagonal().array().log().sum();
  }

  Vec sample(const Vec& u) const override { return mu_ + L_ * u; }

  double log_density(const Vec& theta) const override {
    const Vec v = solve_lower(theta - mu_);
    return -0.5 * v.squaredNorm() - log_det_ - 0.5 * kLog2Pi * static_cast<double>(mu_.size());
  }

  Vec pathwise_jvp(const Vec& u, const Vec& cot) const override {
    const int d = static_cast<int>(mu_.size());
    Vec g(d + d * (d + 1) / 2);
    g.head(d) = cot;
    int k = d;
    for (int i = 0; i < d; ++i)
      for (int j = 0; j <= i; ++j, ++k)
        g[k] = (i == j) ? cot[i] * u[i] * L_(i, i) : cot[i] * u[j];
    return g;
  }

  Vec grad_logq_phi(const Vec& theta) const override {
    const int d = static_cast<int>(mu_.size());
    const Vec v = solve_lower(theta - mu_);
    const Vec w = solve_upper(v);  // L^-T v
    Vec g(d + d * (d + 1) / 2);
    g.head(d) = w;
    int k = d;
    for (int i = 0; i < d; ++i)
      for (int j = 0; j <= i; ++j, ++k) {
        const double dL = w[i] * v[j];  // d logq / d L_ij, minus 1/L_ii on the diagonal
        g[k] = (i == j) ? dL * L_(i, i) - 1.0 : dL;
      }
    return g;
  }

  Vec grad_logq_theta(const Vec& theta) const override {
    return -solve_upper(solve_lower(theta - mu_));
  }

 private:
  Vec solve_lower(const Vec& b) const {
    return L_.triangularView<Eigen::Lower>().solve(b);
  }
  Vec solve_upper(const Vec& b) const {
    return L_.transpose().triangularView<Eigen::Upper>().solve(b);
  }

  Vec mu_;
  Mat L_;
  double log_det_;
};

inline std::unique_ptr<const FamilyEval> GaussianDenseFamily::at(const Vec& phi) const {
  check_phi(phi);
  return std::make_unique<GaussianDenseEval>(phi.head(dim_), cholesky_factor(phi));
}

// ---------------------------------------------------------------------------
// 1-D monotone rational-quadratic spline flow, uniform(0,1) base
// ---------------------------------------------------------------------------

//! One-dimensional spline flow: theta = T_phi(u) with u ~ uniform(0,1) and
//! T_phi a monotone rational-quadratic spline on [-B, B] with identity tails.
//! Zero raw parameters give the identity map, so the flow starts at its base
//! distribution. The pushforward support is the interval (T(0), T(1)).
class Spline1dFamily final : public Family {
 public:
  explicit Spline1dFamily(int knots = 32, double bound = 10.0)
      : knots_(knots), bound_(bound) {
    expect(knots >= 2, "spline: need at least 2 knots");
    expect(bound > 1.0, "spline: bound must exceed 1 so the base support is interior");
  }

  std::string name() const override { return "spline1d"; }
  int theta_dim() const override { return 1; }
  int noise_dim() const override { return 1; }
  int knot_count() const { return knots_; }
  double bound() const { return bound_; }
  ParamLayout layout() const override {
    return ParamLayout({{"widths_raw", 0, knots_},
                        {"heights_raw", knots_, knots_},
                        {"derivs_raw", 2 * knots_, knots_ - 1}});
  }
  Vec sample_base(Rng& rng) const override { return rng.uniform_vec(1); }

  std::unique_ptr<const FamilyEval> at(const Vec& phi) const override;

  Vec theta_stds(const Vec& phi, int mc_draws, Rng* rng) const override;
  Vec theta_means(const Vec& phi, int mc_draws, Rng* rng) const override;

 private:
  int knots_;
  double bound_;
};

class Spline1dEval final : public FamilyEval {
 public:
  Spline1dEval(const Vec& phi, int knots, double bound) : knots_(knots) {
    std::vector<double> w(phi.data(), phi.data() + knots);
    std::vector<double> h(phi.data() + knots, phi.data() + 2 * knots);
    std::vector<double> d(phi.data() + 2 * knots, phi.data() + 3 * knots - 1);
    jac_ = rqs::build_knot_jacobian(w, h, d, bound);
    lo_ = rqs::forward(jac_.knots, 0.0);
    hi_ = rqs::forward(jac_.knots, 1.0);
  }

  Vec sample(const Vec& u) const override {
    return Vec::Constant(1, rqs::forward(jac_.knots, u[0]));
  }

  //! Pushforward density of uniform(0,1): q(theta) = 1 / T'(T^-1(theta)) on
  //! (T(0), T(1)), zero outside.
  double log_density(const Vec& theta) const override {
    const double y = theta[0];
    if (y <= lo_ || y >= hi_) return kNegInf;
    const double x = rqs::inverse(jac_.knots, y);
    return -std::log(rqs::forward_deriv(jac_.knots, x));
  }

  Vec pathwise_jvp(const Vec& u, const Vec& cot) const override {
    const double x = u[0];
    if (x <= -jac_.knots.bound || x >= jac_.knots.bound)
      return Vec::Zero(3 * knots_ - 1);
    const int bin = rqs::find_bin(jac_.knots, x);
    Vec g = rqs::chain_local(jac_, bin, [x](Dual xlo, Dual xhi, Dual ylo, Dual yhi, Dual dlo,
                                            Dual dhi) {
      return rqs::segment_forward(xlo, xhi, ylo, yhi, dlo, dhi, Dual(x));
    });
    return cot[0] * g;
  }

  Vec grad_logq_phi(const Vec& theta) const override {
    const double y = theta[0];
    expect(y > lo_ && y < hi_, "spline grad_logq_phi: theta outside support");
    const int bin = rqs::find_bin_by_y(jac_.knots, y);
    // log q = -log T'(x(phi)) with x = T^-1(theta); the dual chain runs the
    // closed-form inverse so the implicit phi-dependence of x is included.
    return rqs::chain_local(jac_, bin, [y](Dual xlo, Dual xhi, Dual ylo, Dual yhi, Dual dlo,
                                           Dual dhi) {
      const Dual x = rqs::segment_inverse(xlo, xhi, ylo, yhi, dlo, dhi, Dual(y));
      return -log(rqs::segment_deriv(xlo, xhi, ylo, yhi, dlo, dhi, x));
    });
  }

  Vec grad_logq_theta(const Vec& theta) const override {
    const double y = theta[0];
    expect(y > lo_ && y < hi_, "spline grad_logq_theta: theta outside support");
    const int bin = rqs::find_bin_by_y(jac_.knots, y);
    const auto& kn = jac_.knots;
    const Dual x = rqs::segment_inverse<Dual>(kn.x[bin], kn.x[bin + 1], kn.y[bin],
                                              kn.y[bin + 1], kn.d[bin], kn.d[bin + 1],
                                              Dual(y, 1.0));
    const Dual logq = -log(rqs::segment_deriv(Dual(kn.x[bin]), Dual(kn.x[bin + 1]),
                                              Dual(kn.y[bin]), Dual(kn.y[bin + 1]),
                                              Dual(kn.d[bin]), Dual(kn.d[bin + 1]), x));
    return Vec::Constant(1, logq.d);
  }

  //! d(-log T'(u)) / d phi at fixed base noise u: the pathwise derivative of
  //! the flow's own log-density along a sampled trajectory.
  Vec grad_sample_logq_phi(double u) const {
    if (u <= -jac_.knots.bound || u >= jac_.knots.bound) return Vec::Zero(3 * knots_ - 1);
    const int bin = rqs::find_bin(jac_.knots, u);
    return rqs::chain_local(jac_, bin, [u](Dual xlo, Dual xhi, Dual ylo, Dual yhi, Dual dlo,
                                           Dual dhi) {
      return -log(rqs::segment_deriv(xlo, xhi, ylo, yhi, dlo, dhi, Dual(u)));
    });
  }

  double support_lo() const { return lo_; }
  double support_hi() const { return hi_; }
  const rqs::KnotJacobian& knot_jacobian() const { return jac_; }

 private:
  int knots_;
  rqs::KnotJacobian jac_;
  double lo_, hi_;
};

inline std::unique_ptr<const FamilyEval> Spline1dFamily::at(const Vec& phi) const {
  check_phi(phi);
  return std::make_unique<Spline1dEval>(phi, knots_, bound_);
}

inline Vec Spline1dFamily::theta_stds(const Vec& phi, int mc_draws, Rng* rng) const {
  check_phi(phi);
  expect(rng != nullptr && mc_draws > 1, "spline theta_stds: needs draws and rng");
  const auto q = at(phi);
  double s = 0.0, s2 = 0.0;
  for (int i = 0; i < mc_draws; ++i) {
    const double t = q->sample(Vec::Constant(1, rng->uniform()))[0];
    s += t;
    s2 += t * t;
  }
  const double mean = s / mc_draws;
  return Vec::Constant(1, std::sqrt(std::max(0.0, s2 / mc_draws - mean * mean)));
}

inline Vec Spline1dFamily::theta_means(const Vec& phi, int mc_draws, Rng* rng) const {
  check_phi(phi);
  expect(rng != nullptr && mc_draws > 0, "spline theta_means: needs draws and rng");
  const auto q = at(phi);
  double s = 0.0;
  for (int i = 0; i < mc_draws; ++i) s += q->sample(Vec::Constant(1, rng->uniform()))[0];
  return Vec::Constant(1, s / mc_draws);
}

//! Generic KL(q || diagonal Gaussian prior) by reparameterized Monte Carlo;
//! Gaussian families override with the closed form.
inline KlResult Family::kl_to_gaussian_prior(const Vec& phi, const GaussianPrior& prior,
                                             int mc_size, Rng* rng) const {
  check_phi(phi);
  prior.validate(theta_dim());
  expect(mc_size >= 2 && rng != nullptr, "kl MC: needs mc_size >= 2 and an rng");
  const auto q = at(phi);
  const auto* spline = dynamic_cast<const Spline1dEval*>(q.get());
  KlResult r;
  r.analytic = false;
  r.grad = Vec::Zero(layout().dim());
  double sum = 0.0, sum2 = 0.0;
  for (int j = 0; j < mc_size; ++j) {
    const Vec u = sample_base(*rng);
    const Vec theta = q->sample(u);
    const double term = q->log_density(theta) - prior.log_density(theta);
    sum += term;
    sum2 += term * term;
    // d/dphi [log q_phi(T_phi(u)) - log p(T_phi(u))]
    if (spline != nullptr)
      r.grad += spline->grad_sample_logq_phi(u[0]) -
                q->pathwise_jvp(u, prior.grad_log_density(theta));
    else
      r.grad += q->pathwise_jvp(u, q->grad_logq_theta(theta) - prior.grad_log_density(theta)) +
                q->grad_logq_phi(theta);
  }
  r.grad /= static_cast<double>(mc_size);
  r.value = sum / mc_size;
  const double var = std::max(0.0, sum2 / mc_size - r.value * r.value);
  r.mc_se = std::sqrt(var / mc_size);
  return r;
}

}  // namespace pvi
