#pragma once

// Scale-mixture emission density. Each state emits
//
//   p(x | k) = integral N(x | mu_k, u Sigma_k) IG(u | nu_k / 2, nu_k / 2) du,
//
// which is the multivariate Student-t with nu_k degrees of freedom. The
// closed form is used everywhere; the integral itself only appears in tests.

#include "hmsmm/covariance.hpp"
#include "hmsmm/special.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace hmsmm {

namespace detail {

inline void require_finite(const Eigen::Ref<const Vector>& x) {
  if (!x.allFinite()) throw std::invalid_argument("non-finite input sample");
}

inline void require_dim(Eigen::Index got, Eigen::Index want) {
  if (got != want) {
    throw std::invalid_argument("dimension mismatch: got " + std::to_string(got) +
                                ", expected " + std::to_string(want));
  }
}

}  // namespace detail

/// Per-state emission parameters (mu, Sigma, nu). The inverse-gamma mixing
/// density has shape = rate = nu / 2; both are derived from nu on demand.
/// Immutable once constructed.
class EmissionParams {
 public:
  EmissionParams() = default;

  EmissionParams(Vector mu, const Matrix& sigma, double nu, const JitterPolicy& jitter = {})
      : mu_(std::move(mu)), factor_(sigma, jitter), nu_(nu) {
    detail::require_dim(factor_.dim(), mu_.size());
    if (!mu_.allFinite()) throw std::invalid_argument("mean has non-finite entries");
    if (!(nu_ > 0.0) || !std::isfinite(nu_)) {
      throw std::invalid_argument("degrees of freedom must be positive and finite");
    }
  }

  const Vector& mu() const { return mu_; }
  const Matrix& sigma() const { return factor_.matrix(); }
  const CovarianceFactor& factor() const { return factor_; }
  double nu() const { return nu_; }
  double mixing_shape() const { return 0.5 * nu_; }
  double mixing_rate() const { return 0.5 * nu_; }
  Eigen::Index dim() const { return mu_.size(); }

  /// ln p(x | state) for every row of `samples`.
  Vector log_density_rows(const Eigen::Ref<const Matrix>& samples) const;

 private:
  Vector mu_;
  CovarianceFactor factor_;
  double nu_ = 1.0;
};

/// A sample paired with a fixed latent scale u (covariance u * Sigma).
struct ScaledGaussianQuery {
  Vector x;
  double u = 1.0;
};

/// (x - mu)^T Sigma^{-1} (x - mu) through the cached triangular factor.
inline double mahalanobis_sq(const Eigen::Ref<const Vector>& x, const EmissionParams& params) {
  detail::require_dim(x.size(), params.dim());
  detail::require_finite(x);
  return params.factor().mahalanobis_sq(x - params.mu());
}

/// ln N(x | mu, u Sigma).
inline double log_gaussian_scaled(const ScaledGaussianQuery& q, const EmissionParams& params) {
  if (!(q.u > 0.0) || !std::isfinite(q.u)) {
    throw std::invalid_argument("latent scale u must be positive");
  }
  const double d = mahalanobis_sq(q.x, params);
  const auto dim = static_cast<double>(params.dim());
  return -0.5 * dim * std::log(2.0 * std::numbers::pi) -
         0.5 * (dim * std::log(q.u) + params.factor().log_det()) - d / (2.0 * q.u);
}

/// ln IG(u | shape a, rate b).
inline double log_inverse_gamma(double u, double a, double b) {
  if (!(u > 0.0) || !(a > 0.0) || !(b > 0.0)) {
    throw std::invalid_argument("inverse-gamma arguments must be positive");
  }
  return a * std::log(b) - special::log_gamma(a) - (a + 1.0) * std::log(u) - b / u;
}

namespace detail {

// Terms of the Student-t log density that do not depend on x.
inline double student_t_log_normaliser(double nu, double dim, double log_det) {
  return special::log_gamma_ratio(0.5 * nu, 0.5 * dim) -
         0.5 * dim * std::log(nu * std::numbers::pi) - 0.5 * log_det;
}

inline double student_t_log_kernel(double nu, double dim, double d) {
  return -0.5 * (nu + dim) * std::log1p(d / nu);
}

}  // namespace detail

/// ln p(x | state): the scale mixture integrated in closed form.
inline double log_emission(const Eigen::Ref<const Vector>& x, const EmissionParams& params) {
  const double d = mahalanobis_sq(x, params);
  const auto dim = static_cast<double>(params.dim());
  return detail::student_t_log_normaliser(params.nu(), dim, params.factor().log_det()) +
         detail::student_t_log_kernel(params.nu(), dim, d);
}

/// E[1/u | x] = (nu + D) / (nu + d(x)).
inline double tau(const Eigen::Ref<const Vector>& x, const EmissionParams& params) {
  const double d = mahalanobis_sq(x, params);
  return (params.nu() + static_cast<double>(params.dim())) / (params.nu() + d);
}

inline Vector EmissionParams::log_density_rows(const Eigen::Ref<const Matrix>& samples) const {
  detail::require_dim(samples.cols(), dim());
  if (!samples.allFinite()) throw std::invalid_argument("non-finite input sample");
  const auto d = static_cast<double>(dim());
  const double norm = detail::student_t_log_normaliser(nu_, d, factor_.log_det());
  Vector dist = factor_.mahalanobis_sq_rows(samples, mu_);
  return (norm - 0.5 * (nu_ + d) * (dist.array() / nu_).log1p()).matrix();
}

}  // namespace hmsmm
