#pragma once

// Comparison models sharing the HMSMM pipeline: a Gaussian-emission HMM and
// a framewise Bayes classifier over scale-mixture densities.

#include "hmsmm/em.hpp"
#include "hmsmm/inference.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <vector>

namespace hmsmm {

class GaussianEmissionParams {
 public:
  GaussianEmissionParams() = default;

  GaussianEmissionParams(Vector mu, const Matrix& sigma, const JitterPolicy& jitter = {})
      : mu_(std::move(mu)), factor_(sigma, jitter) {
    detail::require_dim(factor_.dim(), mu_.size());
    if (!mu_.allFinite()) throw std::invalid_argument("mean has non-finite entries");
  }

  const Vector& mu() const { return mu_; }
  const Matrix& sigma() const { return factor_.matrix(); }
  const CovarianceFactor& factor() const { return factor_; }
  Eigen::Index dim() const { return mu_.size(); }

  Vector log_density_rows(const Eigen::Ref<const Matrix>& samples) const {
    detail::require_dim(samples.cols(), dim());
    if (!samples.allFinite()) throw std::invalid_argument("non-finite input sample");
    const double norm = -0.5 * static_cast<double>(dim()) * std::log(2.0 * std::numbers::pi) -
                        0.5 * factor_.log_det();
    return (norm - 0.5 * factor_.mahalanobis_sq_rows(samples, mu_).array()).matrix();
  }

 private:
  Vector mu_;
  CovarianceFactor factor_;
};

using GhmmModel = HiddenMarkovModel<GaussianEmissionParams>;

/// Maximum-likelihood mean and biased covariance.
inline GaussianEmissionParams fit_gaussian_state(const Eigen::Ref<const Matrix>& samples,
                                                 const JitterPolicy& jitter = {}) {
  if (samples.rows() < 2) throw std::invalid_argument("insufficient samples");
  if (!samples.allFinite()) throw std::invalid_argument("non-finite input sample");
  const Vector ones = Vector::Ones(samples.rows());
  const Vector mu = m_step_mean(samples, ones);
  return GaussianEmissionParams(mu, m_step_cov(samples, ones, mu, jitter), jitter);
}

inline std::vector<GaussianEmissionParams> fit_gaussian_states(const LabeledDataset& data,
                                                               const JitterPolicy& jitter = {}) {
  data.validate();
  std::vector<GaussianEmissionParams> out;
  for (int k = 1; k <= data.num_states; ++k) {
    const Matrix samples = gather_state_samples(data, k);
    if (samples.rows() < 2) {
      throw std::invalid_argument("empty state " + std::to_string(k) + " (fewer than 2 samples)");
    }
    out.push_back(fit_gaussian_state(samples, jitter));
  }
  return out;
}

template <EmissionDensity Emission>
PosteriorSequence ghmm_posterior(const HiddenMarkovModel<Emission>& model,
                                 const Eigen::Ref<const Matrix>& samples) {
  return posterior(model, samples);
}

/// Fixed class proportions p(z = k) for the framewise classifier.
struct StaticPrior {
  Vector class_proportions;

  void validate() const {
    if (class_proportions.size() == 0 || !class_proportions.allFinite() ||
        (class_proportions.array() < 0.0).any() ||
        std::abs(class_proportions.sum() - 1.0) > 1e-12) {
      throw std::invalid_argument("static prior must be a probability vector");
    }
  }

  /// Label frequencies over all sequences.
  static StaticPrior from_labels(const std::vector<StateSequence>& labels, int num_states) {
    Vector counts = Vector::Zero(num_states);
    for (const auto& seq : labels) {
      for (int z : seq) {
        if (z < 1 || z > num_states) throw std::invalid_argument("label outside 1..K");
        counts[z - 1] += 1.0;
      }
    }
    const double total = counts.sum();
    if (!(total > 0.0)) throw std::invalid_argument("no labels to estimate the static prior");
    return {counts / total};
  }
};

/// Framewise posterior p(z_t = k | x_t) with no temporal coupling.
template <EmissionDensity Emission>
Matrix smm_static_posterior(const std::vector<Emission>& emissions, const StaticPrior& prior,
                            const Eigen::Ref<const Matrix>& samples) {
  prior.validate();
  if (static_cast<std::size_t>(prior.class_proportions.size()) != emissions.size()) {
    throw std::invalid_argument("prior size does not match the number of states");
  }
  Matrix logw = emission_log_likelihoods(emissions, samples);
  const Eigen::Index k = logw.cols();
  for (Eigen::Index j = 0; j < k; ++j) {
    const double p = prior.class_proportions[j];
    logw.col(j).array() += p > 0.0 ? std::log(p) : -std::numeric_limits<double>::infinity();
  }
  for (Eigen::Index t = 0; t < logw.rows(); ++t) {
    const double lse = detail::log_sum_exp(logw.row(t).transpose());
    if (!std::isfinite(lse)) {
      throw std::runtime_error("zero likelihood under every state at t = " + std::to_string(t + 1));
    }
    logw.row(t) = (logw.row(t).array() - lse).unaryExpr(&detail::exact_exp);
  }
  return logw;
}

}  // namespace hmsmm
