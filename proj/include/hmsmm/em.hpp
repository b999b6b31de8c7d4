#pragma once

// Supervised EM for the per-state scale-mixture emissions. With hard state
// labels the complete-data objective separates by state, so each state is
// fitted on its own samples.

#include "hmsmm/emission.hpp"
#include "hmsmm/special.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace hmsmm {

struct EmConfig {
  int max_iterations = 200;
  double relative_tolerance = 1e-8;
  double nu_min = 0.01;
  double nu_max = 1000.0;
  double nu_tolerance = 1e-6;
  double initial_nu = 10.0;
  JitterPolicy jitter;

  void validate() const {
    if (max_iterations < 1) throw std::invalid_argument("max_iterations must be >= 1");
    if (!(relative_tolerance > 0.0) || !(nu_tolerance > 0.0)) {
      throw std::invalid_argument("EM tolerances must be positive");
    }
    if (!(nu_min > 0.0) || !(nu_min < nu_max)) {
      throw std::invalid_argument("nu bracket must satisfy 0 < nu_min < nu_max");
    }
    if (!(initial_nu > 0.0)) throw std::invalid_argument("initial nu must be positive");
  }
};

/// Observed-data log-likelihood per iteration (entry 0 is the initial
/// parameters). E[ln 1/u | x] in the nu update uses the pre-update nu.
struct EmTrace {
  std::vector<double> log_likelihood;
  int iterations = 0;
  bool converged = false;
  bool nu_clamped = false;
};

struct LabeledDataset {
  std::vector<Matrix> sequences;  // each T_n x D
  std::vector<StateSequence> labels;
  int num_states = 0;

  void validate() const {
    if (num_states < 1) throw std::invalid_argument("num_states must be >= 1");
    if (sequences.size() != labels.size()) {
      throw std::invalid_argument("sequence/label count mismatch");
    }
    for (std::size_t n = 0; n < sequences.size(); ++n) {
      if (static_cast<std::size_t>(sequences[n].rows()) != labels[n].size()) {
        throw std::invalid_argument("sequence " + std::to_string(n) +
                                    ": label length does not match sample count");
      }
      if (n > 0 && sequences[n].cols() != sequences[0].cols()) {
        throw std::invalid_argument("sequences differ in channel count");
      }
      for (int z : labels[n]) {
        if (z < 1 || z > num_states) {
          throw std::invalid_argument("label " + std::to_string(z) + " outside 1.." +
                                      std::to_string(num_states));
        }
      }
    }
  }
};

/// tau_i = E[1/u_i | x_i] for each row.
inline Vector e_step_tau(const Eigen::Ref<const Matrix>& samples, const EmissionParams& params) {
  if (samples.rows() == 0) throw std::invalid_argument("empty state");
  detail::require_dim(samples.cols(), params.dim());
  const double a = params.nu() + static_cast<double>(params.dim());
  const Vector d = params.factor().mahalanobis_sq_rows(samples, params.mu());
  return (a / (params.nu() + d.array())).matrix();
}

/// E[ln(1/u_i) | x_i] = psi((nu + D) / 2) - ln((nu + d_i) / 2).
inline Vector e_step_log_inverse_scale(const Eigen::Ref<const Matrix>& samples,
                                       const EmissionParams& params) {
  if (samples.rows() == 0) throw std::invalid_argument("empty state");
  const double half = 0.5 * (params.nu() + static_cast<double>(params.dim()));
  const double psi = special::digamma(half);
  const Vector d = params.factor().mahalanobis_sq_rows(samples, params.mu());
  return (psi - (0.5 * (params.nu() + d.array())).log()).matrix();
}

namespace detail {

inline void require_weights(const Eigen::Ref<const Matrix>& samples,
                            const Eigen::Ref<const Vector>& taus) {
  if (samples.rows() == 0) throw std::invalid_argument("empty state");
  if (taus.size() != samples.rows()) throw std::invalid_argument("tau/sample count mismatch");
  if (!(taus.array() > 0.0).all() || !taus.allFinite()) {
    throw std::invalid_argument("tau weights must be positive and finite");
  }
}

}  // namespace detail

/// Weighted mean sum(tau_i x_i) / sum(tau_i).
inline Vector m_step_mean(const Eigen::Ref<const Matrix>& samples,
                          const Eigen::Ref<const Vector>& taus) {
  detail::require_weights(samples, taus);
  return (samples.transpose() * taus) / taus.sum();
}

/// sum(tau_i (x_i - mu)(x_i - mu)^T) / n. The denominator is the sample
/// count, not the weight total. Jitter is applied if the result is singular.
inline Matrix m_step_cov(const Eigen::Ref<const Matrix>& samples,
                         const Eigen::Ref<const Vector>& taus,
                         const Eigen::Ref<const Vector>& mu, const JitterPolicy& jitter = {}) {
  detail::require_weights(samples, taus);
  if (samples.rows() < 2) throw std::invalid_argument("insufficient samples");
  detail::require_dim(mu.size(), samples.cols());
  const Eigen::Index n = samples.rows();
  const Eigen::Index dim = samples.cols();
  Matrix acc = Matrix::Zero(dim, dim);
  constexpr Eigen::Index kChunk = 1 << 14;
  Matrix weighted;
  for (Eigen::Index start = 0; start < n; start += kChunk) {
    const Eigen::Index len = std::min(kChunk, n - start);
    weighted = samples.middleRows(start, len).rowwise() - mu.transpose();
    weighted.array().colwise() *= taus.segment(start, len).array().sqrt();
    acc.selfadjointView<Eigen::Lower>().rankUpdate(weighted.transpose());
  }
  Matrix cov = acc.selfadjointView<Eigen::Lower>();
  cov /= static_cast<double>(n);
  cov = 0.5 * (cov + cov.transpose());
  return CovarianceFactor(cov, jitter).matrix();
}

/// Derivative (up to the factor n/2) of the nu-dependent part of the
/// expected complete-data log-likelihood, given mean(ell_i - tau_i).
inline double nu_stationarity(double nu, double mean_log_minus_tau) {
  return std::log(0.5 * nu) + 1.0 - special::digamma(0.5 * nu) + mean_log_minus_tau;
}

namespace detail {

// nu-dependent part of Q divided by n.
inline double nu_objective(double nu, double mean_log_minus_tau) {
  const double h = 0.5 * nu;
  return h * std::log(h) - special::log_gamma(h) + h * mean_log_minus_tau;
}

}  // namespace detail

struct NuUpdate {
  double nu = 0.0;
  bool clamped = false;
  double stationarity = 0.0;  // g(nu) at the returned value
};

inline NuUpdate update_nu_from_mean(double c, const EmConfig& config);

/// Maximises the nu part of Q by bisection on its stationarity condition.
/// When g has one sign over the whole bracket the endpoint with larger Q is
/// returned and `clamped` is set.
inline NuUpdate update_nu_bisection(const Eigen::Ref<const Vector>& taus,
                                    const Eigen::Ref<const Vector>& log_inverse_scales,
                                    const EmConfig& config) {
  config.validate();
  if (taus.size() == 0 || taus.size() != log_inverse_scales.size()) {
    throw std::invalid_argument("nu update needs matching non-empty tau/log-scale vectors");
  }
  long double acc = 0.0L;
  for (Eigen::Index i = 0; i < taus.size(); ++i) {
    acc += static_cast<long double>(log_inverse_scales[i]) - taus[i];
  }
  return update_nu_from_mean(static_cast<double>(acc / static_cast<long double>(taus.size())),
                             config);
}

/// As update_nu_bisection, given c = mean(ell_i - tau_i) directly.
inline NuUpdate update_nu_from_mean(double c, const EmConfig& config) {
  config.validate();
  if (!std::isfinite(c)) throw std::invalid_argument("non-finite nu statistic");
  double lo = config.nu_min;
  double hi = config.nu_max;
  const double g_lo = nu_stationarity(lo, c);
  const double g_hi = nu_stationarity(hi, c);
  if (g_lo == 0.0) return {lo, false, g_lo};
  if (g_hi == 0.0) return {hi, false, g_hi};
  if ((g_lo > 0.0) == (g_hi > 0.0)) {
    const bool hi_better = detail::nu_objective(hi, c) >= detail::nu_objective(lo, c);
    return hi_better ? NuUpdate{hi, true, g_hi} : NuUpdate{lo, true, g_lo};
  }
  // g is decreasing in nu on (0, inf); keep the sign convention g(lo) > 0.
  const bool lo_positive = g_lo > 0.0;
  double mid = 0.5 * (lo + hi);
  double g_mid = nu_stationarity(mid, c);
  for (int iter = 0; iter < 400; ++iter) {
    mid = 0.5 * (lo + hi);
    g_mid = nu_stationarity(mid, c);
    if (std::abs(g_mid) <= config.nu_tolerance) break;
    if ((g_mid > 0.0) == lo_positive) {
      lo = mid;
    } else {
      hi = mid;
    }
    if (hi - lo <= 4.0 * std::numeric_limits<double>::epsilon() * hi) break;
  }
  return {mid, false, g_mid};
}

/// Sum of ln p(x_i) over the rows, accumulated in extended precision.
inline double observed_log_likelihood(const Eigen::Ref<const Matrix>& samples,
                                      const EmissionParams& params) {
  const Vector ll = params.log_density_rows(samples);
  long double acc = 0.0L;
  for (Eigen::Index i = 0; i < ll.size(); ++i) acc += ll[i];
  return static_cast<double>(acc);
}

/// Gaussian ML initialisation with nu = config.initial_nu.
inline EmissionParams initial_emission(const Eigen::Ref<const Matrix>& samples,
                                       const EmConfig& config) {
  if (samples.rows() < 2) throw std::invalid_argument("insufficient samples");
  const Vector ones = Vector::Ones(samples.rows());
  const Vector mu = m_step_mean(samples, ones);
  return EmissionParams(mu, m_step_cov(samples, ones, mu, config.jitter), config.initial_nu,
                        config.jitter);
}

struct StateFit {
  EmissionParams params;
  EmTrace trace;
};

/// EM for one state's samples starting from `init`.
namespace detail {

// Everything one EM iteration needs from a pass over the data at the
// current parameters: the observed log-likelihood and the weighted moments,
// centred at the current mean.
struct EmPass {
  long double log_likelihood = 0.0L;
  long double tau_sum = 0.0L;
  long double ell_minus_tau_sum = 0.0L;
  Vector weighted_offset;  // sum tau_i (x_i - mu)
  Matrix weighted_scatter; // sum tau_i (x_i - mu)(x_i - mu)^T
};

inline EmPass em_pass(const Eigen::Ref<const Matrix>& samples, const EmissionParams& params) {
  const Eigen::Index n = samples.rows();
  const Eigen::Index dim = params.dim();
  const double nu = params.nu();
  const double shape = nu + static_cast<double>(dim);
  const double norm = student_t_log_normaliser(nu, static_cast<double>(dim), params.factor().log_det());
  // ell_i = psi((nu + D)/2) - ln((nu + d_i)/2) = ell0 - log1p(d_i / nu).
  const double ell0 = special::digamma(0.5 * shape) - std::log(0.5 * nu);
  const Matrix linv_t = params.factor()
                            .lower()
                            .triangularView<Eigen::Lower>()
                            .solve(Matrix::Identity(dim, dim))
                            .transpose();
  EmPass out;
  out.weighted_offset = Vector::Zero(dim);
  out.weighted_scatter = Matrix::Zero(dim, dim);
  constexpr Eigen::Index kChunk = 1 << 12;
  Matrix centred, white, scaled;
  Eigen::ArrayXd dist, ratio, onep, lg, taus;
  for (Eigen::Index start = 0; start < n; start += kChunk) {
    const Eigen::Index len = std::min(kChunk, n - start);
    centred = samples.middleRows(start, len).rowwise() - params.mu().transpose();
    white.noalias() = centred * linv_t;
    dist = white.rowwise().squaredNorm().array();
    // log1p(r) as r * ln(1 + r) / ((1 + r) - 1): accurate to a few ulp and,
    // unlike Eigen's log1p, vectorised.
    ratio = dist / nu;
    onep = 1.0 + ratio;
    lg = (onep == 1.0).select(ratio, onep.log() * ratio / (onep - 1.0));
    taus = shape / (nu + dist);
    double ll = 0.0, tau_sum = 0.0, emt = 0.0;
    for (Eigen::Index i = 0; i < len; ++i) {
      ll += lg[i];
      tau_sum += taus[i];
      emt += ell0 - lg[i] - taus[i];
    }
    out.log_likelihood += static_cast<long double>(norm) * len - 0.5L * shape * ll;
    out.tau_sum += tau_sum;
    out.ell_minus_tau_sum += emt;
    out.weighted_offset.noalias() += centred.transpose() * taus.matrix();
    scaled = centred.array().colwise() * taus.sqrt();
    out.weighted_scatter.selfadjointView<Eigen::Lower>().rankUpdate(scaled.transpose());
  }
  out.weighted_scatter = out.weighted_scatter.selfadjointView<Eigen::Lower>();
  return out;
}

}  // namespace detail

/// EM for one state's samples starting from `init`. Each iteration makes a
/// single pass: the log-likelihood of the current parameters and the
/// E-step statistics come from the same Mahalanobis distances.
inline StateFit fit_state_emission(const Eigen::Ref<const Matrix>& samples,
                                   const EmissionParams& init, const EmConfig& config) {
  config.validate();
  if (samples.rows() < 2) throw std::invalid_argument("insufficient samples");
  detail::require_dim(samples.cols(), init.dim());
  if (!samples.allFinite()) throw std::invalid_argument("non-finite input sample");
  const auto n = static_cast<double>(samples.rows());

  StateFit fit{init, {}};
  detail::EmPass pass = detail::em_pass(samples, fit.params);
  double ll = static_cast<double>(pass.log_likelihood);
  if (!std::isfinite(ll)) {
    throw std::runtime_error("non-finite log-likelihood at EM initialisation");
  }
  fit.trace.log_likelihood.push_back(ll);

  for (int iter = 1; iter <= config.max_iterations; ++iter) {
    const EmissionParams& cur = fit.params;
    const double w = static_cast<double>(pass.tau_sum);
    // Weighted mean as an offset from the current mean; the scatter about
    // the new mean follows by a rank-one correction.
    const Vector delta = pass.weighted_offset / w;
    const Vector mu = cur.mu() + delta;
    Matrix sigma = (pass.weighted_scatter - w * delta * delta.transpose()) / n;
    sigma = 0.5 * (sigma + sigma.transpose());
    sigma = CovarianceFactor(sigma, config.jitter).matrix();
    const NuUpdate nu =
        update_nu_from_mean(static_cast<double>(pass.ell_minus_tau_sum / samples.rows()), config);

    fit.params = EmissionParams(mu, sigma, nu.nu, config.jitter);
    fit.trace.nu_clamped = nu.clamped;
    fit.trace.iterations = iter;

    pass = detail::em_pass(samples, fit.params);
    const double next = static_cast<double>(pass.log_likelihood);
    if (!std::isfinite(next)) {
      throw std::runtime_error("non-finite log-likelihood at EM iteration " +
                               std::to_string(iter));
    }
    fit.trace.log_likelihood.push_back(next);
    const double change = std::abs(next - ll) / std::max(std::abs(ll), 1e-300);
    ll = next;
    if (change < config.relative_tolerance) {
      fit.trace.converged = true;
      break;
    }
  }
  return fit;
}

/// Rows of all sequences whose label equals `state`, in sequence order.
inline Matrix gather_state_samples(const LabeledDataset& data, int state) {
  Eigen::Index count = 0;
  for (const auto& labels : data.labels) {
    for (int z : labels) count += (z == state);
  }
  const Eigen::Index dim = data.sequences.empty() ? 0 : data.sequences.front().cols();
  Matrix out(count, dim);
  Eigen::Index row = 0;
  for (std::size_t n = 0; n < data.sequences.size(); ++n) {
    const auto& labels = data.labels[n];
    for (std::size_t t = 0; t < labels.size(); ++t) {
      if (labels[t] == state) out.row(row++) = data.sequences[n].row(static_cast<Eigen::Index>(t));
    }
  }
  return out;
}

struct DatasetFit {
  std::vector<EmissionParams> emissions;  // index k-1 holds state k
  std::vector<EmTrace> traces;
};

/// Partitions samples by hard label and fits every state independently.
inline DatasetFit fit_all_states(const LabeledDataset& data, const EmConfig& config) {
  data.validate();
  config.validate();
  std::vector<int> empty;
  std::vector<Matrix> per_state;
  per_state.reserve(static_cast<std::size_t>(data.num_states));
  for (int k = 1; k <= data.num_states; ++k) {
    per_state.push_back(gather_state_samples(data, k));
    if (per_state.back().rows() < 2) empty.push_back(k);
  }
  if (!empty.empty()) {
    std::string msg = "empty state";
    for (int k : empty) msg += " " + std::to_string(k);
    throw std::invalid_argument(msg + " (fewer than 2 samples)");
  }
  DatasetFit out;
  for (const auto& samples : per_state) {
    StateFit fit = fit_state_emission(samples, initial_emission(samples, config), config);
    out.emissions.push_back(std::move(fit.params));
    out.traces.push_back(std::move(fit.trace));
  }
  return out;
}

}  // namespace hmsmm
