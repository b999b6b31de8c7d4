#pragma once

// Forward-backward smoothing, forward-only filtering and a path-enumeration
// oracle for hidden Markov models with arbitrary emission densities.
//
// The recursions run on normalised messages: alpha_hat(t) sums to one and the
// per-step log normalisers add up to ln p(X).

#include "hmsmm/emission.hpp"
#include "hmsmm/markov.hpp"

#include <cmath>
#include <concepts>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace hmsmm {

template <class E>
concept EmissionDensity = requires(const E& e, const Matrix& samples) {
  { e.log_density_rows(samples) } -> std::convertible_to<Vector>;
  { e.dim() } -> std::convertible_to<Eigen::Index>;
};

template <EmissionDensity Emission>
struct HiddenMarkovModel {
  TransitionModel transition;
  std::vector<Emission> emissions;  // index k-1 holds state k

  int num_states() const { return transition.num_states(); }
  Eigen::Index dim() const { return emissions.empty() ? 0 : emissions.front().dim(); }

  void validate() const {
    transition.validate();
    if (static_cast<int>(emissions.size()) != num_states()) {
      throw std::invalid_argument("emission count does not match the number of states");
    }
    for (const auto& e : emissions) {
      if (e.dim() != dim()) throw std::invalid_argument("emission dimensions differ");
    }
  }
};

using HmsmmModel = HiddenMarkovModel<EmissionParams>;

struct PosteriorSequence {
  Matrix gamma;  // T x K, rows are p(z_t | X)
  double log_evidence = 0.0;
};

struct ForwardMessages {
  Matrix alpha;                // T x K, each row normalised
  Matrix log_alpha;            // ln alpha, kept so denormal mass is not lost
  Vector log_normalisers;      // T; sum = ln p(X)

  double log_evidence() const { return log_normalisers.sum(); }
};

/// T x K matrix of ln p(x_t | z_t = k).
template <EmissionDensity Emission>
Matrix emission_log_likelihoods(const std::vector<Emission>& emissions,
                                const Eigen::Ref<const Matrix>& samples) {
  if (samples.rows() < 1) throw std::invalid_argument("sequence must contain at least one sample");
  Matrix out(samples.rows(), static_cast<Eigen::Index>(emissions.size()));
  for (std::size_t k = 0; k < emissions.size(); ++k) {
    detail::require_dim(samples.cols(), emissions[k].dim());
    out.col(static_cast<Eigen::Index>(k)) = emissions[k].log_density_rows(samples);
  }
  return out;
}

namespace detail {

// Eigen's packet exp clamps its argument near -709 instead of underflowing
// to zero, which corrupts normalisers once likelihood gaps exceed that.
inline double exact_exp(double v) { return std::exp(v); }

inline double log_sum_exp(const Eigen::Ref<const Vector>& v) {
  const double m = v.maxCoeff();
  if (!std::isfinite(m)) return m;
  return m + std::log((v.array() - m).unaryExpr(&exact_exp).sum());
}

}  // namespace detail

inline ForwardMessages forward_pass_loglik(const TransitionModel& transition,
                                           const Eigen::Ref<const Matrix>& loglik) {
  const Eigen::Index t_len = loglik.rows();
  const Eigen::Index k = loglik.cols();
  if (t_len < 1) throw std::invalid_argument("sequence must contain at least one sample");
  if (k != transition.num_states()) throw std::invalid_argument("state count mismatch");
  if (loglik.array().isNaN().any()) throw std::invalid_argument("NaN emission log-likelihood");

  constexpr double ninf = -std::numeric_limits<double>::infinity();
  ForwardMessages out{Matrix(t_len, k), Matrix(t_len, k), Vector(t_len)};
  const Matrix log_a = (transition.A.array() > 0.0).select(transition.A.array().log(), ninf);
  Vector la(k), terms(k);
  for (Eigen::Index j = 0; j < k; ++j) {
    la[j] = transition.pi[j] > 0.0 ? std::log(transition.pi[j]) : ninf;
  }
  for (Eigen::Index t = 0; t < t_len; ++t) {
    if (t > 0) {
      for (Eigen::Index j = 0; j < k; ++j) {
        terms = out.log_alpha.row(t - 1).transpose() + log_a.col(j);
        la[j] = std::isfinite(terms.maxCoeff()) ? detail::log_sum_exp(terms) : ninf;
      }
    }
    la += loglik.row(t).transpose();
    const double m = la.maxCoeff();
    if (!std::isfinite(m)) {
      throw std::runtime_error("zero likelihood for every reachable state at t = " + std::to_string(t + 1));
    }
    const double c = detail::log_sum_exp(la);
    out.log_normalisers[t] = c;
    out.log_alpha.row(t) = (la.array() - c).transpose();
    for (Eigen::Index j = 0; j < k; ++j) out.alpha(t, j) = detail::exact_exp(out.log_alpha(t, j));
  }
  return out;
}

/// Normalised backward messages matching `log_normalisers` from the forward
/// pass. The last row is all ones.
inline Matrix backward_pass_loglik(const TransitionModel& transition,
                                   const Eigen::Ref<const Matrix>& loglik,
                                   const Eigen::Ref<const Vector>& log_normalisers) {
  const Eigen::Index t_len = loglik.rows();
  const Eigen::Index k = loglik.cols();
  if (log_normalisers.size() != t_len) {
    throw std::invalid_argument("normaliser count does not match sequence length");
  }
  if (k != transition.num_states()) throw std::invalid_argument("state count mismatch");
  Matrix beta(t_len, k);
  beta.row(t_len - 1).setOnes();
  Vector w(k);
  Vector v(k);
  for (Eigen::Index t = t_len - 2; t >= 0; --t) {
    const double m = loglik.row(t + 1).maxCoeff();
    if (!std::isfinite(m)) {
      throw std::runtime_error("zero likelihood for every state at t = " + std::to_string(t + 2));
    }
    w = (loglik.row(t + 1).transpose().array() - m).unaryExpr(&detail::exact_exp) *
        beta.row(t + 1).transpose().array();
    v.noalias() = transition.A * w;
    // beta_t = A (exp(loglik - normaliser) .* beta_{t+1}), shifted by the row
    // maximum so that unreachable but likely states cannot overflow.
    const double shift = m - log_normalisers[t + 1];
    for (Eigen::Index j = 0; j < k; ++j) {
      beta(t, j) = v[j] > 0.0 ? std::exp(std::log(v[j]) + shift) : 0.0;
    }
  }
  return beta;
}

inline PosteriorSequence posterior_loglik(const TransitionModel& transition,
                                          const Eigen::Ref<const Matrix>& loglik) {
  const ForwardMessages fwd = forward_pass_loglik(transition, loglik);
  const Eigen::Index t_len = loglik.rows();
  const Eigen::Index k = loglik.cols();
  constexpr double ninf = -std::numeric_limits<double>::infinity();
  // Backward messages in log space, each row shifted to max 0. The scaled
  // beta overflows when a state keeps only denormal forward mass but is the
  // sole route to what follows.
  const Matrix log_a = (transition.A.array() > 0.0).select(transition.A.array().log(), ninf);
  PosteriorSequence out{Matrix(t_len, k), fwd.log_evidence()};
  Vector lb = Vector::Zero(k);
  Vector next(k), terms(k);
  for (Eigen::Index t = t_len - 1; t >= 0; --t) {
    if (t < t_len - 1) {
      next = loglik.row(t + 1).transpose() + lb;
      for (Eigen::Index j = 0; j < k; ++j) {
        terms = log_a.row(j).transpose() + next;
        const double m = terms.maxCoeff();
        lb[j] = std::isfinite(m) ? detail::log_sum_exp(terms) : ninf;
      }
      const double m = lb.maxCoeff();
      if (!std::isfinite(m)) {
        throw std::runtime_error("zero likelihood for every state at t = " + std::to_string(t + 2));
      }
      lb.array() -= m;
    }
    terms = fwd.log_alpha.row(t).transpose() + lb;
    const double m = terms.maxCoeff();
    if (!std::isfinite(m)) {
      throw std::runtime_error("degenerate posterior at t = " + std::to_string(t + 1));
    }
    for (Eigen::Index j = 0; j < k; ++j) out.gamma(t, j) = detail::exact_exp(terms[j] - m);
    out.gamma.row(t) /= out.gamma.row(t).sum();
  }
  if (!std::isfinite(out.log_evidence)) throw std::runtime_error("non-finite log evidence");
  return out;
}

template <EmissionDensity Emission>
ForwardMessages forward_pass(const HiddenMarkovModel<Emission>& model,
                             const Eigen::Ref<const Matrix>& samples) {
  model.validate();
  return forward_pass_loglik(model.transition, emission_log_likelihoods(model.emissions, samples));
}

template <EmissionDensity Emission>
Matrix backward_pass(const HiddenMarkovModel<Emission>& model,
                     const Eigen::Ref<const Matrix>& samples,
                     const Eigen::Ref<const Vector>& log_normalisers) {
  model.validate();
  return backward_pass_loglik(model.transition,
                              emission_log_likelihoods(model.emissions, samples), log_normalisers);
}

/// Smoothed posterior p(z_t | x_1..x_T).
template <EmissionDensity Emission>
PosteriorSequence posterior(const HiddenMarkovModel<Emission>& model,
                            const Eigen::Ref<const Matrix>& samples) {
  model.validate();
  return posterior_loglik(model.transition, emission_log_likelihoods(model.emissions, samples));
}

/// Causal posterior p(z_t | x_1..x_t); row t never looks past sample t.
template <EmissionDensity Emission>
Matrix filter_forward(const HiddenMarkovModel<Emission>& model,
                      const Eigen::Ref<const Matrix>& samples) {
  return forward_pass(model, samples).alpha;
}

/// Exact posterior by enumerating all K^T state paths. Test oracle only.
inline PosteriorSequence brute_force_posterior_loglik(const TransitionModel& transition,
                                                      const Eigen::Ref<const Matrix>& loglik) {
  const Eigen::Index t_len = loglik.rows();
  const int k = transition.num_states();
  if (t_len < 1) throw std::invalid_argument("sequence must contain at least one sample");
  if (loglik.cols() != k) throw std::invalid_argument("state count mismatch");
  double paths = 1.0;
  for (Eigen::Index t = 0; t < t_len; ++t) {
    paths *= k;
    if (paths > 1e6) throw std::invalid_argument("instance too large for enumeration");
  }
  const auto n_paths = static_cast<long>(paths);
  const double neg_inf = -std::numeric_limits<double>::infinity();
  auto safe_log = [neg_inf](double p) { return p > 0.0 ? std::log(p) : neg_inf; };

  std::vector<double> joint(static_cast<std::size_t>(n_paths));
  std::vector<int> path(static_cast<std::size_t>(t_len));
  for (long idx = 0; idx < n_paths; ++idx) {
    long rem = idx;
    for (Eigen::Index t = 0; t < t_len; ++t) {
      path[static_cast<std::size_t>(t)] = static_cast<int>(rem % k);
      rem /= k;
    }
    double lp = safe_log(transition.pi[path[0]]) + loglik(0, path[0]);
    for (Eigen::Index t = 1; t < t_len && std::isfinite(lp); ++t) {
      lp += safe_log(transition.A(path[static_cast<std::size_t>(t - 1)],
                                  path[static_cast<std::size_t>(t)])) +
            loglik(t, path[static_cast<std::size_t>(t)]);
    }
    joint[static_cast<std::size_t>(idx)] = lp;
  }
  const Eigen::Map<const Vector> joint_v(joint.data(), n_paths);
  const double evidence = detail::log_sum_exp(joint_v);
  if (!std::isfinite(evidence)) throw std::runtime_error("every path has zero probability");

  PosteriorSequence out{Matrix::Zero(t_len, k), evidence};
  for (long idx = 0; idx < n_paths; ++idx) {
    const double w = std::exp(joint[static_cast<std::size_t>(idx)] - evidence);
    if (w == 0.0) continue;
    long rem = idx;
    for (Eigen::Index t = 0; t < t_len; ++t) {
      out.gamma(t, rem % k) += w;
      rem /= k;
    }
  }
  return out;
}

template <EmissionDensity Emission>
PosteriorSequence brute_force_posterior(const HiddenMarkovModel<Emission>& model,
                                        const Eigen::Ref<const Matrix>& samples) {
  model.validate();
  return brute_force_posterior_loglik(model.transition,
                                      emission_log_likelihoods(model.emissions, samples));
}

/// Prior marginals p(z_t) = pi^T A^(t-1) for t = 1..T.
inline Matrix prior_marginals(const TransitionModel& transition, Eigen::Index length) {
  Matrix out(length, transition.num_states());
  Vector p = transition.pi;
  for (Eigen::Index t = 0; t < length; ++t) {
    if (t > 0) p = transition.A.transpose() * p;
    out.row(t) = p.transpose();
  }
  return out;
}

}  // namespace hmsmm
