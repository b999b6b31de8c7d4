#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace hmsmm {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Hard state labels, 1-based (1..K).
using StateSequence = std::vector<int>;

/// Diagonal loading applied when a covariance fails to factorize: the k-th
/// retry adds initial_scale * growth^k * trace(S) / D to the diagonal.
struct JitterPolicy {
  double initial_scale = 1e-10;
  double growth = 10.0;
  int max_retries = 6;
};

/// A symmetric positive-definite matrix together with its lower Cholesky
/// factor and log-determinant. `matrix` holds the jittered value when
/// loading was needed, so the factor always describes `matrix` exactly.
class CovarianceFactor {
 public:
  CovarianceFactor() = default;

  explicit CovarianceFactor(const Matrix& sigma, const JitterPolicy& policy = {}) {
    if (sigma.rows() == 0 || sigma.rows() != sigma.cols()) {
      throw std::invalid_argument("covariance must be a non-empty square matrix");
    }
    if (!sigma.allFinite()) throw std::invalid_argument("covariance has non-finite entries");
    const double scale = std::max(sigma.cwiseAbs().maxCoeff(), 1e-300);
    if ((sigma - sigma.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale) {
      throw std::invalid_argument("covariance is not symmetric");
    }
    matrix_ = 0.5 * (sigma + sigma.transpose());

    const auto dim = static_cast<double>(matrix_.rows());
    double base = matrix_.trace() / dim;
    if (!(base > 0.0)) base = 1.0;
    Matrix candidate = matrix_;
    for (int attempt = 0; attempt <= policy.max_retries; ++attempt) {
      if (attempt > 0) {
        const double load =
            policy.initial_scale * std::pow(policy.growth, attempt - 1) * base;
        candidate = matrix_;
        candidate.diagonal().array() += load;
      }
      if (try_factor(candidate)) {
        matrix_ = candidate;
        jitter_retries_ = attempt;
        return;
      }
    }
    throw std::runtime_error("covariance is not positive definite after " +
                             std::to_string(policy.max_retries) + " jitter retries");
  }

  const Matrix& matrix() const { return matrix_; }
  const Matrix& lower() const { return lower_; }
  double log_det() const { return log_det_; }
  Eigen::Index dim() const { return matrix_.rows(); }
  int jitter_retries() const { return jitter_retries_; }

  /// Squared Mahalanobis norm of an already-centred vector.
  double mahalanobis_sq(const Eigen::Ref<const Vector>& centred) const {
    const Vector y = lower_.triangularView<Eigen::Lower>().solve(centred);
    return y.squaredNorm();
  }

  /// Row-wise squared Mahalanobis distances of `samples` (n x D) from `mean`.
  Vector mahalanobis_sq_rows(const Eigen::Ref<const Matrix>& samples,
                             const Eigen::Ref<const Vector>& mean) const {
    const Eigen::Index n = samples.rows();
    Vector out(n);
    constexpr Eigen::Index kChunk = 1 << 14;
    Matrix work;
    for (Eigen::Index start = 0; start < n; start += kChunk) {
      const Eigen::Index len = std::min(kChunk, n - start);
      work = (samples.middleRows(start, len).rowwise() - mean.transpose()).transpose();
      lower_.triangularView<Eigen::Lower>().solveInPlace(work);
      out.segment(start, len) = work.colwise().squaredNorm().transpose();
    }
    return out;
  }

 private:
  bool try_factor(const Matrix& m) {
    Eigen::LLT<Matrix> llt(m);
    if (llt.info() != Eigen::Success) return false;
    Matrix l = llt.matrixL();
    const auto diag = l.diagonal();
    if (!diag.allFinite() || (diag.array() <= 0.0).any()) return false;
    log_det_ = 2.0 * diag.array().log().sum();
    lower_ = std::move(l);
    return true;
  }

  Matrix matrix_;
  Matrix lower_;
  double log_det_ = 0.0;
  int jitter_retries_ = 0;
};

}  // namespace hmsmm
