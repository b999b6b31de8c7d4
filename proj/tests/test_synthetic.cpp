#include "hmsmm/synthetic.hpp"

#include "oracles.hpp"

#include <boost/math/distributions/chi_squared.hpp>
#include <gtest/gtest.h>

#include <cmath>
#include <set>

namespace hmsmm {
namespace {

HmsmmModel single_state(const Vector& mu, const Matrix& sigma, double nu) {
  HmsmmModel m;
  m.transition = {Vector::Ones(1), Matrix::Ones(1, 1), full_mask(1)};
  m.emissions.emplace_back(mu, sigma, nu);
  return m;
}

TEST(SampleInverseGamma, MeanIdentity) {
  Rng rng(121);
  const int n = 1000000;
  long double sum = 0.0L;
  for (int i = 0; i < n; ++i) sum += sample_inverse_gamma(3.0, 4.0, rng);
  // IG(3, 4): mean b/(a-1) = 2, variance b^2/((a-1)^2 (a-2)) = 4.
  const double se = std::sqrt(4.0 / n);
  EXPECT_NEAR(static_cast<double>(sum / n), 2.0, 3.0 * se);
}

TEST(SampleInverseGamma, InverseMeanForNuSix) {
  Rng rng(122);
  const int n = 1000000;
  long double sum = 0.0L;
  for (int i = 0; i < n; ++i) sum += 1.0 / sample_inverse_gamma(3.0, 3.0, rng);
  // 1/u ~ Gamma(3, rate 3): mean 1, variance 1/3.
  EXPECT_NEAR(static_cast<double>(sum / n), 1.0, 3.0 * std::sqrt(1.0 / 3.0 / n));
}

TEST(SampleInverseGamma, SmallShapeUsesBoosting) {
  Rng rng(123);
  const int n = 400000;
  long double sum = 0.0L;
  for (int i = 0; i < n; ++i) sum += rng.gamma(0.3);
  // Gamma(0.3, 1): mean 0.3, variance 0.3.
  EXPECT_NEAR(static_cast<double>(sum / n), 0.3, 3.0 * std::sqrt(0.3 / n));
  EXPECT_THROW(sample_inverse_gamma(0.0, 1.0, rng), std::invalid_argument);
  EXPECT_THROW(sample_inverse_gamma(1.0, -1.0, rng), std::invalid_argument);
}

TEST(Rng, Deterministic) {
  Rng a(7), b(7), c(8);
  bool differs = false;
  for (int i = 0; i < 1000; ++i) {
    const double x = sample_inverse_gamma(2.5, 2.5, a);
    ASSERT_EQ(x, sample_inverse_gamma(2.5, 2.5, b));
    differs = differs || x != sample_inverse_gamma(2.5, 2.5, c);
  }
  EXPECT_TRUE(differs);
}

TEST(Rng, ChildSeedsDistinct) {
  std::set<std::uint64_t> seen;
  for (std::uint64_t m = 0; m < 20; ++m)
    for (std::uint64_t i = 0; i < 50; ++i) seen.insert(child_seed(m, i));
  EXPECT_EQ(seen.size(), 1000u);
  EXPECT_EQ(child_seed(5, 3), child_seed(5, 3));
}

TEST(SampleStatePath, AbsorbingChain) {
  Rng rng(124);
  const TransitionModel tm{Vector{{1.0, 0.0, 0.0}}, Matrix::Identity(3, 3), full_mask(3)};
  const StateSequence z = sample_state_path(tm, 5000, rng);
  EXPECT_TRUE(std::all_of(z.begin(), z.end(), [](int s) { return s == 1; }));
}

TEST(SampleStatePath, RespectsStructuralZeros) {
  Rng rng(125);
  const TransitionModel tm{Vector{{0.5, 0.3, 0.2}},
                           Matrix{{0.9, 0.1, 0.0}, {0.0, 0.8, 0.2}, {0.3, 0.0, 0.7}},
                           seizure_cycle_mask()};
  const StateSequence z = sample_state_path(tm, 1000000, rng);
  const Mask mask = seizure_cycle_mask();
  for (std::size_t t = 1; t < z.size(); ++t) ASSERT_TRUE(mask(z[t - 1] - 1, z[t] - 1)) << t;
}

TEST(SampleStatePath, EmpiricalFrequencies) {
  Rng rng(126);
  const TransitionModel tm{Vector{{0.2, 0.5, 0.3}},
                           Matrix{{0.6, 0.3, 0.1}, {0.25, 0.5, 0.25}, {0.05, 0.15, 0.8}},
                           full_mask(3)};
  const StateSequence z = sample_state_path(tm, 500000, rng);
  const TransitionCounts c = count_transitions(std::vector<StateSequence>{z}, 3);
  for (Eigen::Index j = 0; j < 3; ++j) {
    const double n = static_cast<double>(c.transition.row(j).sum());
    for (Eigen::Index k = 0; k < 3; ++k) {
      const double p = tm.A(j, k);
      // Bonferroni over 9 entries at family-wise 1e-3.
      EXPECT_NEAR(static_cast<double>(c.transition(j, k)) / n, p, 3.87 * std::sqrt(p * (1 - p) / n));
    }
  }
}

TEST(SampleSequence, GaussianLimitCovariance) {
  const Matrix sigma{{2.0, 0.6, -0.3}, {0.6, 1.0, 0.2}, {-0.3, 0.2, 0.5}};
  const Vector mu{{1.0, -2.0, 0.5}};
  const int n = 100000;
  const SyntheticDraw d = sample_sequence({single_state(mu, sigma, 1e12), n, 127, std::nullopt});
  const Vector mean = d.samples.colwise().mean().transpose();
  const Matrix centred = d.samples.rowwise() - mean.transpose();
  const Matrix cov = centred.transpose() * centred / n;
  for (Eigen::Index i = 0; i < 3; ++i) {
    EXPECT_NEAR(mean[i], mu[i], 4.0 * std::sqrt(sigma(i, i) / n));
    for (Eigen::Index j = 0; j < 3; ++j) {
      // Var of a Gaussian sample covariance entry: (s_ii s_jj + s_ij^2) / n.
      const double se = std::sqrt((sigma(i, i) * sigma(j, j) + sigma(i, j) * sigma(i, j)) / n);
      EXPECT_NEAR(cov(i, j), sigma(i, j), 4.0 * se) << i << "," << j;
    }
  }
}

TEST(SampleSequence, StudentKurtosis) {
  const int n = 1000000;
  const SyntheticDraw d =
      sample_sequence({single_state(Vector::Zero(2), Matrix{{1.0, 0.4}, {0.4, 2.0}}, 5.0), n, 128, std::nullopt});
  for (Eigen::Index c = 0; c < 2; ++c) {
    const Vector x = d.samples.col(c).array() - d.samples.col(c).mean();
    const double m2 = x.array().square().mean();
    const double m4 = x.array().square().square().mean();
    // Excess kurtosis 6/(nu - 4) = 6; the estimator has no finite variance
    // at nu = 5, hence the factor-of-two band.
    const double excess = m4 / (m2 * m2) - 3.0;
    EXPECT_GT(excess, 3.0);
    EXPECT_LT(excess, 12.0);
  }
}

double mardia_skewness_statistic(const Matrix& x) {
  const auto n = static_cast<double>(x.rows());
  const Vector mean = x.colwise().mean().transpose();
  const Matrix c = x.rowwise() - mean.transpose();
  const Matrix s = c.transpose() * c / n;
  const Matrix g = c * s.inverse() * c.transpose();
  return n / 6.0 * g.array().cube().sum() / (n * n);
}

TEST(SampleSequence, GaussianLimitPassesMardia) {
  const Matrix sigma{{1.0, 0.5, 0.1}, {0.5, 2.0, -0.4}, {0.1, -0.4, 0.7}};
  const double dof = 3.0 * 4.0 * 5.0 / 6.0;
  const double critical = boost::math::quantile(boost::math::chi_squared(dof), 0.99);
  int pass = 0;
  const int seeds = 40;
  for (int s = 0; s < seeds; ++s) {
    const SyntheticDraw d =
        sample_sequence({single_state(Vector::Zero(3), sigma, 1e12), 1000, child_seed(129, s), std::nullopt});
    if (mardia_skewness_statistic(d.samples) < critical) ++pass;
  }
  EXPECT_GE(pass, 38);  // >= 95% of 40
}

double lag1_autocorrelation(const Vector& v) {
  const Vector c = v.array() - v.mean();
  return c.head(c.size() - 1).dot(c.tail(c.size() - 1)) / c.squaredNorm();
}

TEST(SampleSequence, StreamsUncorrelatedInTime) {
  const Matrix sigma{{1.0, 0.3}, {0.3, 1.5}};
  const int n = 200000;
  const SyntheticDraw d = sample_sequence({single_state(Vector::Zero(2), sigma, 4.0), n, 130, std::nullopt});
  const double bound = 3.0 / std::sqrt(static_cast<double>(n));
  EXPECT_LT(std::abs(lag1_autocorrelation(d.scales)), bound);
  const Eigen::LLT<Matrix> llt(sigma);
  for (Eigen::Index c = 0; c < 2; ++c) {
    Vector resid(n);
    for (Eigen::Index t = 0; t < n; ++t) {
      const Vector w = llt.matrixL().solve(d.samples.row(t).transpose()) / std::sqrt(d.scales[t]);
      resid[t] = w[c];
    }
    EXPECT_LT(std::abs(lag1_autocorrelation(resid)), bound);
  }
}

TEST(SampleSequence, ForcedPathAndDeterminism) {
  std::mt19937_64 gen(131);
  HmsmmModel m;
  m.transition = {Vector{{1.0, 0.0}}, Matrix{{0.5, 0.5}, {0.5, 0.5}}, full_mask(2)};
  m.emissions.emplace_back(Vector{{0.0}}, Matrix{{1.0}}, 5.0);
  m.emissions.emplace_back(Vector{{100.0}}, Matrix{{1.0}}, 5.0);
  StateSequence forced(400, 1);
  for (std::size_t t = 100; t < 200; ++t) forced[t] = 2;
  const SyntheticDraw a = sample_sequence({m, 400, 9, forced});
  const SyntheticDraw b = sample_sequence({m, 400, 9, forced});
  EXPECT_EQ(a.states, forced);
  EXPECT_EQ(a.samples, b.samples);
  EXPECT_EQ(a.scales, b.scales);
  EXPECT_TRUE((a.scales.array() > 0.0).all());
  for (std::size_t t = 0; t < 400; ++t) {
    EXPECT_EQ(a.samples(static_cast<Eigen::Index>(t), 0) > 50.0, forced[t] == 2);
  }
  EXPECT_THROW(sample_sequence({m, 399, 9, forced}), std::invalid_argument);
  forced[0] = 3;
  EXPECT_THROW(sample_sequence({m, 400, 9, forced}), std::invalid_argument);
  EXPECT_THROW(sample_sequence({m, 0, 9, std::nullopt}), std::invalid_argument);
}

}  // namespace
}  // namespace hmsmm
