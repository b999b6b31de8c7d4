#include "hmsmm/emission.hpp"

#include "oracles.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace hmsmm {
namespace {

using testing::dense_log_gaussian;
using testing::dense_mahalanobis;
using testing::quadrature_log_emission;
using testing::random_spd;
using testing::random_vector;

EmissionParams standard(Eigen::Index dim, double nu) {
  return EmissionParams(Vector::Zero(dim), Matrix::Identity(dim, dim), nu);
}

TEST(Mahalanobis, ZeroAtMean) {
  std::mt19937_64 gen(1);
  for (Eigen::Index dim : {1, 3, 19}) {
    const Vector mu = random_vector(dim, gen);
    const EmissionParams p(mu, random_spd(dim, gen), 4.0);
    EXPECT_EQ(mahalanobis_sq(mu, p), 0.0);
  }
}

TEST(Mahalanobis, IdentityCovariance) {
  const EmissionParams p = standard(2, 5.0);
  EXPECT_DOUBLE_EQ(mahalanobis_sq(Vector{{3.0, 4.0}}, p), 25.0);
}

TEST(Mahalanobis, MatchesDenseInverse) {
  std::mt19937_64 gen(2);
  for (int rep = 0; rep < 50; ++rep) {
    const Matrix s = random_spd(3, gen);
    const Vector mu = random_vector(3, gen);
    const Vector x = random_vector(3, gen, 2.0);
    const EmissionParams p(mu, s, 3.0);
    const double ref = dense_mahalanobis(x, mu, s);
    EXPECT_NEAR(mahalanobis_sq(x, p), ref, 1e-10 * std::max(1.0, ref));
  }
}

TEST(Mahalanobis, RejectsBadInput) {
  const EmissionParams p = standard(2, 5.0);
  EXPECT_THROW(mahalanobis_sq(Vector::Zero(3), p), std::invalid_argument);
  EXPECT_THROW(mahalanobis_sq(Vector{{0.0, NAN}}, p), std::invalid_argument);
}

TEST(EmissionParams, ValidatesConstruction) {
  EXPECT_THROW(EmissionParams(Vector::Zero(2), Matrix::Identity(2, 2), 0.0), std::invalid_argument);
  EXPECT_THROW(EmissionParams(Vector::Zero(2), Matrix::Identity(2, 2), -1.0), std::invalid_argument);
  EXPECT_THROW(EmissionParams(Vector::Zero(3), Matrix::Identity(2, 2), 1.0), std::invalid_argument);
  Matrix asym{{1.0, 0.5}, {0.4, 1.0}};
  EXPECT_THROW(EmissionParams(Vector::Zero(2), asym, 1.0), std::invalid_argument);
  Matrix neg{{-1.0, 0.0}, {0.0, -1.0}};
  EXPECT_THROW(EmissionParams(Vector::Zero(2), neg, 1.0), std::runtime_error);

  const EmissionParams p = standard(3, 6.0);
  EXPECT_EQ(p.mixing_shape(), 3.0);
  EXPECT_EQ(p.mixing_rate(), 3.0);
  EXPECT_TRUE((p.factor().lower().diagonal().array() > 0.0).all());
}

TEST(EmissionParams, SingularCovarianceIsJittered) {
  Matrix s{{2.0, 0.0}, {0.0, 0.0}};
  const EmissionParams p(Vector::Zero(2), s, 4.0);
  EXPECT_GT(p.factor().jitter_retries(), 0);
  EXPECT_NEAR(p.sigma()(0, 0), 2.0, 1e-8);
  EXPECT_GT(p.sigma()(1, 1), 0.0);
  EXPECT_LT(p.sigma()(1, 1), 1e-3);
}

TEST(LogGaussianScaled, KnownValues) {
  const EmissionParams p = standard(1, 5.0);
  EXPECT_NEAR(log_gaussian_scaled({Vector::Zero(1), 1.0}, p), -0.918938533204673, 1e-12);
  EXPECT_NEAR(log_gaussian_scaled({Vector::Zero(1), 2.0}, p), -1.265512123484645, 1e-12);
  EXPECT_THROW(log_gaussian_scaled({Vector::Zero(1), 0.0}, p), std::invalid_argument);
  EXPECT_THROW(log_gaussian_scaled({Vector::Zero(1), -1.0}, p), std::invalid_argument);
}

TEST(LogGaussianScaled, MatchesDenseOracle) {
  std::mt19937_64 gen(3);
  for (int rep = 0; rep < 50; ++rep) {
    const Matrix s = random_spd(2, gen);
    const Vector mu = random_vector(2, gen);
    const Vector x = random_vector(2, gen, 2.0);
    const double u = std::exp(random_vector(1, gen)[0]);
    const EmissionParams p(mu, s, 3.0);
    EXPECT_NEAR(log_gaussian_scaled({x, u}, p), dense_log_gaussian(x, mu, s, u), 1e-10);
  }
}

TEST(LogInverseGamma, KnownValues) {
  EXPECT_NEAR(log_inverse_gamma(1.0, 1.0, 1.0), -1.0, 1e-15);
  EXPECT_NEAR(log_inverse_gamma(2.0, 3.0, 4.0), std::log(2.0) - 2.0, 1e-14);
  EXPECT_NEAR(log_inverse_gamma(2.0, 3.0, 4.0), -1.306853, 1e-6);
  EXPECT_THROW(log_inverse_gamma(0.0, 1.0, 1.0), std::invalid_argument);
  EXPECT_THROW(log_inverse_gamma(1.0, 0.0, 1.0), std::invalid_argument);
  EXPECT_THROW(log_inverse_gamma(1.0, 1.0, -1.0), std::invalid_argument);
}

TEST(LogInverseGamma, IntegratesToOne) {
  // Trapezoid over (0, 200]; the density vanishes to all orders at u -> 0.
  const double h = 1e-4;
  double total = 0.0;
  double prev = 0.0;
  for (double u = h; u <= 200.0 + 1e-12; u += h) {
    const double cur = std::exp(log_inverse_gamma(u, 2.0, 2.0));
    total += 0.5 * h * (prev + cur);
    prev = cur;
  }
  EXPECT_NEAR(total, 1.0, 1e-4);
}

TEST(LogEmission, CauchyCentre) {
  const EmissionParams p = standard(1, 1.0);
  EXPECT_NEAR(log_emission(Vector::Zero(1), p), -std::log(M_PI), 1e-12);
  EXPECT_NEAR(log_emission(Vector::Zero(1), p), -1.144730, 1e-6);
  EXPECT_NEAR(quadrature_log_emission(Vector::Zero(1), Vector::Zero(1), Matrix::Identity(1, 1), 1.0),
              -std::log(M_PI), 1e-8);
}

TEST(LogEmission, GaussianLimit) {
  const EmissionParams p = standard(1, 1e6);
  for (double x = -3.0; x <= 3.0; x += 0.25) {
    const Vector v{{x}};
    EXPECT_NEAR(log_emission(v, p), log_gaussian_scaled({v, 1.0}, p), 1e-4) << x;
  }
}

TEST(LogEmission, MatchesQuadratureOfScaleMixture) {
  std::mt19937_64 gen(4);
  const Eigen::Index dim = 3;
  for (int rep = 0; rep < 10; ++rep) {
    const Matrix s = random_spd(dim, gen);
    const Vector mu = random_vector(dim, gen);
    const Vector x = mu + random_vector(dim, gen, 1.5);
    const EmissionParams p(mu, s, 4.0);
    const double ref = quadrature_log_emission(x, mu, s, 4.0);
    EXPECT_NEAR(log_emission(x, p), ref, 1e-6 * std::abs(ref));
  }
}

TEST(LogEmission, RandomisedQuadratureSuite) {
  std::mt19937_64 gen(5);
  std::uniform_real_distribution<double> log_nu(std::log(0.5), std::log(100.0));
  for (int rep = 0; rep < 40; ++rep) {
    const Eigen::Index dim = 1 + rep % 4;
    const double nu = std::exp(log_nu(gen));
    const Matrix s = random_spd(dim, gen);
    const Vector mu = random_vector(dim, gen);
    const Vector x = mu + random_vector(dim, gen, 2.0);
    const EmissionParams p(mu, s, nu);
    const double ref = quadrature_log_emission(x, mu, s, nu);
    EXPECT_NEAR(log_emission(x, p), ref, 1e-6 * std::max(1.0, std::abs(ref)))
        << "D=" << dim << " nu=" << nu;
  }
}

TEST(LogEmission, NormalisedInOneDimension) {
  for (double nu : {1.0, 3.0, 30.0}) {
    const double sd = 1.7;
    const EmissionParams p(Vector{{0.4}}, Matrix{{sd * sd}}, nu);
    const double lo = 0.4 - 50.0 * sd;
    const double hi = 0.4 + 50.0 * sd;
    const int n = 200000;
    const double h = (hi - lo) / n;
    double total = 0.0;
    for (int i = 0; i <= n; ++i) {
      const double w = (i == 0 || i == n) ? 0.5 : 1.0;
      total += w * std::exp(log_emission(Vector{{lo + i * h}}, p));
    }
    total *= h;
    // The Cauchy case loses ~2/(50 pi) of its mass outside the grid.
    const double tail = nu == 1.0 ? 2.0 * std::atan(1.0 / 50.0) / M_PI : 0.0;
    EXPECT_NEAR(total, 1.0 - tail, 1e-3) << "nu=" << nu;
  }
}

TEST(LogEmission, InvariantUnderChannelPermutation) {
  std::mt19937_64 gen(6);
  const Eigen::Index dim = 4;
  const Matrix s = random_spd(dim, gen);
  const Vector mu = random_vector(dim, gen);
  const Vector x = random_vector(dim, gen, 2.0);
  Eigen::PermutationMatrix<Eigen::Dynamic> perm(dim);
  perm.indices() << 2, 0, 3, 1;
  const EmissionParams a(mu, s, 3.5);
  const EmissionParams b(perm * mu, perm * s * perm.transpose(), 3.5);
  EXPECT_NEAR(log_emission(x, a), log_emission(perm * x, b), 1e-12);
}

TEST(LogEmission, DecreasesWithDistance) {
  const EmissionParams p = standard(3, 2.5);
  double prev = log_emission(Vector::Zero(3), p);
  for (double r = 0.1; r < 100.0; r *= 1.3) {
    const double cur = log_emission(Vector::Constant(3, r), p);
    EXPECT_LT(cur, prev);
    prev = cur;
  }
}

TEST(LogEmission, BatchMatchesScalar) {
  std::mt19937_64 gen(7);
  const EmissionParams p(random_vector(3, gen), random_spd(3, gen), 2.2);
  Matrix xs(40, 3);
  for (int i = 0; i < 40; ++i) xs.row(i) = random_vector(3, gen, 3.0).transpose();
  const Vector batch = p.log_density_rows(xs);
  for (int i = 0; i < 40; ++i) {
    EXPECT_NEAR(batch[i], log_emission(xs.row(i).transpose(), p), 1e-12);
  }
}

TEST(Tau, KnownValues) {
  const EmissionParams p19 = standard(19, 4.0);
  EXPECT_DOUBLE_EQ(tau(Vector::Zero(19), p19), 5.75);
  // d = 19 with identity covariance: a vector of squared norm 19.
  EXPECT_NEAR(tau(Vector::Ones(19), p19), 1.0, 1e-15);
  const EmissionParams p2 = standard(2, 6.0);
  EXPECT_DOUBLE_EQ(tau(Vector{{1.0, 1.0}}, p2), 1.0);
}

TEST(Tau, DecreasingAndVanishing) {
  const EmissionParams p = standard(2, 3.0);
  double prev = tau(Vector::Zero(2), p);
  for (double r = 0.5; r < 1e6; r *= 2.0) {
    const double cur = tau(Vector{{r, 0.0}}, p);
    EXPECT_LT(cur, prev);
    EXPECT_GT(cur, 0.0);
    prev = cur;
  }
  EXPECT_LT(prev, 1e-9);
}

}  // namespace
}  // namespace hmsmm
