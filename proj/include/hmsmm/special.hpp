#pragma once

#include <array>
#include <cmath>
#include <limits>
#include <numbers>

namespace hmsmm::special {

// Natural log of the gamma function. Lanczos approximation (g = 7, 9 terms)
// for x >= 0.5, reflection formula below that. Poles return +inf.
inline double log_gamma(double x) {
  constexpr std::array<double, 9> kLanczos = {
      0.99999999999980993,     676.5203681218851,     -1259.1392167224028,
      771.32342877765313,      -176.61502916214059,   12.507343278686905,
      -0.13857109526572012,    9.9843695780195716e-6, 1.5056327351493116e-7};
  constexpr double kG = 7.0;

  if (std::isnan(x)) return x;
  if (x < 0.5) {
    if (x == std::floor(x)) return std::numeric_limits<double>::infinity();
    const double s = std::sin(std::numbers::pi * x);
    return std::log(std::numbers::pi / std::abs(s)) - log_gamma(1.0 - x);
  }
  if (x == 1.0 || x == 2.0) return 0.0;
  const double z = x - 1.0;
  double series = kLanczos[0];
  for (std::size_t i = 1; i < kLanczos.size(); ++i) {
    series += kLanczos[i] / (z + static_cast<double>(i));
  }
  const double t = z + kG + 0.5;
  return 0.5 * std::log(2.0 * std::numbers::pi) + (z + 0.5) * std::log(t) - t +
         std::log(series);
}

namespace detail {

// Stirling remainder ln G(z) - [(z - 1/2) ln z - z + ln(2 pi)/2], valid for z >= 10.
inline double stirling_tail(double z) {
  const double r = 1.0 / z;
  const double r2 = r * r;
  return r * (1.0 / 12.0 -
              r2 * (1.0 / 360.0 - r2 * (1.0 / 1260.0 - r2 * (1.0 / 1680.0))));
}

}  // namespace detail

/// ln G(a + h) - ln G(a) without the cancellation that the direct difference
/// suffers once a is large (the Student-t normaliser at nu ~ 1e9).
inline double log_gamma_ratio(double a, double h) {
  if (a < 10.0 || a + h < 10.0) return log_gamma(a + h) - log_gamma(a);
  const double b = a + h;
  return (a - 0.5) * std::log1p(h / a) + h * std::log(b) - h +
         detail::stirling_tail(b) - detail::stirling_tail(a);
}

// Digamma. Upward recurrence to x >= 10 then the asymptotic series.
inline double digamma(double x) {
  if (std::isnan(x)) return x;
  if (x <= 0.0) {
    if (x == std::floor(x)) return std::numeric_limits<double>::quiet_NaN();
    return digamma(1.0 - x) - std::numbers::pi / std::tan(std::numbers::pi * x);
  }
  double shift = 0.0;
  while (x < 10.0) {
    shift -= 1.0 / x;
    x += 1.0;
  }
  const double r = 1.0 / x;
  const double r2 = r * r;
  const double tail =
      r2 * (1.0 / 12.0 -
            r2 * (1.0 / 120.0 -
                  r2 * (1.0 / 252.0 -
                        r2 * (1.0 / 240.0 - r2 * (1.0 / 132.0 - r2 * (691.0 / 32760.0))))));
  return shift + std::log(x) - 0.5 * r - tail;
}

}  // namespace hmsmm::special
