#pragma once

// Sampling from the generative model: Markov state path, inverse-gamma
// latent scales and scaled Gaussian observations.
//
// Random streams are pinned: std::mt19937_64 (whose output sequence the C++
// standard fixes), 53-bit uniforms from the top bits, Marsaglia polar
// normals and Marsaglia-Tsang gamma variates.

#include "hmsmm/inference.hpp"

#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <stdexcept>
#include <vector>

namespace hmsmm {

/// SplitMix64 finaliser.
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Seed for the index-th child stream of a master seed.
inline std::uint64_t child_seed(std::uint64_t master, std::uint64_t index) {
  return mix64(mix64(master) ^ mix64(index + 0x632be59bd9b4e019ULL));
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  /// Uniform on [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  /// Uniform on (0, 1).
  double uniform_open() { return (static_cast<double>(engine_() >> 11) + 0.5) * 0x1.0p-53; }

  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u, v, s;
    do {
      u = 2.0 * uniform() - 1.0;
      v = 2.0 * uniform() - 1.0;
      s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    const double f = std::sqrt(-2.0 * std::log(s) / s);
    spare_ = v * f;
    has_spare_ = true;
    return u * f;
  }

  /// Gamma(shape, rate 1).
  double gamma(double shape) {
    if (!(shape > 0.0) || !std::isfinite(shape)) {
      throw std::invalid_argument("gamma shape must be positive");
    }
    if (shape < 1.0) {
      // Boost: G(a) = G(a + 1) * U^(1/a).
      return gamma(shape + 1.0) * std::pow(uniform_open(), 1.0 / shape);
    }
    const double d = shape - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
      double x, v;
      do {
        x = normal();
        v = 1.0 + c * x;
      } while (v <= 0.0);
      v = v * v * v;
      const double u = uniform_open();
      if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
      if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
    }
  }

  /// Index drawn from a discrete distribution (zero-weight entries are never
  /// returned).
  int categorical(const Eigen::Ref<const Vector>& probs) {
    const double u = uniform() * probs.sum();
    double cum = 0.0;
    int last_positive = -1;
    for (Eigen::Index k = 0; k < probs.size(); ++k) {
      if (probs[k] <= 0.0) continue;
      cum += probs[k];
      last_positive = static_cast<int>(k);
      if (u < cum) return last_positive;
    }
    if (last_positive < 0) throw std::invalid_argument("categorical weights are all zero");
    return last_positive;
  }

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

/// u ~ IG(a, b) drawn as b / Gamma(a, 1).
inline double sample_inverse_gamma(double a, double b, Rng& rng) {
  if (!(a > 0.0) || !(b > 0.0)) throw std::invalid_argument("inverse-gamma parameters must be positive");
  return b / rng.gamma(a);
}

/// z_1 ~ pi, z_t | z_{t-1} ~ row of A; labels are 1-based.
inline StateSequence sample_state_path(const TransitionModel& transition, std::size_t length,
                                       Rng& rng) {
  transition.validate();
  StateSequence path(length);
  if (length == 0) return path;
  path[0] = rng.categorical(transition.pi) + 1;
  for (std::size_t t = 1; t < length; ++t) {
    path[t] = rng.categorical(transition.A.row(path[t - 1] - 1).transpose()) + 1;
  }
  return path;
}

struct GeneratorSpec {
  HmsmmModel model;
  std::size_t length = 0;
  std::uint64_t seed = 0;
  std::optional<StateSequence> forced_path;
};

struct SyntheticDraw {
  Matrix samples;       // T x D
  StateSequence states;
  Vector scales;        // latent u_t
};

inline SyntheticDraw sample_sequence(const GeneratorSpec& spec) {
  spec.model.validate();
  if (spec.length < 1) throw std::invalid_argument("sequence length must be >= 1");
  Rng rng(spec.seed);
  SyntheticDraw out;
  if (spec.forced_path) {
    if (spec.forced_path->size() != spec.length) {
      throw std::invalid_argument("forced path length does not match the sequence length");
    }
    for (int z : *spec.forced_path) {
      if (z < 1 || z > spec.model.num_states()) throw std::invalid_argument("forced state out of range");
    }
    out.states = *spec.forced_path;
  } else {
    out.states = sample_state_path(spec.model.transition, spec.length, rng);
  }
  const Eigen::Index dim = spec.model.dim();
  const auto t_len = static_cast<Eigen::Index>(spec.length);
  out.samples.resize(t_len, dim);
  out.scales.resize(t_len);
  Vector z(dim);
  for (Eigen::Index t = 0; t < t_len; ++t) {
    const auto state = out.states[static_cast<std::size_t>(t)];
    const EmissionParams& e = spec.model.emissions[static_cast<std::size_t>(state - 1)];
    const double u = sample_inverse_gamma(e.mixing_shape(), e.mixing_rate(), rng);
    for (Eigen::Index c = 0; c < dim; ++c) z[c] = rng.normal();
    out.scales[t] = u;
    out.samples.row(t) = (e.mu() + std::sqrt(u) * (e.factor().lower() * z)).transpose();
  }
  return out;
}

}  // namespace hmsmm
