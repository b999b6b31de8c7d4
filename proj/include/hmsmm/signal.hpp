#pragma once

// Band decomposition, first-window amplitude normalisation and moving RMS.

#include "hmsmm/covariance.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

namespace hmsmm {

/// One recording: T x D samples (row t is x_t) at a fixed sampling rate.
struct EegSequence {
  Matrix samples;
  double sampling_rate_hz = 0.0;
  std::vector<std::string> channel_names;

  Eigen::Index length() const { return samples.rows(); }
  Eigen::Index channels() const { return samples.cols(); }

  void validate() const {
    if (samples.rows() < 1 || samples.cols() < 1) {
      throw std::invalid_argument("sequence must have at least one sample and one channel");
    }
    if (!(sampling_rate_hz > 0.0) || !std::isfinite(sampling_rate_hz)) {
      throw std::invalid_argument("sampling rate must be positive");
    }
    if (!samples.allFinite()) throw std::invalid_argument("sequence has non-finite samples");
    if (!channel_names.empty() &&
        channel_names.size() != static_cast<std::size_t>(samples.cols())) {
      throw std::invalid_argument("channel name count does not match channel count");
    }
  }
};

/// A named frequency band. `passthrough` bands skip filtering entirely and
/// carry no edges.
struct BandSpec {
  std::string name;
  double low_hz = 0.0;
  double high_hz = 0.0;
  bool passthrough = false;

  static BandSpec raw() { return {"raw", 0.0, 0.0, true}; }

  void validate(double sampling_rate_hz) const {
    if (passthrough) return;
    if (!(low_hz > 0.0) || !(low_hz < high_hz) || !(high_hz < 0.5 * sampling_rate_hz)) {
      throw std::invalid_argument("band '" + name + "' needs 0 < low < high < fs/2");
    }
  }
};

inline std::vector<BandSpec> default_eeg_bands() {
  return {{"delta", 1.0, 3.0, false},
          {"theta", 4.0, 7.0, false},
          {"alpha", 8.0, 12.0, false},
          {"beta", 13.0, 24.0, false},
          {"gamma", 25.0, 80.0, false}};
}

/// Second-order section: (b0 + b1 z^-1 + b2 z^-2) / (1 + a1 z^-1 + a2 z^-2).
struct Biquad {
  double b0, b1, b2, a1, a2;
};

/// Digital Butterworth band-pass of the given prototype order as a cascade
/// of biquads (bilinear transform with pre-warped edges). The band-pass
/// polynomial order is 2 * prototype_order; unit gain at the band centre.
inline std::vector<Biquad> butterworth_bandpass(int prototype_order, double low_hz,
                                                double high_hz, double sampling_rate_hz) {
  if (prototype_order < 1) throw std::invalid_argument("filter order must be >= 1");
  BandSpec{"bandpass", low_hz, high_hz, false}.validate(sampling_rate_hz);
  using C = std::complex<double>;
  const double fs2 = 2.0 * sampling_rate_hz;
  const double w_lo = fs2 * std::tan(std::numbers::pi * low_hz / sampling_rate_hz);
  const double w_hi = fs2 * std::tan(std::numbers::pi * high_hz / sampling_rate_hz);
  const double bw = w_hi - w_lo;
  const double w0_sq = w_lo * w_hi;

  // Prototype poles in the upper half plane; their conjugates produce the
  // conjugate band-pass poles, so each maps to two biquads' worth of roots
  // and we keep the upper-half-plane member of every pair.
  std::vector<C> analog;
  for (int i = 0; i < prototype_order; ++i) {
    const double theta =
        std::numbers::pi * (2.0 * i + 1.0 + prototype_order) / (2.0 * prototype_order);
    const C p = std::polar(1.0, theta);
    const C half = 0.5 * p * bw;
    const C disc = std::sqrt(half * half - w0_sq);
    for (const C s : {half + disc, half - disc}) {
      if (s.imag() > 0.0) analog.push_back(s);
    }
  }
  if (static_cast<int>(analog.size()) != prototype_order) {
    throw std::runtime_error("unexpected real pole in band-pass design");
  }

  const double centre = 2.0 * std::atan(std::sqrt(w0_sq) / fs2);  // rad/sample
  const C zc = std::polar(1.0, -centre);                           // z^-1 at the centre
  std::vector<Biquad> sections;
  for (const C s : analog) {
    const C z = (fs2 + s) / (fs2 - s);
    Biquad q{1.0, 0.0, -1.0, -2.0 * z.real(), std::norm(z)};
    const C num = q.b0 + q.b1 * zc + q.b2 * zc * zc;
    const C den = 1.0 + q.a1 * zc + q.a2 * zc * zc;
    const double g = 1.0 / std::abs(num / den);
    q.b0 *= g;
    q.b2 *= g;
    sections.push_back(q);
  }
  return sections;
}

namespace detail {

// Direct form II transposed, zero initial state, in place.
inline void run_sections(const std::vector<Biquad>& sections, std::vector<double>& x) {
  for (const Biquad& q : sections) {
    double s1 = 0.0;
    double s2 = 0.0;
    for (double& v : x) {
      const double in = v;
      const double out = q.b0 * in + s1;
      s1 = q.b1 * in - q.a1 * out + s2;
      s2 = q.b2 * in - q.a2 * out;
      v = out;
    }
  }
}

}  // namespace detail

/// Zero-phase (forward-backward) filtering of one channel with odd
/// reflection padding of `pad` samples at each end (capped at n - 1).
inline std::vector<double> filtfilt(const std::vector<Biquad>& sections,
                                    const std::vector<double>& x, std::size_t pad) {
  const std::size_t n = x.size();
  if (n == 0) return {};
  pad = std::min(pad, n - 1);
  std::vector<double> ext(n + 2 * pad);
  for (std::size_t i = 0; i < pad; ++i) {
    ext[i] = 2.0 * x[0] - x[pad - i];
    ext[n + pad + i] = 2.0 * x[n - 1] - x[n - 2 - i];
  }
  std::copy(x.begin(), x.end(), ext.begin() + static_cast<std::ptrdiff_t>(pad));
  detail::run_sections(sections, ext);
  std::reverse(ext.begin(), ext.end());
  detail::run_sections(sections, ext);
  std::reverse(ext.begin(), ext.end());
  return {ext.begin() + static_cast<std::ptrdiff_t>(pad),
          ext.begin() + static_cast<std::ptrdiff_t>(pad + n)};
}

struct FilterDesign {
  int prototype_order = 2;    // band-pass order 4, order 8 after the two passes
  double padding_periods = 3.0;  // edge padding in periods of the lower edge
};

/// One zero-phase band-pass output per band, each channel filtered
/// independently. Passthrough bands return the input unchanged.
inline std::vector<EegSequence> filter_bank(const EegSequence& seq,
                                            const std::vector<BandSpec>& bands,
                                            const FilterDesign& design = {}) {
  seq.validate();
  for (const auto& b : bands) b.validate(seq.sampling_rate_hz);
  std::vector<EegSequence> out;
  out.reserve(bands.size());
  const auto n = static_cast<std::size_t>(seq.length());
  std::vector<double> column(n);
  for (const auto& band : bands) {
    EegSequence res{seq.samples, seq.sampling_rate_hz, seq.channel_names};
    if (!band.passthrough) {
      const auto sections =
          butterworth_bandpass(design.prototype_order, band.low_hz, band.high_hz,
                               seq.sampling_rate_hz);
      const auto pad = static_cast<std::size_t>(
          std::ceil(design.padding_periods * seq.sampling_rate_hz / band.low_hz));
      for (Eigen::Index c = 0; c < seq.channels(); ++c) {
        for (std::size_t t = 0; t < n; ++t) column[t] = seq.samples(static_cast<Eigen::Index>(t), c);
        const auto filtered = filtfilt(sections, column, pad);
        for (std::size_t t = 0; t < n; ++t) res.samples(static_cast<Eigen::Index>(t), c) = filtered[t];
      }
    }
    out.push_back(std::move(res));
  }
  return out;
}

enum class NormalizationMode { pooled, per_channel };

/// Window length in samples for a duration in seconds (at least one sample).
inline Eigen::Index window_samples(double seconds, double sampling_rate_hz) {
  if (!(seconds > 0.0)) throw std::invalid_argument("window length must be positive");
  return std::max<Eigen::Index>(1, std::llround(seconds * sampling_rate_hz));
}

/// Divides the recording by the standard deviation of its first window.
/// Pooled mode uses one scalar computed over every channel's samples;
/// per-channel mode scales each channel by its own deviation.
inline EegSequence normalize_first_window(const EegSequence& seq, double window_seconds = 5.0,
                                          NormalizationMode mode = NormalizationMode::pooled) {
  seq.validate();
  const Eigen::Index w = window_samples(window_seconds, seq.sampling_rate_hz);
  if (seq.length() < w) throw std::invalid_argument("sequence shorter than normalisation window");
  const auto head = seq.samples.topRows(w);
  EegSequence out = seq;
  if (mode == NormalizationMode::pooled) {
    const double mean = head.mean();
    const double var = (head.array() - mean).square().mean();
    const double sd = std::sqrt(var);
    if (!(sd > 0.0)) throw std::invalid_argument("zero normalization std");
    out.samples /= sd;
  } else {
    for (Eigen::Index c = 0; c < seq.channels(); ++c) {
      const auto col = head.col(c);
      const double mean = col.mean();
      const double sd = std::sqrt((col.array() - mean).square().mean());
      if (!(sd > 0.0)) {
        throw std::invalid_argument("zero normalization std in channel " + std::to_string(c + 1));
      }
      out.samples.col(c) /= sd;
    }
  }
  return out;
}

namespace detail {

// Centred window [t - w/2, t - w/2 + w) clipped to [0, n).
inline std::pair<Eigen::Index, Eigen::Index> centred_window(Eigen::Index t, Eigen::Index w,
                                                             Eigen::Index n) {
  const Eigen::Index lo = std::max<Eigen::Index>(0, t - w / 2);
  const Eigen::Index hi = std::min<Eigen::Index>(n, t - w / 2 + w);
  return {lo, hi};
}

}  // namespace detail

/// Centred moving root-mean-square per channel, truncated at the edges.
inline Matrix rms_feature(const EegSequence& seq, double window_seconds = 2.0) {
  seq.validate();
  const Eigen::Index n = seq.length();
  const Eigen::Index w = window_samples(window_seconds, seq.sampling_rate_hz);
  Matrix out(n, seq.channels());
  std::vector<long double> prefix(static_cast<std::size_t>(n) + 1);
  for (Eigen::Index c = 0; c < seq.channels(); ++c) {
    prefix[0] = 0.0L;
    for (Eigen::Index t = 0; t < n; ++t) {
      const long double v = seq.samples(t, c);
      prefix[static_cast<std::size_t>(t) + 1] = prefix[static_cast<std::size_t>(t)] + v * v;
    }
    for (Eigen::Index t = 0; t < n; ++t) {
      const auto [lo, hi] = detail::centred_window(t, w, n);
      const long double sum =
          prefix[static_cast<std::size_t>(hi)] - prefix[static_cast<std::size_t>(lo)];
      out(t, c) = std::sqrt(std::max(0.0, static_cast<double>(sum / (hi - lo))));
    }
  }
  return out;
}

}  // namespace hmsmm
