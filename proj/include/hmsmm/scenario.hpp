#pragma once

// Synthetic seizure recordings: pre-seizure, one seizure, post-seizure, with
// optional impulsive artifacts outside the seizure.

#include "hmsmm/crossval.hpp"
#include "hmsmm/synthetic.hpp"

namespace hmsmm {

struct ScenarioState {
  double cov_scale = 1.0;  // multiplies the shared base covariance
  double nu = 10.0;
};

struct ScenarioConfig {
  int num_sequences = 20;
  double duration_s = 300.0;
  double sampling_rate_hz = 500.0;
  int channels = 8;
  double onset_min_s = 60.0;          // earliest seizure onset
  double post_min_s = 60.0;           // shortest post-seizure segment
  double seizure_min_s = 30.0;
  double seizure_max_s = 70.0;
  double gain_min = 0.5;              // per-recording amplitude gain range
  double gain_max = 2.0;
  double artifact_rate = 0.0;         // per-sample probability outside the seizure
  double artifact_scale = 10.0;
  std::vector<ScenarioState> states = {{1.0, 20.0}, {4.0, 4.0}, {1.5, 10.0}};

  void validate() const {
    if (num_sequences < 1 || channels < 1) throw std::invalid_argument("synth: need >= 1 sequence and channel");
    if (!(sampling_rate_hz > 0.0) || !(duration_s > 0.0)) throw std::invalid_argument("synth: rate and duration must be positive");
    if (!(seizure_min_s > 0.0) || seizure_max_s < seizure_min_s) throw std::invalid_argument("synth: bad seizure duration range");
    if (!(onset_min_s >= 0.0) || !(post_min_s > 0.0) || onset_min_s + seizure_max_s + post_min_s > duration_s) {
      throw std::invalid_argument("synth: duration too short for onset, seizure and post-seizure segments");
    }
    if (!(gain_min > 0.0) || gain_max < gain_min) throw std::invalid_argument("synth: bad gain range");
    if (!(artifact_rate >= 0.0 && artifact_rate <= 1.0) || !(artifact_scale > 0.0)) {
      throw std::invalid_argument("synth: artifact_rate must lie in [0, 1] and artifact_scale be positive");
    }
    if (states.size() != 3) throw std::invalid_argument("synth: exactly 3 states are required");
    for (const auto& s : states) {
      if (!(s.cov_scale > 0.0) || !(s.nu > 0.0)) throw std::invalid_argument("synth: state scales and nu must be positive");
    }
  }
};

inline ScenarioConfig parse_scenario_json(const Json& j) {
  ScenarioConfig c;
  if (j.is_null()) return c;
  try {
    detail::reject_unknown_keys(j,
                                {"num_sequences", "duration_s", "sampling_rate_hz", "channels", "onset_min_s",
                                 "post_min_s", "seizure_min_s", "seizure_max_s", "gain_min", "gain_max",
                                 "artifact_rate", "artifact_scale", "states"},
                                "synth");
    c.num_sequences = j.value("num_sequences", c.num_sequences);
    c.duration_s = j.value("duration_s", c.duration_s);
    c.sampling_rate_hz = j.value("sampling_rate_hz", c.sampling_rate_hz);
    c.channels = j.value("channels", c.channels);
    c.onset_min_s = j.value("onset_min_s", c.onset_min_s);
    c.post_min_s = j.value("post_min_s", c.post_min_s);
    c.seizure_min_s = j.value("seizure_min_s", c.seizure_min_s);
    c.seizure_max_s = j.value("seizure_max_s", c.seizure_max_s);
    c.gain_min = j.value("gain_min", c.gain_min);
    c.gain_max = j.value("gain_max", c.gain_max);
    c.artifact_rate = j.value("artifact_rate", c.artifact_rate);
    c.artifact_scale = j.value("artifact_scale", c.artifact_scale);
    if (j.contains("states")) {
      c.states.clear();
      for (const auto& s : j.at("states")) {
        detail::reject_unknown_keys(s, {"cov_scale", "nu"}, "synth state");
        c.states.push_back({s.at("cov_scale").get<double>(), s.at("nu").get<double>()});
      }
    }
  } catch (const Json::exception& e) {
    throw std::invalid_argument(std::string("synth: ") + e.what());
  }
  c.validate();
  return c;
}

struct ScenarioRecording {
  CvSequence data;
  LabelInterval seizure;  // [start_s, end_s); post-seizure follows to the end
  std::size_t artifacts = 0;
};

struct Scenario {
  HmsmmModel model;  // generating model (before per-recording gain)
  std::vector<ScenarioRecording> recordings;
};

/// Shared unit-diagonal base covariance for a master seed.
inline Matrix scenario_base_covariance(int channels, std::uint64_t seed) {
  Rng rng(child_seed(seed, 0xC0FFEEULL));
  Matrix w(channels, channels);
  for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = rng.normal();
  Matrix s = w * w.transpose() / channels + Matrix::Identity(channels, channels);
  const Vector inv_sd = s.diagonal().cwiseSqrt().cwiseInverse();
  return inv_sd.asDiagonal() * s * inv_sd.asDiagonal();
}

/// Draws every recording. Recording i uses only seeds derived from (seed, i).
inline Scenario generate_scenario(const ScenarioConfig& c, std::uint64_t seed) {
  c.validate();
  Scenario out;
  const Matrix base = scenario_base_covariance(c.channels, seed);
  out.model.transition = {Vector{{1.0, 0.0, 0.0}},
                          Matrix{{0.999, 0.001, 0.0}, {0.0, 0.9995, 0.0005}, {0.0005, 0.0, 0.9995}},
                          seizure_cycle_mask()};
  for (const auto& s : c.states) out.model.emissions.emplace_back(Vector::Zero(c.channels), s.cov_scale * base, s.nu);

  const auto length = static_cast<std::size_t>(std::llround(c.duration_s * c.sampling_rate_hz));
  for (int i = 0; i < c.num_sequences; ++i) {
    const std::uint64_t rec_seed = child_seed(seed, static_cast<std::uint64_t>(i));
    Rng rng(child_seed(rec_seed, 1));
    const auto samples_of = [&](double s) { return static_cast<std::size_t>(std::llround(s * c.sampling_rate_hz)); };
    const std::size_t dur = samples_of(c.seizure_min_s + rng.uniform() * (c.seizure_max_s - c.seizure_min_s));
    const std::size_t lo = samples_of(c.onset_min_s);
    const std::size_t hi = length - samples_of(c.post_min_s) - dur;
    const std::size_t onset = lo + static_cast<std::size_t>(rng.uniform() * static_cast<double>(hi - lo + 1));
    const double gain = c.gain_min + rng.uniform() * (c.gain_max - c.gain_min);

    StateSequence path(length, 1);
    for (std::size_t t = onset; t < onset + dur; ++t) path[t] = 2;
    for (std::size_t t = onset + dur; t < length; ++t) path[t] = 3;
    SyntheticDraw draw = sample_sequence({out.model, length, child_seed(rec_seed, 2), path});

    ScenarioRecording rec;
    Rng art(child_seed(rec_seed, 3));
    for (std::size_t t = 0; t < length; ++t) {
      const bool hit = art.uniform() < c.artifact_rate;
      if (hit && path[t] != 2) {
        draw.samples.row(static_cast<Eigen::Index>(t)) *= c.artifact_scale;
        ++rec.artifacts;
      }
    }
    draw.samples *= gain;
    char id[32];
    std::snprintf(id, sizeof id, "seq_%03d", i);
    rec.data = {id, EegSequence{std::move(draw.samples), c.sampling_rate_hz, {}}, std::move(path)};
    rec.seizure = {2, static_cast<double>(onset) / c.sampling_rate_hz,
                   static_cast<double>(onset + dur) / c.sampling_rate_hz};
    out.recordings.push_back(std::move(rec));
  }
  return out;
}

}  // namespace hmsmm
