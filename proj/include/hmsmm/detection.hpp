#pragma once

// Post-processing of seizure probabilities and samplewise detection metrics.

#include "hmsmm/inference.hpp"
#include "hmsmm/signal.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

namespace hmsmm {

/// Centred moving average over `window_seconds`, truncated at the edges.
inline std::vector<double> smooth_probability(std::span<const double> probs,
                                              double window_seconds, double sampling_rate_hz) {
  const auto n = static_cast<Eigen::Index>(probs.size());
  const Eigen::Index w = window_samples(window_seconds, sampling_rate_hz);
  if (probs.empty()) return {};
  // Prefix sums of deviations from the first value keep constant runs exact.
  const double ref = probs[0];
  std::vector<double> prefix(probs.size() + 1, 0.0);
  for (std::size_t i = 0; i < probs.size(); ++i) prefix[i + 1] = prefix[i] + (probs[i] - ref);
  std::vector<double> out(probs.size());
  for (Eigen::Index t = 0; t < n; ++t) {
    const auto [lo, hi] = detail::centred_window(t, w, n);
    const double avg =
        ref + (prefix[static_cast<std::size_t>(hi)] - prefix[static_cast<std::size_t>(lo)]) /
                  static_cast<double>(hi - lo);
    out[static_cast<std::size_t>(t)] = std::clamp(avg, 0.0, 1.0);
  }
  return out;
}

/// Strict comparison: a probability equal to the threshold is non-seizure.
inline std::vector<bool> threshold_detect(std::span<const double> probs, double threshold = 0.5) {
  std::vector<bool> out(probs.size());
  for (std::size_t i = 0; i < probs.size(); ++i) out[i] = probs[i] > threshold;
  return out;
}

struct MetricsReport {
  std::optional<double> sensitivity;
  std::optional<double> specificity;
  double mcc = 0.0;
  std::optional<double> auc_roc;
  std::optional<double> auc_pr;
  std::int64_t tp = 0, fp = 0, tn = 0, fn = 0;
};

/// Sensitivity, specificity and MCC. An empty class leaves the matching rate
/// unset; a zero factor in the MCC denominator gives MCC = 0.
inline MetricsReport confusion_metrics(const std::vector<bool>& predicted,
                                       const std::vector<bool>& truth) {
  if (predicted.size() != truth.size()) throw std::invalid_argument("length mismatch");
  if (predicted.empty()) throw std::invalid_argument("empty prediction");
  MetricsReport r;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i]) {
      predicted[i] ? ++r.tp : ++r.fn;
    } else {
      predicted[i] ? ++r.fp : ++r.tn;
    }
  }
  const auto tp = static_cast<double>(r.tp), fp = static_cast<double>(r.fp);
  const auto tn = static_cast<double>(r.tn), fn = static_cast<double>(r.fn);
  if (r.tp + r.fn > 0) r.sensitivity = tp / (tp + fn);
  if (r.tn + r.fp > 0) r.specificity = tn / (tn + fp);
  const double denom = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn);
  r.mcc = denom > 0.0 ? (tp * tn - fp * fn) / std::sqrt(denom) : 0.0;
  return r;
}

namespace detail {

// Indices sorted by descending score (stable, so ties keep input order).
inline std::vector<std::size_t> descending_order(std::span<const double> scores) {
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return idx;
}

inline void require_scores(std::span<const double> scores, const std::vector<bool>& truth) {
  if (scores.size() != truth.size()) throw std::invalid_argument("length mismatch");
  for (double s : scores) {
    if (std::isnan(s)) throw std::invalid_argument("NaN score");
  }
}

}  // namespace detail

/// Area under the ROC curve: trapezoidal integration over distinct
/// thresholds, equal to the Mann-Whitney statistic with ties counted half.
inline double auc_roc(std::span<const double> scores, const std::vector<bool>& truth) {
  detail::require_scores(scores, truth);
  const auto pos = static_cast<double>(std::count(truth.begin(), truth.end(), true));
  const double neg = static_cast<double>(truth.size()) - pos;
  if (pos == 0.0 || neg == 0.0) throw std::invalid_argument("AUC undefined");
  const auto order = detail::descending_order(scores);
  double tp = 0.0, fp = 0.0, area = 0.0;
  std::size_t i = 0;
  while (i < order.size()) {
    const double s = scores[order[i]];
    double dtp = 0.0, dfp = 0.0;
    for (; i < order.size() && scores[order[i]] == s; ++i) {
      truth[order[i]] ? ++dtp : ++dfp;
    }
    area += dfp * (tp + 0.5 * dtp);
    tp += dtp;
    fp += dfp;
  }
  return area / (pos * neg);
}

/// Area under the precision-recall curve by the step rule
/// sum (R_i - R_{i-1}) * P_i over a descending-threshold sweep (tied
/// scores form one operating point).
inline double auc_pr(std::span<const double> scores, const std::vector<bool>& truth) {
  detail::require_scores(scores, truth);
  const auto pos = static_cast<double>(std::count(truth.begin(), truth.end(), true));
  if (pos == 0.0) throw std::invalid_argument("AUC-PR undefined without positives");
  const auto order = detail::descending_order(scores);
  // Recall steps are dtp / pos; the division by pos is deferred to the end.
  double tp = 0.0, seen = 0.0;
  long double area = 0.0L;
  std::size_t i = 0;
  while (i < order.size()) {
    const double s = scores[order[i]];
    double dtp = 0.0;
    for (; i < order.size() && scores[order[i]] == s; ++i) {
      seen += 1.0;
      if (truth[order[i]]) dtp += 1.0;
    }
    tp += dtp;
    if (dtp > 0.0) area += static_cast<long double>(dtp) * tp / seen;
  }
  return static_cast<double>(area / pos);
}

enum class SmoothingTarget { probability, labels };

struct DetectionConfig {
  double smoothing_window_s = 5.0;
  double threshold = 0.5;
  SmoothingTarget smoothing_target = SmoothingTarget::probability;
};

struct DetectionResult {
  std::vector<double> seizure_prob;
  std::vector<bool> predicted;
  double threshold = 0.5;
};

/// Smooths, thresholds and scores one posterior column against the truth.
/// AUCs are computed from the smoothed probabilities.
inline std::pair<DetectionResult, MetricsReport> evaluate_probabilities(
    std::span<const double> seizure_prob, const std::vector<int>& truth, int seizure_state,
    double sampling_rate_hz, const DetectionConfig& config = {}) {
  if (seizure_prob.size() != truth.size()) throw std::invalid_argument("length mismatch");
  if (!(config.threshold > 0.0 && config.threshold < 1.0)) {
    throw std::invalid_argument("threshold must lie in (0, 1)");
  }
  DetectionResult det;
  det.threshold = config.threshold;
  if (config.smoothing_target == SmoothingTarget::probability) {
    det.seizure_prob = smooth_probability(seizure_prob, config.smoothing_window_s, sampling_rate_hz);
    det.predicted = threshold_detect(det.seizure_prob, config.threshold);
  } else {
    // Smooth the hard per-sample decisions instead of the probabilities.
    const auto hard = threshold_detect(seizure_prob, config.threshold);
    std::vector<double> as_double(hard.begin(), hard.end());
    const auto smoothed =
        smooth_probability(as_double, config.smoothing_window_s, sampling_rate_hz);
    det.seizure_prob = smooth_probability(seizure_prob, config.smoothing_window_s, sampling_rate_hz);
    det.predicted = threshold_detect(smoothed, config.threshold);
  }
  std::vector<bool> actual(truth.size());
  for (std::size_t i = 0; i < truth.size(); ++i) actual[i] = truth[i] == seizure_state;

  MetricsReport report = confusion_metrics(det.predicted, actual);
  const bool has_pos = report.tp + report.fn > 0;
  const bool has_neg = report.tn + report.fp > 0;
  if (has_pos && has_neg) report.auc_roc = auc_roc(det.seizure_prob, actual);
  if (has_pos) report.auc_pr = auc_pr(det.seizure_prob, actual);
  return {std::move(det), report};
}

/// Extracts the seizure-state column of a posterior and evaluates it.
inline std::pair<DetectionResult, MetricsReport> evaluate_sequence(
    const PosteriorSequence& post, const std::vector<int>& truth, double sampling_rate_hz,
    int seizure_state = 2, const DetectionConfig& config = {}) {
  if (seizure_state < 1 || seizure_state > post.gamma.cols()) {
    throw std::invalid_argument("seizure state outside the posterior's state range");
  }
  if (static_cast<std::size_t>(post.gamma.rows()) != truth.size()) {
    throw std::invalid_argument("length mismatch");
  }
  const Vector col = post.gamma.col(seizure_state - 1);
  return evaluate_probabilities(std::span<const double>(col.data(), static_cast<std::size_t>(col.size())),
                                truth, seizure_state, sampling_rate_hz, config);
}

}  // namespace hmsmm
