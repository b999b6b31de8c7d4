#include "hmsmm/detection.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

namespace hmsmm {
namespace {

std::vector<bool> bools(std::initializer_list<int> v) {
  std::vector<bool> out;
  for (int x : v) out.push_back(x != 0);
  return out;
}

std::vector<bool> repeat(std::initializer_list<std::pair<int, int>> runs) {
  std::vector<bool> out;
  for (const auto& [value, count] : runs) out.insert(out.end(), static_cast<std::size_t>(count), value != 0);
  return out;
}

// O(n^2) Mann-Whitney statistic.
double pairwise_auc(const std::vector<double>& s, const std::vector<bool>& y) {
  double wins = 0.0, pairs = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (!y[i]) continue;
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (y[j]) continue;
      pairs += 1.0;
      wins += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
    }
  }
  return wins / pairs;
}

TEST(SmoothProbability, ConstantIsExact) {
  const std::vector<double> p(20000, 0.7);
  for (double v : smooth_probability(p, 5.0, 500.0)) ASSERT_EQ(v, 0.7);
}

TEST(SmoothProbability, ImpulseInterior) {
  std::vector<double> p(20000, 0.0);
  p[10000] = 1.0;
  const auto s = smooth_probability(p, 5.0, 500.0);
  EXPECT_NEAR(s[10000], 4e-4, 1e-15);
  EXPECT_NEAR(*std::max_element(s.begin(), s.end()), 4e-4, 1e-15);
  EXPECT_EQ(s[0], 0.0);
}

TEST(SmoothProbability, MatchesNaiveAverage) {
  std::mt19937_64 gen(91);
  std::uniform_real_distribution<double> u01;
  for (int rep = 0; rep < 4; ++rep) {
    std::vector<double> p(1500);
    for (std::size_t i = 0; i < p.size(); ++i) p[i] = rep == 0 ? (i >= 700 ? 1.0 : 0.0) : u01(gen);
    const double fs = 40.0 + 10.0 * rep;  // windows of 200..350 samples
    const auto s = smooth_probability(p, 5.0, fs);
    const auto w = static_cast<long>(std::llround(5.0 * fs));
    for (long t = 0; t < static_cast<long>(p.size()); ++t) {
      const long lo = std::max(0L, t - w / 2);
      const long hi = std::min(static_cast<long>(p.size()), t - w / 2 + w);
      double acc = 0.0;
      for (long i = lo; i < hi; ++i) acc += p[static_cast<std::size_t>(i)];
      EXPECT_NEAR(s[static_cast<std::size_t>(t)], acc / static_cast<double>(hi - lo), 1e-12);
    }
    if (rep == 0) {
      EXPECT_TRUE(std::is_sorted(s.begin(), s.end()));
      EXPECT_EQ(s[400], 0.0);
      EXPECT_EQ(s[1000], 1.0);
    }
  }
}

TEST(SmoothProbability, BoundedAndEmpty) {
  std::mt19937_64 gen(92);
  std::uniform_real_distribution<double> u01;
  std::vector<double> p(5000);
  for (double& v : p) v = u01(gen) < 0.5 ? 0.0 : 1.0;
  for (double v : smooth_probability(p, 1.0, 500.0)) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
  EXPECT_TRUE(smooth_probability(std::vector<double>{}, 5.0, 500.0).empty());
}

TEST(SmoothProbability, AppendingFarSamplesLeavesDecisionsUnchanged) {
  std::mt19937_64 gen(93);
  std::uniform_real_distribution<double> u01;
  std::vector<double> p(6000);
  for (double& v : p) v = u01(gen);
  std::vector<double> longer = p;
  for (int i = 0; i < 4000; ++i) longer.push_back(u01(gen));
  const auto a = threshold_detect(smooth_probability(p, 5.0, 100.0));
  const auto b = threshold_detect(smooth_probability(longer, 5.0, 100.0));
  const std::size_t half_window = 250;
  for (std::size_t t = 0; t + half_window < p.size(); ++t) ASSERT_EQ(a[t], b[t]) << t;
}

TEST(ThresholdDetect, StrictTies) {
  EXPECT_EQ(threshold_detect(std::vector<double>{0.49, 0.50, 0.51}), bools({0, 0, 1}));
  EXPECT_EQ(threshold_detect(std::vector<double>(10, 0.0)), std::vector<bool>(10, false));
  std::mt19937_64 gen(94);
  std::uniform_real_distribution<double> u01;
  std::vector<double> p(1000);
  for (double& v : p) v = u01(gen);
  const auto d = threshold_detect(p, 0.3);
  for (std::size_t i = 0; i < p.size(); ++i) EXPECT_EQ(d[i], p[i] > 0.3);
}

TEST(ConfusionMetrics, PerfectDetection) {
  const auto truth = bools({0, 1, 1, 0, 1});
  const MetricsReport r = confusion_metrics(truth, truth);
  EXPECT_EQ(*r.sensitivity, 1.0);
  EXPECT_EQ(*r.specificity, 1.0);
  EXPECT_EQ(r.mcc, 1.0);
}

TEST(ConfusionMetrics, ChanceLevel) {
  const auto truth = repeat({{1, 50}, {0, 50}});
  const auto pred = repeat({{1, 25}, {0, 25}, {1, 25}, {0, 25}});
  const MetricsReport r = confusion_metrics(pred, truth);
  EXPECT_EQ(r.tp, 25);
  EXPECT_EQ(r.fn, 25);
  EXPECT_EQ(r.fp, 25);
  EXPECT_EQ(r.tn, 25);
  EXPECT_EQ(r.mcc, 0.0);
}

TEST(ConfusionMetrics, HandCase) {
  // TP=40, FN=10, TN=35, FP=15.
  const auto truth = repeat({{1, 50}, {0, 50}});
  const auto pred = repeat({{1, 40}, {0, 10}, {0, 35}, {1, 15}});
  const MetricsReport r = confusion_metrics(pred, truth);
  EXPECT_EQ(r.tp, 40);
  EXPECT_EQ(r.fn, 10);
  EXPECT_EQ(r.tn, 35);
  EXPECT_EQ(r.fp, 15);
  EXPECT_NEAR(*r.sensitivity, 0.8, 1e-15);
  EXPECT_NEAR(*r.specificity, 0.7, 1e-15);
  EXPECT_NEAR(r.mcc, (40.0 * 35.0 - 15.0 * 10.0) / std::sqrt(55.0 * 50.0 * 50.0 * 45.0), 1e-15);
  EXPECT_NEAR(r.mcc, 0.5025, 1e-4);
}

TEST(ConfusionMetrics, DegenerateClasses) {
  const MetricsReport none = confusion_metrics(bools({0, 0, 1}), bools({0, 0, 0}));
  EXPECT_FALSE(none.sensitivity.has_value());
  ASSERT_TRUE(none.specificity.has_value());
  EXPECT_NEAR(*none.specificity, 2.0 / 3.0, 1e-15);
  EXPECT_EQ(none.mcc, 0.0);
  const MetricsReport all = confusion_metrics(bools({1, 1}), bools({1, 1}));
  EXPECT_FALSE(all.specificity.has_value());
  EXPECT_EQ(all.mcc, 0.0);
  EXPECT_THROW(confusion_metrics(bools({1}), bools({1, 0})), std::invalid_argument);
}

TEST(ConfusionMetrics, MccSymmetricUnderClassSwap) {
  std::mt19937_64 gen(95);
  std::bernoulli_distribution coin(0.4);
  for (int rep = 0; rep < 50; ++rep) {
    std::vector<bool> p(300), t(300), pn(300), tn(300);
    for (std::size_t i = 0; i < 300; ++i) {
      p[i] = coin(gen);
      t[i] = coin(gen);
      pn[i] = !p[i];
      tn[i] = !t[i];
    }
    const double a = confusion_metrics(p, t).mcc;
    EXPECT_NEAR(a, confusion_metrics(pn, tn).mcc, 1e-15);
    EXPECT_GE(a, -1.0);
    EXPECT_LE(a, 1.0);
  }
}

TEST(AucRoc, Basics) {
  EXPECT_EQ(auc_roc(std::vector<double>{0.1, 0.9, 0.8, 0.2}, bools({0, 1, 1, 0})), 1.0);
  EXPECT_EQ(auc_roc(std::vector<double>{0.9, 0.1, 0.2, 0.8}, bools({0, 1, 1, 0})), 0.0);
  EXPECT_EQ(auc_roc(std::vector<double>(6, 0.3), bools({0, 1, 1, 0, 0, 1})), 0.5);
  try {
    auc_roc(std::vector<double>{0.1, 0.2}, bools({1, 1}));
    FAIL();
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("AUC undefined"), std::string::npos);
  }
  EXPECT_THROW(auc_roc(std::vector<double>{0.1}, bools({1, 0})), std::invalid_argument);
}

TEST(AucRoc, MatchesPairwiseOracle) {
  std::mt19937_64 gen(96);
  std::uniform_int_distribution<int> len(2, 500), levels(2, 20);
  std::uniform_real_distribution<double> u01;
  for (int rep = 0; rep < 100; ++rep) {
    const auto n = static_cast<std::size_t>(len(gen));
    const int lv = levels(gen);
    std::vector<double> s(n);
    std::vector<bool> y(n);
    for (std::size_t i = 0; i < n; ++i) {
      // Half the suites use coarse scores to exercise ties.
      s[i] = rep % 2 ? u01(gen) : std::floor(u01(gen) * lv) / lv;
      y[i] = u01(gen) < 0.3;
    }
    y[0] = true;
    y[1] = false;
    EXPECT_NEAR(auc_roc(s, y), pairwise_auc(s, y), 1e-12) << rep;
  }
}

TEST(AucPr, HandCase) {
  EXPECT_EQ(auc_pr(std::vector<double>{0.9, 0.8, 0.7, 0.6}, bools({1, 0, 1, 0})), 5.0 / 6.0);
  EXPECT_EQ(auc_pr(std::vector<double>{0.1, 0.9, 0.8, 0.2}, bools({0, 1, 1, 0})), 1.0);
  EXPECT_THROW(auc_pr(std::vector<double>{0.1, 0.2}, bools({0, 0})), std::invalid_argument);
}

TEST(AucPr, TiedScoresFormOnePoint) {
  // One operating point at recall 1, precision 2/4.
  EXPECT_EQ(auc_pr(std::vector<double>(4, 0.5), bools({1, 0, 1, 0})), 0.5);
}

TEST(AucPr, RandomScoresApproachPrevalence) {
  std::mt19937_64 gen(97);
  std::uniform_real_distribution<double> u01;
  for (double prevalence : {0.1, 0.3, 0.6}) {
    std::vector<double> s(10000);
    std::vector<bool> y(10000);
    for (std::size_t i = 0; i < s.size(); ++i) {
      s[i] = u01(gen);
      y[i] = u01(gen) < prevalence;
    }
    const double a = auc_pr(s, y);
    EXPECT_NEAR(a, prevalence, 0.05);
    EXPECT_GE(a, 0.0);
    EXPECT_LE(a, 1.0);
  }
}

PosteriorSequence one_hot(const std::vector<int>& z, int k) {
  PosteriorSequence p{Matrix::Zero(static_cast<Eigen::Index>(z.size()), k), 0.0};
  for (std::size_t t = 0; t < z.size(); ++t) p.gamma(static_cast<Eigen::Index>(t), z[t] - 1) = 1.0;
  return p;
}

std::vector<int> segments(std::initializer_list<std::pair<int, int>> runs) {
  std::vector<int> z;
  for (const auto& [state, count] : runs) z.insert(z.end(), static_cast<std::size_t>(count), state);
  return z;
}

TEST(EvaluateSequence, PerfectPosteriorOddWindow) {
  // 100.2 Hz makes the 5 s window 501 samples, symmetric about t; every
  // segment spans far more than one window.
  const auto z = segments({{1, 3000}, {2, 3000}, {3, 3000}, {1, 3000}});
  const auto [det, m] = evaluate_sequence(one_hot(z, 3), z, 100.2);
  EXPECT_EQ(*m.sensitivity, 1.0);
  EXPECT_EQ(*m.specificity, 1.0);
  EXPECT_EQ(m.mcc, 1.0);
  EXPECT_EQ(*m.auc_roc, 1.0);
  EXPECT_EQ(*m.auc_pr, 1.0);
  EXPECT_EQ(det.threshold, 0.5);
  EXPECT_EQ(det.seizure_prob.size(), z.size());
}

TEST(EvaluateSequence, PerfectPosteriorEvenWindowTiesAtOnset) {
  // An even window cannot be centred: the onset sample averages to exactly
  // 0.5 and the strict threshold rejects it, and so does the first sample
  // after offset.
  const auto z = segments({{1, 3000}, {2, 3000}, {3, 3000}, {1, 3000}});
  const auto [det, m] = evaluate_sequence(one_hot(z, 3), z, 100.0);
  EXPECT_EQ(det.seizure_prob[3000], 0.5);
  EXPECT_EQ(det.seizure_prob[6000], 0.5);
  EXPECT_EQ(m.tp, 2999);
  EXPECT_EQ(m.fn, 1);
  EXPECT_EQ(m.fp, 0);
  EXPECT_EQ(m.tn, 9000);
  std::vector<bool> y(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) y[i] = z[i] == 2;
  EXPECT_NEAR(*m.auc_roc, pairwise_auc(det.seizure_prob, y), 1e-12);
  EXPECT_NEAR(*m.auc_pr, 2999.0 / 3000.0 + (1.0 / 3000.0) * (3000.0 / 3001.0), 1e-12);
}

TEST(EvaluateSequence, UniformPosteriorDetectsNothing) {
  const auto z = segments({{1, 1000}, {2, 1000}, {3, 1000}});
  PosteriorSequence p{Matrix::Constant(3000, 3, 1.0 / 3.0), 0.0};
  const auto [det, m] = evaluate_sequence(p, z, 100.0);
  EXPECT_EQ(std::count(det.predicted.begin(), det.predicted.end(), true), 0);
  EXPECT_EQ(*m.sensitivity, 0.0);
  EXPECT_EQ(m.mcc, 0.0);
  EXPECT_EQ(*m.auc_roc, 0.5);
}

TEST(EvaluateSequence, SmoothingLabelsMode) {
  const auto z = segments({{1, 2000}, {2, 2000}, {3, 2000}});
  PosteriorSequence p = one_hot(z, 3);
  // Flicker: isolated 0.9 spikes in state 1 that label smoothing removes.
  for (Eigen::Index t = 100; t < 1800; t += 97) {
    p.gamma(t, 0) = 0.1;
    p.gamma(t, 1) = 0.9;
  }
  DetectionConfig cfg;
  cfg.smoothing_window_s = 1.0;
  cfg.smoothing_target = SmoothingTarget::labels;
  const auto [det, m] = evaluate_sequence(p, z, 100.0, 2, cfg);
  EXPECT_EQ(m.fp, 0);
  EXPECT_EQ(det.seizure_prob.size(), z.size());
  EXPECT_THROW(evaluate_sequence(p, z, 100.0, 4), std::invalid_argument);
  EXPECT_THROW(evaluate_sequence(p, std::vector<int>(5, 1), 100.0), std::invalid_argument);
  cfg.threshold = 1.0;
  EXPECT_THROW(evaluate_sequence(p, z, 100.0, 2, cfg), std::invalid_argument);
}

}  // namespace
}  // namespace hmsmm
