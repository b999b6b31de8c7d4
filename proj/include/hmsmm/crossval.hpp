#pragma once

// Leave-one-sequence-out evaluation over every configured band.

#include "hmsmm/io.hpp"

#include <algorithm>
#include <cstdlib>
#include <exception>
#include <limits>
#include <mutex>
#include <thread>

namespace hmsmm {

struct CvSequence {
  std::string id;
  EegSequence sequence;
  StateSequence labels;
};

/// Filter bank followed by first-window normalisation of every band output.
inline std::vector<EegSequence> preprocess(const EegSequence& seq, const PipelineConfig& config) {
  std::vector<EegSequence> out = filter_bank(seq, config.bands);
  for (auto& band : out) {
    band = normalize_first_window(band, config.normalization_window_s, config.normalization_mode);
  }
  return out;
}

struct FoldProvenance {
  std::string held_out;
  std::string held_out_checksum;
  std::vector<std::string> training_ids;
  std::vector<std::string> training_checksums;
};

struct CvFoldResult {
  std::string held_out;
  std::vector<MetricsRow> rows;                 // one per (model, band), config order
  std::map<std::string, std::string> best_band;  // model -> band with the highest MCC
  FoldProvenance provenance;
};

struct SummaryStat {
  double mean = 0.0;
  double sd = 0.0;  // sample standard deviation, 0 for a single value
  int n = 0;        // folds where the metric is defined
};

struct SummaryRow {
  std::string model;
  std::string band;
  SummaryStat sensitivity, specificity, mcc, auc_roc, auc_pr;
};

struct CvReport {
  std::vector<CvFoldResult> folds;
  std::vector<SummaryRow> summary;
  std::vector<std::string> bands;
  std::vector<std::string> models;
  std::map<std::string, std::map<std::string, int>> best_band_counts;  // model -> band -> folds
};

/// Worker count from HMSMM_THREADS, else the hardware concurrency.
inline unsigned worker_count(std::size_t tasks) {
  unsigned n = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("HMSMM_THREADS")) {
    const int v = std::atoi(env);
    if (v < 1) throw std::invalid_argument("HMSMM_THREADS must be a positive integer");
    n = static_cast<unsigned>(v);
  }
  return static_cast<unsigned>(std::min<std::size_t>(n, std::max<std::size_t>(tasks, 1)));
}

/// Runs task(i) for i in [0, count) on up to `threads` workers. The first
/// failure in index order is rethrown after every worker has stopped.
template <class Task>
void parallel_for(std::size_t count, unsigned threads, Task&& task) {
  std::vector<std::exception_ptr> errors(count);
  std::size_t next = 0;
  std::mutex m;
  auto worker = [&] {
    for (;;) {
      std::size_t i;
      {
        std::lock_guard<std::mutex> lock(m);
        if (next >= count) return;
        i = next++;
      }
      try {
        task(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

namespace detail {

inline SummaryStat summarise(const std::vector<double>& v) {
  SummaryStat s;
  s.n = static_cast<int>(v.size());
  if (v.empty()) {
    s.mean = s.sd = std::numeric_limits<double>::quiet_NaN();
    return s;
  }
  double sum = 0.0;
  for (double x : v) sum += x;
  s.mean = sum / static_cast<double>(v.size());
  if (v.size() > 1) {
    double ss = 0.0;
    for (double x : v) ss += (x - s.mean) * (x - s.mean);
    s.sd = std::sqrt(ss / static_cast<double>(v.size() - 1));
  }
  return s;
}

struct BandModels {
  std::optional<HmsmmModel> hmsmm;
  std::optional<GhmmModel> ghmm;
  std::optional<SmmStaticModel> smm;
};

inline bool wants(const PipelineConfig& c, const char* m) {
  return std::find(c.models.begin(), c.models.end(), m) != c.models.end();
}

inline BandModels train_band(const std::vector<const Matrix*>& samples,
                             const std::vector<const StateSequence*>& labels, const PipelineConfig& config) {
  LabeledDataset data;
  data.num_states = config.num_states;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    data.sequences.push_back(*samples[i]);
    data.labels.push_back(*labels[i]);
  }
  const TransitionModel transition =
      estimate_transitions(count_transitions(data.labels, config.num_states), config.transition_mask()).model;
  BandModels out;
  if (wants(config, "hmsmm") || wants(config, "hmsmm-filtering") || wants(config, "smm-static")) {
    DatasetFit fit = fit_all_states(data, config.em);
    if (wants(config, "smm-static")) {
      out.smm = SmmStaticModel{fit.emissions, StaticPrior::from_labels(data.labels, config.num_states)};
    }
    out.hmsmm = HmsmmModel{transition, std::move(fit.emissions)};
  }
  if (wants(config, "ghmm")) out.ghmm = GhmmModel{transition, fit_gaussian_states(data, config.em.jitter)};
  return out;
}

inline Matrix model_probabilities(const BandModels& m, const std::string& name, const Matrix& x) {
  if (name == "hmsmm") return posterior(*m.hmsmm, x).gamma;
  if (name == "hmsmm-filtering") return filter_forward(*m.hmsmm, x);
  if (name == "ghmm") return ghmm_posterior(*m.ghmm, x).gamma;
  return smm_static_posterior(m.smm->emissions, m.smm->prior, x);
}

}  // namespace detail

/// Leave-one-sequence-out cross-validation. Every band is preprocessed once per
/// sequence; each (fold, band) pair trains on all other sequences only.
inline CvReport run_crossval(const std::vector<CvSequence>& data, const PipelineConfig& config) {
  config.validate();
  if (data.size() < 2) throw std::invalid_argument("crossval needs at least 2 sequences");
  for (std::size_t i = 0; i < data.size(); ++i) {
    data[i].sequence.validate();
    if (static_cast<std::size_t>(data[i].sequence.length()) != data[i].labels.size()) {
      throw std::invalid_argument("sequence '" + data[i].id + "': label count does not match length");
    }
    for (std::size_t j = 0; j < i; ++j) {
      if (data[j].id == data[i].id) throw std::invalid_argument("duplicate sequence id '" + data[i].id + "'");
    }
    if (data[i].sequence.channels() != data[0].sequence.channels()) {
      throw std::invalid_argument("sequence '" + data[i].id + "' has a different channel count");
    }
  }
  const std::size_t n_seq = data.size();
  const std::size_t n_band = config.bands.size();

  // prepared[s][b]
  std::vector<std::vector<EegSequence>> prepared(n_seq);
  std::vector<std::string> checksums(n_seq);
  parallel_for(n_seq, worker_count(n_seq), [&](std::size_t s) {
    try {
      prepared[s] = preprocess(data[s].sequence, config);
      checksums[s] = matrix_checksum(data[s].sequence.samples);
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument("sequence '" + data[s].id + "': " + e.what());
    }
  });

  CvReport report;
  for (const auto& b : config.bands) report.bands.push_back(b.name);
  report.models = config.models;
  report.folds.resize(n_seq);
  std::vector<std::vector<std::vector<MetricsRow>>> cells(n_seq, std::vector<std::vector<MetricsRow>>(n_band));

  for (std::size_t f = 0; f < n_seq; ++f) {
    FoldProvenance& p = report.folds[f].provenance;
    p.held_out = data[f].id;
    p.held_out_checksum = checksums[f];
    for (std::size_t s = 0; s < n_seq; ++s) {
      if (s == f) continue;
      p.training_ids.push_back(data[s].id);
      p.training_checksums.push_back(checksums[s]);
    }
    if (std::find(p.training_ids.begin(), p.training_ids.end(), p.held_out) != p.training_ids.end()) {
      throw std::logic_error("held-out sequence present in its own training set");
    }
    report.folds[f].held_out = data[f].id;
  }

  parallel_for(n_seq * n_band, worker_count(n_seq * n_band), [&](std::size_t task) {
    const std::size_t f = task / n_band;
    const std::size_t b = task % n_band;
    const std::string where = "fold '" + data[f].id + "' band '" + config.bands[b].name + "': ";
    try {
      std::vector<const Matrix*> xs;
      std::vector<const StateSequence*> zs;
      for (std::size_t s = 0; s < n_seq; ++s) {
        if (s == f) continue;
        xs.push_back(&prepared[s][b].samples);
        zs.push_back(&data[s].labels);
      }
      const detail::BandModels models = detail::train_band(xs, zs, config);
      const Matrix& held = prepared[f][b].samples;
      for (const auto& name : config.models) {
        const Matrix probs = detail::model_probabilities(models, name, held);
        const Vector col = probs.col(config.seizure_state - 1);
        const auto [det, metrics] = evaluate_probabilities(
            std::span<const double>(col.data(), static_cast<std::size_t>(col.size())), data[f].labels,
            config.seizure_state, prepared[f][b].sampling_rate_hz, config.detection);
        cells[f][b].push_back({name, config.bands[b].name, data[f].id, metrics});
      }
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument(where + e.what());
    } catch (const std::exception& e) {
      throw std::runtime_error(where + e.what());
    }
  });

  for (std::size_t f = 0; f < n_seq; ++f) {
    CvFoldResult& fold = report.folds[f];
    for (const auto& model : config.models) {
      std::optional<double> best;
      for (std::size_t b = 0; b < n_band; ++b) {
        for (const auto& row : cells[f][b]) {
          if (row.model != model) continue;
          fold.rows.push_back(row);
          if (!best || row.metrics.mcc > *best) {
            best = row.metrics.mcc;
            fold.best_band[model] = row.band;
          }
        }
      }
      ++report.best_band_counts[model][fold.best_band[model]];
    }
  }

  for (const auto& model : config.models) {
    for (const auto& band : report.bands) {
      std::vector<double> sens, spec, mcc, roc, pr;
      for (const auto& fold : report.folds) {
        for (const auto& r : fold.rows) {
          if (r.model != model || r.band != band) continue;
          if (r.metrics.sensitivity) sens.push_back(*r.metrics.sensitivity);
          if (r.metrics.specificity) spec.push_back(*r.metrics.specificity);
          mcc.push_back(r.metrics.mcc);
          if (r.metrics.auc_roc) roc.push_back(*r.metrics.auc_roc);
          if (r.metrics.auc_pr) pr.push_back(*r.metrics.auc_pr);
        }
      }
      report.summary.push_back({model, band, detail::summarise(sens), detail::summarise(spec),
                                detail::summarise(mcc), detail::summarise(roc), detail::summarise(pr)});
    }
  }
  return report;
}

/// Every per-fold metrics row, fold-major.
inline std::vector<MetricsRow> all_rows(const CvReport& r) {
  std::vector<MetricsRow> out;
  for (const auto& f : r.folds) out.insert(out.end(), f.rows.begin(), f.rows.end());
  return out;
}

inline const SummaryRow& summary_for(const CvReport& r, const std::string& model, const std::string& band) {
  for (const auto& s : r.summary) {
    if (s.model == model && s.band == band) return s;
  }
  throw std::invalid_argument("no summary for model '" + model + "' band '" + band + "'");
}

namespace detail {

inline std::string mean_sd_cell(const SummaryStat& s) {
  if (s.n == 0) return "n/a";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.4f ± %.4f", s.mean, s.sd);
  return buf;
}

inline OrderedJson stat_json(const SummaryStat& s) {
  if (s.n == 0) return OrderedJson{{"mean", nullptr}, {"sd", nullptr}, {"n", 0}};
  return OrderedJson{{"mean", s.mean}, {"sd", s.sd}, {"n", s.n}};
}

}  // namespace detail

inline std::string summary_csv_text(const CvReport& r) {
  std::string out = "model,band,folds,Sensitivity,Specificity,MCC,AUC-ROC,AUC-PR\n";
  for (const auto& s : r.summary) {
    out += s.model + "," + s.band + "," + std::to_string(s.mcc.n) + "," + detail::mean_sd_cell(s.sensitivity) +
           "," + detail::mean_sd_cell(s.specificity) + "," + detail::mean_sd_cell(s.mcc) + "," +
           detail::mean_sd_cell(s.auc_roc) + "," + detail::mean_sd_cell(s.auc_pr) + "\n";
  }
  return out;
}

inline OrderedJson summary_json(const CvReport& r) {
  OrderedJson rows = OrderedJson::array();
  for (const auto& s : r.summary) {
    rows.push_back({{"model", s.model},
                    {"band", s.band},
                    {"sensitivity", detail::stat_json(s.sensitivity)},
                    {"specificity", detail::stat_json(s.specificity)},
                    {"mcc", detail::stat_json(s.mcc)},
                    {"auc_roc", detail::stat_json(s.auc_roc)},
                    {"auc_pr", detail::stat_json(s.auc_pr)}});
  }
  OrderedJson best = OrderedJson::object();
  for (const auto& model : r.models) {
    OrderedJson counts = OrderedJson::object();
    for (const auto& band : r.bands) {
      const auto& m = r.best_band_counts.at(model);
      const auto it = m.find(band);
      counts[band] = it == m.end() ? 0 : it->second;
    }
    best[model] = counts;
  }
  OrderedJson folds = OrderedJson::array();
  for (const auto& f : r.folds) {
    folds.push_back({{"held_out", f.held_out}, {"best_band", f.best_band}});
  }
  return OrderedJson{{"summary", rows}, {"best_band_counts", best}, {"folds", folds}};
}

inline std::string best_band_csv_text(const CvReport& r) {
  std::string out = "model,band,patients_with_highest_mcc\n";
  for (const auto& model : r.models) {
    const auto& m = r.best_band_counts.at(model);
    for (const auto& band : r.bands) {
      const auto it = m.find(band);
      out += model + "," + band + "," + std::to_string(it == m.end() ? 0 : it->second) + "\n";
    }
  }
  return out;
}

inline OrderedJson provenance_json(const CvReport& r) {
  OrderedJson out = OrderedJson::array();
  for (const auto& f : r.folds) {
    const auto& p = f.provenance;
    out.push_back({{"held_out", p.held_out},
                   {"held_out_checksum", p.held_out_checksum},
                   {"training_ids", p.training_ids},
                   {"training_checksums", p.training_checksums}});
  }
  return out;
}

/// Writes metrics.csv, summary.csv, summary.json and best_band.csv under
/// `dir`; returns the paths written.
inline std::vector<std::filesystem::path> write_crossval_outputs(const std::filesystem::path& dir,
                                                                 const CvReport& r) {
  const auto rows = all_rows(r);
  write_metrics_csv(dir / "metrics.csv", rows);
  auto csv_check = [](std::size_t expect_lines, const std::string& path) {
    return [expect_lines, path](const std::string& text) {
      if (static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n')) != expect_lines) {
        throw std::runtime_error("CSV self-check failed for '" + path + "'");
      }
    };
  };
  write_checked(dir / "summary.csv", summary_csv_text(r),
                csv_check(r.summary.size() + 1, (dir / "summary.csv").string()));
  write_json_checked(dir / "summary.json", summary_json(r));
  write_checked(dir / "best_band.csv", best_band_csv_text(r),
                csv_check(r.models.size() * r.bands.size() + 1, (dir / "best_band.csv").string()));
  return {dir / "metrics.csv", dir / "summary.csv", dir / "summary.json", dir / "best_band.csv"};
}

}  // namespace hmsmm
