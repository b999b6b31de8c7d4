#pragma once

// Command-line driver: synth, preprocess, train, predict, evaluate, crossval.
// Exit codes: 0 success, 2 usage or validation error, 1 internal error.

#include "hmsmm/scenario.hpp"

#include "CLI11.hpp"

#include <iostream>

namespace hmsmm {

namespace fs = std::filesystem;

/// Sequence id of a data file: its file name up to the first dot.
inline std::string sequence_id(const fs::path& p) {
  const std::string name = p.filename().string();
  return name.substr(0, name.find('.'));
}

inline fs::path labels_path_for(const fs::path& csv) {
  return csv.parent_path() / (sequence_id(csv) + ".labels.json");
}

namespace detail {

struct CommonOptions {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
};

inline PipelineConfig load_config(const CommonOptions& o) {
  PipelineConfig c = o.config.empty() ? PipelineConfig{} : read_config(o.config);
  if (o.seed) c.seed = *o.seed;
  return c;
}

inline std::vector<fs::path> as_paths(const std::vector<std::string>& v) { return {v.begin(), v.end()}; }

inline void write_manifest(const fs::path& out, const std::string& command, const PipelineConfig& config,
                           const std::vector<fs::path>& inputs, const std::vector<fs::path>& outputs,
                           const OrderedJson& extra = {}) {
  write_json_checked(out / "manifest.json",
                     manifest_json(command, config, manifest_entries(inputs), manifest_entries(outputs, out), extra));
}

inline CvSequence load_labeled(const fs::path& csv, const std::optional<fs::path>& labels, const PipelineConfig& c) {
  CvSequence s;
  s.id = sequence_id(csv);
  s.sequence = read_sequence_csv(csv);
  const fs::path lp = labels ? *labels : labels_path_for(csv);
  s.labels = read_labels_json(lp, static_cast<std::size_t>(s.sequence.length()), s.sequence.sampling_rate_hz,
                              c.label_options());
  return s;
}

inline std::vector<CvSequence> load_all(const std::vector<std::string>& inputs, const std::vector<std::string>& labels,
                                        const PipelineConfig& c) {
  if (!labels.empty() && labels.size() != inputs.size()) {
    throw std::invalid_argument("--labels must be given once per --input");
  }
  std::vector<CvSequence> out;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    out.push_back(load_labeled(inputs[i], labels.empty() ? std::nullopt : std::optional<fs::path>(labels[i]), c));
  }
  return out;
}

inline int cmd_synth(const CommonOptions& o) {
  const PipelineConfig config = load_config(o);
  const ScenarioConfig sc = parse_scenario_json(config.synth);
  const Scenario scenario = generate_scenario(sc, config.seed);
  const fs::path out(o.out);
  std::vector<fs::path> written;
  OrderedJson truth = OrderedJson::array();
  for (const auto& rec : scenario.recordings) {
    const fs::path csv = out / (rec.data.id + ".csv");
    const fs::path lab = out / (rec.data.id + ".labels.json");
    write_sequence_csv(csv, rec.data.sequence);
    write_labels_json(lab, labels_intervals_json({rec.seizure}, true));
    written.push_back(csv);
    written.push_back(lab);
    truth.push_back({{"id", rec.data.id}, {"artifacts", rec.artifacts}});
  }
  ModelFile gen{scenario.model, {config_hash(config), {}}};
  save_model(out / "generator.model.json", gen);
  written.push_back(out / "generator.model.json");
  write_manifest(out, "synth", config, o.config.empty() ? std::vector<fs::path>{} : std::vector<fs::path>{o.config},
                 written, OrderedJson{{"recordings", truth}});
  return 0;
}

inline int cmd_preprocess(const CommonOptions& o, const std::vector<std::string>& inputs) {
  const PipelineConfig config = load_config(o);
  const fs::path out(o.out);
  std::vector<fs::path> written;
  for (const auto& in : inputs) {
    const EegSequence seq = read_sequence_csv(in);
    const auto bands = preprocess(seq, config);
    const std::string id = sequence_id(in);
    for (std::size_t b = 0; b < bands.size(); ++b) {
      const fs::path p = out / (id + "." + config.bands[b].name + ".csv");
      write_sequence_csv(p, bands[b], {{"band", config.bands[b].name}});
      written.push_back(p);
    }
    const fs::path lab = labels_path_for(in);
    if (fs::exists(lab)) {
      const fs::path dst = out / lab.filename();
      write_checked(dst, read_file(lab), [](const std::string&) {});
      written.push_back(dst);
    }
  }
  write_manifest(out, "preprocess", config, as_paths(inputs), written);
  return 0;
}

inline int cmd_train(const CommonOptions& o, const std::vector<std::string>& inputs,
                     const std::vector<std::string>& labels, const std::string& kind_name) {
  const PipelineConfig config = load_config(o);
  const ModelKind kind = parse_model_kind(kind_name);
  const auto data = load_all(inputs, labels, config);
  std::vector<const Matrix*> xs;
  std::vector<const StateSequence*> zs;
  Provenance prov{config_hash(config), {}};
  for (const auto& s : data) {
    if (prov.data_checksums.count(s.id)) throw std::invalid_argument("duplicate sequence id '" + s.id + "'");
    prov.data_checksums[s.id] = matrix_checksum(s.sequence.samples);
    xs.push_back(&s.sequence.samples);
    zs.push_back(&s.labels);
  }
  PipelineConfig trained = config;
  trained.models = {kind == ModelKind::hmsmm ? "hmsmm" : kind == ModelKind::ghmm ? "ghmm" : "smm-static"};
  const BandModels m = train_band(xs, zs, trained);
  ModelFile file;
  file.provenance = prov;
  if (kind == ModelKind::hmsmm) file.model = *m.hmsmm;
  else if (kind == ModelKind::ghmm) file.model = *m.ghmm;
  else file.model = *m.smm;
  const fs::path out(o.out);
  save_model(out / "model.json", file);
  std::vector<fs::path> in = as_paths(inputs);
  for (std::size_t i = 0; i < data.size(); ++i) {
    in.push_back(labels.empty() ? labels_path_for(inputs[i]) : fs::path(labels[i]));
  }
  write_manifest(out, "train", config, in, {out / "model.json"});
  return 0;
}

inline int cmd_predict(const CommonOptions& o, const std::string& model_path, const std::string& input,
                       const std::string& mode) {
  const PipelineConfig config = load_config(o);
  if (mode != "smoothing" && mode != "filtering") throw std::invalid_argument("--mode must be smoothing or filtering");
  const ModelFile model = load_model(model_path);
  const CsvTable table = read_sequence_table(input);
  if (table.sequence.channels() != model.dim()) {
    throw std::invalid_argument("input has " + std::to_string(table.sequence.channels()) +
                                " channels, model expects " + std::to_string(model.dim()));
  }
  if (mode == "filtering" && model.kind() == ModelKind::smm_static) {
    throw std::invalid_argument("filtering mode needs a model with temporal structure");
  }
  EegSequence post;
  post.samples = model_posterior(model, table.sequence.samples, mode == "filtering");
  post.sampling_rate_hz = table.sequence.sampling_rate_hz;
  for (int k = 1; k <= model.num_states(); ++k) post.channel_names.push_back("p" + std::to_string(k));
  std::string name = to_string(model.kind());
  if (mode == "filtering") name += "-filtering";
  CsvMetadata meta{{"model", name}, {"source", sequence_id(input)}};
  if (table.metadata.count("band")) meta["band"] = table.metadata.at("band");
  const fs::path out(o.out);
  write_sequence_csv(out / "posterior.csv", post, meta);
  write_manifest(out, "predict", config, {model_path, input}, {out / "posterior.csv"});
  return 0;
}

inline int cmd_evaluate(const CommonOptions& o, const std::string& posterior_path, const std::string& labels_path,
                        bool plot_data) {
  const PipelineConfig config = load_config(o);
  const CsvTable table = read_sequence_table(posterior_path);
  const EegSequence& post = table.sequence;
  if (config.seizure_state > post.channels()) throw std::invalid_argument("posterior lacks the seizure state column");
  const auto truth = read_labels_json(labels_path, static_cast<std::size_t>(post.length()), post.sampling_rate_hz,
                                      config.label_options());
  const Vector col = post.samples.col(config.seizure_state - 1);
  const auto [det, metrics] =
      evaluate_probabilities(std::span<const double>(col.data(), static_cast<std::size_t>(col.size())), truth,
                             config.seizure_state, post.sampling_rate_hz, config.detection);
  auto meta = [&](const char* k, const std::string& d) {
    return table.metadata.count(k) ? table.metadata.at(k) : d;
  };
  const fs::path out(o.out);
  const MetricsRow row{meta("model", "unknown"), meta("band", "unknown"), meta("source", sequence_id(posterior_path)),
                       metrics};
  write_metrics_csv(out / "metrics.csv", {row});
  OrderedJson doc = metrics_json(metrics);
  doc["model"] = row.model;
  doc["band"] = row.band;
  doc["fold"] = row.fold;
  doc["threshold"] = det.threshold;
  write_json_checked(out / "metrics.json", doc);
  std::vector<fs::path> written{out / "metrics.csv", out / "metrics.json"};
  if (plot_data) {
    std::string text = "t,seizure_prob,smoothed_prob,predicted,truth\n";
    for (std::size_t t = 0; t < truth.size(); ++t) {
      text += format_double(static_cast<double>(t) / post.sampling_rate_hz) + "," +
              format_double(col[static_cast<Eigen::Index>(t)]) + "," + format_double(det.seizure_prob[t]) + "," +
              (det.predicted[t] ? "1" : "0") + "," + (truth[t] == config.seizure_state ? "1" : "0") + "\n";
    }
    const std::size_t expect = truth.size() + 1;
    write_checked(out / "plot_data.csv", text, [&](const std::string& back) {
      if (static_cast<std::size_t>(std::count(back.begin(), back.end(), '\n')) != expect) {
        throw std::runtime_error("plot data self-check failed");
      }
    });
    written.push_back(out / "plot_data.csv");
  }
  write_manifest(out, "evaluate", config, {posterior_path, labels_path}, written);
  return 0;
}

inline int cmd_crossval(const CommonOptions& o, const std::vector<std::string>& inputs,
                        const std::vector<std::string>& labels) {
  const PipelineConfig config = load_config(o);
  const auto data = load_all(inputs, labels, config);
  const CvReport report = run_crossval(data, config);
  const fs::path out(o.out);
  const auto written = write_crossval_outputs(out, report);
  std::vector<fs::path> in = as_paths(inputs);
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    in.push_back(labels.empty() ? labels_path_for(inputs[i]) : fs::path(labels[i]));
  }
  write_manifest(out, "crossval", config, in, written, OrderedJson{{"folds", provenance_json(report)}});
  return 0;
}

}  // namespace detail

inline int cli_main(int argc, const char* const* argv) {
  CLI::App app{"Hidden Markov scale mixture model for EEG seizure detection"};
  app.require_subcommand(1);
  detail::CommonOptions opt;
  std::vector<std::string> inputs, labels;
  std::string model_path, input_path, mode = "smoothing", kind = "hmsmm", posterior_path, labels_path;
  std::uint64_t seed = 0;
  std::vector<CLI::Option*> seed_options;
  bool plot_data = false;

  auto common = [&](CLI::App* sub, bool needs_config) {
    auto* c = sub->add_option("--config", opt.config, "pipeline config JSON")->check(CLI::ExistingFile);
    if (needs_config) c->required();
    seed_options.push_back(sub->add_option("--seed", seed, "seed (overrides the config)"));
    sub->add_option("--out", opt.out, "output directory")->required();
  };
  auto* synth = app.add_subcommand("synth", "generate labelled synthetic recordings");
  common(synth, true);
  auto* prep = app.add_subcommand("preprocess", "filter bank and normalisation");
  common(prep, false);
  prep->add_option("--input", inputs, "sequence CSV files")->required()->check(CLI::ExistingFile);
  auto* train = app.add_subcommand("train", "fit a model on labelled sequences");
  common(train, false);
  train->add_option("--input", inputs, "sequence CSV files")->required()->check(CLI::ExistingFile);
  train->add_option("--labels", labels, "labels JSON per input (default: <id>.labels.json)")
      ->check(CLI::ExistingFile);
  train->add_option("--kind", kind, "hmsmm | ghmm | smm-static");
  auto* predict = app.add_subcommand("predict", "posterior state probabilities");
  common(predict, false);
  predict->add_option("--model", model_path, "trained model JSON")->required()->check(CLI::ExistingFile);
  predict->add_option("--input", input_path, "sequence CSV")->required()->check(CLI::ExistingFile);
  predict->add_option("--mode", mode, "smoothing | filtering");
  auto* evaluate = app.add_subcommand("evaluate", "detection metrics for a posterior");
  common(evaluate, false);
  evaluate->add_option("--posterior", posterior_path, "posterior CSV from predict")->required()->check(CLI::ExistingFile);
  evaluate->add_option("--labels", labels_path, "labels JSON")->required()->check(CLI::ExistingFile);
  evaluate->add_flag("--plot-data", plot_data, "also write per-sample plot_data.csv");
  auto* crossval = app.add_subcommand("crossval", "leave-one-sequence-out evaluation");
  common(crossval, false);
  crossval->add_option("--input", inputs, "sequence CSV files")->required()->check(CLI::ExistingFile);
  crossval->add_option("--labels", labels, "labels JSON per input (default: <id>.labels.json)")
      ->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    if (code == 0) return 0;
    const auto chosen = app.get_subcommands();
    std::cerr << (chosen.empty() ? app.help() : chosen.front()->help());
    return 2;
  }
  for (const auto* o : seed_options) {
    if (o->count() > 0) opt.seed = seed;
  }
  try {
    if (*synth) return detail::cmd_synth(opt);
    if (*prep) return detail::cmd_preprocess(opt, inputs);
    if (*train) return detail::cmd_train(opt, inputs, labels, kind);
    if (*predict) return detail::cmd_predict(opt, model_path, input_path, mode);
    if (*evaluate) return detail::cmd_evaluate(opt, posterior_path, labels_path, plot_data);
    if (*crossval) return detail::cmd_crossval(opt, inputs, labels);
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}

}  // namespace hmsmm
