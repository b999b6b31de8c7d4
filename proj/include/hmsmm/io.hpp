#pragma once

// File formats: sequence CSV, labels JSON, model JSON, pipeline config,
// metrics CSV and run manifests.

#include "hmsmm/baselines.hpp"
#include "hmsmm/detection.hpp"
#include "hmsmm/signal.hpp"

#include "json.hpp"

#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace hmsmm {

using Json = nlohmann::json;
using OrderedJson = nlohmann::ordered_json;

inline constexpr int kModelFormatVersion = 1;
inline constexpr const char* kToolVersion = "1.0.0";

// ---------------------------------------------------------------------------
// Text helpers

/// Shortest decimal form at 17 significant digits (round-trips any double).
inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

/// 64-bit FNV-1a.
inline std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

inline std::string checksum_hex(std::string_view bytes) { return hex64(fnv1a64(bytes)); }

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::invalid_argument("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline std::string file_checksum(const std::filesystem::path& path) {
  return checksum_hex(read_file(path));
}

/// Checksum of a sample matrix (row-major decimal text at full precision), so
/// equal data has equal checksum whatever its origin.
inline std::string matrix_checksum(const Matrix& m) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](std::string_view s) {
    for (unsigned char c : s) {
      h ^= c;
      h *= 0x100000001b3ULL;
    }
  };
  mix(std::to_string(m.rows()) + "x" + std::to_string(m.cols()) + ";");
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      mix(format_double(m(r, c)));
      mix(",");
    }
  }
  return hex64(h);
}

/// Writes `content`, reads it back and runs `check` on what was read. Any
/// mismatch is an internal error.
template <class Check>
void write_checked(const std::filesystem::path& path, const std::string& content, Check&& check) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
    out << content;
    if (!out) throw std::runtime_error("write failed for '" + path.string() + "'");
  }
  const std::string back = read_file(path);
  if (back != content) throw std::runtime_error("re-read mismatch for '" + path.string() + "'");
  check(back);
}

inline void write_json_checked(const std::filesystem::path& path, const OrderedJson& doc) {
  write_checked(path, doc.dump(2) + "\n", [&](const std::string& text) {
    if (OrderedJson::parse(text) != doc) {
      throw std::runtime_error("JSON self-check failed for '" + path.string() + "'");
    }
  });
}

namespace detail {

inline std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const auto comma = line.find(',', start);
    out.push_back(line.substr(start, comma == std::string_view::npos ? std::string_view::npos
                                                                       : comma - start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

/// Parses one decimal field; nullopt if it is not a complete number.
inline std::optional<double> parse_double(std::string_view s) {
  s = trim(s);
  if (s.empty()) return std::nullopt;
  if (s.front() == '+') s.remove_prefix(1);
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Sequence CSV

/// Extra `# key=value` lines carried alongside a table.
using CsvMetadata = std::map<std::string, std::string>;

struct CsvTable {
  EegSequence sequence;
  CsvMetadata metadata;
};

inline std::string sequence_csv_text(const EegSequence& seq, const CsvMetadata& extra = {}) {
  seq.validate();
  std::string out = "# sampling_rate_hz=" + format_double(seq.sampling_rate_hz) + "\n";
  for (const auto& [k, v] : extra) {
    if (k == "sampling_rate_hz") continue;
    out += "# " + k + "=" + v + "\n";
  }
  out += "t";
  for (Eigen::Index c = 0; c < seq.channels(); ++c) {
    out += ",";
    out += seq.channel_names.empty() ? "ch" + std::to_string(c + 1)
                                     : seq.channel_names[static_cast<std::size_t>(c)];
  }
  out += "\n";
  for (Eigen::Index t = 0; t < seq.length(); ++t) {
    out += format_double(static_cast<double>(t) / seq.sampling_rate_hz);
    for (Eigen::Index c = 0; c < seq.channels(); ++c) {
      out += ",";
      out += format_double(seq.samples(t, c));
    }
    out += "\n";
  }
  return out;
}

/// Parses sequence CSV text. Data rows are numbered from 1 after the header.
/// `sidecar_rate` is used only when the text carries no sampling-rate line.
inline CsvTable parse_sequence_csv(const std::string& text, const std::string& source = "<memory>",
                                   std::optional<double> sidecar_rate = std::nullopt) {
  CsvTable table;
  std::optional<double> rate;
  std::vector<std::string> header;
  std::vector<double> values;
  std::size_t rows = 0;
  std::size_t line_no = 0;
  std::istringstream in(text);
  std::string raw;
  auto fail = [&](const std::string& what) {
    throw std::invalid_argument(source + ": " + what);
  };
  while (std::getline(in, raw)) {
    ++line_no;
    const std::string_view line = detail::trim(raw);
    if (line.empty()) continue;
    if (line.front() == '#') {
      const std::string_view body = detail::trim(line.substr(1));
      const auto eq = body.find('=');
      if (eq == std::string_view::npos) continue;
      const std::string key(detail::trim(body.substr(0, eq)));
      const std::string value(detail::trim(body.substr(eq + 1)));
      if (key == "sampling_rate_hz") {
        rate = detail::parse_double(value);
        if (!rate || !(*rate > 0.0) || !std::isfinite(*rate)) {
          fail("invalid sampling rate on line " + std::to_string(line_no));
        }
      } else {
        table.metadata[key] = value;
      }
      continue;
    }
    const auto fields = detail::split_fields(line);
    if (header.empty()) {
      if (fields.size() < 2 || detail::trim(fields[0]) != "t") {
        fail("header must be 't,<channel...>' (line " + std::to_string(line_no) + ")");
      }
      for (std::size_t i = 1; i < fields.size(); ++i) header.emplace_back(detail::trim(fields[i]));
      continue;
    }
    ++rows;
    const std::string where = "row " + std::to_string(rows) + " (line " + std::to_string(line_no) + ")";
    if (fields.size() != header.size() + 1) {
      fail("malformed " + where + ": expected " + std::to_string(header.size() + 1) +
           " fields, got " + std::to_string(fields.size()));
    }
    for (std::size_t i = 0; i < fields.size(); ++i) {
      const auto v = detail::parse_double(fields[i]);
      if (!v) fail("malformed " + where + ": '" + std::string(detail::trim(fields[i])) + "'");
      if (!std::isfinite(*v)) fail("non-finite value in " + where);
      if (i > 0) values.push_back(*v);
    }
  }
  if (header.empty()) fail("missing header");
  if (rows == 0) fail("no data rows");
  if (!rate) rate = sidecar_rate;
  if (!rate) fail("missing sampling rate ('# sampling_rate_hz=<v>' or sidecar)");
  const auto d = static_cast<Eigen::Index>(header.size());
  table.sequence.samples =
      Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
          values.data(), static_cast<Eigen::Index>(rows), d);
  table.sequence.sampling_rate_hz = *rate;
  table.sequence.channel_names = header;
  table.sequence.validate();
  return table;
}

/// Sidecar `<path>.json` with {"sampling_rate_hz": v}, if present.
inline std::optional<double> sidecar_sampling_rate(const std::filesystem::path& path) {
  std::filesystem::path side = path;
  side += ".json";
  if (!std::filesystem::exists(side)) return std::nullopt;
  const Json j = Json::parse(read_file(side), nullptr, false);
  if (j.is_discarded() || !j.contains("sampling_rate_hz") || !j["sampling_rate_hz"].is_number()) {
    throw std::invalid_argument(side.string() + ": expected {\"sampling_rate_hz\": <number>}");
  }
  return j["sampling_rate_hz"].get<double>();
}

inline CsvTable read_sequence_table(const std::filesystem::path& path) {
  return parse_sequence_csv(read_file(path), path.string(), sidecar_sampling_rate(path));
}

inline EegSequence read_sequence_csv(const std::filesystem::path& path) {
  return read_sequence_table(path).sequence;
}

inline void write_sequence_csv(const std::filesystem::path& path, const EegSequence& seq,
                               const CsvMetadata& extra = {}) {
  write_checked(path, sequence_csv_text(seq, extra), [&](const std::string& text) {
    const CsvTable back = parse_sequence_csv(text, path.string());
    if (back.sequence.samples.rows() != seq.length() || back.sequence.samples.cols() != seq.channels()) {
      throw std::runtime_error("CSV self-check failed for '" + path.string() + "'");
    }
  });
}

// ---------------------------------------------------------------------------
// Labels JSON

struct LabelOptions {
  int num_states = 3;
  int seizure_state = 2;
  int post_state = 3;
};

struct LabelInterval {
  int state = 0;
  double start_s = 0.0;
  double end_s = 0.0;
};

namespace detail {

/// First sample index with t / fs >= seconds, snapping products that are an
/// integer up to rounding error.
inline long long sample_at_or_after(double seconds, double fs) {
  const double x = seconds * fs;
  const double r = std::round(x);
  if (std::abs(x - r) <= 1e-9 * std::max(1.0, std::abs(x))) return static_cast<long long>(r);
  return static_cast<long long>(std::ceil(x));
}

}  // namespace detail

/// Expands half-open [start_s, end_s) intervals into per-sample labels. Gap
/// samples are state 1, except that with `post_fill` a gap that follows a
/// seizure interval takes the post state.
inline StateSequence expand_intervals(const std::vector<LabelInterval>& intervals, std::size_t length,
                                      double sampling_rate_hz, bool post_fill,
                                      const LabelOptions& opt = {}) {
  if (!(sampling_rate_hz > 0.0)) throw std::invalid_argument("sampling rate must be positive");
  std::vector<std::pair<long long, long long>> spans;
  std::vector<LabelInterval> sorted = intervals;
  std::sort(sorted.begin(), sorted.end(),
            [](const auto& a, const auto& b) { return a.start_s < b.start_s; });
  const double duration = static_cast<double>(length) / sampling_rate_hz;
  StateSequence out(length, 0);
  for (const auto& iv : sorted) {
    if (iv.state < 1 || iv.state > opt.num_states) {
      throw std::invalid_argument("interval state " + std::to_string(iv.state) + " out of range 1.." +
                                  std::to_string(opt.num_states));
    }
    if (!(iv.start_s >= 0.0) || !(iv.end_s > iv.start_s) || !std::isfinite(iv.end_s)) {
      throw std::invalid_argument("interval needs 0 <= start_s < end_s");
    }
    const long long lo = detail::sample_at_or_after(iv.start_s, sampling_rate_hz);
    const long long hi = detail::sample_at_or_after(iv.end_s, sampling_rate_hz);
    if (hi > static_cast<long long>(length)) {
      throw std::invalid_argument("interval [" + format_double(iv.start_s) + ", " +
                                  format_double(iv.end_s) + ") extends beyond the sequence end (" +
                                  format_double(duration) + " s)");
    }
    if (!spans.empty() && lo < spans.back().second) {
      throw std::invalid_argument("overlapping label intervals");
    }
    spans.emplace_back(lo, hi);
    for (long long t = lo; t < hi; ++t) out[static_cast<std::size_t>(t)] = iv.state;
  }
  if (post_fill && opt.post_state > opt.num_states) {
    throw std::invalid_argument("post_seizure_fill needs a post state within 1..K");
  }
  int last = 0;  // state of the most recent interval
  for (auto& z : out) {
    if (z != 0) {
      last = z;
    } else {
      z = post_fill && last == opt.seizure_state ? opt.post_state : 1;
    }
  }
  return out;
}

/// Parses labels JSON for a sequence of `length` samples.
inline StateSequence parse_labels_json(const std::string& text, std::size_t length,
                                       double sampling_rate_hz, const LabelOptions& opt = {},
                                       const std::string& source = "<memory>") {
  const Json j = Json::parse(text, nullptr, false);
  if (j.is_discarded() || !j.is_object()) throw std::invalid_argument(source + ": labels are not a JSON object");
  const bool has_states = j.contains("states");
  const bool has_intervals = j.contains("intervals");
  if (has_states == has_intervals) {
    throw std::invalid_argument(source + ": labels need exactly one of 'states' or 'intervals'");
  }
  try {
    if (has_states) {
      StateSequence z = j.at("states").get<StateSequence>();
      if (z.size() != length) {
        throw std::invalid_argument("label count " + std::to_string(z.size()) +
                                    " does not match sequence length " + std::to_string(length));
      }
      for (std::size_t t = 0; t < z.size(); ++t) {
        if (z[t] < 1 || z[t] > opt.num_states) {
          throw std::invalid_argument("state " + std::to_string(z[t]) + " at sample " +
                                      std::to_string(t) + " out of range");
        }
      }
      return z;
    }
    std::vector<LabelInterval> ivs;
    for (const auto& e : j.at("intervals")) {
      ivs.push_back({e.at("state").get<int>(), e.at("start_s").get<double>(), e.at("end_s").get<double>()});
    }
    const bool fill = j.value("post_seizure_fill", true);
    return expand_intervals(ivs, length, sampling_rate_hz, fill, opt);
  } catch (const Json::exception& e) {
    throw std::invalid_argument(source + ": malformed labels: " + e.what());
  } catch (const std::invalid_argument& e) {
    throw std::invalid_argument(source + ": " + e.what());
  }
}

inline StateSequence read_labels_json(const std::filesystem::path& path, std::size_t length,
                                      double sampling_rate_hz, const LabelOptions& opt = {}) {
  return parse_labels_json(read_file(path), length, sampling_rate_hz, opt, path.string());
}

inline void write_labels_json(const std::filesystem::path& path, const OrderedJson& doc) {
  write_json_checked(path, doc);
}

inline OrderedJson labels_states_json(const StateSequence& z) { return OrderedJson{{"states", z}}; }

inline OrderedJson labels_intervals_json(const std::vector<LabelInterval>& ivs, bool post_fill) {
  OrderedJson arr = OrderedJson::array();
  for (const auto& iv : ivs) arr.push_back({{"state", iv.state}, {"start_s", iv.start_s}, {"end_s", iv.end_s}});
  return OrderedJson{{"intervals", arr}, {"post_seizure_fill", post_fill}};
}

// ---------------------------------------------------------------------------
// Models

enum class ModelKind { hmsmm, ghmm, smm_static };

inline std::string to_string(ModelKind k) {
  switch (k) {
    case ModelKind::hmsmm: return "hmsmm";
    case ModelKind::ghmm: return "ghmm";
    case ModelKind::smm_static: return "smm-static";
  }
  return "?";
}

inline ModelKind parse_model_kind(const std::string& s) {
  if (s == "hmsmm") return ModelKind::hmsmm;
  if (s == "ghmm") return ModelKind::ghmm;
  if (s == "smm-static") return ModelKind::smm_static;
  throw std::invalid_argument("unknown model kind '" + s + "'");
}

struct SmmStaticModel {
  std::vector<EmissionParams> emissions;
  StaticPrior prior;

  int num_states() const { return static_cast<int>(emissions.size()); }
  Eigen::Index dim() const { return emissions.empty() ? 0 : emissions.front().dim(); }

  void validate() const {
    prior.validate();
    if (emissions.empty() || static_cast<std::size_t>(prior.class_proportions.size()) != emissions.size()) {
      throw std::invalid_argument("prior size does not match the number of states");
    }
    for (const auto& e : emissions) {
      if (e.dim() != dim()) throw std::invalid_argument("emission dimensions differ");
    }
  }
};

struct Provenance {
  std::string config_hash;
  std::map<std::string, std::string> data_checksums;  // sequence id -> checksum
};

struct ModelFile {
  std::variant<HmsmmModel, GhmmModel, SmmStaticModel> model;
  Provenance provenance;

  ModelKind kind() const { return static_cast<ModelKind>(model.index()); }
  int num_states() const {
    return std::visit([](const auto& m) { return m.num_states(); }, model);
  }
  Eigen::Index dim() const {
    return std::visit([](const auto& m) { return m.dim(); }, model);
  }
};

namespace detail {

inline OrderedJson vector_json(const Vector& v) {
  return OrderedJson(std::vector<double>(v.data(), v.data() + v.size()));
}

inline OrderedJson matrix_json(const Matrix& m) {
  OrderedJson out = OrderedJson::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) out.push_back(vector_json(m.row(r).transpose()));
  return out;
}

inline Vector vector_from(const Json& j, Eigen::Index n, const char* what) {
  const auto v = j.get<std::vector<double>>();
  if (static_cast<Eigen::Index>(v.size()) != n) {
    throw std::invalid_argument(std::string(what) + " has length " + std::to_string(v.size()) +
                                ", expected " + std::to_string(n));
  }
  return Eigen::Map<const Vector>(v.data(), n);
}

inline Matrix matrix_from(const Json& j, Eigen::Index rows, Eigen::Index cols, const char* what) {
  if (!j.is_array() || static_cast<Eigen::Index>(j.size()) != rows) {
    throw std::invalid_argument(std::string(what) + " has the wrong number of rows");
  }
  Matrix m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) m.row(r) = vector_from(j[static_cast<std::size_t>(r)], cols, what).transpose();
  return m;
}

inline OrderedJson transition_json(const TransitionModel& tm) {
  OrderedJson mask = OrderedJson::array();
  for (Eigen::Index r = 0; r < tm.mask.rows(); ++r) {
    OrderedJson row = OrderedJson::array();
    for (Eigen::Index c = 0; c < tm.mask.cols(); ++c) row.push_back(tm.mask(r, c) ? 1 : 0);
    mask.push_back(row);
  }
  return OrderedJson{{"pi", vector_json(tm.pi)}, {"A", matrix_json(tm.A)}, {"mask", mask}};
}

inline TransitionModel transition_from(const Json& j, int k) {
  TransitionModel tm;
  tm.pi = vector_from(j.at("pi"), k, "pi");
  tm.A = matrix_from(j.at("A"), k, k, "A");
  const Matrix m = matrix_from(j.at("mask"), k, k, "mask");
  tm.mask = m.array() != 0.0;
  tm.validate();
  return tm;
}

}  // namespace detail

inline OrderedJson model_json(const ModelFile& file) {
  OrderedJson doc;
  doc["format"] = kModelFormatVersion;
  doc["kind"] = to_string(file.kind());
  doc["K"] = file.num_states();
  doc["D"] = file.dim();
  OrderedJson emissions = OrderedJson::array();
  std::visit(
      [&](const auto& m) {
        using M = std::decay_t<decltype(m)>;
        m.validate();
        if constexpr (std::is_same_v<M, SmmStaticModel>) {
          doc["prior"] = detail::vector_json(m.prior.class_proportions);
        } else {
          const OrderedJson tj = detail::transition_json(m.transition);
          for (const auto& [k, v] : tj.items()) doc[k] = v;
        }
        for (const auto& e : m.emissions) {
          OrderedJson ej{{"mu", detail::vector_json(e.mu())}, {"sigma", detail::matrix_json(e.sigma())}};
          if constexpr (!std::is_same_v<M, GhmmModel>) ej["nu"] = e.nu();
          emissions.push_back(ej);
        }
      },
      file.model);
  doc["emissions"] = emissions;
  OrderedJson prov;
  prov["config_hash"] = file.provenance.config_hash;
  prov["data_checksums"] = file.provenance.data_checksums;
  doc["provenance"] = prov;
  doc["checksum"] = checksum_hex(doc.dump());
  return doc;
}

/// Parses a model document. `expected`, when given, must match the stored kind.
inline ModelFile parse_model_json(const std::string& text, std::optional<ModelKind> expected = std::nullopt,
                                  const std::string& source = "<memory>") {
  OrderedJson doc = OrderedJson::parse(text, nullptr, false);
  if (doc.is_discarded()) throw std::invalid_argument(source + ": parse error (invalid or truncated JSON)");
  try {
    if (!doc.is_object() || !doc.contains("format")) throw std::invalid_argument("not a model file");
    const int format = doc.at("format").get<int>();
    if (format != kModelFormatVersion) {
      throw std::invalid_argument("unsupported model format version " + std::to_string(format) +
                                  " (expected " + std::to_string(kModelFormatVersion) + ")");
    }
    const ModelKind kind = parse_model_kind(doc.at("kind").get<std::string>());
    if (expected && *expected != kind) {
      throw std::invalid_argument("model kind mismatch: file holds '" + to_string(kind) + "', expected '" +
                                  to_string(*expected) + "'");
    }
    const std::string stored = doc.at("checksum").get<std::string>();
    OrderedJson body = doc;
    body.erase("checksum");
    if (checksum_hex(body.dump()) != stored) throw std::invalid_argument("checksum failure");

    const int k = doc.at("K").get<int>();
    const auto d = doc.at("D").get<Eigen::Index>();
    if (k < 1 || d < 1) throw std::invalid_argument("K and D must be positive");
    const auto& em = doc.at("emissions");
    if (!em.is_array() || static_cast<int>(em.size()) != k) {
      throw std::invalid_argument("emission count does not match K");
    }
    ModelFile file;
    const auto& prov = doc.at("provenance");
    file.provenance.config_hash = prov.at("config_hash").get<std::string>();
    file.provenance.data_checksums = prov.at("data_checksums").get<std::map<std::string, std::string>>();

    auto read_emissions = [&](auto tag) {
      using E = decltype(tag);
      std::vector<E> out;
      for (const auto& e : em) {
        Vector mu = detail::vector_from(e.at("mu"), d, "mu");
        Matrix sigma = detail::matrix_from(e.at("sigma"), d, d, "sigma");
        if constexpr (std::is_same_v<E, EmissionParams>) {
          out.emplace_back(std::move(mu), sigma, e.at("nu").get<double>());
        } else {
          out.emplace_back(std::move(mu), sigma);
        }
      }
      return out;
    };
    switch (kind) {
      case ModelKind::hmsmm: {
        HmsmmModel m{detail::transition_from(doc, k), read_emissions(EmissionParams{})};
        m.validate();
        file.model = std::move(m);
        break;
      }
      case ModelKind::ghmm: {
        GhmmModel m{detail::transition_from(doc, k), read_emissions(GaussianEmissionParams{})};
        m.validate();
        file.model = std::move(m);
        break;
      }
      case ModelKind::smm_static: {
        SmmStaticModel m{read_emissions(EmissionParams{}),
                         StaticPrior{detail::vector_from(doc.at("prior"), k, "prior")}};
        m.validate();
        file.model = std::move(m);
        break;
      }
    }
    return file;
  } catch (const Json::exception& e) {
    throw std::invalid_argument(source + ": schema error: " + e.what());
  } catch (const std::invalid_argument& e) {
    throw std::invalid_argument(source + ": " + e.what());
  }
}

inline void save_model(const std::filesystem::path& path, const ModelFile& file) {
  const OrderedJson doc = model_json(file);
  write_checked(path, doc.dump(2) + "\n", [&](const std::string& text) {
    (void)parse_model_json(text, file.kind(), path.string());
  });
}

inline ModelFile load_model(const std::filesystem::path& path, std::optional<ModelKind> expected = std::nullopt) {
  return parse_model_json(read_file(path), expected, path.string());
}

/// Seizure-state probabilities per sample for any stored model.
inline Matrix model_posterior(const ModelFile& file, const Matrix& samples, bool filtering) {
  return std::visit(
      [&](const auto& m) -> Matrix {
        using M = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<M, SmmStaticModel>) {
          return smm_static_posterior(m.emissions, m.prior, samples);
        } else {
          return filtering ? filter_forward(m, samples) : posterior(m, samples).gamma;
        }
      },
      file.model);
}

// ---------------------------------------------------------------------------
// Pipeline configuration

enum class MaskKind { seizure_cycle, full };

struct PipelineConfig {
  std::vector<BandSpec> bands = default_eeg_bands();
  double normalization_window_s = 5.0;
  NormalizationMode normalization_mode = NormalizationMode::pooled;
  DetectionConfig detection;
  double rms_window_s = 2.0;
  EmConfig em;
  MaskKind mask = MaskKind::seizure_cycle;
  int num_states = 3;
  int seizure_state = 2;
  int post_state = 3;
  std::uint64_t seed = 0;
  std::vector<std::string> models = {"hmsmm", "hmsmm-filtering", "ghmm", "smm-static"};
  Json synth;  // generator scenario, interpreted by the synth command

  LabelOptions label_options() const { return {num_states, seizure_state, post_state}; }

  Mask transition_mask() const {
    return mask == MaskKind::full ? full_mask(num_states) : seizure_cycle_mask(num_states);
  }

  void validate() const {
    if (bands.empty()) throw std::invalid_argument("config: at least one band is required");
    for (std::size_t i = 0; i < bands.size(); ++i) {
      if (bands[i].name.empty()) throw std::invalid_argument("config: band names must be non-empty");
      for (std::size_t j = 0; j < i; ++j) {
        if (bands[j].name == bands[i].name) throw std::invalid_argument("config: duplicate band '" + bands[i].name + "'");
      }
      if (!bands[i].passthrough && !(bands[i].low_hz > 0.0 && bands[i].low_hz < bands[i].high_hz)) {
        throw std::invalid_argument("config: band '" + bands[i].name + "' needs 0 < low_hz < high_hz");
      }
    }
    if (!(normalization_window_s > 0.0) || !(detection.smoothing_window_s > 0.0) || !(rms_window_s > 0.0)) {
      throw std::invalid_argument("config: all windows must be positive");
    }
    if (!(detection.threshold > 0.0 && detection.threshold < 1.0)) {
      throw std::invalid_argument("config: threshold must lie in (0, 1)");
    }
    em.validate();
    if (num_states < 1) throw std::invalid_argument("config: num_states must be >= 1");
    if (mask == MaskKind::seizure_cycle && num_states != 3) {
      throw std::invalid_argument("config: the seizure-cycle mask needs num_states = 3");
    }
    if (seizure_state < 1 || seizure_state > num_states) {
      throw std::invalid_argument("config: seizure_state outside 1..num_states");
    }
    for (const auto& m : models) {
      if (m != "hmsmm" && m != "hmsmm-filtering" && m != "ghmm" && m != "smm-static") {
        throw std::invalid_argument("config: unknown model '" + m + "'");
      }
    }
    if (models.empty()) throw std::invalid_argument("config: no models selected");
  }
};

namespace detail {

inline void reject_unknown_keys(const Json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  for (const auto& [key, value] : j.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || key == a;
    if (!ok) throw std::invalid_argument("config: unknown key '" + key + "' in " + where);
  }
}

}  // namespace detail

/// Builds a config from JSON; absent keys keep their defaults.
inline PipelineConfig parse_config_json(const Json& j) {
  PipelineConfig c;
  try {
    if (!j.is_object()) throw std::invalid_argument("config: expected a JSON object");
    detail::reject_unknown_keys(j,
                                {"bands", "normalization", "detection", "rms_window_s", "em", "mask",
                                 "num_states", "seizure_state", "post_state", "seed", "models", "synth"},
                                "config");
    if (j.contains("bands")) {
      c.bands.clear();
      for (const auto& b : j.at("bands")) {
        detail::reject_unknown_keys(b, {"name", "low_hz", "high_hz", "passthrough"}, "band");
        BandSpec s;
        s.name = b.at("name").get<std::string>();
        s.passthrough = b.value("passthrough", false);
        if (!s.passthrough) {
          s.low_hz = b.at("low_hz").get<double>();
          s.high_hz = b.at("high_hz").get<double>();
        }
        c.bands.push_back(s);
      }
    }
    if (j.contains("normalization")) {
      const auto& n = j.at("normalization");
      detail::reject_unknown_keys(n, {"window_s", "mode"}, "normalization");
      c.normalization_window_s = n.value("window_s", c.normalization_window_s);
      const std::string mode = n.value("mode", std::string("pooled"));
      if (mode == "pooled") c.normalization_mode = NormalizationMode::pooled;
      else if (mode == "per-channel") c.normalization_mode = NormalizationMode::per_channel;
      else throw std::invalid_argument("config: normalization mode must be pooled or per-channel");
    }
    if (j.contains("detection")) {
      const auto& d = j.at("detection");
      detail::reject_unknown_keys(d, {"smoothing_window_s", "threshold", "smoothing_target"}, "detection");
      c.detection.smoothing_window_s = d.value("smoothing_window_s", c.detection.smoothing_window_s);
      c.detection.threshold = d.value("threshold", c.detection.threshold);
      const std::string target = d.value("smoothing_target", std::string("probability"));
      if (target == "probability") c.detection.smoothing_target = SmoothingTarget::probability;
      else if (target == "labels") c.detection.smoothing_target = SmoothingTarget::labels;
      else throw std::invalid_argument("config: smoothing_target must be probability or labels");
    }
    c.rms_window_s = j.value("rms_window_s", c.rms_window_s);
    if (j.contains("em")) {
      const auto& e = j.at("em");
      detail::reject_unknown_keys(e,
                                  {"max_iterations", "relative_tolerance", "nu_min", "nu_max", "nu_tolerance",
                                   "initial_nu"},
                                  "em");
      c.em.max_iterations = e.value("max_iterations", c.em.max_iterations);
      c.em.relative_tolerance = e.value("relative_tolerance", c.em.relative_tolerance);
      c.em.nu_min = e.value("nu_min", c.em.nu_min);
      c.em.nu_max = e.value("nu_max", c.em.nu_max);
      c.em.nu_tolerance = e.value("nu_tolerance", c.em.nu_tolerance);
      c.em.initial_nu = e.value("initial_nu", c.em.initial_nu);
    }
    if (j.contains("mask")) {
      const std::string m = j.at("mask").get<std::string>();
      if (m == "seizure-cycle") c.mask = MaskKind::seizure_cycle;
      else if (m == "full") c.mask = MaskKind::full;
      else throw std::invalid_argument("config: mask must be seizure-cycle or full");
    }
    c.num_states = j.value("num_states", c.num_states);
    c.seizure_state = j.value("seizure_state", c.seizure_state);
    c.post_state = j.value("post_state", c.post_state);
    c.seed = j.value("seed", c.seed);
    if (j.contains("models")) c.models = j.at("models").get<std::vector<std::string>>();
    if (j.contains("synth")) c.synth = j.at("synth");
  } catch (const Json::exception& e) {
    throw std::invalid_argument(std::string("config: ") + e.what());
  }
  c.validate();
  return c;
}

inline PipelineConfig read_config(const std::filesystem::path& path) {
  const Json j = Json::parse(read_file(path), nullptr, false);
  if (j.is_discarded()) throw std::invalid_argument(path.string() + ": config is not valid JSON");
  return parse_config_json(j);
}

/// Canonical form of every setting (defaults included).
inline OrderedJson config_json(const PipelineConfig& c) {
  OrderedJson bands = OrderedJson::array();
  for (const auto& b : c.bands) {
    if (b.passthrough) bands.push_back({{"name", b.name}, {"passthrough", true}});
    else bands.push_back({{"name", b.name}, {"low_hz", b.low_hz}, {"high_hz", b.high_hz}});
  }
  OrderedJson out;
  out["bands"] = bands;
  out["normalization"] = {{"window_s", c.normalization_window_s},
                          {"mode", c.normalization_mode == NormalizationMode::pooled ? "pooled" : "per-channel"}};
  out["detection"] = {{"smoothing_window_s", c.detection.smoothing_window_s},
                      {"threshold", c.detection.threshold},
                      {"smoothing_target",
                       c.detection.smoothing_target == SmoothingTarget::probability ? "probability" : "labels"}};
  out["rms_window_s"] = c.rms_window_s;
  out["em"] = {{"max_iterations", c.em.max_iterations}, {"relative_tolerance", c.em.relative_tolerance},
               {"nu_min", c.em.nu_min},                 {"nu_max", c.em.nu_max},
               {"nu_tolerance", c.em.nu_tolerance},     {"initial_nu", c.em.initial_nu}};
  out["mask"] = c.mask == MaskKind::full ? "full" : "seizure-cycle";
  out["num_states"] = c.num_states;
  out["seizure_state"] = c.seizure_state;
  out["post_state"] = c.post_state;
  out["seed"] = c.seed;
  out["models"] = c.models;
  if (!c.synth.is_null()) out["synth"] = OrderedJson::parse(c.synth.dump());
  return out;
}

inline std::string config_hash(const PipelineConfig& c) { return checksum_hex(config_json(c).dump()); }

// ---------------------------------------------------------------------------
// Metrics

struct MetricsRow {
  std::string model;
  std::string band;
  std::string fold;
  MetricsReport metrics;
};

inline std::string optional_field(const std::optional<double>& v) { return v ? format_double(*v) : ""; }

inline constexpr const char* kMetricsHeader = "model,band,fold,sensitivity,specificity,mcc,auc_roc,auc_pr";

inline std::string metrics_csv_text(const std::vector<MetricsRow>& rows) {
  std::string out = std::string(kMetricsHeader) + "\n";
  for (const auto& r : rows) {
    out += r.model + "," + r.band + "," + r.fold + "," + optional_field(r.metrics.sensitivity) + "," +
           optional_field(r.metrics.specificity) + "," + format_double(r.metrics.mcc) + "," +
           optional_field(r.metrics.auc_roc) + "," + optional_field(r.metrics.auc_pr) + "\n";
  }
  return out;
}

/// Parses a metrics CSV; empty fields are absent values. Confusion counts are
/// not stored and come back as zero.
inline std::vector<MetricsRow> parse_metrics_csv(const std::string& text, const std::string& source = "<memory>") {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || detail::trim(line) != kMetricsHeader) {
    throw std::invalid_argument(source + ": metrics header must be '" + kMetricsHeader + "'");
  }
  std::vector<MetricsRow> rows;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (detail::trim(line).empty()) continue;
    const auto f = detail::split_fields(detail::trim(line));
    if (f.size() != 8) throw std::invalid_argument(source + ": malformed metrics row " + std::to_string(n));
    auto opt = [&](std::string_view s) -> std::optional<double> {
      if (detail::trim(s).empty()) return std::nullopt;
      const auto v = detail::parse_double(s);
      if (!v) throw std::invalid_argument(source + ": malformed metrics row " + std::to_string(n));
      return v;
    };
    MetricsRow r{std::string(f[0]), std::string(f[1]), std::string(f[2]), {}};
    r.metrics.sensitivity = opt(f[3]);
    r.metrics.specificity = opt(f[4]);
    const auto mcc = opt(f[5]);
    if (!mcc) throw std::invalid_argument(source + ": metrics row " + std::to_string(n) + " lacks mcc");
    r.metrics.mcc = *mcc;
    r.metrics.auc_roc = opt(f[6]);
    r.metrics.auc_pr = opt(f[7]);
    rows.push_back(std::move(r));
  }
  return rows;
}

inline void write_metrics_csv(const std::filesystem::path& path, const std::vector<MetricsRow>& rows) {
  write_checked(path, metrics_csv_text(rows), [&](const std::string& text) {
    if (parse_metrics_csv(text, path.string()).size() != rows.size()) {
      throw std::runtime_error("metrics self-check failed for '" + path.string() + "'");
    }
  });
}

inline OrderedJson metrics_json(const MetricsReport& m) {
  auto opt = [](const std::optional<double>& v) { return v ? OrderedJson(*v) : OrderedJson(nullptr); };
  return OrderedJson{{"sensitivity", opt(m.sensitivity)}, {"specificity", opt(m.specificity)},
                     {"mcc", m.mcc},                      {"auc_roc", opt(m.auc_roc)},
                     {"auc_pr", opt(m.auc_pr)},           {"tp", m.tp},
                     {"fp", m.fp},                        {"tn", m.tn},
                     {"fn", m.fn}};
}

// ---------------------------------------------------------------------------
// Manifest

struct ManifestEntry {
  std::string path;
  std::string checksum;
};

/// Entries for files, with paths shown relative to `base` when inside it.
inline std::vector<ManifestEntry> manifest_entries(const std::vector<std::filesystem::path>& files,
                                                   const std::filesystem::path& base = {}) {
  std::vector<ManifestEntry> out;
  for (const auto& f : files) {
    std::string shown = f.generic_string();
    if (!base.empty()) {
      const auto rel = f.lexically_relative(base);
      if (!rel.empty() && rel.native().rfind("..", 0) != 0) shown = rel.generic_string();
    }
    out.push_back({shown, file_checksum(f)});
  }
  return out;
}

inline OrderedJson manifest_json(const std::string& command, const PipelineConfig& config,
                                 const std::vector<ManifestEntry>& inputs,
                                 const std::vector<ManifestEntry>& outputs, const OrderedJson& extra = {}) {
  auto list = [](const std::vector<ManifestEntry>& v) {
    OrderedJson a = OrderedJson::array();
    for (const auto& e : v) a.push_back({{"path", e.path}, {"checksum", e.checksum}});
    return a;
  };
  OrderedJson doc;
  doc["tool"] = "hmsmm";
  doc["version"] = kToolVersion;
  doc["model_format"] = kModelFormatVersion;
  doc["command"] = command;
  doc["seed"] = config.seed;
  doc["config_hash"] = config_hash(config);
  doc["config"] = config_json(config);
  doc["inputs"] = list(inputs);
  doc["outputs"] = list(outputs);
  if (!extra.is_null()) doc["details"] = extra;
  return doc;
}

}  // namespace hmsmm
