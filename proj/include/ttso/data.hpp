#pragma once

// Multi-domain time-series datasets: a seeded synthetic generator with
// per-domain shifts, sliding windows, per-domain standardization and CSV
// ingestion driven by a JSON manifest.

#include "ttso/core.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cerrno>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

namespace ttso {

struct Domain {
  std::string id;
  std::vector<Vec> windows;  // flat, time-major (t * F + f)
  std::vector<int> labels;
};

struct DomainDataset {
  std::vector<Domain> domains;
  int n_classes = 2;
  int window_len = 0;
  int n_features = 0;
  std::string meta;

  std::size_t size() const { return domains.size(); }

  void validate() const {
    if (domains.empty()) throw InputError("dataset has no domains");
    if (n_classes < 2) throw InputError("dataset needs at least 2 classes");
    const auto D = static_cast<Eigen::Index>(window_len) * n_features;
    for (const auto& d : domains) {
      if (d.windows.empty()) throw InputError("domain '" + d.id + "' is empty");
      if (d.windows.size() != d.labels.size()) throw InputError("domain '" + d.id + "': label count mismatch");
      for (const auto& w : d.windows)
        require_dims(w.size() == D, "domain '" + d.id + "': window shape mismatch");
      for (int y : d.labels)
        if (y < 0 || y >= n_classes) throw InputError("domain '" + d.id + "': label out of range");
    }
  }
};

// ---------------------------------------------------------------------------
// Windowing and standardization

/// Windows of a (L x F) series starting at 0, step, 2 step, ...
inline std::vector<Vec> window_series(const RowMat& series, int win, int step) {
  if (win < 1 || step < 1) throw InputError("window_series: window and step must be positive");
  const auto L = series.rows();
  if (L < win)
    throw InputError("window_series: series length " + std::to_string(L) + " is shorter than window " +
                     std::to_string(win));
  const auto count = (L - win) / step + 1;
  std::vector<Vec> out;
  out.reserve(static_cast<std::size_t>(count));
  for (Eigen::Index w = 0; w < count; ++w) {
    const RowMat block = series.middleRows(w * step, win);
    out.emplace_back(Eigen::Map<const Vec>(block.data(), block.size()));
  }
  return out;
}

inline constexpr double kStdFloor = 1e-8;

struct FeatureStats {
  Vec mean;
  Vec stddev;
};

inline FeatureStats domain_stats(const std::vector<Vec>& windows, int n_features) {
  if (windows.empty()) throw InputError("standardize_domain: empty domain");
  Vec sum = Vec::Zero(n_features);
  double count = 0.0;
  for (const auto& w : windows) {
    Eigen::Map<const RowMat> m(w.data(), w.size() / n_features, n_features);
    sum += m.colwise().sum().transpose();
    count += static_cast<double>(m.rows());
  }
  FeatureStats s{sum / count, Vec::Zero(n_features)};
  Vec sq = Vec::Zero(n_features);
  for (const auto& w : windows) {
    Eigen::Map<const RowMat> m(w.data(), w.size() / n_features, n_features);
    sq += (m.rowwise() - s.mean.transpose()).array().square().colwise().sum().matrix().transpose();
  }
  s.stddev = (sq / count).array().sqrt().max(kStdFloor);
  return s;
}

/// Per-feature (x - mean) / std with statistics from this domain only.
inline std::vector<Vec> standardize_domain(const std::vector<Vec>& windows, int n_features) {
  const auto s = domain_stats(windows, n_features);
  std::vector<Vec> out;
  out.reserve(windows.size());
  for (const auto& w : windows) {
    Eigen::Map<const RowMat> m(w.data(), w.size() / n_features, n_features);
    RowMat z = (m.rowwise() - s.mean.transpose()).array().rowwise() / s.stddev.transpose().array();
    out.emplace_back(Eigen::Map<const Vec>(z.data(), z.size()));
  }
  return out;
}

inline void standardize_dataset(DomainDataset& ds) {
  for (auto& d : ds.domains) d.windows = standardize_domain(d.windows, ds.n_features);
}

// ---------------------------------------------------------------------------
// Synthetic generator

struct SynthConfig {
  int n_domains = 4;
  int n_classes = 3;
  int n_features = 2;
  int samples_per_domain = 120;
  int series_length = 32;
  int window = 32;
  int step = 32;
  int n_sinusoids = 3;
  double sample_noise = 0.3;     // i.i.d. observation noise
  double amplitude_jitter = 0.1; // per-sample amplitude variation
  // Shift magnitudes; domain i gets a deterministic spread of each.
  double amplitude_shift = 0.0;
  double frequency_shift = 0.0;
  double noise_shift = 0.0;      // channel-correlated noise level
  double baseline_shift = 0.0;
  double interference_shift = 0.0;  // domain-specific additive oscillation
  std::uint64_t seed = 1;

  bool operator==(const SynthConfig&) const = default;

  void validate() const {
    if (n_domains < 2) throw ConfigError("data.synthetic.n_domains must be >= 2");
    if (n_classes < 2) throw ConfigError("data.synthetic.n_classes must be >= 2");
    if (n_features < 1) throw ConfigError("data.synthetic.n_features must be >= 1");
    if (samples_per_domain < 1) throw ConfigError("data.synthetic.samples_per_domain must be >= 1");
    if (window < 1 || step < 1) throw ConfigError("data.synthetic.window/step must be positive");
    if (series_length < window) throw ConfigError("data.synthetic.series_length must be >= window");
    if (n_sinusoids < 1) throw ConfigError("data.synthetic.n_sinusoids must be >= 1");
    for (double v : {sample_noise, amplitude_jitter, amplitude_shift, frequency_shift, noise_shift,
                     baseline_shift, interference_shift})
      if (!(v >= 0.0) || !std::isfinite(v)) throw ConfigError("data.synthetic shift and noise magnitudes must be >= 0");
  }

  /// Moderate-shift preset used by the benchmark.
  static SynthConfig moderate(std::uint64_t seed) {
    SynthConfig c;
    c.seed = seed;
    c.amplitude_shift = 0.3;
    c.frequency_shift = 0.1;
    c.noise_shift = 0.3;
    c.baseline_shift = 0.5;
    c.interference_shift = 0.6;
    return c;
  }
};

struct DomainShift {
  double amplitude = 1.0;
  double frequency = 0.0;
  double noise = 0.0;
  Vec baseline;
  Vec interference_phase;
  double interference_freq = 0.0;
};

inline DomainShift domain_shift(const SynthConfig& cfg, int i) {
  // Evenly spread position in [-1, 1], permuted so neighbouring ids are not monotone in every factor.
  auto spread = [&](int j) { return cfg.n_domains > 1 ? -1.0 + 2.0 * j / (cfg.n_domains - 1) : 0.0; };
  Rng rng(derive_seed(cfg.seed, "data/domain", static_cast<std::uint64_t>(i)));
  DomainShift s;
  s.amplitude = 1.0 + cfg.amplitude_shift * spread(i);
  s.frequency = cfg.frequency_shift * spread((i + 1) % cfg.n_domains);
  s.noise = cfg.noise_shift * (0.5 + 0.5 * spread((i + 2) % cfg.n_domains));
  s.baseline = cfg.baseline_shift * rng.normal_vec(cfg.n_features);
  s.interference_phase = rng.uniform_vec(cfg.n_features, 0.0, 2.0 * std::numbers::pi);
  s.interference_freq = 1.5 + 5.0 * rng.uniform();
  return s;
}

struct ClassWaveform {
  Mat amplitude;  // n_sinusoids x F
  Vec frequency;  // cycles per window
  Mat phase;      // n_sinusoids x F
  double envelope_phase = 0.0;
};

inline ClassWaveform class_waveform(const SynthConfig& cfg, int c) {
  Rng rng(derive_seed(cfg.seed, "data/class", static_cast<std::uint64_t>(c)));
  ClassWaveform w;
  w.amplitude = Mat(cfg.n_sinusoids, cfg.n_features);
  w.phase = Mat(cfg.n_sinusoids, cfg.n_features);
  w.frequency = Vec(cfg.n_sinusoids);
  for (int s = 0; s < cfg.n_sinusoids; ++s) {
    w.frequency[s] = rng.uniform(0.5, 4.0);
    for (int f = 0; f < cfg.n_features; ++f) {
      w.amplitude(s, f) = rng.uniform(0.3, 1.0);
      w.phase(s, f) = rng.uniform(0.0, 2.0 * std::numbers::pi);
    }
  }
  w.envelope_phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
  return w;
}

/// Class c: seeded sum of sinusoids times a seeded envelope. Domain i applies
/// amplitude scale, frequency offset, channel-correlated noise, baseline
/// offset and an additive interference oscillation.
inline DomainDataset gen_synthetic(const SynthConfig& cfg) {
  cfg.validate();
  DomainDataset ds;
  ds.n_classes = cfg.n_classes;
  ds.window_len = cfg.window;
  ds.n_features = cfg.n_features;
  ds.meta = "synthetic seed=" + std::to_string(cfg.seed);
  std::vector<ClassWaveform> waves;
  for (int c = 0; c < cfg.n_classes; ++c) waves.push_back(class_waveform(cfg, c));
  const double two_pi = 2.0 * std::numbers::pi;
  const double T = static_cast<double>(cfg.window);
  for (int i = 0; i < cfg.n_domains; ++i) {
    const DomainShift shift = domain_shift(cfg, i);
    Domain dom;
    dom.id = std::string(1, static_cast<char>('A' + (i % 26))) + (i >= 26 ? std::to_string(i / 26) : "");
    Rng rng(derive_seed(cfg.seed, "data/samples", static_cast<std::uint64_t>(i)));
    for (int j = 0; j < cfg.samples_per_domain; ++j) {
      const int label = j % cfg.n_classes;
      const auto& w = waves[static_cast<std::size_t>(label)];
      const double amp = shift.amplitude * (1.0 + cfg.amplitude_jitter * rng.normal());
      RowMat series(cfg.series_length, cfg.n_features);
      for (int t = 0; t < cfg.series_length; ++t) {
        const double common = rng.normal();
        const double env = 1.0 + 0.3 * std::sin(two_pi * t / (2.0 * T) + w.envelope_phase);
        for (int f = 0; f < cfg.n_features; ++f) {
          double v = 0.0;
          for (int s = 0; s < cfg.n_sinusoids; ++s)
            v += w.amplitude(s, f) *
                 std::sin(two_pi * w.frequency[s] * (1.0 + shift.frequency) * t / T + w.phase(s, f));
          v *= amp * env;
          v += shift.baseline[f];
          v += cfg.interference_shift *
               std::sin(two_pi * shift.interference_freq * t / T + shift.interference_phase[f]);
          v += shift.noise * (0.7 * common + 0.3 * rng.normal());
          v += cfg.sample_noise * rng.normal();
          series(t, f) = v;
        }
      }
      for (auto& win : window_series(series, cfg.window, cfg.step)) {
        dom.windows.push_back(std::move(win));
        dom.labels.push_back(label);
      }
    }
    ds.domains.push_back(std::move(dom));
  }
  return ds;
}

// ---------------------------------------------------------------------------
// CSV ingestion

struct ManifestFile {
  std::string path;
  std::string domain;
  std::string label_column;
  std::vector<std::string> feature_columns;
};

struct Manifest {
  int window = 128;
  int step = 64;
  int n_classes = 2;
  std::vector<ManifestFile> files;
};

inline Manifest parse_manifest(const nlohmann::json& j) {
  Manifest m;
  try {
    for (auto it = j.begin(); it != j.end(); ++it) {
      const std::string& k = it.key();
      if (k != "window" && k != "step" && k != "n_classes" && k != "files")
        throw ManifestError("manifest: unknown key '" + k + "'");
    }
    m.window = j.value("window", m.window);
    m.step = j.value("step", m.step);
    m.n_classes = j.at("n_classes").get<int>();
    for (const auto& f : j.at("files")) {
      ManifestFile mf;
      mf.path = f.at("path").get<std::string>();
      mf.domain = f.at("domain").get<std::string>();
      mf.label_column = f.at("label_column").get<std::string>();
      mf.feature_columns = f.at("feature_columns").get<std::vector<std::string>>();
      if (mf.feature_columns.empty()) throw ManifestError("manifest: file '" + mf.path + "' has no feature columns");
      m.files.push_back(std::move(mf));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ManifestError(std::string("manifest: ") + e.what());
  }
  if (m.files.empty()) throw ManifestError("manifest: no files listed");
  if (m.n_classes < 2) throw ManifestError("manifest: n_classes must be >= 2");
  return m;
}

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  for (auto& c : cells) {
    while (!c.empty() && (c.back() == '\r' || c.back() == ' ')) c.pop_back();
    while (!c.empty() && c.front() == ' ') c.erase(c.begin());
  }
  return cells;
}

inline double parse_cell(const std::string& cell, const std::string& file, std::size_t line) {
  const char* begin = cell.c_str();
  char* end = nullptr;
  errno = 0;
  const double v = std::strtod(begin, &end);
  if (cell.empty() || end != begin + cell.size() || errno == ERANGE || !std::isfinite(v))
    throw ParseError(file + ":" + std::to_string(line) + ": non-numeric cell '" + cell + "'");
  return v;
}

}  // namespace detail

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;
};

inline CsvTable read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  CsvTable t;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    auto cells = detail::split_csv_line(line);
    if (t.header.empty()) {
      t.header = std::move(cells);
      continue;
    }
    if (cells.size() != t.header.size())
      throw ParseError(path.string() + ":" + std::to_string(lineno) + ": expected " +
                       std::to_string(t.header.size()) + " cells, got " + std::to_string(cells.size()));
    std::vector<double> row;
    row.reserve(cells.size());
    for (const auto& c : cells) row.push_back(detail::parse_cell(c, path.string(), lineno));
    t.rows.push_back(std::move(row));
  }
  if (t.header.empty()) throw ParseError(path.string() + ": missing header row");
  return t;
}

/// Reads every manifest file, windows each series, labels each window by
/// majority (ties to the lowest class) and standardizes per domain.
inline DomainDataset load_csv_dataset(const std::filesystem::path& dir, const Manifest& manifest) {
  DomainDataset ds;
  ds.n_classes = manifest.n_classes;
  ds.window_len = manifest.window;
  ds.n_features = static_cast<int>(manifest.files.front().feature_columns.size());
  ds.meta = "csv " + dir.string();
  std::map<std::string, std::size_t> domain_index;
  for (const auto& f : manifest.files) {
    if (static_cast<int>(f.feature_columns.size()) != ds.n_features)
      throw ManifestError("manifest: all files must list the same number of feature columns");
    const auto table = read_csv(dir / f.path);
    auto column = [&](const std::string& name) -> std::size_t {
      const auto it = std::find(table.header.begin(), table.header.end(), name);
      if (it == table.header.end())
        throw ManifestError("manifest: column '" + name + "' not found in '" + f.path + "'");
      return static_cast<std::size_t>(it - table.header.begin());
    };
    const std::size_t label_col = column(f.label_column);
    std::vector<std::size_t> feat_cols;
    for (const auto& c : f.feature_columns) feat_cols.push_back(column(c));
    RowMat series(static_cast<Eigen::Index>(table.rows.size()), ds.n_features);
    std::vector<int> row_labels;
    for (std::size_t r = 0; r < table.rows.size(); ++r) {
      for (std::size_t c = 0; c < feat_cols.size(); ++c)
        series(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = table.rows[r][feat_cols[c]];
      const double lv = table.rows[r][label_col];
      const int y = static_cast<int>(std::lround(lv));
      if (static_cast<double>(y) != lv || y < 0 || y >= ds.n_classes)
        throw ParseError(f.path + ":" + std::to_string(r + 2) + ": invalid label " + std::to_string(lv));
      row_labels.push_back(y);
    }
    auto windows = window_series(series, manifest.window, manifest.step);
    auto [it, inserted] = domain_index.try_emplace(f.domain, ds.domains.size());
    if (inserted) ds.domains.push_back(Domain{f.domain, {}, {}});
    Domain& dom = ds.domains[it->second];
    for (std::size_t w = 0; w < windows.size(); ++w) {
      std::vector<int> counts(static_cast<std::size_t>(ds.n_classes), 0);
      for (int t = 0; t < manifest.window; ++t)
        ++counts[static_cast<std::size_t>(row_labels[w * static_cast<std::size_t>(manifest.step) + t])];
      const int label = static_cast<int>(std::max_element(counts.begin(), counts.end()) - counts.begin());
      dom.windows.push_back(std::move(windows[w]));
      dom.labels.push_back(label);
    }
  }
  standardize_dataset(ds);
  ds.validate();
  return ds;
}

inline DomainDataset load_csv_dataset(const std::filesystem::path& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw IoError("cannot open manifest '" + manifest_path.string() + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ManifestError("manifest '" + manifest_path.string() + "': " + e.what());
  }
  return load_csv_dataset(manifest_path.parent_path(), parse_manifest(j));
}

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

/// One CSV per domain with windows concatenated in order, plus manifest.json
/// (window = step = window length), so loading reproduces the windows.
inline std::filesystem::path write_csv_dataset(const DomainDataset& ds, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  nlohmann::ordered_json manifest;
  manifest["window"] = ds.window_len;
  manifest["step"] = ds.window_len;
  manifest["n_classes"] = ds.n_classes;
  manifest["files"] = nlohmann::ordered_json::array();
  std::vector<std::string> features;
  for (int f = 0; f < ds.n_features; ++f) features.push_back("f" + std::to_string(f));
  for (const auto& d : ds.domains) {
    const std::string name = "domain_" + d.id + ".csv";
    std::ofstream out(dir / name);
    if (!out) throw IoError("cannot write '" + (dir / name).string() + "'");
    out << "label";
    for (const auto& f : features) out << ',' << f;
    out << '\n';
    for (std::size_t w = 0; w < d.windows.size(); ++w) {
      for (int t = 0; t < ds.window_len; ++t) {
        out << d.labels[w];
        for (int f = 0; f < ds.n_features; ++f) out << ',' << format_double(d.windows[w][t * ds.n_features + f]);
        out << '\n';
      }
    }
    nlohmann::ordered_json entry;
    entry["path"] = name;
    entry["domain"] = d.id;
    entry["label_column"] = "label";
    entry["feature_columns"] = features;
    manifest["files"].push_back(entry);
  }
  const auto mpath = dir / "manifest.json";
  std::ofstream m(mpath);
  if (!m) throw IoError("cannot write '" + mpath.string() + "'");
  m << manifest.dump(2) << '\n';
  return mpath;
}

}  // namespace ttso
