#include "support/oracles.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>

using namespace ttso;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  const auto d = fs::temp_directory_path() / ("ttso_test_data_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

void write_text(const fs::path& p, const std::string& s) {
  std::ofstream out(p);
  out << s;
}

RowMat ramp(int L, int F) {
  RowMat m(L, F);
  for (int t = 0; t < L; ++t)
    for (int f = 0; f < F; ++f) m(t, f) = t * 10.0 + f;
  return m;
}

double feature_mean(const std::vector<Vec>& ws, int F, int f) {
  double s = 0.0, n = 0.0;
  for (const auto& w : ws)
    for (Eigen::Index t = 0; t < w.size() / F; ++t, n += 1.0) s += w[t * F + f];
  return s / n;
}

double feature_std(const std::vector<Vec>& ws, int F, int f) {
  const double m = feature_mean(ws, F, f);
  double s = 0.0, n = 0.0;
  for (const auto& w : ws)
    for (Eigen::Index t = 0; t < w.size() / F; ++t, n += 1.0) s += (w[t * F + f] - m) * (w[t * F + f] - m);
  return std::sqrt(s / n);
}

}  // namespace

TEST(GenSynthetic, SameSeedIsBitIdentical) {
  const auto a = gen_synthetic(SynthConfig::moderate(3));
  const auto b = gen_synthetic(SynthConfig::moderate(3));
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a.domains[i].labels, b.domains[i].labels);
    for (std::size_t j = 0; j < a.domains[i].windows.size(); ++j)
      EXPECT_EQ(a.domains[i].windows[j], b.domains[i].windows[j]);
  }
  EXPECT_NE(a.domains[0].windows[0], gen_synthetic(SynthConfig::moderate(4)).domains[0].windows[0]);
}

TEST(GenSynthetic, FourDomainIds) {
  const auto ds = gen_synthetic(SynthConfig{});
  ASSERT_EQ(ds.size(), 4u);
  std::set<std::string> ids;
  for (const auto& d : ds.domains) ids.insert(d.id);
  EXPECT_EQ(ids, (std::set<std::string>{"A", "B", "C", "D"}));
  ds.validate();
}

TEST(GenSynthetic, ZeroShiftDomainsAgreeStatistically) {
  SynthConfig c;
  c.samples_per_domain = 600;
  const auto ds = gen_synthetic(c);
  // Per-sample window mean of feature 0 for class 0, compared across domains.
  auto sample_means = [&](const Domain& d) {
    std::vector<double> out;
    for (std::size_t j = 0; j < d.windows.size() && out.size() < 200; ++j)
      if (d.labels[j] == 0) out.push_back(feature_mean({d.windows[j]}, c.n_features, 0));
    return out;
  };
  const auto a = sample_means(ds.domains[0]);
  ASSERT_EQ(a.size(), 200u);
  for (std::size_t i = 1; i < ds.size(); ++i) {
    const auto b = sample_means(ds.domains[i]);
    const double sa = oracle::sample_std(a), sb = oracle::sample_std(b);
    const double se = std::sqrt(sa * sa / static_cast<double>(a.size()) + sb * sb / static_cast<double>(b.size()));
    const double t = (oracle::mean(a) - oracle::mean(b)) / se;
    EXPECT_LT(std::abs(t), 4.0) << ds.domains[i].id;
  }
}

TEST(GenSynthetic, LinearProbeSeparatesClassesWithoutShift) {
  SynthConfig c;
  c.samples_per_domain = 240;
  const auto ds = gen_synthetic(c);
  for (const auto& d : ds.domains) {
    std::vector<Vec> train, test;
    std::vector<int> ytr, yte;
    for (std::size_t j = 0; j < d.windows.size(); ++j) {
      (j % 4 == 3 ? test : train).push_back(d.windows[j]);
      (j % 4 == 3 ? yte : ytr).push_back(d.labels[j]);
    }
    const auto r = train_probe_features(train, ytr, c.n_classes, 300, 0.05, 1);
    EXPECT_GE(accuracy_features(r.head, test, yte), 0.9) << d.id;
  }
}

TEST(SynthConfig, RejectsInvalid) {
  SynthConfig c;
  c.n_domains = 1;
  EXPECT_THROW(c.validate(), ConfigError);
  c = SynthConfig{};
  c.series_length = c.window - 1;
  EXPECT_THROW(c.validate(), ConfigError);
  c = SynthConfig{};
  c.noise_shift = -0.1;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(WindowSeries, StandardProtocolStarts) {
  const RowMat s = ramp(256, 1);
  const auto w = window_series(s, 128, 64);
  ASSERT_EQ(w.size(), 3u);
  EXPECT_EQ(w[0][0], 0.0);
  EXPECT_EQ(w[1][0], 640.0);
  EXPECT_EQ(w[2][0], 1280.0);
  EXPECT_EQ(w[2][127], 2550.0);
}

TEST(WindowSeries, CountsAndStartsMatchArithmetic) {
  Rng rng(1);
  for (int trial = 0; trial < 200; ++trial) {
    const int win = 1 + static_cast<int>(rng.below(40));
    const int step = 1 + static_cast<int>(rng.below(40));
    const int L = win + static_cast<int>(rng.below(200));
    const int F = 1 + static_cast<int>(rng.below(3));
    const RowMat s = ramp(L, F);
    const auto w = window_series(s, win, step);
    std::size_t expect = 0;
    for (int start = 0; start + win <= L; start += step) {
      ASSERT_LT(expect, w.size());
      EXPECT_EQ(w[expect][0], start * 10.0);
      EXPECT_EQ(w[expect].size(), static_cast<Eigen::Index>(win) * F);
      ++expect;
    }
    EXPECT_EQ(w.size(), expect);
    EXPECT_EQ(w.size(), static_cast<std::size_t>((L - win) / step + 1));
  }
}

TEST(WindowSeries, BoundaryAndTiling) {
  EXPECT_EQ(window_series(ramp(50, 2), 50, 7).size(), 1u);
  const RowMat s = ramp(100, 2);
  const auto w = window_series(s, 25, 25);
  ASSERT_EQ(w.size(), 4u);
  const auto u = window_series(ramp(110, 2), 25, 25);
  ASSERT_EQ(u.size(), 4u);
  for (int i = 0; i < 4; ++i)
    for (int t = 0; t < 25; ++t)
      for (int f = 0; f < 2; ++f) {
        EXPECT_EQ(w[i][t * 2 + f], s(i * 25 + t, f));
        EXPECT_EQ(u[i][t * 2 + f], s(i * 25 + t, f));
      }
  EXPECT_THROW(window_series(ramp(10, 1), 11, 1), InputError);
  EXPECT_THROW(window_series(ramp(10, 1), 5, 0), InputError);
}

TEST(Standardize, PerDomainMeanZeroStdOne) {
  Rng rng(2);
  std::vector<Vec> ws;
  for (int i = 0; i < 30; ++i) ws.push_back(Vec::Constant(20, 5.0) + 3.0 * rng.normal_vec(20));
  const auto z = standardize_domain(ws, 2);
  for (int f = 0; f < 2; ++f) {
    EXPECT_LE(std::abs(feature_mean(z, 2, f)), 1e-10);
    EXPECT_LE(std::abs(feature_std(z, 2, f) - 1.0), 1e-10);
  }
}

TEST(Standardize, ConstantFeatureBecomesZero) {
  Rng rng(3);
  std::vector<Vec> ws;
  for (int i = 0; i < 10; ++i) {
    Vec w = rng.normal_vec(8);
    for (int t = 0; t < 4; ++t) w[t * 2 + 1] = 7.25;
    ws.push_back(w);
  }
  const auto z = standardize_domain(ws, 2);
  for (const auto& w : z)
    for (int t = 0; t < 4; ++t) EXPECT_EQ(w[t * 2 + 1], 0.0);
}

TEST(Standardize, DomainsUseOwnStatistics) {
  Rng rng(4);
  DomainDataset ds;
  ds.n_features = 1;
  ds.window_len = 5;
  for (double scale : {1.0, 100.0}) {
    Domain d{"x", {}, {}};
    for (int i = 0; i < 20; ++i) {
      d.windows.push_back(scale * rng.normal_vec(5) + Vec::Constant(5, scale));
      d.labels.push_back(i % 2);
    }
    ds.domains.push_back(d);
  }
  const auto raw0 = domain_stats(ds.domains[0].windows, 1), raw1 = domain_stats(ds.domains[1].windows, 1);
  EXPECT_GT(raw1.stddev[0], 10.0 * raw0.stddev[0]);
  standardize_dataset(ds);
  for (const auto& d : ds.domains) {
    EXPECT_LE(std::abs(feature_mean(d.windows, 1, 0)), 1e-10);
    EXPECT_LE(std::abs(feature_std(d.windows, 1, 0) - 1.0), 1e-10);
  }
}

TEST(Standardize, IsIdempotent) {
  Rng rng(5);
  std::vector<Vec> ws;
  for (int i = 0; i < 15; ++i) ws.push_back(2.0 * rng.normal_vec(12) + Vec::Constant(12, -4.0));
  const auto once = standardize_domain(ws, 3);
  const auto twice = standardize_domain(once, 3);
  for (std::size_t i = 0; i < once.size(); ++i) EXPECT_LE((once[i] - twice[i]).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Csv, RoundTripReproducesWindows) {
  auto ds = gen_synthetic(SynthConfig::moderate(2));
  standardize_dataset(ds);
  const auto dir = scratch_dir("roundtrip");
  const auto manifest = write_csv_dataset(ds, dir);
  const auto back = load_csv_dataset(manifest);
  ASSERT_EQ(back.size(), 4u);
  EXPECT_EQ(back.n_classes, ds.n_classes);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    EXPECT_EQ(back.domains[i].id, ds.domains[i].id);
    EXPECT_EQ(back.domains[i].labels, ds.domains[i].labels);
    ASSERT_EQ(back.domains[i].windows.size(), ds.domains[i].windows.size());
    for (std::size_t j = 0; j < ds.domains[i].windows.size(); ++j)
      EXPECT_LE((back.domains[i].windows[j] - ds.domains[i].windows[j]).cwiseAbs().maxCoeff(), 1e-10);
  }
  fs::remove_all(dir);
}

TEST(Csv, NonNumericCellNamesLine) {
  const auto dir = scratch_dir("badcell");
  write_text(dir / "a.csv", "label,x\n0,1.0\n1,2.0\n0,abc\n");
  try {
    read_csv(dir / "a.csv");
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find(":4:"), std::string::npos) << e.what();
  }
  write_text(dir / "b.csv", "label,x\n0,1.0,3\n");
  EXPECT_THROW(read_csv(dir / "b.csv"), ParseError);
  EXPECT_THROW(read_csv(dir / "missing.csv"), IoError);
  fs::remove_all(dir);
}

TEST(Csv, ManifestGroupsFilesIntoDomains) {
  const auto dir = scratch_dir("groups");
  nlohmann::json m;
  m["window"] = 4;
  m["step"] = 2;
  m["n_classes"] = 2;
  for (int f = 0; f < 8; ++f) {
    std::string body = "y,a,b\n";
    for (int t = 0; t < 10; ++t) body += std::to_string(t < 5 ? 0 : 1) + "," + std::to_string(t * (f + 1)) + ",1\n";
    const std::string name = "s" + std::to_string(f) + ".csv";
    write_text(dir / name, body);
    m["files"].push_back({{"path", name},
                          {"domain", std::string(1, static_cast<char>('A' + f % 4))},
                          {"label_column", "y"},
                          {"feature_columns", {"a", "b"}}});
  }
  write_text(dir / "manifest.json", m.dump());
  const auto ds = load_csv_dataset(dir / "manifest.json");
  ASSERT_EQ(ds.size(), 4u);
  for (const auto& d : ds.domains) EXPECT_EQ(d.windows.size(), 8u);
  // starts 0,2,4,6 over labels 0000011111, two files per domain
  EXPECT_EQ(ds.domains[0].labels, (std::vector<int>{0, 0, 1, 1, 0, 0, 1, 1}));
  fs::remove_all(dir);
}

TEST(Csv, ManifestErrors) {
  EXPECT_THROW(parse_manifest(nlohmann::json::parse(R"({"n_classes":2,"files":[]})")), ManifestError);
  EXPECT_THROW(parse_manifest(nlohmann::json::parse(R"({"n_classes":2})")), ManifestError);
  EXPECT_THROW(parse_manifest(nlohmann::json::parse(R"({"n_classes":2,"files":[{"path":"a"}]})")), ManifestError);
  EXPECT_THROW(parse_manifest(nlohmann::json::parse(
                   R"({"n_classes":2,"bogus":1,"files":[{"path":"a","domain":"A","label_column":"y","feature_columns":["x"]}]})")),
               ManifestError);
  const auto m = parse_manifest(nlohmann::json::parse(
      R"({"n_classes":3,"files":[{"path":"a","domain":"A","label_column":"y","feature_columns":["x"]}]})"));
  EXPECT_EQ(m.window, 128);
  EXPECT_EQ(m.step, 64);

  const auto dir = scratch_dir("missingcol");
  write_text(dir / "a.csv", "y,x\n0,1\n0,2\n");
  Manifest mm;
  mm.window = 2;
  mm.step = 1;
  mm.files.push_back({"a.csv", "A", "y", {"nope"}});
  EXPECT_THROW(load_csv_dataset(dir, mm), ManifestError);
  fs::remove_all(dir);
}

TEST(Csv, MajorityLabelTiesGoToLowerClass) {
  const auto dir = scratch_dir("ties");
  write_text(dir / "a.csv", "y,x\n1,1\n1,2\n0,3\n0,4\n2,5\n2,6\n");
  Manifest m;
  m.window = 4;
  m.step = 2;
  m.n_classes = 3;
  m.files.push_back({"a.csv", "A", "y", {"x"}});
  const auto ds = load_csv_dataset(dir, m);
  EXPECT_EQ(ds.domains[0].labels, (std::vector<int>{0, 0}));
  fs::remove_all(dir);
}
