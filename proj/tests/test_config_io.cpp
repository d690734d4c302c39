#include "support/fixtures.hpp"
#include "support/oracles.hpp"

#include <gtest/gtest.h>

#include <filesystem>

using namespace ttso;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const auto d = fs::temp_directory_path() / ("ttso_test_config_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

ojson with(const char* patch) {
  ojson j = to_json(RunConfig{});
  j.merge_patch(ojson::parse(patch));
  return j;
}

}  // namespace

TEST(Config, DefaultsValidate) { EXPECT_NO_THROW(RunConfig{}.validate()); }

TEST(Config, JsonRoundTripIsExact) {
  RunConfig c = fixture::small_config();
  c.sla.eta_theta.fixed = 0.25;
  c.sla.warmup_eta = 0.01;
  c.perturb.mode = PerturbMode::Direct;
  c.group.p2.hinge = HingeKind::Squared;
  c.eval.methods = {Method::TTSO};
  c.loss.augmentations = {AugmentationKind::Shift};
  EXPECT_EQ(config_from_json(to_json(c)), c);
  EXPECT_EQ(config_from_json(to_json(RunConfig{})), RunConfig{});

  const auto dir = scratch("roundtrip");
  save_config(c, dir / "c.json");
  EXPECT_EQ(load_config(dir / "c.json"), c);
  EXPECT_EQ(to_json(load_config(dir / "c.json")).dump(), to_json(c).dump());
  fs::remove_all(dir);
}

TEST(Config, PartialFileKeepsDefaults) {
  const auto c = config_from_json(ojson::parse(R"({"seed": 9, "sla": {"T1": 40}})"));
  RunConfig expect;
  expect.seed = 9;
  expect.sla.T1 = 40;
  EXPECT_EQ(c, expect);
}

TEST(Config, UnknownKeysAreRejected) {
  EXPECT_THROW(config_from_json(ojson::parse(R"({"bogus": 1})")), ConfigError);
  EXPECT_THROW(config_from_json(ojson::parse(R"({"sla": {"T_1": 5}})")), ConfigError);
  EXPECT_THROW(config_from_json(ojson::parse(R"({"data": {"synthetic": {"shift": 1}}})")), ConfigError);
}

TEST(Config, InvalidValuesAreRejected) {
  EXPECT_THROW(config_from_json(with(R"({"sla": {"T2": 2}})")), ConfigError);
  EXPECT_THROW(config_from_json(with(R"({"sla": {"k": 0}})")), ConfigError);
  EXPECT_THROW(config_from_json(with(R"({"sla": {"eta_theta": "fast"}})")), ConfigError);
  EXPECT_THROW(config_from_json(with(R"({"eval": {"methods": ["MAML"]}})")), ConfigError);
  EXPECT_THROW(config_from_json(with(R"({"perturb": {"rho": [1, 2]}})")), ConfigError);
  EXPECT_THROW(config_from_json(with(R"({"cutplane": {"lambda_plane": -1}})")), ConfigError);
  EXPECT_THROW(config_from_json(with(R"({"sla": {"T1": "many"}})")), ConfigError);
  EXPECT_THROW(config_from_json(with(R"({"data": {"source": "csv"}})")), ConfigError);
  try {
    config_from_json(with(R"({"sla": {"T2": 3}})"));
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("T2"), std::string::npos);
  }
}

TEST(Config, MalformedFileIsConfigError) {
  const auto dir = scratch("bad");
  write_file_atomic(dir / "c.json", "{ not json");
  EXPECT_THROW(load_config(dir / "c.json"), ConfigError);
  EXPECT_THROW(load_config(dir / "missing.json"), IoError);
  fs::remove_all(dir);
}

TEST(Config, HashIgnoresMethodsAndOutputDir) {
  RunConfig a = fixture::small_config(), b = a;
  b.eval.methods = {Method::ERM};
  b.output_dir = "elsewhere";
  EXPECT_EQ(config_hash(a), config_hash(b));
  EXPECT_EQ(config_hash(a).size(), 16u);
  b.seed += 1;
  EXPECT_NE(config_hash(a), config_hash(b));
}

TEST(Io, ParamsRoundTripBitExact) {
  Rng rng(1);
  const auto dir = scratch("params");
  for (auto kind : {EncoderKind::Linear, EncoderKind::MLP, EncoderKind::DilatedConv}) {
    auto p = init_params(oracle::small_arch(kind), 3);
    p.theta = rng.normal_vec(p.theta.size());
    save_params(dir / to_string(kind), p);
    const auto q = load_params(dir / to_string(kind));
    EXPECT_EQ(q.theta, p.theta);
    EXPECT_EQ(q.arch.kind, kind);
    EXPECT_EQ(forward(q, Vec::Ones(q.arch.input_dim())), forward(p, Vec::Ones(p.arch.input_dim())));
  }
  EXPECT_THROW(load_params(dir / "absent"), IoError);
  fs::remove_all(dir);
}

TEST(Io, PlanesRoundTrip) {
  Rng rng(2);
  PlaneSet s;
  s.max_planes = 7;
  for (int i = 0; i < 3; ++i)
    s.planes.push_back({rng.normal_vec(2), rng.normal_vec(3), rng.normal_vec(4), rng.normal(), 1.5, i});
  const auto back = planes_from_json(ojson::parse(planes_to_json(s).dump()));
  ASSERT_EQ(back.size(), 3u);
  EXPECT_EQ(back.max_planes, 7u);
  for (int i = 0; i < 3; ++i) {
    EXPECT_EQ(back.planes[i].a, s.planes[i].a);
    EXPECT_EQ(back.planes[i].c, s.planes[i].c);
    EXPECT_EQ(back.planes[i].d, s.planes[i].d);
    EXPECT_EQ(back.planes[i].born_at, i);
  }
}

TEST(Io, CsvDoubleRoundTrips) {
  Rng rng(3);
  for (int i = 0; i < 100; ++i) {
    const double v = rng.normal() * std::pow(10.0, rng.uniform(-20, 20));
    EXPECT_EQ(std::stod(csv_double(v)), v);
  }
  EXPECT_EQ(csv_double(std::nan("")), "nan");
}
