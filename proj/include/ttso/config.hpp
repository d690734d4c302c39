#pragma once

// Run configuration: one JSON object with architecture, loss, perturb, group,
// cutplane, sla, data and eval sections plus the global seed and output
// directory. Missing fields keep their defaults; unknown keys are errors.

#include "ttso/bundles.hpp"
#include "ttso/data.hpp"
#include "ttso/io.hpp"

namespace ttso {

enum class Method { ERM, GroupDRO, TTSO };

inline std::string to_string(Method m) {
  switch (m) {
    case Method::ERM: return "ERM";
    case Method::GroupDRO: return "GroupDRO";
    case Method::TTSO: return "TTSO";
  }
  return "?";
}

inline Method method_from_string(const std::string& s) {
  if (s == "ERM" || s == "erm") return Method::ERM;
  if (s == "GroupDRO" || s == "groupdro") return Method::GroupDRO;
  if (s == "TTSO" || s == "ttso") return Method::TTSO;
  throw ConfigError("unknown method '" + s + "' (expected ERM, GroupDRO or TTSO)");
}

struct LossSection {
  double lambda_reg = 0.5;
  F1Mode f1_mode = F1Mode::Con;
  std::vector<AugmentationKind> augmentations{AugmentationKind::Jitter, AugmentationKind::Scale,
                                              AugmentationKind::Shift};
  double aug_magnitude = 0.1;
  bool operator==(const LossSection&) const = default;
};

struct PerturbSection {
  PerturbMode mode = PerturbMode::GmmReparam;
  int n_components = 2;
  double sigma_init = 0.05;
  double C1 = 1.0;
  double C2 = 1.0;
  PenaltyRho rho;
  int T3 = 3;
  double eta_delta_inner = 0.05;
  bool operator==(const PerturbSection&) const = default;
};

struct GroupSection {
  double eta_q_inner = 0.3;
  bool ascent_sign = true;
  P2Settings p2;
  double groupdro_eta = 0.1;
  bool operator==(const GroupSection&) const = default;
};

struct CutplaneSection {
  double lambda_plane = 1.0;
  double step_cap = 1.0;
  std::size_t max_planes = 64;
  bool operator==(const CutplaneSection&) const = default;
};

struct SlaSection {
  std::int64_t T1 = 300;
  std::int64_t t1 = 1;
  std::int64_t k = 10;
  int T2 = 1;
  double epsilon_h = 0.05;
  double epsilon_stat = 1e-6;
  StepSize eta_theta{0.3}, eta_q, eta_delta;
  std::optional<double> warmup_eta;
  UpdateOrder order = UpdateOrder::Jacobi;
  int batch_size = 16;
  bool operator==(const SlaSection&) const = default;
};

struct DataSection {
  std::string source = "synthetic";  // synthetic | csv
  SynthConfig synthetic = SynthConfig::moderate(0);
  std::string manifest;
  bool operator==(const DataSection&) const = default;
};

struct EvalSection {
  std::vector<Method> methods{Method::ERM, Method::GroupDRO, Method::TTSO};
  int n_seeds = 5;
  int probe_epochs = 300;
  double probe_lr = 0.5;
  int finetune_epochs = 0;
  double finetune_lr = 0.01;
  double finetune_gamma = 1.0;
  bool operator==(const EvalSection&) const = default;
};

struct RunConfig {
  Architecture architecture{EncoderKind::DilatedConv, 32, 2, 8, {}, 4, 3, 2};
  LossSection loss;
  PerturbSection perturb;
  GroupSection group;
  CutplaneSection cutplane;
  SlaSection sla;
  DataSection data;
  EvalSection eval;
  std::uint64_t seed = 0;
  std::string output_dir = "out";

  bool operator==(const RunConfig&) const = default;

  SLAConfig sla_config() const {
    SLAConfig c;
    c.T1 = sla.T1;
    c.t1 = sla.t1;
    c.k = sla.k;
    c.epsilon_h = sla.epsilon_h;
    c.epsilon_stat = sla.epsilon_stat;
    c.eta_theta = sla.eta_theta;
    c.eta_q = sla.eta_q;
    c.eta_delta = sla.eta_delta;
    c.warmup_eta = sla.warmup_eta;
    c.lambda_plane = cutplane.lambda_plane;
    c.plane_step_cap = cutplane.step_cap;
    c.max_planes = cutplane.max_planes;
    c.order = sla.order;
    return c;
  }

  PerturbSettings perturb_settings() const {
    return {perturb.C1, perturb.C2, perturb.rho, perturb.T3, perturb.eta_delta_inner};
  }

  TtsoBundleSettings bundle_settings(std::uint64_t run_seed) const {
    TtsoBundleSettings s;
    s.lambda_reg = loss.lambda_reg;
    s.f1_mode = loss.f1_mode;
    s.augmentations = loss.augmentations;
    s.aug_magnitude = loss.aug_magnitude;
    s.perturb = perturb_settings();
    s.anchor = {group.eta_q_inner, loss.lambda_reg, group.ascent_sign, group.p2};
    s.batch_size = sla.batch_size;
    s.seed = derive_seed(run_seed, "bundle");
    return s;
  }

  /// Synthetic generator settings with the seed derived from the global seed.
  SynthConfig synth_config() const {
    SynthConfig c = data.synthetic;
    c.seed = derive_seed(seed, "data");
    return c;
  }

  std::uint64_t replicate_seed(int r) const { return derive_seed(seed, "replicate", static_cast<std::uint64_t>(r)); }

  void validate() const {
    architecture.validate();
    if (!(loss.lambda_reg >= 0.0)) throw ConfigError("loss.lambda_reg must be >= 0");
    if (loss.augmentations.empty()) throw ConfigError("loss.augmentations must not be empty");
    if (!(loss.aug_magnitude >= 0.0)) throw ConfigError("loss.aug_magnitude must be >= 0");
    if (perturb.n_components < 1) throw ConfigError("perturb.n_components must be >= 1");
    if (!(perturb.sigma_init > 0.0)) throw ConfigError("perturb.sigma_init must be > 0");
    if (!(perturb.C1 >= 0.0) || !(perturb.C2 >= 0.0)) throw ConfigError("perturb.C1 and perturb.C2 must be >= 0");
    for (double r : {perturb.rho.r1, perturb.rho.r2, perturb.rho.r3, perturb.rho.r4})
      if (!(r >= 0.0)) throw ConfigError("perturb.rho entries must be >= 0");
    if (perturb.T3 < 0) throw ConfigError("perturb.T3 must be >= 0");
    if (!(perturb.eta_delta_inner > 0.0)) throw ConfigError("perturb.eta_delta_inner must be > 0");
    if (!(group.eta_q_inner > 0.0)) throw ConfigError("group.eta_q_inner must be > 0");
    for (double l : {group.p2.lambda1, group.p2.lambda2, group.p2.lambda3, group.p2.lambda4})
      if (!(l >= 0.0)) throw ConfigError("group.p2 lambdas must be >= 0");
    if (!(group.p2.tau >= 0.0)) throw ConfigError("group.p2.tau must be >= 0");
    if (!(group.groupdro_eta > 0.0)) throw ConfigError("group.groupdro_eta must be > 0");
    if (sla.T2 != 1) throw ConfigError("sla.T2 must be 1 (the middle level takes a single linearized step)");
    if (sla.batch_size < 2) throw ConfigError("sla.batch_size must be >= 2");
    if (sla.T1 < 1) throw ConfigError("sla.T1 must be >= 1");
    sla_config().validate();
    if (data.source != "synthetic" && data.source != "csv")
      throw ConfigError("data.source: expected synthetic or csv");
    if (data.source == "csv" && data.manifest.empty()) throw ConfigError("data.manifest is required for csv data");
    data.synthetic.validate();
    if (eval.methods.empty()) throw ConfigError("eval.methods must not be empty");
    if (eval.n_seeds < 1) throw ConfigError("eval.n_seeds must be >= 1");
    if (eval.probe_epochs < 0) throw ConfigError("eval.probe_epochs must be >= 0");
    if (!(eval.probe_lr > 0.0)) throw ConfigError("eval.probe_lr must be > 0");
    if (eval.finetune_epochs < 0) throw ConfigError("eval.finetune_epochs must be >= 0");
    if (!(eval.finetune_lr > 0.0)) throw ConfigError("eval.finetune_lr must be > 0");
    if (!(eval.finetune_gamma >= 0.0)) throw ConfigError("eval.finetune_gamma must be >= 0");
    if (output_dir.empty()) throw ConfigError("output_dir must not be empty");
  }
};

// ---------------------------------------------------------------------------
// JSON

namespace detail {

inline ojson step_to_json(const StepSize& s) { return s.fixed ? ojson(*s.fixed) : ojson("schedule"); }

inline void step_from_json(JsonReader& r, const std::string& key, StepSize& out) {
  if (const ojson* v = r.raw(key)) {
    if (v->is_string() && v->get<std::string>() == "schedule") {
      out.fixed.reset();
    } else if (v->is_number()) {
      out.fixed = v->get<double>();
    } else {
      r.fail(key, "expected \"schedule\" or a number");
    }
  }
}

}  // namespace detail

inline ojson to_json(const RunConfig& c) {
  ojson j;
  j["seed"] = c.seed;
  j["output_dir"] = c.output_dir;
  j["architecture"] = architecture_to_json(c.architecture);

  ojson loss;
  loss["lambda_reg"] = c.loss.lambda_reg;
  loss["f1_mode"] = to_string(c.loss.f1_mode);
  loss["augmentations"] = ojson::array();
  for (auto k : c.loss.augmentations) loss["augmentations"].push_back(to_string(k));
  loss["aug_magnitude"] = c.loss.aug_magnitude;
  j["loss"] = loss;

  ojson pe;
  pe["mode"] = to_string(c.perturb.mode);
  pe["n_components"] = c.perturb.n_components;
  pe["sigma_init"] = c.perturb.sigma_init;
  pe["C1"] = c.perturb.C1;
  pe["C2"] = c.perturb.C2;
  pe["rho"] = ojson::array({c.perturb.rho.r1, c.perturb.rho.r2, c.perturb.rho.r3, c.perturb.rho.r4});
  pe["T3"] = c.perturb.T3;
  pe["eta_delta_inner"] = c.perturb.eta_delta_inner;
  j["perturb"] = pe;

  ojson g;
  g["eta_q_inner"] = c.group.eta_q_inner;
  g["ascent_sign"] = c.group.ascent_sign;
  g["lambda1"] = c.group.p2.lambda1;
  g["lambda2"] = c.group.p2.lambda2;
  g["lambda3"] = c.group.p2.lambda3;
  g["lambda4"] = c.group.p2.lambda4;
  g["tau"] = c.group.p2.tau;
  g["tau_penalty"] = c.group.p2.tau_penalty;
  g["hinge"] = c.group.p2.hinge == HingeKind::Linear ? "linear" : "squared";
  g["groupdro_eta"] = c.group.groupdro_eta;
  j["group"] = g;

  ojson cp;
  cp["lambda_plane"] = c.cutplane.lambda_plane;
  cp["step_cap"] = c.cutplane.step_cap;
  cp["max_planes"] = c.cutplane.max_planes;
  j["cutplane"] = cp;

  ojson s;
  s["T1"] = c.sla.T1;
  s["t1"] = c.sla.t1;
  s["k"] = c.sla.k;
  s["T2"] = c.sla.T2;
  s["epsilon_h"] = c.sla.epsilon_h;
  s["epsilon_stat"] = c.sla.epsilon_stat;
  s["eta_theta"] = detail::step_to_json(c.sla.eta_theta);
  s["eta_q"] = detail::step_to_json(c.sla.eta_q);
  s["eta_delta"] = detail::step_to_json(c.sla.eta_delta);
  s["warmup_eta"] = c.sla.warmup_eta ? ojson(*c.sla.warmup_eta) : ojson("schedule");
  s["order"] = to_string(c.sla.order);
  s["batch_size"] = c.sla.batch_size;
  j["sla"] = s;

  ojson d;
  d["source"] = c.data.source;
  d["manifest"] = c.data.manifest;
  const auto& sy = c.data.synthetic;
  ojson sj;
  sj["n_domains"] = sy.n_domains;
  sj["n_classes"] = sy.n_classes;
  sj["n_features"] = sy.n_features;
  sj["samples_per_domain"] = sy.samples_per_domain;
  sj["series_length"] = sy.series_length;
  sj["window"] = sy.window;
  sj["step"] = sy.step;
  sj["n_sinusoids"] = sy.n_sinusoids;
  sj["sample_noise"] = sy.sample_noise;
  sj["amplitude_jitter"] = sy.amplitude_jitter;
  sj["amplitude_shift"] = sy.amplitude_shift;
  sj["frequency_shift"] = sy.frequency_shift;
  sj["noise_shift"] = sy.noise_shift;
  sj["baseline_shift"] = sy.baseline_shift;
  sj["interference_shift"] = sy.interference_shift;
  d["synthetic"] = sj;
  j["data"] = d;

  ojson e;
  e["methods"] = ojson::array();
  for (auto m : c.eval.methods) e["methods"].push_back(to_string(m));
  e["n_seeds"] = c.eval.n_seeds;
  e["probe_epochs"] = c.eval.probe_epochs;
  e["probe_lr"] = c.eval.probe_lr;
  e["finetune_epochs"] = c.eval.finetune_epochs;
  e["finetune_lr"] = c.eval.finetune_lr;
  e["finetune_gamma"] = c.eval.finetune_gamma;
  j["eval"] = e;
  return j;
}

inline RunConfig config_from_json(const ojson& j) {
  RunConfig c;
  JsonReader root(j, "");
  root.get("seed", c.seed);
  root.get("output_dir", c.output_dir);
  if (const ojson* a = root.raw("architecture")) c.architecture = architecture_from_json(*a, "architecture");

  if (auto r = root.section("loss")) {
    r->get("lambda_reg", c.loss.lambda_reg);
    r->get_enum("f1_mode", c.loss.f1_mode, f1_mode_from_string);
    std::vector<std::string> augs;
    if (r->has("augmentations")) {
      r->get("augmentations", augs);
      c.loss.augmentations.clear();
      try {
        for (const auto& a : augs) c.loss.augmentations.push_back(augmentation_kind_from_string(a));
      } catch (const ConfigError& e) {
        r->fail("augmentations", e.what());
      }
    }
    r->get("aug_magnitude", c.loss.aug_magnitude);
    r->finish();
  }

  if (auto r = root.section("perturb")) {
    r->get_enum("mode", c.perturb.mode, perturb_mode_from_string);
    r->get("n_components", c.perturb.n_components);
    r->get("sigma_init", c.perturb.sigma_init);
    r->get("C1", c.perturb.C1);
    r->get("C2", c.perturb.C2);
    if (const ojson* rho = r->raw("rho")) {
      if (!rho->is_array() || rho->size() != 4) r->fail("rho", "expected an array of 4 numbers");
      for (const auto& v : *rho)
        if (!v.is_number()) r->fail("rho", "expected an array of 4 numbers");
      c.perturb.rho = {(*rho)[0].get<double>(), (*rho)[1].get<double>(), (*rho)[2].get<double>(),
                       (*rho)[3].get<double>()};
    }
    r->get("T3", c.perturb.T3);
    r->get("eta_delta_inner", c.perturb.eta_delta_inner);
    r->finish();
  }

  if (auto r = root.section("group")) {
    r->get("eta_q_inner", c.group.eta_q_inner);
    r->get("ascent_sign", c.group.ascent_sign);
    r->get("lambda1", c.group.p2.lambda1);
    r->get("lambda2", c.group.p2.lambda2);
    r->get("lambda3", c.group.p2.lambda3);
    r->get("lambda4", c.group.p2.lambda4);
    r->get("tau", c.group.p2.tau);
    r->get("tau_penalty", c.group.p2.tau_penalty);
    r->get_enum("hinge", c.group.p2.hinge, [](const std::string& s) {
      if (s == "linear") return HingeKind::Linear;
      if (s == "squared") return HingeKind::Squared;
      throw ConfigError("expected linear or squared");
    });
    r->get("groupdro_eta", c.group.groupdro_eta);
    r->finish();
  }

  if (auto r = root.section("cutplane")) {
    r->get("lambda_plane", c.cutplane.lambda_plane);
    r->get("step_cap", c.cutplane.step_cap);
    r->get("max_planes", c.cutplane.max_planes);
    r->finish();
  }

  if (auto r = root.section("sla")) {
    r->get("T1", c.sla.T1);
    r->get("t1", c.sla.t1);
    r->get("k", c.sla.k);
    r->get("T2", c.sla.T2);
    r->get("epsilon_h", c.sla.epsilon_h);
    r->get("epsilon_stat", c.sla.epsilon_stat);
    detail::step_from_json(*r, "eta_theta", c.sla.eta_theta);
    detail::step_from_json(*r, "eta_q", c.sla.eta_q);
    detail::step_from_json(*r, "eta_delta", c.sla.eta_delta);
    StepSize warm{c.sla.warmup_eta};
    detail::step_from_json(*r, "warmup_eta", warm);
    c.sla.warmup_eta = warm.fixed;
    r->get_enum("order", c.sla.order, update_order_from_string);
    r->get("batch_size", c.sla.batch_size);
    r->finish();
  }

  if (auto r = root.section("data")) {
    r->get("source", c.data.source);
    r->get("manifest", c.data.manifest);
    if (auto s = r->section("synthetic")) {
      auto& sy = c.data.synthetic;
      s->get("n_domains", sy.n_domains);
      s->get("n_classes", sy.n_classes);
      s->get("n_features", sy.n_features);
      s->get("samples_per_domain", sy.samples_per_domain);
      s->get("series_length", sy.series_length);
      s->get("window", sy.window);
      s->get("step", sy.step);
      s->get("n_sinusoids", sy.n_sinusoids);
      s->get("sample_noise", sy.sample_noise);
      s->get("amplitude_jitter", sy.amplitude_jitter);
      s->get("amplitude_shift", sy.amplitude_shift);
      s->get("frequency_shift", sy.frequency_shift);
      s->get("noise_shift", sy.noise_shift);
      s->get("baseline_shift", sy.baseline_shift);
      s->get("interference_shift", sy.interference_shift);
      s->finish();
    }
    r->finish();
  }

  if (auto r = root.section("eval")) {
    if (r->has("methods")) {
      std::vector<std::string> ms;
      r->get("methods", ms);
      c.eval.methods.clear();
      try {
        for (const auto& m : ms) c.eval.methods.push_back(method_from_string(m));
      } catch (const ConfigError& e) {
        r->fail("methods", e.what());
      }
    }
    r->get("n_seeds", c.eval.n_seeds);
    r->get("probe_epochs", c.eval.probe_epochs);
    r->get("probe_lr", c.eval.probe_lr);
    r->get("finetune_epochs", c.eval.finetune_epochs);
    r->get("finetune_lr", c.eval.finetune_lr);
    r->get("finetune_gamma", c.eval.finetune_gamma);
    r->finish();
  }
  root.finish();
  c.validate();
  return c;
}

inline RunConfig load_config(const std::filesystem::path& path) {
  ojson j;
  try {
    j = ojson::parse(read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config '" + path.string() + "': " + e.what());
  }
  return config_from_json(j);
}

inline void save_config(const RunConfig& c, const std::filesystem::path& path) {
  write_file_atomic(path, to_json(c).dump(2) + "\n");
}

/// FNV-1a of the canonical config without the method list and output
/// directory, so runs of different methods on the same data and seeds share a hash.
inline std::string config_hash(const RunConfig& c) {
  ojson j = to_json(c);
  j["eval"].erase("methods");
  j.erase("output_dir");
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(j.dump())));
  return buf;
}

}  // namespace ttso
