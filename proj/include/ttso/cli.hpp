#pragma once

// Command-line pipelines: gen-data, train, eval, lodo, toy-quadratic and
// selftest. Exit codes: 0 success, 1 validation error, 2 numerical or I/O
// failure.

#include "ttso/evalbench.hpp"
#include "ttso/restricted.hpp"
#include "ttso/selfcheck.hpp"

#include <CLI11.hpp>

#include <iostream>

namespace ttso {

struct LabeledTrace {
  std::string method;
  std::string target;
  int replicate = 0;
  const SolverTrace* trace = nullptr;
};

inline std::string trace_csv(const std::vector<LabeledTrace>& traces) {
  std::ostringstream out;
  out << "method,target,replicate,t,F,f1,h,grad_norm_sq,n_planes,eta_theta,eta_q,eta_delta,h_check,plane_added\n";
  for (const auto& lt : traces) {
    for (const auto& r : lt.trace->records) {
      out << lt.method << ',' << lt.target << ',' << lt.replicate << ',' << r.t << ',' << csv_double(r.F) << ','
          << csv_double(r.f1) << ',' << csv_double(r.h) << ',' << csv_double(r.grad_norm_sq) << ',' << r.n_planes
          << ',' << csv_double(r.eta_theta) << ',' << csv_double(r.eta_q) << ',' << csv_double(r.eta_delta) << ','
          << csv_double(r.h_check) << ',' << (r.plane_added ? 1 : 0) << '\n';
    }
  }
  return out.str();
}

inline std::string report_csv(const std::vector<LodoReport>& reports) {
  std::ostringstream out;
  std::size_t n_seeds = reports.empty() ? 0 : reports.front().seeds.size();
  out << "method,target,mean,std";
  for (std::size_t s = 0; s < n_seeds; ++s) out << ",seed" << s;
  out << '\n';
  for (const auto& rep : reports) {
    auto row = [&](const LodoRow& r) {
      out << to_string(rep.method) << ',' << r.target << ',' << csv_double(r.mean) << ',' << csv_double(r.stddev);
      for (double a : r.per_seed) out << ',' << csv_double(a);
      out << '\n';
    };
    for (const auto& r : rep.rows) row(r);
    row(rep.avg);
  }
  return out.str();
}

inline ojson report_json(const std::vector<LodoReport>& reports) {
  ojson j;
  j["config_hash"] = reports.empty() ? "" : reports.front().config_hash;
  j["seeds"] = reports.empty() ? std::vector<std::uint64_t>{} : reports.front().seeds;
  j["methods"] = ojson::object();
  for (const auto& rep : reports) {
    ojson m;
    m["method"] = to_string(rep.method);
    m["config_hash"] = rep.config_hash;
    ojson domains = ojson::object();
    for (const auto& r : rep.rows) {
      ojson d;
      d["mean"] = r.mean;
      d["std"] = r.stddev;
      d["per_seed"] = r.per_seed;
      domains[r.target] = d;
    }
    m["domains"] = domains;
    m["mean_accuracy"] = rep.avg.mean;
    m["mean_accuracy_std"] = rep.avg.stddev;
    m["mean_accuracy_per_seed"] = rep.avg.per_seed;
    j["methods"][to_string(rep.method)] = m;
  }
  return j;
}

struct ReportPaths {
  std::filesystem::path report_csv, report_json, trace_csv, config;
};

/// report.csv, report.json, trace.csv and the config echo, each written atomically.
inline ReportPaths write_report(const std::vector<LodoReport>& reports, const std::vector<LabeledTrace>& traces,
                                const RunConfig& cfg, const std::filesystem::path& dir) {
  ReportPaths p{dir / "report.csv", dir / "report.json", dir / "trace.csv", dir / "config.json"};
  write_file_atomic(p.report_csv, report_csv(reports));
  write_file_atomic(p.report_json, report_json(reports).dump(2) + "\n");
  write_file_atomic(p.trace_csv, trace_csv(traces));
  save_config(cfg, p.config);
  return p;
}

namespace detail {

inline RunConfig config_or_default(const std::string& path) { return path.empty() ? RunConfig{} : load_config(path); }

inline std::filesystem::path out_dir(const RunConfig& cfg, const std::string& flag) {
  return flag.empty() ? std::filesystem::path(cfg.output_dir) : std::filesystem::path(flag);
}

inline std::filesystem::path config_base(const std::string& path) {
  return path.empty() ? std::filesystem::path{} : std::filesystem::path(path).parent_path();
}

inline std::size_t domain_index(const DomainDataset& ds, const std::string& id) {
  for (std::size_t i = 0; i < ds.domains.size(); ++i)
    if (ds.domains[i].id == id) return i;
  throw InputError("unknown domain '" + id + "'");
}

inline int cmd_gen_data(const std::string& config, const std::string& out, std::ostream& os) {
  const RunConfig cfg = config_or_default(config);
  DomainDataset ds = gen_synthetic(cfg.synth_config());
  standardize_dataset(ds);
  const auto dir = out_dir(cfg, out) / "data";
  const auto manifest = write_csv_dataset(ds, dir);
  os << "wrote " << ds.domains.size() << " domains to " << manifest.string() << '\n';
  return 0;
}

inline int cmd_train(const std::string& config, const std::string& out, const std::string& target,
                     const std::string& method_name, int replicate, std::ostream& os) {
  const RunConfig cfg = config_or_default(config);
  const DomainDataset ds = load_dataset(cfg, config_base(config));
  check_architecture(cfg, ds);
  const Method method = method_from_string(method_name);
  const std::size_t t = target.empty() ? ds.domains.size() : domain_index(ds, target);
  if (replicate < 0) throw InputError("--replicate must be >= 0");
  const std::uint64_t run_seed = derive_seed(cfg.replicate_seed(replicate), "fold", t);
  const SourceSplit src = source_split(ds, t);
  auto rep = train_representation(method, src.windows, cfg, run_seed);
  auto probe = train_probe(rep.params, src.all_windows, src.all_labels, ds.n_classes, cfg.eval.probe_epochs,
                           cfg.eval.probe_lr, derive_seed(run_seed, "probe"));
  FoldOutcome f;
  f.target = target.empty() ? "none" : target;
  f.replicate = replicate;
  f.params = rep.params;
  f.head = probe.head;
  f.q = rep.q;
  f.accuracy = evaluate_accuracy(f.params, f.head, src.all_windows, src.all_labels);
  f.sla = std::move(rep.sla);
  const auto dir = out_dir(cfg, out);
  save_fold_checkpoint(f, dir / "checkpoint");
  std::vector<LabeledTrace> traces;
  if (f.sla) traces.push_back({to_string(method), f.target, replicate, &f.sla->trace});
  write_file_atomic(dir / "trace.csv", trace_csv(traces));
  save_config(cfg, dir / "config.json");
  os << to_string(method) << " trained; source accuracy " << f.accuracy << "; checkpoint in "
     << (dir / "checkpoint").string() << '\n';
  return 0;
}

inline int cmd_eval(const std::string& config, const std::string& out, const std::string& checkpoint,
                    const std::string& domain, std::ostream& os) {
  const RunConfig cfg = config_or_default(config);
  const DomainDataset ds = load_dataset(cfg, config_base(config));
  const std::filesystem::path ck(checkpoint);
  const EncoderParams params = load_params(ck / "params");
  const ProbeHead head = load_probe_head(ck / "head.json");
  if (params.arch.input_window_len != ds.window_len || params.arch.n_features != ds.n_features)
    throw InputError("checkpoint architecture does not match the data");
  if (head.W.rows() != ds.n_classes || head.W.cols() != params.arch.repr_dim)
    throw InputError("probe head does not match the checkpoint or the data");
  ojson j;
  j["checkpoint"] = ck.string();
  j["domains"] = ojson::object();
  for (std::size_t i = 0; i < ds.domains.size(); ++i) {
    if (!domain.empty() && ds.domains[i].id != domain) continue;
    const double acc = evaluate_accuracy(params, head, ds.domains[i].windows, ds.domains[i].labels);
    j["domains"][ds.domains[i].id] = acc;
    os << ds.domains[i].id << ' ' << acc << '\n';
  }
  if (!domain.empty() && j["domains"].empty()) throw InputError("unknown domain '" + domain + "'");
  write_file_atomic(out_dir(cfg, out) / "eval.json", j.dump(2) + "\n");
  return 0;
}

inline int cmd_lodo(const std::string& config, const std::string& out, bool checkpoints, std::ostream& os) {
  const RunConfig cfg = config_or_default(config);
  const DomainDataset ds = load_dataset(cfg, config_base(config));
  const auto dir = out_dir(cfg, out);
  std::vector<LodoReport> reports;
  for (Method m : cfg.eval.methods) {
    reports.push_back(run_lodo(ds, m, cfg, checkpoints ? std::optional(dir / "checkpoints") : std::nullopt));
    const auto& r = reports.back();
    os << to_string(m);
    for (const auto& row : r.rows) os << ' ' << row.target << '=' << row.mean;
    os << " AVG=" << r.avg.mean << '\n';
  }
  std::vector<LabeledTrace> traces;
  for (const auto& r : reports)
    for (const auto& f : r.folds)
      if (f.sla) traces.push_back({to_string(r.method), f.target, f.replicate, &f.sla->trace});
  const auto paths = write_report(reports, traces, cfg, dir);
  os << "report: " << paths.report_csv.string() << '\n';
  return 0;
}

struct ToyOptions {
  int N = 4, K = 3, D = 4;
  int epochs = 8;
  double epsilon = 0.05;
  double lambda = 1.0;
  std::int64_t T1 = 500;
  std::int64_t k = 50;
  double eta = 0.02;
};

inline int cmd_toy(const std::string& config, const std::string& out, const ToyOptions& o, std::ostream& os) {
  const RunConfig cfg = config_or_default(config);
  const QuadraticProblem p = make_quadratic_problem(o.N, o.K, o.D, derive_seed(cfg.seed, "toy"));
  const auto restricted = monotone_restriction_run(p, o.epochs, o.epsilon, o.lambda);
  bool monotone = true;
  std::ostringstream rc;
  rc << "epoch,n_planes,F_newton,F_exact,h,grad_norm\n";
  for (std::size_t i = 0; i < restricted.size(); ++i) {
    const auto& r = restricted[i];
    if (i > 0 && r.F_newton < restricted[i - 1].F_newton - 1e-7) monotone = false;
    rc << r.epoch << ',' << r.n_planes << ',' << csv_double(r.F_newton) << ',' << csv_double(r.F_exact) << ','
       << csv_double(r.h) << ',' << csv_double(r.grad_norm) << '\n';
  }
  QuadraticBundle bundle(p);
  SLAConfig sc;
  sc.T1 = o.T1;
  sc.k = o.k;
  sc.epsilon_h = o.epsilon;
  sc.lambda_plane = o.lambda;
  sc.eta_theta.fixed = sc.eta_q.fixed = sc.eta_delta.fixed = o.eta;
  const auto run = sla_run(sc, bundle, bundle.initial_state());
  const auto dir = out_dir(cfg, out);
  write_file_atomic(dir / "restricted.csv", rc.str());
  write_file_atomic(dir / "trace.csv", trace_csv({{"toy", "none", 0, &run.trace}}));
  ojson j;
  j["restricted_epochs"] = restricted.size();
  j["planes_added"] = restricted.back().n_planes;
  j["restricted_optima_monotone"] = monotone;
  j["sla_status"] = to_string(run.trace.status);
  j["sla_planes"] = run.planes.size();
  write_file_atomic(dir / "report.json", j.dump(2) + "\n");
  os << "restricted optima over " << restricted.size() << " epochs: " << (monotone ? "monotone" : "NOT monotone")
     << '\n';
  return monotone ? 0 : 2;
}

inline int cmd_selftest(std::uint64_t seed, std::ostream& os) {
  bool ok = true;
  for (const auto& r : run_selfchecks(seed)) {
    os << (r.passed ? "PASS " : "FAIL ") << r.name << " (" << r.detail << ")\n";
    ok = ok && r.passed;
  }
  return ok ? 0 : 2;
}

}  // namespace detail

/// Parses argv and runs one subcommand. Errors are reported on `err`.
inline int run_command(int argc, const char* const* argv, std::ostream& os = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Tri-level time-series OOD training and evaluation", "ttso"};
  app.require_subcommand(1);
  std::string config, out, target, method = "TTSO", checkpoint, domain;
  int replicate = 0;
  bool checkpoints = false;
  std::uint64_t selftest_seed = 0;
  detail::ToyOptions toy;

  auto* gen = app.add_subcommand("gen-data", "Generate the synthetic benchmark as CSV plus manifest");
  auto* train = app.add_subcommand("train", "Train a representation and probe on the source domains");
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on the configured data");
  auto* lodo = app.add_subcommand("lodo", "Leave-one-domain-out comparison of the configured methods");
  auto* toyc = app.add_subcommand("toy-quadratic", "Restricted-optimum monotonicity on the toy quadratic bundle");
  auto* self = app.add_subcommand("selftest", "Gradient, convexity, plane and simplex property checks");
  for (auto* s : {gen, train, eval, lodo, toyc}) {
    s->add_option("--config", config, "Run configuration (JSON)");
    s->add_option("--out", out, "Output directory (defaults to output_dir)");
  }
  train->add_option("--target", target, "Held-out domain id (default: train on all domains)");
  train->add_option("--method", method, "ERM, GroupDRO or TTSO");
  train->add_option("--replicate", replicate, "Replicate seed index");
  eval->add_option("--checkpoint", checkpoint, "Checkpoint directory")->required();
  eval->add_option("--domain", domain, "Evaluate a single domain");
  lodo->add_flag("--checkpoints", checkpoints, "Write per-fold checkpoints");
  toyc->add_option("--epochs", toy.epochs, "Plane-addition epochs");
  toyc->add_option("--epsilon", toy.epsilon, "Feasibility tolerance for h");
  toyc->add_option("--lambda", toy.lambda, "Plane penalty weight");
  toyc->add_option("--T1", toy.T1, "Driver iterations");
  self->add_option("--seed", selftest_seed, "Seed for random instances");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    os << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return 1;
  }

  try {
    if (*gen) return detail::cmd_gen_data(config, out, os);
    if (*train) return detail::cmd_train(config, out, target, method, replicate, os);
    if (*eval) return detail::cmd_eval(config, out, checkpoint, domain, os);
    if (*lodo) return detail::cmd_lodo(config, out, checkpoints, os);
    if (*toyc) return detail::cmd_toy(config, out, toy, os);
    if (*self) return detail::cmd_selftest(selftest_seed, os);
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  }
  err << app.help();
  return 1;
}

}  // namespace ttso
