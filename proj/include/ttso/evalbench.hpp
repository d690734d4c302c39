#pragma once

// Downstream evaluation: linear probe on frozen representations, norm-ball
// constrained fine-tuning, accuracy, the GroupDRO reweighting step and the
// leave-one-domain-out harness over ERM, GroupDRO and TTSO.

#include "ttso/config.hpp"

#include <filesystem>

namespace ttso {

struct ProbeHead {
  Mat W;     // C x M
  Vec bias;  // C

  Vec logits(const Vec& z) const { return W * z + bias; }
  bool operator==(const ProbeHead& o) const { return W == o.W && bias == o.bias; }
};

inline ProbeHead init_probe(int n_classes, Eigen::Index repr_dim, std::uint64_t seed) {
  if (n_classes < 2) throw InputError("init_probe: need at least 2 classes");
  Rng rng(derive_seed(seed, "evalbench/probe_init"));
  const double s = 1.0 / std::sqrt(static_cast<double>(repr_dim));
  ProbeHead h{Mat(n_classes, repr_dim), Vec::Zero(n_classes)};
  for (Eigen::Index i = 0; i < h.W.rows(); ++i)
    for (Eigen::Index j = 0; j < h.W.cols(); ++j) h.W(i, j) = rng.uniform(-s, s);
  return h;
}

/// Argmax; ties go to the lowest class index.
inline int predict(const ProbeHead& head, const Vec& z) {
  const Vec l = head.logits(z);
  int best = 0;
  for (Eigen::Index c = 1; c < l.size(); ++c)
    if (l[c] > l[best]) best = static_cast<int>(c);
  return best;
}

struct ProbeGrad {
  double loss = 0.0;
  Mat W;
  Vec bias;
  std::vector<Vec> grad_z;  // per sample, filled only on request
};

inline ProbeGrad probe_loss_grad(const ProbeHead& head, const std::vector<Vec>& Z, const std::vector<int>& labels,
                                 bool want_z = false) {
  ProbeGrad g{0.0, Mat::Zero(head.W.rows(), head.W.cols()), Vec::Zero(head.bias.size()), {}};
  const double inv_n = 1.0 / static_cast<double>(Z.size());
  for (std::size_t j = 0; j < Z.size(); ++j) {
    const auto ce = cross_entropy_loss(head.logits(Z[j]), labels[j]);
    g.loss += ce.value * inv_n;
    g.W += (inv_n * ce.grad_logits) * Z[j].transpose();
    g.bias += inv_n * ce.grad_logits;
    if (want_z) g.grad_z.push_back(inv_n * (head.W.transpose() * ce.grad_logits));
  }
  return g;
}

struct ProbeResult {
  ProbeHead head;
  std::vector<double> loss_trace;  // mean cross-entropy before each epoch, then the final value
};

inline void check_labeled(std::size_t n_windows, const std::vector<int>& labels, int n_classes, const char* who) {
  if (n_windows == 0) throw InputError(std::string(who) + ": empty training set");
  if (labels.size() != n_windows) throw InputError(std::string(who) + ": label count mismatch");
  for (int y : labels)
    if (y < 0 || y >= n_classes) throw InputError(std::string(who) + ": label out of range");
}

/// Full-batch gradient descent on mean cross-entropy over fixed features.
inline ProbeResult train_probe_features(const std::vector<Vec>& Z, const std::vector<int>& labels, int n_classes,
                                        int epochs, double lr, std::uint64_t seed) {
  check_labeled(Z.size(), labels, n_classes, "train_probe");
  if (epochs < 0) throw InputError("train_probe: epochs must be >= 0");
  ProbeResult r{init_probe(n_classes, Z.front().size(), seed), {}};
  for (int e = 0; e < epochs; ++e) {
    const auto g = probe_loss_grad(r.head, Z, labels);
    r.loss_trace.push_back(g.loss);
    r.head.W -= lr * g.W;
    r.head.bias -= lr * g.bias;
  }
  r.loss_trace.push_back(probe_loss_grad(r.head, Z, labels).loss);
  return r;
}

inline std::vector<Vec> encode_all(const EncoderParams& params, const std::vector<Vec>& windows) {
  std::vector<Vec> Z;
  Z.reserve(windows.size());
  for (const auto& x : windows) Z.push_back(forward(params, x));
  return Z;
}

/// Probe on frozen representations r_theta(x).
inline ProbeResult train_probe(const EncoderParams& params, const std::vector<Vec>& windows,
                               const std::vector<int>& labels, int n_classes, int epochs, double lr,
                               std::uint64_t seed) {
  check_labeled(windows.size(), labels, n_classes, "train_probe");
  return train_probe_features(encode_all(params, windows), labels, n_classes, epochs, lr, seed);
}

inline double accuracy_features(const ProbeHead& head, const std::vector<Vec>& Z, const std::vector<int>& labels) {
  if (Z.empty()) throw InputError("evaluate_accuracy: empty test set");
  if (labels.size() != Z.size()) throw InputError("evaluate_accuracy: label count mismatch");
  std::size_t correct = 0;
  for (std::size_t j = 0; j < Z.size(); ++j) correct += predict(head, Z[j]) == labels[j] ? 1 : 0;
  return static_cast<double>(correct) / static_cast<double>(Z.size());
}

inline double evaluate_accuracy(const EncoderParams& params, const ProbeHead& head, const std::vector<Vec>& windows,
                                const std::vector<int>& labels) {
  if (windows.empty()) throw InputError("evaluate_accuracy: empty test set");
  return accuracy_features(head, encode_all(params, windows), labels);
}

struct FinetuneResult {
  EncoderParams params;
  ProbeHead head;
  std::vector<double> distances;  // ||theta - theta0|| after every step
};

/// Gradient descent on the probe cross-entropy over (theta, head); after each
/// step theta is projected onto the ball ||theta - theta0|| <= gamma when it
/// lies outside.
inline FinetuneResult constrained_finetune(const EncoderParams& theta0, const ProbeHead& head0,
                                           const std::vector<Vec>& windows, const std::vector<int>& labels,
                                           double gamma, int epochs, double lr) {
  if (!(gamma >= 0.0)) throw InputError("constrained_finetune: gamma must be >= 0");
  check_labeled(windows.size(), labels, static_cast<int>(head0.bias.size()), "constrained_finetune");
  FinetuneResult r{theta0, head0, {}};
  for (int e = 0; e < epochs; ++e) {
    const auto Z = encode_all(r.params, windows);
    const auto g = probe_loss_grad(r.head, Z, labels, true);
    Vec gt = Vec::Zero(r.params.theta.size());
    for (std::size_t j = 0; j < windows.size(); ++j) gt += backward(r.params, windows[j], g.grad_z[j]).theta;
    r.params.theta -= lr * gt;
    r.head.W -= lr * g.W;
    r.head.bias -= lr * g.bias;
    const Vec diff = r.params.theta - theta0.theta;
    const double dist = diff.norm();
    if (dist > gamma) r.params.theta = theta0.theta + (gamma / dist) * diff;
    r.distances.push_back((r.params.theta - theta0.theta).norm());
  }
  return r;
}

/// Exponentiated-gradient step q'_i ~ q_i exp(eta * loss_i), stabilized by
/// subtracting the largest loss.
inline Vec groupdro_step(const Vec& losses, const Vec& q, double eta) {
  require_dims(losses.size() == q.size(), "groupdro_step: length mismatch");
  if (!losses.allFinite() || !q.allFinite()) throw InputError("groupdro_step: non-finite input");
  const double m = losses.maxCoeff();
  Vec w = q.array() * (eta * (losses.array() - m)).exp();
  const double s = w.sum();
  if (!(s > 0.0)) throw NumericalError("groupdro_step: weights vanished");
  return w / s;
}

// ---------------------------------------------------------------------------
// Leave-one-domain-out

struct FoldOutcome {
  std::string target;
  int replicate = 0;
  double accuracy = 0.0;
  Vec q;  // final domain weights (simplex-projected for TTSO)
  std::optional<SLAResult> sla;
  EncoderParams params;
  ProbeHead head;
};

struct LodoRow {
  std::string target;
  std::vector<double> per_seed;
  double mean = 0.0;
  double stddev = 0.0;
};

struct LodoReport {
  Method method = Method::ERM;
  std::string config_hash;
  std::vector<std::uint64_t> seeds;
  std::vector<LodoRow> rows;   // one per held-out domain
  LodoRow avg;                 // per-seed averages across targets
  std::vector<FoldOutcome> folds;
};

inline double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

/// Sample standard deviation (0 for a single value).
inline double stddev_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

struct SourceSplit {
  std::vector<std::vector<Vec>> windows;  // per source domain
  std::vector<Vec> all_windows;
  std::vector<int> all_labels;
};

inline SourceSplit source_split(const DomainDataset& ds, std::size_t target) {
  SourceSplit s;
  for (std::size_t i = 0; i < ds.domains.size(); ++i) {
    if (i == target) continue;
    s.windows.push_back(ds.domains[i].windows);
    s.all_windows.insert(s.all_windows.end(), ds.domains[i].windows.begin(), ds.domains[i].windows.end());
    s.all_labels.insert(s.all_labels.end(), ds.domains[i].labels.begin(), ds.domains[i].labels.end());
  }
  return s;
}

struct TrainedRepresentation {
  EncoderParams params;
  Vec q;
  std::optional<SLAResult> sla;
};

/// Representation learning on the source domains by the chosen method. All
/// methods share the bundle (minibatches, augmentations) and initialization.
inline TrainedRepresentation train_representation(Method method, const std::vector<std::vector<Vec>>& sources,
                                                  const RunConfig& cfg, std::uint64_t run_seed) {
  const auto K = static_cast<Eigen::Index>(sources.size());
  const Vec prior = Vec::Constant(K, 1.0 / static_cast<double>(K));
  TtsoBundle bundle(cfg.architecture, sources, prior, cfg.bundle_settings(run_seed));
  const EncoderParams init = init_params(cfg.architecture, derive_seed(run_seed, "init"));
  const SLAConfig sc = cfg.sla_config();
  SolverState state;
  state.theta = init.theta;
  state.q = prior;
  const Eigen::Index D = cfg.architecture.input_dim();

  if (method == Method::TTSO) {
    state.perturb.mode = cfg.perturb.mode;
    if (cfg.perturb.mode == PerturbMode::GmmReparam)
      state.perturb.gmm = make_gmm(cfg.perturb.n_components, D, cfg.perturb.sigma_init, derive_seed(run_seed, "gmm"));
    else
      state.perturb.direct = Vec::Zero(D);
    auto r = sla_run(sc, bundle, std::move(state));
    if (r.trace.status == SolverStatus::NumericalError)
      throw NumericalError("TTSO training failed: " + r.trace.message, r.trace.stop_index);
    TrainedRepresentation out{init.with_theta(r.state.theta), simplex_project(r.state.q), std::nullopt};
    out.sla = std::move(r);
    return out;
  }

  state.perturb.mode = PerturbMode::Direct;
  state.perturb.direct = Vec::Zero(D);
  for (std::int64_t t = 0; t < sc.T1; ++t) {
    const StepSizes eta = step_sizes_at(sc, t);
    const F1Eval e = bundle.f1(state, t);
    if (!std::isfinite(e.value) || !e.grads.theta.allFinite())
      throw NumericalError(to_string(method) + " training: non-finite loss at t=" + std::to_string(t), t);
    state.theta -= eta.theta * e.grads.theta;
    if (method == Method::GroupDRO) state.q = groupdro_step(e.grads.q, state.q, cfg.group.groupdro_eta);
  }
  return {init.with_theta(state.theta), state.q, std::nullopt};
}

/// Probe (and optional constrained fine-tuning) on pooled source data, then
/// accuracy on the held-out domain.
inline FoldOutcome run_fold(Method method, const DomainDataset& ds, std::size_t target, const RunConfig& cfg,
                            int replicate) {
  const std::uint64_t run_seed = derive_seed(cfg.replicate_seed(replicate), "fold", target);
  const SourceSplit src = source_split(ds, target);
  TrainedRepresentation rep = train_representation(method, src.windows, cfg, run_seed);
  auto probe = train_probe(rep.params, src.all_windows, src.all_labels, ds.n_classes, cfg.eval.probe_epochs,
                           cfg.eval.probe_lr, derive_seed(run_seed, "probe"));
  FoldOutcome f;
  f.target = ds.domains[target].id;
  f.replicate = replicate;
  f.params = rep.params;
  f.head = probe.head;
  if (cfg.eval.finetune_epochs > 0) {
    auto ft = constrained_finetune(rep.params, probe.head, src.all_windows, src.all_labels, cfg.eval.finetune_gamma,
                                   cfg.eval.finetune_epochs, cfg.eval.finetune_lr);
    f.params = std::move(ft.params);
    f.head = std::move(ft.head);
  }
  f.accuracy = evaluate_accuracy(f.params, f.head, ds.domains[target].windows, ds.domains[target].labels);
  f.q = rep.q;
  f.sla = std::move(rep.sla);
  return f;
}

inline void check_architecture(const RunConfig& cfg, const DomainDataset& ds) {
  if (cfg.architecture.input_window_len != ds.window_len)
    throw ConfigError("architecture.input_window_len (" + std::to_string(cfg.architecture.input_window_len) +
                      ") does not match the data window (" + std::to_string(ds.window_len) + ")");
  if (cfg.architecture.n_features != ds.n_features)
    throw ConfigError("architecture.n_features (" + std::to_string(cfg.architecture.n_features) +
                      ") does not match the data (" + std::to_string(ds.n_features) + ")");
}

inline void save_fold_checkpoint(const FoldOutcome& f, const std::filesystem::path& dir) {
  save_params(dir / "params", f.params);
  ojson h;
  h["n_classes"] = f.head.W.rows();
  h["repr_dim"] = f.head.W.cols();
  ojson rows = ojson::array();
  for (Eigen::Index i = 0; i < f.head.W.rows(); ++i) rows.push_back(vec_to_json(f.head.W.row(i).transpose()));
  h["W"] = rows;
  h["bias"] = vec_to_json(f.head.bias);
  h["q"] = vec_to_json(f.q);
  h["accuracy"] = f.accuracy;
  write_file_atomic(dir / "head.json", h.dump(2) + "\n");
  if (f.sla) write_file_atomic(dir / "planes.json", planes_to_json(f.sla->planes).dump(2) + "\n");
}

inline ProbeHead load_probe_head(const std::filesystem::path& path) {
  const ojson h = parse_json_file(path);
  const auto C = h.at("n_classes").get<Eigen::Index>();
  const auto M = h.at("repr_dim").get<Eigen::Index>();
  ProbeHead head{Mat(C, M), vec_from_json(h.at("bias"))};
  for (Eigen::Index i = 0; i < C; ++i) head.W.row(i) = vec_from_json(h.at("W").at(static_cast<std::size_t>(i))).transpose();
  return head;
}

inline std::string fold_dir_name(Method m, const std::string& target, int replicate) {
  return to_string(m) + "_" + target + "_seed" + std::to_string(replicate);
}

/// Every held-out domain times every replicate seed. Checkpoints go under
/// checkpoint_dir when given.
inline LodoReport run_lodo(const DomainDataset& ds, Method method, const RunConfig& cfg,
                           const std::optional<std::filesystem::path>& checkpoint_dir = std::nullopt) {
  ds.validate();
  if (ds.domains.size() < 2) throw InputError("run_lodo: need at least 2 domains");
  check_architecture(cfg, ds);
  LodoReport rep;
  rep.method = method;
  rep.config_hash = config_hash(cfg);
  for (int r = 0; r < cfg.eval.n_seeds; ++r) rep.seeds.push_back(cfg.replicate_seed(r));
  std::vector<double> avg_per_seed(static_cast<std::size_t>(cfg.eval.n_seeds), 0.0);
  for (std::size_t target = 0; target < ds.domains.size(); ++target) {
    LodoRow row;
    row.target = ds.domains[target].id;
    for (int r = 0; r < cfg.eval.n_seeds; ++r) {
      FoldOutcome f = run_fold(method, ds, target, cfg, r);
      if (checkpoint_dir) save_fold_checkpoint(f, *checkpoint_dir / fold_dir_name(method, row.target, r));
      row.per_seed.push_back(f.accuracy);
      avg_per_seed[static_cast<std::size_t>(r)] += f.accuracy / static_cast<double>(ds.domains.size());
      rep.folds.push_back(std::move(f));
    }
    row.mean = mean_of(row.per_seed);
    row.stddev = stddev_of(row.per_seed);
    rep.rows.push_back(std::move(row));
  }
  rep.avg.target = "AVG";
  rep.avg.per_seed = avg_per_seed;
  rep.avg.mean = mean_of(avg_per_seed);
  rep.avg.stddev = stddev_of(avg_per_seed);
  return rep;
}

/// Loads the dataset a config points at; synthetic data is standardized per domain.
inline DomainDataset load_dataset(const RunConfig& cfg, const std::filesystem::path& base = {}) {
  if (cfg.data.source == "csv") {
    std::filesystem::path m = cfg.data.manifest;
    if (m.is_relative() && !base.empty()) m = base / m;
    return load_csv_dataset(m);
  }
  DomainDataset ds = gen_synthetic(cfg.synth_config());
  standardize_dataset(ds);
  return ds;
}

}  // namespace ttso
