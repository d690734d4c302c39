#pragma once

// Objective bundles for the SLA driver: the contrastive tri-level bundle over
// windowed domains, a toy quadratic bundle with exactly linear per-domain
// losses, and a smooth logistic bundle for rate checks.

#include "ttso/sla.hpp"

#include <map>
#include <memory>

namespace ttso {

enum class F1Mode { Con, Align };

inline std::string to_string(F1Mode m) { return m == F1Mode::Con ? "con" : "align"; }

inline F1Mode f1_mode_from_string(const std::string& s) {
  if (s == "con") return F1Mode::Con;
  if (s == "align") return F1Mode::Align;
  throw ConfigError("unknown f1 mode '" + s + "' (expected con or align)");
}

struct TtsoBundleSettings {
  double lambda_reg = 0.5;
  F1Mode f1_mode = F1Mode::Con;
  std::vector<AugmentationKind> augmentations{AugmentationKind::Jitter, AugmentationKind::Scale,
                                              AugmentationKind::Shift};
  double aug_magnitude = 0.1;
  PerturbSettings perturb;
  AnchorSettings anchor;
  int batch_size = 16;
  std::uint64_t seed = 0;
};

/// f1 = sum_i q_i l(theta, delta; batch_i(t)) over per-domain minibatches.
/// Minibatches are drawn without replacement within seeded per-domain epochs,
/// so batch_i(t) is a pure function of (seed, i, t).
class TtsoBundle : public ObjectiveBundle {
 public:
  TtsoBundle(Architecture arch, std::vector<std::vector<Vec>> domains, Vec prior, TtsoBundleSettings s)
      : arch_(std::move(arch)), domains_(std::move(domains)), prior_(std::move(prior)), s_(std::move(s)) {
    arch_.validate();
    if (domains_.empty()) throw InputError("TtsoBundle: no domains");
    require_dims(prior_.size() == static_cast<Eigen::Index>(domains_.size()), "TtsoBundle: prior length mismatch");
    if (s_.batch_size < 2) throw ConfigError("sla.batch_size must be >= 2");
    if (s_.augmentations.empty()) throw ConfigError("loss.augmentations must not be empty");
    for (const auto& d : domains_) {
      if (d.size() < 2) throw InputError("TtsoBundle: every domain needs at least 2 windows");
      for (const auto& w : d) require_dims(w.size() == arch_.input_dim(), "TtsoBundle: window shape mismatch");
    }
    layout_params_ = make_params(arch_, Vec::Zero(param_count(arch_)));
    for (std::size_t i = 0; i < domains_.size(); ++i) {
      AugmentationSpec a{s_.augmentations.front(), s_.aug_magnitude, derive_seed(s_.seed, "bundle/anchor_aug", i)};
      anchor_augs_.push_back(a);
    }
  }

  std::size_t n_domains() const { return domains_.size(); }
  const Vec& prior() const { return prior_; }
  const TtsoBundleSettings& settings() const { return s_; }
  const std::optional<AscentTrajectory>& last_trajectory() const { return last_trajectory_; }

  EncoderParams params(const Vec& theta) const { return layout_params_.with_theta(theta); }

  /// Augmentation used for view B of domain i at iteration t.
  AugmentationSpec augmentation(std::size_t i, std::int64_t t) const {
    Rng rng(derive_seed(derive_seed(s_.seed, "bundle/aug", i), "t", static_cast<std::uint64_t>(t)));
    const auto kind = s_.augmentations[static_cast<std::size_t>(rng.below(s_.augmentations.size()))];
    return {kind, s_.aug_magnitude, rng.next_u64()};
  }

  /// Window indices of domain i's minibatch at iteration t.
  std::vector<std::size_t> batch_indices(std::size_t i, std::int64_t t) {
    const std::size_t n = domains_[i].size();
    const std::size_t B = std::min<std::size_t>(static_cast<std::size_t>(s_.batch_size), n);
    const std::size_t per_epoch = n / B;
    const auto epoch = static_cast<std::uint64_t>(t) / per_epoch;
    const std::size_t slot = static_cast<std::size_t>(static_cast<std::uint64_t>(t) % per_epoch);
    auto& cache = perm_cache_[i];
    if (!cache || cache->first != epoch) {
      std::vector<std::size_t> perm(n);
      std::iota(perm.begin(), perm.end(), std::size_t{0});
      Rng rng(derive_seed(derive_seed(s_.seed, "bundle/batch", i), "epoch", epoch));
      rng.shuffle(perm);
      cache = std::make_pair(epoch, std::move(perm));
    }
    return {cache->second.begin() + static_cast<std::ptrdiff_t>(slot * B),
            cache->second.begin() + static_cast<std::ptrdiff_t>((slot + 1) * B)};
  }

  std::vector<Vec> batch(std::size_t i, std::int64_t t) {
    std::vector<Vec> out;
    for (std::size_t j : batch_indices(i, t)) out.push_back(domains_[i][j]);
    return out;
  }

  F1Eval f1(const SolverState& state, std::int64_t t) override {
    const auto K = static_cast<Eigen::Index>(domains_.size());
    require_dims(state.q.size() == K, "TtsoBundle::f1: q length mismatch");
    const EncoderParams p = params(state.theta);
    const Vec delta = state.delta();
    F1Eval e;
    e.grads = {Vec::Zero(p.theta.size()), Vec::Zero(K), Vec::Zero(delta.size())};
    for (Eigen::Index i = 0; i < K; ++i) {
      const auto b = batch(static_cast<std::size_t>(i), t);
      const auto aug = augmentation(static_cast<std::size_t>(i), t);
      const LossValueGrad l = s_.f1_mode == F1Mode::Con ? contrastive_loss(p, b, delta, aug, s_.lambda_reg)
                                                        : alignment_loss(p, b, delta, aug);
      e.value += state.q[i] * l.value;
      e.grads.theta += state.q[i] * l.grad_theta;
      e.grads.q[i] = l.value;
      e.grads.delta += state.q[i] * l.grad_delta;
    }
    return e;
  }

  LinearizationAnchor anchor(const SolverState& state) override {
    const EncoderParams p = params(state.theta);
    std::vector<DomainBatch> full;
    for (std::size_t i = 0; i < domains_.size(); ++i) full.push_back({domains_[i], anchor_augs_[i]});
    AnchorSettings a = s_.anchor;
    a.lambda_reg = s_.lambda_reg;
    return build_anchor(p, state.delta(), full, prior_, prior_, a);
  }

  void begin_iteration(SolverState& state, std::int64_t t) override {
    if (state.perturb.mode == PerturbMode::GmmReparam)
      state.perturb.gmm.refresh_noise(derive_seed(s_.seed, "bundle/noise", static_cast<std::uint64_t>(t)));
  }

  void on_plane_check(SolverState& state, std::int64_t t) override {
    const EncoderParams p = params(state.theta);
    std::vector<std::vector<Vec>> batches;
    std::vector<DomainBatch> view;
    for (std::size_t i = 0; i < domains_.size(); ++i) batches.push_back(batch(i, t));
    for (std::size_t i = 0; i < domains_.size(); ++i) view.push_back({batches[i], augmentation(i, t)});
    auto r = third_level_ascent(p, simplex_project(state.q), state.perturb, view, s_.perturb);
    state.perturb = std::move(r.state);
    last_trajectory_ = std::move(r.trajectory);
  }

 private:
  Architecture arch_;
  std::vector<std::vector<Vec>> domains_;
  Vec prior_;
  TtsoBundleSettings s_;
  EncoderParams layout_params_;
  std::vector<AugmentationSpec> anchor_augs_;
  std::map<std::size_t, std::optional<std::pair<std::uint64_t, std::vector<std::size_t>>>> perm_cache_;
  std::optional<AscentTrajectory> last_trajectory_;
};

// ---------------------------------------------------------------------------
// Toy quadratic bundle

/// f1 = 1/2 (x - x*)' H (x - x*) over x = (theta, q, delta) with H SPD, and
/// per-domain losses l_i = g_i' theta + e_i' delta + c_i. Because the losses
/// are linear, the linearized inner step is exact and every plane is valid
/// for the whole run.
struct QuadraticProblem {
  Eigen::Index N = 0, K = 0, D = 0;
  Mat H;        // (N+K+D) square, SPD
  Vec x_star;
  Mat G;        // K x N
  Mat E;        // K x D
  Vec c;        // K
  Vec prior;    // K
  double eta_q_inner = 0.1;

  Eigen::Index dim() const { return N + K + D; }

  Vec stack(const Vec& theta, const Vec& q, const Vec& delta) const {
    Vec x(dim());
    x << theta, q, delta;
    return x;
  }
  Vec theta(const Vec& x) const { return x.head(N); }
  Vec q(const Vec& x) const { return x.segment(N, K); }
  Vec delta(const Vec& x) const { return x.tail(D); }

  double f1(const Vec& x) const {
    const Vec r = x - x_star;
    return 0.5 * r.dot(H * r);
  }
  Vec f1_grad(const Vec& x) const { return H * (x - x_star); }

  LinearizationAnchor anchor_at(const Vec& theta_bar, const Vec& delta_bar) const {
    LinearizationAnchor a;
    a.theta_bar = theta_bar;
    a.delta_bar = delta_bar;
    a.loss_bar = G * theta_bar + E * delta_bar + c;
    a.J_theta = G;
    a.J_delta = E;
    a.q0 = prior;
    a.eta_q_inner = eta_q_inner;
    a.p2_grad_q0 = Vec::Zero(K);
    a.sign = 1.0;
    return a;
  }
};

/// Random instance; the unconstrained minimizer is pushed away from the
/// feasible set so planes are needed.
inline QuadraticProblem make_quadratic_problem(Eigen::Index N, Eigen::Index K, Eigen::Index D, std::uint64_t seed,
                                               double condition = 4.0, double eta_q_inner = 0.5) {
  if (N < 1 || K < 2 || D < 1) throw ConfigError("toy quadratic needs N >= 1, K >= 2, D >= 1");
  if (!(condition >= 1.0)) throw ConfigError("toy quadratic condition number must be >= 1");
  Rng rng(derive_seed(seed, "toy/quadratic"));
  QuadraticProblem p;
  p.N = N;
  p.K = K;
  p.D = D;
  const Eigen::Index n = p.dim();
  Mat A(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) A(i, j) = rng.normal();
  Eigen::HouseholderQR<Mat> qr(A);
  const Mat Q = qr.householderQ();
  Vec eig(n);
  for (Eigen::Index i = 0; i < n; ++i) eig[i] = n > 1 ? std::pow(condition, static_cast<double>(i) / (n - 1)) : 1.0;
  p.H = Q * eig.asDiagonal() * Q.transpose();
  p.H = 0.5 * (p.H + p.H.transpose());
  p.G = Mat(K, N);
  p.E = Mat(K, D);
  for (Eigen::Index i = 0; i < K; ++i) {
    for (Eigen::Index j = 0; j < N; ++j) p.G(i, j) = rng.normal();
    for (Eigen::Index j = 0; j < D; ++j) p.E(i, j) = rng.normal();
  }
  p.c = rng.uniform_vec(K, 0.0, 1.0);
  p.prior = Vec::Constant(K, 1.0 / static_cast<double>(K));
  p.eta_q_inner = eta_q_inner;
  p.x_star = Vec(n);
  for (Eigen::Index i = 0; i < n; ++i) p.x_star[i] = 2.0 * rng.normal();
  return p;
}

class QuadraticBundle : public ObjectiveBundle {
 public:
  explicit QuadraticBundle(QuadraticProblem p) : p_(std::move(p)) {}

  const QuadraticProblem& problem() const { return p_; }

  F1Eval f1(const SolverState& s, std::int64_t) override {
    const Vec x = p_.stack(s.theta, s.q, s.delta());
    const Vec g = p_.f1_grad(x);
    return {p_.f1(x), {p_.theta(g), p_.q(g), p_.delta(g)}};
  }

  LinearizationAnchor anchor(const SolverState& s) override { return p_.anchor_at(s.theta, s.delta()); }

  SolverState initial_state() const {
    SolverState s;
    s.theta = Vec::Zero(p_.N);
    s.q = p_.prior;
    s.perturb.mode = PerturbMode::Direct;
    s.perturb.direct = Vec::Zero(p_.D);
    return s;
  }

 private:
  QuadraticProblem p_;
};

// ---------------------------------------------------------------------------
// Smooth logistic bundle

/// f1 = mean_j log(1 + exp(-y_j theta' z_j)) on linearly separable points.
/// Depends on theta only; the anchor is constant with zero Jacobians.
class LogisticBundle : public ObjectiveBundle {
 public:
  LogisticBundle(Eigen::Index N, Eigen::Index n_points, Eigen::Index K, Eigen::Index D, std::uint64_t seed)
      : K_(K), D_(D) {
    if (N < 1 || n_points < 1 || K < 1 || D < 1) throw ConfigError("logistic bundle dimensions must be positive");
    Rng rng(derive_seed(seed, "toy/logistic"));
    Vec w = rng.normal_vec(N);
    w.normalize();
    Z_ = Mat(n_points, N);
    y_ = Vec(n_points);
    for (Eigen::Index j = 0; j < n_points; ++j) {
      Vec z = rng.normal_vec(N);
      double m = w.dot(z);
      const double label = m >= 0.0 ? 1.0 : -1.0;
      z += (0.5 * label) * w;  // margin
      Z_.row(j) = z.transpose();
      y_[j] = label;
    }
  }

  Eigen::Index n_params() const { return Z_.cols(); }

  F1Eval f1(const SolverState& s, std::int64_t) override {
    require_dims(s.theta.size() == Z_.cols(), "LogisticBundle: theta length mismatch");
    const Vec m = (Z_ * s.theta).cwiseProduct(y_);
    const double inv_n = 1.0 / static_cast<double>(m.size());
    F1Eval e;
    Vec coef(m.size());
    for (Eigen::Index j = 0; j < m.size(); ++j) {
      const double mj = m[j];
      e.value += (mj > 0.0 ? std::log1p(std::exp(-mj)) : -mj + std::log1p(std::exp(mj))) * inv_n;
      coef[j] = -y_[j] * inv_n / (1.0 + std::exp(mj));
    }
    e.grads = {Z_.transpose() * coef, Vec::Zero(K_), Vec::Zero(D_)};
    return e;
  }

  LinearizationAnchor anchor(const SolverState& s) override {
    LinearizationAnchor a;
    a.theta_bar = s.theta;
    a.delta_bar = s.delta();
    a.loss_bar = Vec::Zero(K_);
    a.J_theta = Mat::Zero(K_, Z_.cols());
    a.J_delta = Mat::Zero(K_, D_);
    a.q0 = Vec::Constant(K_, 1.0 / static_cast<double>(K_));
    a.p2_grad_q0 = Vec::Zero(K_);
    return a;
  }

  SolverState initial_state() const {
    SolverState s;
    s.theta = Vec::Zero(Z_.cols());
    s.q = Vec::Constant(K_, 1.0 / static_cast<double>(K_));
    s.perturb.mode = PerturbMode::Direct;
    s.perturb.direct = Vec::Zero(D_);
    return s;
  }

 private:
  Eigen::Index K_, D_;
  Mat Z_;
  Vec y_;
};

}  // namespace ttso
