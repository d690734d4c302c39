#pragma once

// Third optimization level: the worst-case additive perturbation delta,
// realized either as the reparameterized image of a diagonal GMM (default)
// or as a free vector, with its exterior penalty and the T3-step ascent.

#include "ttso/losses.hpp"

#include <span>

namespace ttso {

inline constexpr double kSigmaMin = 1e-6;

enum class PerturbMode { GmmReparam, Direct };

inline std::string to_string(PerturbMode m) {
  return m == PerturbMode::GmmReparam ? "gmm" : "direct";
}

inline PerturbMode perturb_mode_from_string(const std::string& s) {
  if (s == "gmm") return PerturbMode::GmmReparam;
  if (s == "direct") return PerturbMode::Direct;
  throw ConfigError("unknown perturbation mode '" + s + "' (expected gmm or direct)");
}

struct GMMParams {
  Vec pi;            // M_c mixture weights
  RowMat mu;         // M_c x D means
  RowMat sigma;      // M_c x D scales, >= kSigmaMin
  RowMat base_noise; // M_c x D standard-normal draws, frozen between refreshes

  Eigen::Index n_components() const { return pi.size(); }
  Eigen::Index dim() const { return mu.cols(); }

  void clamp_sigma() { sigma = sigma.cwiseMax(kSigmaMin); }

  void refresh_noise(std::uint64_t seed) {
    Rng rng(derive_seed(seed, "perturb/base_noise"));
    for (Eigen::Index m = 0; m < base_noise.rows(); ++m)
      for (Eigen::Index d = 0; d < base_noise.cols(); ++d) base_noise(m, d) = rng.normal();
  }

  void validate() const {
    require_dims(mu.rows() == pi.size() && sigma.rows() == pi.size() && base_noise.rows() == pi.size(),
                 "GMM component count mismatch");
    require_dims(sigma.cols() == mu.cols() && base_noise.cols() == mu.cols(), "GMM dimension mismatch");
    if (!pi.allFinite() || !mu.allFinite() || !sigma.allFinite() || !base_noise.allFinite())
      throw NumericalError("GMM parameters are not finite");
  }
};

/// Uniform weights, zero means, constant scales, fresh base noise.
inline GMMParams make_gmm(Eigen::Index n_components, Eigen::Index dim, double sigma_init,
                          std::uint64_t seed) {
  if (n_components < 1) throw ConfigError("perturb.n_components must be >= 1");
  GMMParams g;
  g.pi = Vec::Constant(n_components, 1.0 / static_cast<double>(n_components));
  g.mu = RowMat::Zero(n_components, dim);
  g.sigma = RowMat::Constant(n_components, dim, std::max(sigma_init, kSigmaMin));
  g.base_noise = RowMat::Zero(n_components, dim);
  g.refresh_noise(seed);
  return g;
}

/// delta = sum_m pi_m (mu_m + sigma_m * eps_m).
inline Vec derive_delta(const GMMParams& gmm) {
  gmm.validate();
  Vec delta = Vec::Zero(gmm.dim());
  for (Eigen::Index m = 0; m < gmm.n_components(); ++m)
    delta += gmm.pi[m] * (gmm.mu.row(m) + gmm.sigma.row(m).cwiseProduct(gmm.base_noise.row(m))).transpose();
  return delta;
}

struct GMMGrad {
  Vec pi;
  RowMat mu;
  RowMat sigma;

  static GMMGrad zeros_like(const GMMParams& g) {
    return {Vec::Zero(g.pi.size()), RowMat::Zero(g.mu.rows(), g.mu.cols()),
            RowMat::Zero(g.sigma.rows(), g.sigma.cols())};
  }
  GMMGrad& operator+=(const GMMGrad& o) {
    pi += o.pi;
    mu += o.mu;
    sigma += o.sigma;
    return *this;
  }
  GMMGrad& operator-=(const GMMGrad& o) {
    pi -= o.pi;
    mu -= o.mu;
    sigma -= o.sigma;
    return *this;
  }
  double squared_norm() const { return pi.squaredNorm() + mu.squaredNorm() + sigma.squaredNorm(); }
};

/// Chain rule through derive_delta: gradient w.r.t. (pi, mu, sigma) given dL/d delta.
inline GMMGrad pullback(const GMMParams& gmm, const Vec& grad_delta) {
  require_dims(grad_delta.size() == gmm.dim(), "pullback: gradient length mismatch");
  GMMGrad g = GMMGrad::zeros_like(gmm);
  for (Eigen::Index m = 0; m < gmm.n_components(); ++m) {
    const auto comp = gmm.mu.row(m) + gmm.sigma.row(m).cwiseProduct(gmm.base_noise.row(m));
    g.pi[m] = comp.dot(grad_delta.transpose());
    g.mu.row(m) = gmm.pi[m] * grad_delta.transpose();
    g.sigma.row(m) = gmm.pi[m] * gmm.base_noise.row(m).cwiseProduct(grad_delta.transpose());
  }
  return g;
}

/// gmm <- gmm + step * dir, then sigma clamped.
inline void apply_step(GMMParams& gmm, const GMMGrad& dir, double step) {
  gmm.pi += step * dir.pi;
  gmm.mu += step * dir.mu;
  gmm.sigma += step * dir.sigma;
  gmm.clamp_sigma();
}

struct PenaltyRho {
  double r1 = 1.0, r2 = 1.0, r3 = 1.0, r4 = 1.0;
  bool operator==(const PenaltyRho&) const = default;
};

struct P3Result {
  double value = 0.0;
  GMMGrad grad;
};

/// rho1 (max(0,||mu||-C1))^2 + rho2 (max(0,||sigma||-C2))^2 + rho3 (sum pi - 1)^2
/// + rho4 sum_m max(0, -pi_m)^2, Frobenius norms.
inline P3Result p3_penalty(const GMMParams& gmm, double C1, double C2, const PenaltyRho& rho) {
  P3Result r{0.0, GMMGrad::zeros_like(gmm)};
  const double mu_norm = gmm.mu.norm();
  if (const double e = mu_norm - C1; e > 0.0) {
    r.value += rho.r1 * e * e;
    r.grad.mu = (2.0 * rho.r1 * e / mu_norm) * gmm.mu;
  }
  const double sigma_norm = gmm.sigma.norm();
  if (const double e = sigma_norm - C2; e > 0.0) {
    r.value += rho.r2 * e * e;
    r.grad.sigma = (2.0 * rho.r2 * e / sigma_norm) * gmm.sigma;
  }
  const double s = gmm.pi.sum() - 1.0;
  r.value += rho.r3 * s * s;
  r.grad.pi.array() += 2.0 * rho.r3 * s;
  for (Eigen::Index m = 0; m < gmm.pi.size(); ++m) {
    if (gmm.pi[m] < 0.0) {
      r.value += rho.r4 * gmm.pi[m] * gmm.pi[m];
      r.grad.pi[m] += 2.0 * rho.r4 * gmm.pi[m];
    }
  }
  return r;
}

struct DirectP3Result {
  double value = 0.0;
  Vec grad_delta;
};

/// Direct mode: rho1 (max(0, ||delta|| - C1 - C2))^2.
inline DirectP3Result p3_penalty_direct(const Vec& delta, double C1, double C2, const PenaltyRho& rho) {
  DirectP3Result r{0.0, Vec::Zero(delta.size())};
  const double n = delta.norm();
  if (const double e = n - C1 - C2; e > 0.0) {
    r.value = rho.r1 * e * e;
    r.grad_delta = (2.0 * rho.r1 * e / n) * delta;
  }
  return r;
}

/// The perturbation block of the solver state.
struct PerturbationState {
  PerturbMode mode = PerturbMode::GmmReparam;
  GMMParams gmm;
  Vec direct;  // used in Direct mode

  Vec delta() const { return mode == PerturbMode::GmmReparam ? derive_delta(gmm) : direct; }
};

struct PerturbSettings {
  double C1 = 1.0;
  double C2 = 1.0;
  PenaltyRho rho;
  int T3 = 3;
  double eta_delta = 0.05;
};

struct AscentTrajectory {
  Vec delta0;
  Vec grad_sum;  // sum over steps of eta_delta * grad_{delta'} f3
  int steps = 0;
};

struct AscentResult {
  PerturbationState state;
  Vec delta;
  AscentTrajectory trajectory;
};

namespace detail {

struct F3Eval {
  double value = 0.0;
  Vec grad_delta;      // d f3 / d delta' (penalty included in Direct mode)
  GMMGrad grad_gmm;    // d f3 / d (pi, mu, sigma), GMM mode only
};

inline F3Eval eval_f3(const EncoderParams& params, const Vec& q, const PerturbationState& st,
                      std::span<const DomainBatch> domains, const PerturbSettings& s, bool want_grad) {
  require_dims(q.size() == static_cast<Eigen::Index>(domains.size()), "third level: q length != domain count");
  const Vec delta = st.delta();
  F3Eval out;
  out.grad_delta = Vec::Zero(delta.size());
  for (std::size_t i = 0; i < domains.size(); ++i) {
    const auto l = alignment_loss(params, domains[i].windows, delta, domains[i].aug);
    out.value += q[static_cast<Eigen::Index>(i)] * l.value;
    if (want_grad) out.grad_delta += q[static_cast<Eigen::Index>(i)] * l.grad_delta;
  }
  if (st.mode == PerturbMode::GmmReparam) {
    const auto p3 = p3_penalty(st.gmm, s.C1, s.C2, s.rho);
    out.value -= p3.value;
    if (want_grad) {
      out.grad_gmm = pullback(st.gmm, out.grad_delta);
      out.grad_gmm -= p3.grad;
    }
  } else {
    const auto p3 = p3_penalty_direct(delta, s.C1, s.C2, s.rho);
    out.value -= p3.value;
    if (want_grad) out.grad_delta -= p3.grad_delta;
  }
  return out;
}

}  // namespace detail

/// f3 = sum_i q_i l_align(theta, delta'; D_i) - P3.
inline double f3_value(const EncoderParams& params, const Vec& q, const PerturbationState& st,
                       std::span<const DomainBatch> domains, const PerturbSettings& s) {
  return detail::eval_f3(params, q, st, domains, s, false).value;
}

/// T3 steps of gradient ascent on f3. In GMM mode the delta-gradient is
/// pulled back onto (pi, mu, sigma) and sigma is clamped after each step.
inline AscentResult third_level_ascent(const EncoderParams& params, const Vec& q,
                                       const PerturbationState& start,
                                       std::span<const DomainBatch> domains,
                                       const PerturbSettings& s) {
  if (s.T3 < 0) throw ConfigError("perturb.T3 must be >= 0");
  if (!(s.eta_delta > 0.0)) throw ConfigError("perturb.eta_delta_inner must be positive");
  if (!q.allFinite()) throw InputError("third_level_ascent: q has non-finite entries");
  AscentResult r{start, Vec(), {}};
  r.trajectory.delta0 = start.delta();
  r.trajectory.grad_sum = Vec::Zero(r.trajectory.delta0.size());
  r.trajectory.steps = s.T3;
  for (int step = 0; step < s.T3; ++step) {
    const auto f3 = detail::eval_f3(params, q, r.state, domains, s, true);
    if (!f3.grad_delta.allFinite())
      throw NumericalError("third_level_ascent: non-finite gradient at step " + std::to_string(step), step);
    r.trajectory.grad_sum += s.eta_delta * f3.grad_delta;
    if (r.state.mode == PerturbMode::GmmReparam) {
      if (!std::isfinite(f3.grad_gmm.squared_norm()))
        throw NumericalError("third_level_ascent: non-finite GMM gradient at step " + std::to_string(step), step);
      apply_step(r.state.gmm, f3.grad_gmm, s.eta_delta);
    } else {
      r.state.direct += s.eta_delta * f3.grad_delta;
    }
  }
  r.delta = r.state.delta();
  return r;
}

}  // namespace ttso
