#pragma once

// Second optimization level: domain weights q, the P2 penalty, the
// Taylor-linearized inner argmax phi and the constraint surrogate
// h(theta, q, delta) = ||q - phi(theta, delta)||.

#include "ttso/perturb.hpp"

#include <algorithm>
#include <functional>
#include <numeric>

namespace ttso {

/// Euclidean projection onto the probability simplex (sort and threshold).
inline Vec simplex_project(const Vec& v) {
  if (v.size() == 0) throw InputError("simplex_project: empty vector");
  if (!v.allFinite()) throw InputError("simplex_project: non-finite input");
  std::vector<double> u(v.data(), v.data() + v.size());
  std::sort(u.begin(), u.end(), std::greater<>());
  double cumsum = 0.0, theta = 0.0;
  for (std::size_t j = 0; j < u.size(); ++j) {
    cumsum += u[j];
    const double t = (cumsum - 1.0) / static_cast<double>(j + 1);
    if (u[j] - t > 0.0) theta = t;
  }
  return (v.array() - theta).max(0.0);
}

inline double euclid_dist(const Vec& p, const Vec& q) {
  require_dims(p.size() == q.size(), "euclid_dist: length mismatch");
  return (p - q).norm();
}

enum class HingeKind { Linear, Squared };

struct P2Settings {
  double lambda1 = 1.0;  // (sum q - 1)^2
  double lambda2 = 1.0;  // negativity hinge
  double lambda3 = 1.0;  // trajectory tether on delta
  double lambda4 = 1.0;  // tau-ball
  double tau = 0.2;
  bool tau_penalty = true;
  HingeKind hinge = HingeKind::Linear;
  bool operator==(const P2Settings&) const = default;
};

struct P2Result {
  double value = 0.0;
  Vec grad_q;
  Vec grad_delta;
};

/// lambda1 (sum q - 1)^2 + lambda2 sum max(0, -q_i) + lambda3 ||delta - delta0 - grad_sum||^2
/// + lambda4 (max(0, ||p - q|| - tau))^2 (when enabled). Kinks take subgradient 0.
inline P2Result p2_penalty(const Vec& q, const Vec& delta, const AscentTrajectory& traj,
                           const P2Settings& s, const Vec& p) {
  require_dims(traj.delta0.size() == delta.size() && traj.grad_sum.size() == delta.size(),
               "p2_penalty: trajectory dimension mismatch");
  require_dims(p.size() == q.size(), "p2_penalty: prior length mismatch");
  P2Result r{0.0, Vec::Zero(q.size()), Vec::Zero(delta.size())};
  const double s1 = q.sum() - 1.0;
  r.value += s.lambda1 * s1 * s1;
  r.grad_q.array() += 2.0 * s.lambda1 * s1;
  for (Eigen::Index i = 0; i < q.size(); ++i) {
    if (q[i] < 0.0) {
      if (s.hinge == HingeKind::Linear) {
        r.value += s.lambda2 * -q[i];
        r.grad_q[i] -= s.lambda2;
      } else {
        r.value += s.lambda2 * q[i] * q[i];
        r.grad_q[i] += 2.0 * s.lambda2 * q[i];
      }
    }
  }
  const Vec tether = delta - traj.delta0 - traj.grad_sum;
  r.value += s.lambda3 * tether.squaredNorm();
  r.grad_delta = 2.0 * s.lambda3 * tether;
  if (s.tau_penalty) {
    const Vec diff = q - p;
    const double dist = diff.norm();
    if (const double e = dist - s.tau; e > 0.0) {
      r.value += s.lambda4 * e * e;
      r.grad_q += (2.0 * s.lambda4 * e / dist) * diff;
    }
  }
  return r;
}

struct LinearizationAnchor {
  Vec theta_bar;
  Vec delta_bar;
  Vec loss_bar;   // K per-domain contrastive losses at the anchor
  Mat J_theta;    // K x N
  Mat J_delta;    // K x D
  Vec q0;
  double eta_q_inner = 0.1;
  Vec p2_grad_q0;     // grad_q P2 at q0
  double sign = 1.0;  // +1 ascent step for the inner argmax, -1 descent

  Eigen::Index K() const { return loss_bar.size(); }
};

struct AnchorSettings {
  double eta_q_inner = 0.1;
  double lambda_reg = 0.5;
  bool ascent_sign = true;
  P2Settings p2;
};

/// Constant part of the linearized inner step: q0 + s eta (loss_bar - grad P2(q0)).
inline Vec anchor_offset(const LinearizationAnchor& a) {
  return a.q0 + a.sign * a.eta_q_inner * (a.loss_bar - a.p2_grad_q0);
}

/// Evaluates per-domain contrastive losses and Jacobians at (theta, delta).
/// q0 defaults to the prior p.
inline LinearizationAnchor build_anchor(const EncoderParams& params, const Vec& delta,
                                        std::span<const DomainBatch> domains, const Vec& q0,
                                        const Vec& p, const AnchorSettings& s) {
  if (domains.empty()) throw InputError("build_anchor: no domains");
  const auto K = static_cast<Eigen::Index>(domains.size());
  require_dims(q0.size() == K && p.size() == K, "build_anchor: q0/p length must equal domain count");
  LinearizationAnchor a;
  a.theta_bar = params.theta;
  a.delta_bar = delta;
  a.loss_bar = Vec::Zero(K);
  a.J_theta = Mat::Zero(K, params.theta.size());
  a.J_delta = Mat::Zero(K, delta.size());
  for (Eigen::Index i = 0; i < K; ++i) {
    const auto& d = domains[static_cast<std::size_t>(i)];
    const auto l = contrastive_loss(params, d.windows, delta, d.aug, s.lambda_reg);
    a.loss_bar[i] = l.value;
    a.J_theta.row(i) = l.grad_theta.transpose();
    a.J_delta.row(i) = l.grad_delta.transpose();
  }
  a.q0 = q0;
  a.eta_q_inner = s.eta_q_inner;
  a.sign = s.ascent_sign ? 1.0 : -1.0;
  // The trajectory term of P2 does not depend on q, so only the q-gradient matters here.
  const AscentTrajectory none{Vec::Zero(delta.size()), Vec::Zero(delta.size()), 0};
  a.p2_grad_q0 = p2_penalty(q0, delta, none, s.p2, p).grad_q;
  return a;
}

inline Vec phi_linearized(const LinearizationAnchor& a, const Vec& theta, const Vec& delta) {
  require_dims(theta.size() == a.theta_bar.size(), "phi_linearized: theta length mismatch");
  require_dims(delta.size() == a.delta_bar.size(), "phi_linearized: delta length mismatch");
  const Vec lin = a.J_theta * (theta - a.theta_bar) + a.J_delta * (delta - a.delta_bar);
  return anchor_offset(a) + a.sign * a.eta_q_inner * lin;
}

struct HValueGrads {
  double h = 0.0;
  Vec grad_theta;
  Vec grad_q;
  Vec grad_delta;
};

inline double h_value(const LinearizationAnchor& a, const Vec& theta, const Vec& q, const Vec& delta) {
  require_dims(q.size() == a.K(), "h_value: q length mismatch");
  return (q - phi_linearized(a, theta, delta)).norm();
}

/// h = ||q - phi||; at h = 0 all gradients are the zero subgradient.
inline HValueGrads h_value_grads(const LinearizationAnchor& a, const Vec& theta, const Vec& q,
                                 const Vec& delta) {
  require_dims(q.size() == a.K(), "h_value_grads: q length mismatch");
  const Vec r = q - phi_linearized(a, theta, delta);
  HValueGrads g;
  g.h = r.norm();
  if (g.h == 0.0) {
    g.grad_theta = Vec::Zero(theta.size());
    g.grad_q = Vec::Zero(q.size());
    g.grad_delta = Vec::Zero(delta.size());
    return g;
  }
  g.grad_q = r / g.h;
  const double c = -a.sign * a.eta_q_inner;
  g.grad_theta = c * (a.J_theta.transpose() * g.grad_q);
  g.grad_delta = c * (a.J_delta.transpose() * g.grad_q);
  return g;
}

}  // namespace ttso
