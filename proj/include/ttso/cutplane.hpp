#pragma once

// Cutting planes a'theta + b'q + c'delta + d <= 0 built from linearizations
// of the convex surrogate h, and the penalized objective
//   F = f1 + sum_i lambda_i max(0, a_i'theta + b_i'q + c_i'delta + d_i)^2.

#include "ttso/group.hpp"

#include <vector>

namespace ttso {

struct CuttingPlane {
  Vec a;  // N
  Vec b;  // K
  Vec c;  // D
  double d = 0.0;
  double lambda = 10.0;
  std::int64_t born_at = 0;

  double evaluate(const Vec& theta, const Vec& q, const Vec& delta) const {
    return a.dot(theta) + b.dot(q) + c.dot(delta) + d;
  }
};

struct PlaneSet {
  std::vector<CuttingPlane> planes;
  std::size_t max_planes = 64;

  std::size_t size() const { return planes.size(); }
  bool empty() const { return planes.empty(); }
};

/// Separating plane at a point with h > epsilon. By convexity of h every
/// point with h <= epsilon satisfies it.
inline CuttingPlane generate_plane(const LinearizationAnchor& anchor, const Vec& theta, const Vec& q,
                                   const Vec& delta, double epsilon, double lambda_new,
                                   std::int64_t born_at = 0) {
  if (!(lambda_new > 0.0)) throw ContractError("generate_plane: plane weight must be positive");
  const auto g = h_value_grads(anchor, theta, q, delta);
  if (!(g.h > epsilon))
    throw ContractError("generate_plane: point is feasible (h = " + std::to_string(g.h) +
                        " <= epsilon = " + std::to_string(epsilon) + ")");
  CuttingPlane p;
  p.a = g.grad_theta;
  p.b = g.grad_q;
  p.c = g.grad_delta;
  p.d = g.h - p.a.dot(theta) - p.b.dot(q) - p.c.dot(delta) - epsilon;
  p.lambda = lambda_new;
  p.born_at = born_at;
  if (!p.a.allFinite() || !p.b.allFinite() || !p.c.allFinite() || !std::isfinite(p.d))
    throw NumericalError("generate_plane: non-finite coefficients", born_at);
  return p;
}

inline double plane_violation(const CuttingPlane& plane, const Vec& theta, const Vec& q, const Vec& delta) {
  require_dims(plane.a.size() == theta.size() && plane.b.size() == q.size() && plane.c.size() == delta.size(),
               "plane_violation: dimension mismatch");
  return std::max(0.0, plane.evaluate(theta, q, delta));
}

inline double F_value(double f1_value, const PlaneSet& set, const Vec& theta, const Vec& q, const Vec& delta) {
  double F = f1_value;
  for (const auto& p : set.planes) {
    const double v = plane_violation(p, theta, q, delta);
    F += p.lambda * v * v;
  }
  return F;
}

struct BlockGrads {
  Vec theta;
  Vec q;
  Vec delta;

  double squared_norm() const { return theta.squaredNorm() + q.squaredNorm() + delta.squaredNorm(); }
  bool all_finite() const { return theta.allFinite() && q.allFinite() && delta.allFinite(); }
};

inline BlockGrads F_grads(const BlockGrads& f1_grads, const PlaneSet& set, const Vec& theta, const Vec& q,
                          const Vec& delta) {
  BlockGrads g = f1_grads;
  require_dims(g.theta.size() == theta.size() && g.q.size() == q.size() && g.delta.size() == delta.size(),
               "F_grads: gradient block dimension mismatch");
  for (const auto& p : set.planes) {
    const double v = plane_violation(p, theta, q, delta);
    if (v <= 0.0) continue;
    const double w = 2.0 * p.lambda * v;
    g.theta += w * p.a;
    g.q += w * p.b;
    g.delta += w * p.c;
  }
  return g;
}

/// Bounds the set: drops the oldest non-violated planes first, then the
/// oldest overall. Planes are kept in insertion order.
inline PlaneSet prune_planes(const PlaneSet& set, const Vec& theta, const Vec& q, const Vec& delta) {
  PlaneSet out = set;
  if (out.planes.size() <= out.max_planes) return out;
  std::size_t excess = out.planes.size() - out.max_planes;
  std::vector<bool> drop(out.planes.size(), false);
  for (std::size_t i = 0; i < out.planes.size() && excess > 0; ++i) {
    if (plane_violation(out.planes[i], theta, q, delta) == 0.0) {
      drop[i] = true;
      --excess;
    }
  }
  for (std::size_t i = 0; i < out.planes.size() && excess > 0; ++i) {
    if (!drop[i]) {
      drop[i] = true;
      --excess;
    }
  }
  std::vector<CuttingPlane> kept;
  kept.reserve(out.max_planes);
  for (std::size_t i = 0; i < out.planes.size(); ++i)
    if (!drop[i]) kept.push_back(std::move(out.planes[i]));
  out.planes = std::move(kept);
  return out;
}

}  // namespace ttso
