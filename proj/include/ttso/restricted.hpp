#pragma once

// Restricted problems of the toy quadratic bundle: minimize
//   F_S(x) = f1(x) + sum_{i in S} lambda_i max(0, a_i'x + d_i)^2
// for a fixed plane set S, by semismooth Newton and by exact enumeration of
// active sets, and the plane-adding loop over restricted optima.

#include "ttso/bundles.hpp"

#include <Eigen/Cholesky>

namespace ttso {

struct StackedPlane {
  Vec a;  // (N+K+D)
  double d = 0.0;
  double lambda = 0.0;
};

inline std::vector<StackedPlane> stack_planes(const QuadraticProblem& p, const PlaneSet& set) {
  std::vector<StackedPlane> out;
  for (const auto& pl : set.planes) out.push_back({p.stack(pl.a, pl.b, pl.c), pl.d, pl.lambda});
  return out;
}

inline double restricted_value(const QuadraticProblem& p, const std::vector<StackedPlane>& planes, const Vec& x) {
  double F = p.f1(x);
  for (const auto& pl : planes) {
    const double v = std::max(0.0, pl.a.dot(x) + pl.d);
    F += pl.lambda * v * v;
  }
  return F;
}

inline Vec restricted_grad(const QuadraticProblem& p, const std::vector<StackedPlane>& planes, const Vec& x) {
  Vec g = p.f1_grad(x);
  for (const auto& pl : planes) {
    const double v = pl.a.dot(x) + pl.d;
    if (v > 0.0) g += 2.0 * pl.lambda * v * pl.a;
  }
  return g;
}

struct RestrictedSolution {
  Vec x;
  double F = 0.0;
  double grad_norm = 0.0;
  int iterations = 0;
};

/// Semismooth Newton with Armijo backtracking; the generalized Hessian is
/// H + 2 sum_{active} lambda_i a_i a_i'.
inline RestrictedSolution solve_restricted_newton(const QuadraticProblem& p, const std::vector<StackedPlane>& planes,
                                                  Vec x0, double tol = 1e-8, int max_iter = 200) {
  RestrictedSolution s{std::move(x0), 0.0, 0.0, 0};
  require_dims(s.x.size() == p.dim(), "solve_restricted_newton: start point length mismatch");
  for (; s.iterations < max_iter; ++s.iterations) {
    const Vec g = restricted_grad(p, planes, s.x);
    s.grad_norm = g.norm();
    if (s.grad_norm <= tol) break;
    Mat Hk = p.H;
    for (const auto& pl : planes)
      if (pl.a.dot(s.x) + pl.d > 0.0) Hk += 2.0 * pl.lambda * pl.a * pl.a.transpose();
    const Vec step = -Hk.llt().solve(g);
    const double F0 = restricted_value(p, planes, s.x);
    double t = 1.0;
    while (t > 1e-12 && restricted_value(p, planes, s.x + t * step) > F0 + 1e-4 * t * g.dot(step)) t *= 0.5;
    s.x += t * step;
  }
  s.grad_norm = restricted_grad(p, planes, s.x).norm();
  s.F = restricted_value(p, planes, s.x);
  if (s.grad_norm > tol) throw NumericalError("solve_restricted_newton: no convergence", s.iterations);
  return s;
}

/// Exact minimizer by enumerating active sets: each candidate solves the
/// linear system of its active set; the strictly convex minimum is attained
/// by the candidate of its own active set.
inline RestrictedSolution solve_restricted_exact(const QuadraticProblem& p, const std::vector<StackedPlane>& planes) {
  if (planes.size() > 20) throw InputError("solve_restricted_exact: too many planes to enumerate");
  const std::size_t m = planes.size();
  RestrictedSolution best;
  best.F = std::numeric_limits<double>::infinity();
  const Vec Hx = p.H * p.x_star;
  for (std::uint64_t mask = 0; mask < (std::uint64_t{1} << m); ++mask) {
    Mat A = p.H;
    Vec rhs = Hx;
    for (std::size_t i = 0; i < m; ++i) {
      if (!(mask >> i & 1U)) continue;
      A += 2.0 * planes[i].lambda * planes[i].a * planes[i].a.transpose();
      rhs -= 2.0 * planes[i].lambda * planes[i].d * planes[i].a;
    }
    const Vec x = A.llt().solve(rhs);
    const double F = restricted_value(p, planes, x);
    if (F < best.F) {
      best.F = F;
      best.x = x;
    }
  }
  best.grad_norm = restricted_grad(p, planes, best.x).norm();
  return best;
}

struct RestrictionRecord {
  int epoch = 0;
  std::size_t n_planes = 0;
  double F_newton = 0.0;
  double F_exact = 0.0;
  double h = 0.0;
  double grad_norm = 0.0;
};

/// Solve the restricted problem, add a plane at its optimum while h > epsilon,
/// repeat. No pruning.
inline std::vector<RestrictionRecord> monotone_restriction_run(const QuadraticProblem& p, int max_epochs,
                                                               double epsilon, double lambda_plane,
                                                               double tol = 1e-8) {
  if (max_epochs < 0) throw ConfigError("toy.epochs must be >= 0");
  if (!(epsilon > 0.0)) throw ConfigError("toy.epsilon_h must be > 0");
  PlaneSet set;
  set.max_planes = std::numeric_limits<std::size_t>::max();
  std::vector<RestrictionRecord> out;
  Vec x = p.x_star;
  for (int epoch = 0; epoch <= max_epochs; ++epoch) {
    const auto stacked = stack_planes(p, set);
    const auto sol = solve_restricted_newton(p, stacked, x, tol);
    x = sol.x;
    RestrictionRecord r;
    r.epoch = epoch;
    r.n_planes = set.size();
    r.F_newton = sol.F;
    r.F_exact = set.size() <= 20 ? solve_restricted_exact(p, stacked).F : std::numeric_limits<double>::quiet_NaN();
    r.grad_norm = sol.grad_norm;
    const Vec th = p.theta(x), q = p.q(x), de = p.delta(x);
    const auto anchor = p.anchor_at(th, de);
    r.h = h_value(anchor, th, q, de);
    out.push_back(r);
    if (r.h <= epsilon || epoch == max_epochs) break;
    set.planes.push_back(generate_plane(anchor, th, q, de, epsilon, lambda_plane, epoch));
  }
  return out;
}

}  // namespace ttso
