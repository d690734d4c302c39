#pragma once

// Property suites run by the `selftest` subcommand: analytic gradients
// against central differences, midpoint convexity of h, plane validity and
// simplex projection.

#include "ttso/bundles.hpp"

#include <functional>
#include <ostream>

namespace ttso {

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

namespace selfcheck {

inline std::string fmt_g(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

/// Largest relative error between g and a central-difference gradient of f at x.
inline double fd_rel_error(const std::function<double(const Vec&)>& f, const Vec& x, const Vec& g,
                           double step = 1e-6) {
  double worst = 0.0;
  Vec xp = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    xp[i] = x[i] + step;
    const double fp = f(xp);
    xp[i] = x[i] - step;
    const double fm = f(xp);
    xp[i] = x[i];
    const double fd = (fp - fm) / (2.0 * step);
    worst = std::max(worst, std::abs(fd - g[i]) / std::max(1.0, std::abs(fd) + std::abs(g[i])));
  }
  return worst;
}

inline Architecture small_arch(EncoderKind kind) {
  Architecture a;
  a.kind = kind;
  a.input_window_len = 6;
  a.n_features = 2;
  a.repr_dim = 3;
  a.n_layers = 2;
  a.kernel_size = 2;
  if (kind == EncoderKind::MLP) a.hidden_dims = {5};
  return a;
}

inline std::vector<Vec> random_batch(Rng& rng, Eigen::Index D, int B) {
  std::vector<Vec> b;
  for (int i = 0; i < B; ++i) b.push_back(rng.normal_vec(D));
  return b;
}

inline CheckResult loss_gradients(std::uint64_t seed) {
  CheckResult r{"loss gradients vs central differences", true, ""};
  Rng rng(derive_seed(seed, "selfcheck/grad"));
  double worst = 0.0;
  for (auto kind : {EncoderKind::Linear, EncoderKind::MLP, EncoderKind::DilatedConv}) {
    const Architecture arch = small_arch(kind);
    const EncoderParams p = init_params(arch, rng.next_u64());
    const auto batch = random_batch(rng, arch.input_dim(), 3);
    const Vec delta = 0.1 * rng.normal_vec(arch.input_dim());
    const AugmentationSpec aug{AugmentationKind::Jitter, 0.2, rng.next_u64()};
    const auto l = contrastive_loss(p, batch, delta, aug, 0.5);
    worst = std::max(worst, fd_rel_error(
                                [&](const Vec& t) { return contrastive_loss(p.with_theta(t), batch, delta, aug, 0.5).value; },
                                p.theta, l.grad_theta));
    worst = std::max(worst, fd_rel_error([&](const Vec& d) { return contrastive_loss(p, batch, d, aug, 0.5).value; },
                                         delta, l.grad_delta));
  }
  r.passed = worst <= 1e-5;
  r.detail = "max rel err " + fmt_g(worst);
  return r;
}

inline CheckResult h_convexity(std::uint64_t seed) {
  CheckResult r{"midpoint convexity of h", true, ""};
  Rng rng(derive_seed(seed, "selfcheck/convex"));
  const QuadraticProblem p = make_quadratic_problem(4, 3, 5, rng.next_u64());
  const auto a = p.anchor_at(rng.normal_vec(4), rng.normal_vec(5));
  double worst = -1.0;
  for (int trial = 0; trial < 200; ++trial) {
    const Vec x = 2.0 * rng.normal_vec(p.dim()), y = 2.0 * rng.normal_vec(p.dim());
    const Vec m = 0.5 * (x + y);
    auto h = [&](const Vec& z) { return h_value(a, p.theta(z), p.q(z), p.delta(z)); };
    worst = std::max(worst, h(m) - 0.5 * (h(x) + h(y)));
  }
  r.passed = worst <= 1e-9;
  r.detail = "max midpoint excess " + fmt_g(worst);
  return r;
}

inline CheckResult plane_validity(std::uint64_t seed) {
  CheckResult r{"plane validity", true, ""};
  Rng rng(derive_seed(seed, "selfcheck/plane"));
  const QuadraticProblem p = make_quadratic_problem(3, 3, 4, rng.next_u64());
  const auto a = p.anchor_at(Vec::Zero(3), Vec::Zero(4));
  const double eps = 0.2;
  double worst_gen = 0.0, worst_feasible = 0.0;
  int planes = 0;
  while (planes < 20) {
    const Vec x = 2.0 * rng.normal_vec(p.dim());
    const double h = h_value(a, p.theta(x), p.q(x), p.delta(x));
    if (h <= eps) continue;
    const auto pl = generate_plane(a, p.theta(x), p.q(x), p.delta(x), eps, 1.0);
    worst_gen = std::max(worst_gen, std::abs(pl.evaluate(p.theta(x), p.q(x), p.delta(x)) - (h - eps)));
    // Feasible points: q at phi plus a small offset.
    for (int s = 0; s < 5; ++s) {
      const Vec th = rng.normal_vec(3), de = rng.normal_vec(4);
      Vec off = rng.normal_vec(3);
      off *= eps * rng.uniform() / off.norm();
      const Vec q = phi_linearized(a, th, de) + off;
      worst_feasible = std::max(worst_feasible, pl.evaluate(th, q, de));
    }
    ++planes;
  }
  r.passed = worst_gen <= 1e-10 && worst_feasible <= 1e-9;
  r.detail = "generator residual " + fmt_g(worst_gen) + ", max feasible value " + fmt_g(worst_feasible);
  return r;
}

inline CheckResult simplex(std::uint64_t seed) {
  CheckResult r{"simplex projection", true, ""};
  Rng rng(derive_seed(seed, "selfcheck/simplex"));
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const Vec v = 2.0 * rng.normal_vec(3 + static_cast<Eigen::Index>(rng.below(3)));
    const Vec x = simplex_project(v);
    worst = std::max(worst, std::abs(x.sum() - 1.0));
    worst = std::max(worst, -x.minCoeff());
    // Optimality: (v - x)'(y - x) <= 0 for every vertex y.
    for (Eigen::Index j = 0; j < v.size(); ++j) {
      Vec y = Vec::Zero(v.size());
      y[j] = 1.0;
      worst = std::max(worst, (v - x).dot(y - x));
    }
  }
  r.passed = worst <= 1e-12;
  r.detail = "max violation " + fmt_g(worst);
  return r;
}

}  // namespace selfcheck

inline std::vector<CheckResult> run_selfchecks(std::uint64_t seed) {
  return {selfcheck::loss_gradients(seed), selfcheck::h_convexity(seed), selfcheck::plane_validity(seed),
          selfcheck::simplex(seed)};
}

}  // namespace ttso
