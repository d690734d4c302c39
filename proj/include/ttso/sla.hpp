#pragma once

// Stratified localization driver: simultaneous gradient steps on the
// penalized objective F over (theta, q, delta), cutting planes added every k
// iterations while h exceeds epsilon, and epsilon-stationarity stopping.

#include "ttso/cutplane.hpp"

#include <cmath>
#include <limits>
#include <optional>
#include <vector>

namespace ttso {

enum class UpdateOrder { Jacobi, GaussSeidel };

inline std::string to_string(UpdateOrder o) { return o == UpdateOrder::Jacobi ? "jacobi" : "gauss_seidel"; }

inline UpdateOrder update_order_from_string(const std::string& s) {
  if (s == "jacobi") return UpdateOrder::Jacobi;
  if (s == "gauss_seidel") return UpdateOrder::GaussSeidel;
  throw ConfigError("unknown update order '" + s + "' (expected jacobi or gauss_seidel)");
}

/// A step size that is either the 1/sqrt(T1 - t1) schedule or a fixed value.
struct StepSize {
  std::optional<double> fixed;  // empty = schedule
  bool operator==(const StepSize&) const = default;
};

struct SLAConfig {
  std::int64_t T1 = 300;
  std::int64_t t1 = 1;
  std::int64_t k = 10;
  double epsilon_h = 0.05;
  double epsilon_stat = 1e-6;
  StepSize eta_theta, eta_q, eta_delta;
  std::optional<double> warmup_eta;  // step for t < t1; defaults to the schedule value
  double lambda_plane = 10.0;
  // > 0: lambda_i <= cap / (eta_theta |a|^2 + eta_q |b|^2 + eta_delta |c|^2) at creation
  double plane_step_cap = 0.0;
  std::size_t max_planes = 64;
  UpdateOrder order = UpdateOrder::Jacobi;

  bool operator==(const SLAConfig&) const = default;

  void validate() const {
    if (T1 < 0) throw ConfigError("sla.T1 must be >= 0");
    if (t1 < 0) throw ConfigError("sla.t1 must be >= 0");
    if (T1 > 0 && t1 >= T1) throw ConfigError("sla.t1 must be < sla.T1");
    if (k < 1) throw ConfigError("sla.k must be >= 1");
    if (!(epsilon_h > 0.0)) throw ConfigError("sla.epsilon_h must be > 0");
    if (!(epsilon_stat > 0.0)) throw ConfigError("sla.epsilon_stat must be > 0");
    for (const auto* s : {&eta_theta, &eta_q, &eta_delta})
      if (s->fixed && !(*s->fixed > 0.0)) throw ConfigError("sla step sizes must be positive");
    if (!(lambda_plane > 0.0)) throw ConfigError("cutplane.lambda_plane must be > 0");
    if (!(plane_step_cap >= 0.0)) throw ConfigError("cutplane.step_cap must be >= 0");
    if (max_planes < 1) throw ConfigError("cutplane.max_planes must be >= 1");
  }
};

/// Constant step 1/sqrt(T1 - t1) for t >= t1; the warm-up value before.
inline double schedule_step(std::int64_t t, std::int64_t T1, std::int64_t t1,
                            std::optional<double> warmup = std::nullopt) {
  if (T1 <= t1) throw ConfigError("schedule_step: T1 must exceed t1");
  const double eta = 1.0 / std::sqrt(static_cast<double>(T1 - t1));
  if (t < t1 && warmup) return *warmup;
  return eta;
}

/// ||grad_theta||^2 + ||grad_q||^2 + ||grad_delta||^2.
inline double grad_norm_sq(const Vec& grad_theta, const Vec& grad_q, const Vec& grad_delta) {
  return grad_theta.squaredNorm() + grad_q.squaredNorm() + grad_delta.squaredNorm();
}

struct SolverState {
  Vec theta;
  Vec q;
  PerturbationState perturb;

  Vec delta() const { return perturb.delta(); }
};

struct F1Eval {
  double value = 0.0;
  BlockGrads grads;
};

/// Objective bundle consumed by the driver: f1 with gradients, the anchor for
/// h, and hooks for the perturbation level.
class ObjectiveBundle {
 public:
  virtual ~ObjectiveBundle() = default;

  /// f1 and its block gradients at the state for iteration t (may be a minibatch estimate).
  virtual F1Eval f1(const SolverState& state, std::int64_t t) = 0;

  /// Linearization of the inner argmax at the current state (full batch).
  virtual LinearizationAnchor anchor(const SolverState& state) = 0;

  /// Called at the start of every iteration (e.g. base-noise refresh).
  virtual void begin_iteration(SolverState& /*state*/, std::int64_t /*t*/) {}

  /// Called at plane-check iterations before the anchor is rebuilt.
  virtual void on_plane_check(SolverState& /*state*/, std::int64_t /*t*/) {}
};

struct TraceRecord {
  std::int64_t t = 0;
  double F = 0.0;
  double f1 = 0.0;
  double h = 0.0;
  double grad_norm_sq = 0.0;
  std::size_t n_planes = 0;
  double eta_theta = 0.0, eta_q = 0.0, eta_delta = 0.0;
  double h_check = std::numeric_limits<double>::quiet_NaN();  // h after the update at check iterations
  bool plane_added = false;
};

enum class SolverStatus { MaxIters, Stationary, NumericalError };

inline std::string to_string(SolverStatus s) {
  switch (s) {
    case SolverStatus::MaxIters: return "max_iters";
    case SolverStatus::Stationary: return "stationary";
    case SolverStatus::NumericalError: return "numerical_error";
  }
  return "?";
}

struct SolverTrace {
  std::vector<TraceRecord> records;
  SolverStatus status = SolverStatus::MaxIters;
  std::int64_t stop_index = -1;  // iterate index when Stationary
  std::string message;
};

struct StepSizes {
  double theta = 0.0, q = 0.0, delta = 0.0;
};

inline StepSizes step_sizes_at(const SLAConfig& c, std::int64_t t) {
  auto pick = [&](const StepSize& s) {
    if (s.fixed) return *s.fixed;
    return schedule_step(t, c.T1, c.t1, c.warmup_eta);
  };
  return {pick(c.eta_theta), pick(c.eta_q), pick(c.eta_delta)};
}

namespace detail {

inline void apply_delta_step(SolverState& s, const Vec& grad_delta, double eta) {
  if (s.perturb.mode == PerturbMode::GmmReparam) {
    apply_step(s.perturb.gmm, pullback(s.perturb.gmm, grad_delta), -eta);
  } else {
    s.perturb.direct -= eta * grad_delta;
  }
}

inline void require_finite_state(const SolverState& s, std::int64_t t, const char* where) {
  if (!s.theta.allFinite() || !s.q.allFinite() || !s.delta().allFinite())
    throw NumericalError(std::string("sla_run: non-finite iterate after ") + where, t);
}

inline F1Eval eval_F(ObjectiveBundle& bundle, const SolverState& s, const PlaneSet& planes, std::int64_t t) {
  F1Eval e = bundle.f1(s, t);
  const Vec delta = s.delta();
  F1Eval out;
  out.value = F_value(e.value, planes, s.theta, s.q, delta);
  out.grads = F_grads(e.grads, planes, s.theta, s.q, delta);
  return out;
}

}  // namespace detail

struct StepOutcome {
  SolverState state;
  double F = 0.0;
  double f1 = 0.0;
  BlockGrads grads;  // gradients of F at the pre-update state
};

/// One update of all three blocks. Jacobi uses gradients at the pre-update
/// state for every block; Gauss-Seidel re-evaluates after each block.
inline StepOutcome sla_step(const SolverState& state, ObjectiveBundle& bundle, const PlaneSet& planes,
                            const StepSizes& eta, std::int64_t t, UpdateOrder order = UpdateOrder::Jacobi) {
  StepOutcome out{state, 0.0, 0.0, {}};
  const F1Eval f1 = bundle.f1(state, t);
  const Vec delta = state.delta();
  out.f1 = f1.value;
  out.F = F_value(f1.value, planes, state.theta, state.q, delta);
  out.grads = F_grads(f1.grads, planes, state.theta, state.q, delta);
  if (!std::isfinite(out.F) || !out.grads.all_finite())
    throw NumericalError("sla_step: non-finite objective or gradient at t=" + std::to_string(t), t);
  if (order == UpdateOrder::Jacobi) {
    out.state.theta -= eta.theta * out.grads.theta;
    out.state.q -= eta.q * out.grads.q;
    detail::apply_delta_step(out.state, out.grads.delta, eta.delta);
    return out;
  }
  out.state.theta -= eta.theta * out.grads.theta;
  const auto g_q = detail::eval_F(bundle, out.state, planes, t).grads.q;
  out.state.q -= eta.q * g_q;
  const auto g_d = detail::eval_F(bundle, out.state, planes, t).grads.delta;
  detail::apply_delta_step(out.state, g_d, eta.delta);
  return out;
}

struct SLAResult {
  SolverState state;  // final iterate (the stopping iterate when Stationary)
  SolverTrace trace;
  PlaneSet planes;
  LinearizationAnchor anchor;
};

inline SLAResult sla_run(const SLAConfig& config, ObjectiveBundle& bundle, SolverState initial) {
  config.validate();
  SLAResult r{std::move(initial), {}, {}, {}};
  r.planes.max_planes = config.max_planes;
  if (config.T1 == 0) return r;
  try {
    r.anchor = bundle.anchor(r.state);
    for (std::int64_t t = 0; t < config.T1; ++t) {
      bundle.begin_iteration(r.state, t);
      const StepSizes eta = step_sizes_at(config, t);
      TraceRecord rec;
      rec.t = t;
      rec.eta_theta = eta.theta;
      rec.eta_q = eta.q;
      rec.eta_delta = eta.delta;
      rec.h = h_value(r.anchor, r.state.theta, r.state.q, r.state.delta());

      StepOutcome step = sla_step(r.state, bundle, r.planes, eta, t, config.order);
      rec.F = step.F;
      rec.f1 = step.f1;
      rec.grad_norm_sq = step.grads.squared_norm();
      if (t > config.t1 && std::sqrt(rec.grad_norm_sq) <= config.epsilon_stat) {
        rec.n_planes = r.planes.size();
        r.trace.records.push_back(rec);
        r.trace.status = SolverStatus::Stationary;
        r.trace.stop_index = t;
        return r;
      }
      r.state = std::move(step.state);
      detail::require_finite_state(r.state, t, "update");

      if (t % config.k == 0) {
        bundle.on_plane_check(r.state, t);
        detail::require_finite_state(r.state, t, "plane check");
        r.anchor = bundle.anchor(r.state);
        const Vec delta = r.state.delta();
        rec.h_check = h_value(r.anchor, r.state.theta, r.state.q, delta);
        if (!std::isfinite(rec.h_check)) throw NumericalError("sla_run: non-finite h", t);
        if (rec.h_check > config.epsilon_h) {
          CuttingPlane pl =
              generate_plane(r.anchor, r.state.theta, r.state.q, delta, config.epsilon_h, config.lambda_plane, t);
          if (config.plane_step_cap > 0.0) {
            const double stiff =
                eta.theta * pl.a.squaredNorm() + eta.q * pl.b.squaredNorm() + eta.delta * pl.c.squaredNorm();
            pl.lambda = std::min(pl.lambda, config.plane_step_cap / stiff);
          }
          r.planes.planes.push_back(std::move(pl));
          r.planes = prune_planes(r.planes, r.state.theta, r.state.q, delta);
          rec.plane_added = true;
        }
      }
      rec.n_planes = r.planes.size();
      r.trace.records.push_back(rec);
    }
  } catch (const NumericalError& e) {
    r.trace.status = SolverStatus::NumericalError;
    r.trace.message = e.what();
    r.trace.stop_index = e.iteration();
  }
  return r;
}

}  // namespace ttso
