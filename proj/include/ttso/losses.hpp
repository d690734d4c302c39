#pragma once

// Contrastive-style losses over an encoder with gradients w.r.t. theta and
// the additive perturbation delta (one shared D-vector per batch).

#include "ttso/diffmodel.hpp"

#include <algorithm>
#include <span>
#include <vector>

namespace ttso {

enum class AugmentationKind { Jitter, Scale, Shift };

inline std::string to_string(AugmentationKind k) {
  switch (k) {
    case AugmentationKind::Jitter: return "jitter";
    case AugmentationKind::Scale: return "scale";
    case AugmentationKind::Shift: return "shift";
  }
  return "?";
}

inline AugmentationKind augmentation_kind_from_string(const std::string& s) {
  if (s == "jitter") return AugmentationKind::Jitter;
  if (s == "scale") return AugmentationKind::Scale;
  if (s == "shift") return AugmentationKind::Shift;
  throw ConfigError("unknown augmentation kind '" + s + "' (expected jitter, scale or shift)");
}

// Augmentations are additive templates a(x) = x + delta_a.
//   Jitter: i.i.d. N(0, m^2) per entry.
//   Scale:  per-feature gain g_f ~ N(0,1) applied to a ramp over [-m, m] in time.
//   Shift:  per-feature constant offset m * g_f.
struct AugmentationSpec {
  AugmentationKind kind = AugmentationKind::Jitter;
  double magnitude = 0.1;
  std::uint64_t seed = 0;

  bool operator==(const AugmentationSpec&) const = default;

  Vec make_template(int window_len, int n_features) const {
    if (!std::isfinite(magnitude) || magnitude < 0.0)
      throw InputError("augmentation magnitude must be finite and nonnegative");
    const Eigen::Index D = static_cast<Eigen::Index>(window_len) * n_features;
    Rng rng(derive_seed(seed, "losses/augmentation"));
    Vec d(D);
    switch (kind) {
      case AugmentationKind::Jitter:
        for (Eigen::Index i = 0; i < D; ++i) d[i] = magnitude * rng.normal();
        break;
      case AugmentationKind::Scale: {
        const Vec g = rng.normal_vec(n_features);
        for (int t = 0; t < window_len; ++t) {
          const double ramp = window_len > 1 ? 2.0 * t / (window_len - 1) - 1.0 : 0.0;
          for (int f = 0; f < n_features; ++f) d[t * n_features + f] = magnitude * g[f] * ramp;
        }
        break;
      }
      case AugmentationKind::Shift: {
        const Vec g = rng.normal_vec(n_features);
        for (int t = 0; t < window_len; ++t)
          for (int f = 0; f < n_features; ++f) d[t * n_features + f] = magnitude * g[f];
        break;
      }
    }
    return d;
  }

  Vec make_template(const Architecture& arch) const {
    return make_template(arch.input_window_len, arch.n_features);
  }
};

struct LossValueGrad {
  double value = 0.0;
  Vec grad_theta;
  Vec grad_delta;

  LossValueGrad& operator+=(const LossValueGrad& o) {
    value += o.value;
    grad_theta += o.grad_theta;
    grad_delta += o.grad_delta;
    return *this;
  }
};

using Batch = std::span<const Vec>;

namespace detail {

inline void check_batch(const EncoderParams& p, Batch batch, const Vec& delta, std::size_t min_size,
                        const char* who) {
  if (batch.size() < min_size)
    throw InputError(std::string(who) + ": batch needs at least " + std::to_string(min_size) +
                     " windows, got " + std::to_string(batch.size()));
  require_dims(delta.size() == p.arch.input_dim(), std::string(who) + ": delta length mismatch");
}

// Overflowing weights give inf - inf downstream.
inline Vec finite_forward(const EncoderParams& p, const Vec& x, const char* who) {
  Vec r = forward(p, x);
  if (!r.allFinite()) throw NumericalError(std::string(who) + ": representation overflowed");
  return r;
}

inline LossValueGrad zero_loss(const EncoderParams& p) {
  return {0.0, Vec::Zero(p.theta.size()), Vec::Zero(p.arch.input_dim())};
}

}  // namespace detail

/// Mean over the batch of ||r(x + delta) - r(x + delta_a)||^2.
inline LossValueGrad alignment_loss(const EncoderParams& params, Batch batch, const Vec& delta,
                                    const AugmentationSpec& aug) {
  detail::check_batch(params, batch, delta, 1, "alignment_loss");
  const Vec aug_t = aug.make_template(params.arch);
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  LossValueGrad out = detail::zero_loss(params);
  for (const Vec& x : batch) {
    const Vec xa = x + delta;
    const Vec xb = x + aug_t;
    const Vec diff =
        detail::finite_forward(params, xa, "alignment_loss") - detail::finite_forward(params, xb, "alignment_loss");
    out.value += diff.squaredNorm() * inv_b;
    const Vec up = (2.0 * inv_b) * diff;
    const auto ga = backward(params, xa, up);
    const auto gb = backward(params, xb, up);
    out.grad_theta += ga.theta - gb.theta;
    out.grad_delta += ga.x;
  }
  return out;
}

/// Mean over distinct pairs of exp(-||R_i - R_j||^2) on the delta view.
inline LossValueGrad reg_loss(const EncoderParams& params, Batch batch, const Vec& delta,
                              const AugmentationSpec& /*aug*/) {
  detail::check_batch(params, batch, delta, 2, "reg_loss");
  const std::size_t B = batch.size();
  std::vector<Vec> inputs, reps;
  inputs.reserve(B);
  reps.reserve(B);
  for (const Vec& x : batch) {
    inputs.push_back(x + delta);
    reps.push_back(detail::finite_forward(params, inputs.back(), "reg_loss"));
  }
  const double inv_pairs = 2.0 / (static_cast<double>(B) * static_cast<double>(B - 1));
  std::vector<Vec> up(B, Vec::Zero(params.arch.repr_dim));
  LossValueGrad out = detail::zero_loss(params);
  for (std::size_t i = 0; i < B; ++i) {
    for (std::size_t j = i + 1; j < B; ++j) {
      const Vec d = reps[i] - reps[j];
      const double e = std::exp(-d.squaredNorm()) * inv_pairs;
      out.value += e;
      up[i] -= 2.0 * e * d;
      up[j] += 2.0 * e * d;
    }
  }
  for (std::size_t i = 0; i < B; ++i) {
    const auto g = backward(params, inputs[i], up[i]);
    out.grad_theta += g.theta;
    out.grad_delta += g.x;
  }
  return out;
}

/// alignment + lambda * reg.
inline LossValueGrad contrastive_loss(const EncoderParams& params, Batch batch, const Vec& delta,
                                      const AugmentationSpec& aug, double lambda) {
  if (!std::isfinite(lambda) || lambda < 0.0) throw InputError("contrastive_loss: lambda must be >= 0");
  LossValueGrad out = alignment_loss(params, batch, delta, aug);
  if (lambda == 0.0) return out;
  const LossValueGrad r = reg_loss(params, batch, delta, aug);
  out.value += lambda * r.value;
  out.grad_theta += lambda * r.grad_theta;
  out.grad_delta += lambda * r.grad_delta;
  return out;
}

/// Worst-pair alignment over a finite augmentation set, averaged over the batch.
inline double ar_loss_estimate(const EncoderParams& params, Batch batch,
                               std::span<const AugmentationSpec> aug_set) {
  if (aug_set.empty()) throw InputError("ar_loss_estimate: augmentation set is empty");
  if (batch.empty()) throw InputError("ar_loss_estimate: batch is empty");
  std::vector<Vec> templates;
  templates.reserve(aug_set.size());
  for (const auto& a : aug_set) templates.push_back(a.make_template(params.arch));
  double total = 0.0;
  std::vector<Vec> reps(aug_set.size());
  for (const Vec& x : batch) {
    for (std::size_t a = 0; a < aug_set.size(); ++a) reps[a] = forward(params, x + templates[a]);
    double worst = 0.0;
    for (std::size_t a = 0; a < reps.size(); ++a)
      for (std::size_t b = 0; b < reps.size(); ++b)
        worst = std::max(worst, (reps[a] - reps[b]).squaredNorm());
    total += worst;
  }
  return total / static_cast<double>(batch.size());
}

struct CrossEntropy {
  double value = 0.0;
  Vec grad_logits;
};

/// Softmax cross-entropy: -log softmax(logits)[label].
inline CrossEntropy cross_entropy_loss(const Vec& logits, int label) {
  if (logits.size() < 2) throw InputError("cross_entropy_loss: need at least 2 classes");
  if (label < 0 || label >= logits.size())
    throw InputError("cross_entropy_loss: label " + std::to_string(label) + " out of range");
  Eigen::Index top = 0;
  const double m = logits.maxCoeff(&top);
  const Vec e = (logits.array() - m).exp();
  const double z = e.sum();
  CrossEntropy ce;
  double rest = 0.0;  // z - 1 without cancellation
  for (Eigen::Index i = 0; i < e.size(); ++i)
    if (i != top) rest += e[i];
  ce.value = std::log1p(rest) + (m - logits[label]);
  ce.grad_logits = e / z;
  ce.grad_logits[label] -= 1.0;
  return ce;
}

}  // namespace ttso

namespace ttso {

/// One domain's minibatch together with the augmentation used for view B.
struct DomainBatch {
  Batch windows;
  AugmentationSpec aug;
};

}  // namespace ttso
