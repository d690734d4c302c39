#pragma once

// Small differentiable encoders r_theta: window (T_w x F) -> representation (M).
// Parameters live in one flat vector; the layout table maps layer tensors
// into it. Windows are flat vectors in time-major order, index t * F + f.

#include "ttso/core.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace ttso {

enum class EncoderKind { Linear, MLP, DilatedConv };

inline std::string to_string(EncoderKind k) {
  switch (k) {
    case EncoderKind::Linear: return "linear";
    case EncoderKind::MLP: return "mlp";
    case EncoderKind::DilatedConv: return "dilated_conv";
  }
  return "?";
}

inline EncoderKind encoder_kind_from_string(const std::string& s) {
  if (s == "linear") return EncoderKind::Linear;
  if (s == "mlp") return EncoderKind::MLP;
  if (s == "dilated_conv") return EncoderKind::DilatedConv;
  throw ConfigError("unknown encoder kind '" + s + "' (expected linear, mlp or dilated_conv)");
}

struct Architecture {
  EncoderKind kind = EncoderKind::DilatedConv;
  int input_window_len = 32;  // T_w
  int n_features = 1;         // F
  int repr_dim = 8;           // M
  // MLP: hidden layer widths. DilatedConv: channel widths of the first
  // n_layers - 1 layers (empty means repr_dim everywhere).
  std::vector<int> hidden_dims;
  int n_layers = 4;
  int kernel_size = 3;
  int dilation_base = 2;

  int input_dim() const { return input_window_len * n_features; }

  bool operator==(const Architecture&) const = default;

  void validate() const {
    if (input_window_len < 1) throw ConfigError("architecture.input_window_len must be positive");
    if (n_features < 1) throw ConfigError("architecture.n_features must be positive");
    if (repr_dim < 1) throw ConfigError("architecture.repr_dim must be >= 1");
    for (int h : hidden_dims)
      if (h < 1) throw ConfigError("architecture.hidden_dims entries must be positive");
    if (kind == EncoderKind::DilatedConv) {
      if (n_layers < 1) throw ConfigError("architecture.n_layers must be positive");
      if (kernel_size < 1) throw ConfigError("architecture.kernel_size must be positive");
      if (dilation_base < 1) throw ConfigError("architecture.dilation_base must be positive");
      if (!hidden_dims.empty() && static_cast<int>(hidden_dims.size()) != n_layers - 1)
        throw ConfigError("architecture.hidden_dims must be empty or have n_layers - 1 entries");
    }
  }
};

struct LayoutEntry {
  std::string name;
  Eigen::Index offset = 0;
  std::vector<Eigen::Index> shape;
  bool is_bias = false;

  Eigen::Index size() const {
    Eigen::Index n = 1;
    for (auto s : shape) n *= s;
    return n;
  }
  bool operator==(const LayoutEntry&) const = default;
};

namespace detail {

struct DenseLayer {
  int in = 0, out = 0;
  Eigen::Index w_off = 0, b_off = 0;
  bool tanh = false;
};

struct ConvLayer {
  int c_in = 0, c_out = 0, kernel = 0, dilation = 1;
  Eigen::Index w_off = 0, b_off = 0;
  bool tanh = false;
};

inline std::vector<DenseLayer> dense_layers(const Architecture& arch) {
  std::vector<int> widths{arch.input_dim()};
  if (arch.kind == EncoderKind::MLP)
    widths.insert(widths.end(), arch.hidden_dims.begin(), arch.hidden_dims.end());
  widths.push_back(arch.repr_dim);
  std::vector<DenseLayer> layers;
  Eigen::Index off = 0;
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    DenseLayer d;
    d.in = widths[l];
    d.out = widths[l + 1];
    d.w_off = off;
    off += static_cast<Eigen::Index>(d.in) * d.out;
    d.b_off = off;
    off += d.out;
    d.tanh = (l + 2 < widths.size());
    layers.push_back(d);
  }
  return layers;
}

inline std::vector<ConvLayer> conv_layers(const Architecture& arch) {
  std::vector<ConvLayer> layers;
  Eigen::Index off = 0;
  int c_in = arch.n_features;
  int dilation = 1;
  for (int l = 0; l < arch.n_layers; ++l) {
    ConvLayer c;
    const bool last = (l == arch.n_layers - 1);
    c.c_in = c_in;
    c.c_out = last ? arch.repr_dim
                   : (arch.hidden_dims.empty() ? arch.repr_dim : arch.hidden_dims[l]);
    c.kernel = arch.kernel_size;
    c.dilation = dilation;
    c.w_off = off;
    off += static_cast<Eigen::Index>(c.c_out) * c.c_in * c.kernel;
    c.b_off = off;
    off += c.c_out;
    c.tanh = !last;
    layers.push_back(c);
    c_in = c.c_out;
    dilation *= arch.dilation_base;
  }
  return layers;
}

}  // namespace detail

inline std::vector<LayoutEntry> make_layout(const Architecture& arch) {
  arch.validate();
  std::vector<LayoutEntry> layout;
  if (arch.kind == EncoderKind::DilatedConv) {
    int l = 0;
    for (const auto& c : detail::conv_layers(arch)) {
      layout.push_back({"conv" + std::to_string(l) + ".weight", c.w_off, {c.c_out, c.c_in, c.kernel}, false});
      layout.push_back({"conv" + std::to_string(l) + ".bias", c.b_off, {c.c_out}, true});
      ++l;
    }
  } else {
    int l = 0;
    for (const auto& d : detail::dense_layers(arch)) {
      layout.push_back({"dense" + std::to_string(l) + ".weight", d.w_off, {d.out, d.in}, false});
      layout.push_back({"dense" + std::to_string(l) + ".bias", d.b_off, {d.out}, true});
      ++l;
    }
  }
  return layout;
}

inline Eigen::Index param_count(const Architecture& arch) {
  Eigen::Index n = 0;
  for (const auto& e : make_layout(arch)) n += e.size();
  return n;
}

struct EncoderParams {
  Vec theta;
  Architecture arch;
  std::vector<LayoutEntry> layout;

  Eigen::Index size() const { return theta.size(); }

  // Same architecture, different parameter vector.
  EncoderParams with_theta(Vec t) const {
    require_dims(t.size() == theta.size(), "with_theta: parameter length mismatch");
    EncoderParams p{std::move(t), arch, layout};
    return p;
  }
};

inline EncoderParams make_params(const Architecture& arch, Vec theta) {
  auto layout = make_layout(arch);
  Eigen::Index n = 0;
  for (const auto& e : layout) n += e.size();
  require_dims(theta.size() == n, "parameter vector length " + std::to_string(theta.size()) +
                                      " does not match architecture (" + std::to_string(n) + ")");
  if (!theta.allFinite()) throw InputError("parameter vector has non-finite entries");
  return EncoderParams{std::move(theta), arch, std::move(layout)};
}

// Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), biases zero.
inline EncoderParams init_params(const Architecture& arch, std::uint64_t seed) {
  auto layout = make_layout(arch);
  Eigen::Index n = 0;
  for (const auto& e : layout) n += e.size();
  Vec theta = Vec::Zero(n);
  Rng rng(derive_seed(seed, "diffmodel/init"));
  for (const auto& e : layout) {
    if (e.is_bias) continue;
    Eigen::Index fan_in = 1;
    for (std::size_t i = 1; i < e.shape.size(); ++i) fan_in *= e.shape[i];
    const double s = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (Eigen::Index i = 0; i < e.size(); ++i) theta[e.offset + i] = rng.uniform(-s, s);
  }
  return EncoderParams{std::move(theta), arch, std::move(layout)};
}

namespace detail {

inline void check_input(const EncoderParams& p, const Vec& x) {
  require_dims(x.size() == p.arch.input_dim(),
               "window has " + std::to_string(x.size()) + " entries, encoder expects " +
                   std::to_string(p.arch.input_dim()));
  if (!x.allFinite()) throw InputError("encoder input has non-finite entries");
}

// Dense stack: activations[l] is the input of layer l; activations.back() the output.
inline std::vector<Vec> dense_forward(const EncoderParams& p, const std::vector<DenseLayer>& layers,
                                      const Vec& x) {
  std::vector<Vec> acts;
  acts.reserve(layers.size() + 1);
  acts.push_back(x);
  for (const auto& d : layers) {
    Eigen::Map<const RowMat> w(p.theta.data() + d.w_off, d.out, d.in);
    Eigen::Map<const Vec> b(p.theta.data() + d.b_off, d.out);
    Vec z = w * acts.back() + b;
    if (d.tanh) z = z.array().tanh();
    acts.push_back(std::move(z));
  }
  return acts;
}

// Conv stack over a (T x C) row-major activation map.
inline std::vector<RowMat> conv_forward(const EncoderParams& p, const std::vector<ConvLayer>& layers,
                                        const Vec& x) {
  const int T = p.arch.input_window_len;
  std::vector<RowMat> acts;
  acts.reserve(layers.size() + 1);
  acts.push_back(Eigen::Map<const RowMat>(x.data(), T, p.arch.n_features));
  for (const auto& c : layers) {
    const RowMat& in = acts.back();
    RowMat out(T, c.c_out);
    const double* w = p.theta.data() + c.w_off;
    const double* b = p.theta.data() + c.b_off;
    for (int t = 0; t < T; ++t) {
      for (int o = 0; o < c.c_out; ++o) {
        double s = b[o];
        for (int j = 0; j < c.kernel; ++j) {
          const int src = t - j * c.dilation;
          if (src < 0) break;
          const double* wo = w + (static_cast<Eigen::Index>(o) * c.c_in) * c.kernel + j;
          for (int i = 0; i < c.c_in; ++i) s += wo[static_cast<Eigen::Index>(i) * c.kernel] * in(src, i);
        }
        out(t, o) = c.tanh ? std::tanh(s) : s;
      }
    }
    acts.push_back(std::move(out));
  }
  return acts;
}

}  // namespace detail

/// Representation of one window. DilatedConv outputs are mean-pooled over time.
inline Vec forward(const EncoderParams& params, const Vec& x) {
  detail::check_input(params, x);
  if (params.arch.kind == EncoderKind::DilatedConv) {
    auto acts = detail::conv_forward(params, detail::conv_layers(params.arch), x);
    return acts.back().colwise().mean().transpose();
  }
  auto acts = detail::dense_forward(params, detail::dense_layers(params.arch), x);
  return acts.back();
}

struct EncoderGradients {
  Vec theta;  // d(upstream . r(x)) / d theta
  Vec x;      // d(upstream . r(x)) / d x
};

inline EncoderGradients backward(const EncoderParams& params, const Vec& x, const Vec& upstream) {
  detail::check_input(params, x);
  require_dims(upstream.size() == params.arch.repr_dim, "upstream gradient length must equal repr_dim");
  if (!upstream.allFinite()) throw InputError("upstream gradient has non-finite entries");

  EncoderGradients g{Vec::Zero(params.theta.size()), Vec()};

  if (params.arch.kind != EncoderKind::DilatedConv) {
    const auto layers = detail::dense_layers(params.arch);
    const auto acts = detail::dense_forward(params, layers, x);
    Vec delta = upstream;
    for (std::size_t l = layers.size(); l-- > 0;) {
      const auto& d = layers[l];
      if (d.tanh) delta = delta.array() * (1.0 - acts[l + 1].array().square());
      Eigen::Map<RowMat> gw(g.theta.data() + d.w_off, d.out, d.in);
      gw.noalias() += delta * acts[l].transpose();
      g.theta.segment(d.b_off, d.out) += delta;
      Eigen::Map<const RowMat> w(params.theta.data() + d.w_off, d.out, d.in);
      delta = w.transpose() * delta;
    }
    g.x = std::move(delta);
    return g;
  }

  const auto layers = detail::conv_layers(params.arch);
  const auto acts = detail::conv_forward(params, layers, x);
  const int T = params.arch.input_window_len;
  // Gradient w.r.t. the output map of the last layer: mean pooling.
  RowMat d_out = (upstream.transpose() / static_cast<double>(T)).replicate(T, 1);
  for (std::size_t l = layers.size(); l-- > 0;) {
    const auto& c = layers[l];
    const RowMat& in = acts[l];
    const RowMat& out = acts[l + 1];
    RowMat d_pre = d_out;
    if (c.tanh) d_pre = d_out.array() * (1.0 - out.array().square());
    RowMat d_in = RowMat::Zero(T, c.c_in);
    const double* w = params.theta.data() + c.w_off;
    double* gw = g.theta.data() + c.w_off;
    double* gb = g.theta.data() + c.b_off;
    for (int t = 0; t < T; ++t) {
      for (int o = 0; o < c.c_out; ++o) {
        const double go = d_pre(t, o);
        gb[o] += go;
        for (int j = 0; j < c.kernel; ++j) {
          const int src = t - j * c.dilation;
          if (src < 0) break;
          const Eigen::Index base = (static_cast<Eigen::Index>(o) * c.c_in) * c.kernel + j;
          for (int i = 0; i < c.c_in; ++i) {
            const Eigen::Index idx = base + static_cast<Eigen::Index>(i) * c.kernel;
            gw[idx] += go * in(src, i);
            d_in(src, i) += go * w[idx];
          }
        }
      }
    }
    d_out = std::move(d_in);
  }
  g.x = Eigen::Map<const Vec>(d_out.data(), d_out.size());
  return g;
}

}  // namespace ttso
