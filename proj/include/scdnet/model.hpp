#pragma once

// SCDNet: softmax-weighted fusion of a multi-layer feature stack, an input
// projection scaled by sqrt(H) plus sinusoidal positions, N simplified Conformer
// blocks, and a sigmoid decision layer producing one change probability per frame.
//
// Block j maps x to h^j:
//   x += 0.5 * FFN(LN(x))            FFN = Linear(H,4H) -> swish -> Linear(4H,H)
//   x += Wo * MHSA(LN(x))
//   x += Conv(LN(x))                 pointwise H->2H, GLU, depthwise k, swish, pointwise H->H
//   x += 0.5 * FFN'(LN(x))
//   h^j = LN(x)

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "scdnet/errors.hpp"
#include "scdnet/rng.hpp"
#include "scdnet/tensor.hpp"

namespace scdnet {

struct LayerStack {
  std::vector<Matrix<float>> layers;  // L matrices, each T x D
  double frame_rate = 50.0;
  std::string source;

  std::size_t num_layers() const { return layers.size(); }
  Eigen::Index frames() const { return layers.empty() ? 0 : layers[0].rows(); }
  Eigen::Index dim() const { return layers.empty() ? 0 : layers[0].cols(); }

  void validate() const {
    if (layers.empty()) throw ShapeError("layer stack is empty");
    for (std::size_t l = 0; l < layers.size(); ++l) {
      if (layers[l].rows() != frames() || layers[l].cols() != dim()) {
        throw ShapeError("layer " + std::to_string(l) + " has shape " + shape_string(layers[l]) +
                         ", expected " + shape_string(layers[0]));
      }
    }
  }
  bool operator==(const LayerStack& o) const {
    if (layers.size() != o.layers.size() || frame_rate != o.frame_rate) return false;
    for (std::size_t l = 0; l < layers.size(); ++l) {
      if (layers[l].rows() != o.layers[l].rows() || layers[l].cols() != o.layers[l].cols() ||
          layers[l] != o.layers[l]) {
        return false;
      }
    }
    return true;
  }
};

struct ModelConfig {
  std::int64_t layers = 1;      // L, feature-stack depth
  std::int64_t input_dim = 32;  // D
  std::int64_t hidden = 64;     // H
  std::int64_t blocks = 3;      // N
  std::int64_t kernel = 7;      // depthwise convolution width
  std::int64_t heads = 1;

  static constexpr std::int64_t kFfnMultiplier = 4;

  void validate() const {
    if (layers < 1 || input_dim < 1 || hidden < 1 || blocks < 1 || kernel < 1 || heads < 1) {
      throw ConfigError("model dimensions must all be >= 1");
    }
    if (kernel % 2 == 0) throw ConfigError("convolution kernel must be odd");
    if (hidden % heads != 0) throw ConfigError("hidden size must be divisible by heads");
  }
  bool has_fusion() const { return layers > 1; }
  bool operator==(const ModelConfig&) const = default;
};

// Indices of each parameter inside ModelState::params, in declaration order.
struct ParamLayout {
  struct Ffn {
    std::size_t ln_g, ln_b, w1, b1, w2, b2;
  };
  struct Block {
    Ffn ff1;
    std::size_t att_ln_g, att_ln_b, wq, bq, wk, bk, wv, bv, wo, bo;
    std::size_t conv_ln_g, conv_ln_b, pw1_w, pw1_b, dw_w, dw_b, pw2_w, pw2_b;
    Ffn ff2;
    std::size_t out_ln_g, out_ln_b;
  };

  static constexpr std::size_t kNone = static_cast<std::size_t>(-1);
  std::size_t fusion = kNone;
  std::size_t in_w = 0, in_b = 0;
  std::vector<Block> blocks;
  std::size_t dec_w = 0, dec_b = 0;

  struct Shape {
    std::string name;
    Eigen::Index rows, cols;
    enum class Init { kUniform, kOnes, kZeros } init;
    Eigen::Index fan_in;
  };
  std::vector<Shape> shapes;

  explicit ParamLayout(const ModelConfig& c) {
    using I = Shape::Init;
    const Eigen::Index H = c.hidden, D = c.input_dim, F = c.hidden * ModelConfig::kFfnMultiplier;
    auto add = [this](std::string name, Eigen::Index r, Eigen::Index cols, I init, Eigen::Index fan) {
      shapes.push_back({std::move(name), r, cols, init, fan});
      return shapes.size() - 1;
    };
    auto linear = [&](const std::string& name, Eigen::Index in, Eigen::Index out, std::size_t& w,
                      std::size_t& b) {
      w = add(name + ".w", in, out, I::kUniform, in);
      b = add(name + ".b", 1, out, I::kUniform, in);
    };
    auto norm = [&](const std::string& name, std::size_t& g, std::size_t& b) {
      g = add(name + ".gain", 1, H, I::kOnes, H);
      b = add(name + ".bias", 1, H, I::kZeros, H);
    };
    auto ffn = [&](const std::string& name, Ffn& f) {
      norm(name + ".ln", f.ln_g, f.ln_b);
      linear(name + ".up", H, F, f.w1, f.b1);
      linear(name + ".down", F, H, f.w2, f.b2);
    };
    if (c.has_fusion()) fusion = add("fusion.logits", 1, c.layers, I::kZeros, c.layers);
    linear("input", D, H, in_w, in_b);
    blocks.resize(static_cast<std::size_t>(c.blocks));
    for (std::size_t j = 0; j < blocks.size(); ++j) {
      Block& b = blocks[j];
      const std::string p = "block" + std::to_string(j);
      ffn(p + ".ff1", b.ff1);
      norm(p + ".att.ln", b.att_ln_g, b.att_ln_b);
      linear(p + ".att.q", H, H, b.wq, b.bq);
      linear(p + ".att.k", H, H, b.wk, b.bk);
      linear(p + ".att.v", H, H, b.wv, b.bv);
      linear(p + ".att.out", H, H, b.wo, b.bo);
      norm(p + ".conv.ln", b.conv_ln_g, b.conv_ln_b);
      linear(p + ".conv.pw1", H, 2 * H, b.pw1_w, b.pw1_b);
      b.dw_w = add(p + ".conv.dw.w", c.kernel, H, I::kUniform, c.kernel);
      b.dw_b = add(p + ".conv.dw.b", 1, H, I::kUniform, c.kernel);
      linear(p + ".conv.pw2", H, H, b.pw2_w, b.pw2_b);
      ffn(p + ".ff2", b.ff2);
      norm(p + ".out.ln", b.out_ln_g, b.out_ln_b);
    }
    linear("decision", H, 1, dec_w, dec_b);
  }
};

template <typename T>
struct ModelState {
  ModelConfig config;
  std::vector<Matrix<T>> params;

  template <typename U>
  ModelState<U> cast() const {
    ModelState<U> out;
    out.config = config;
    for (const auto& p : params) out.params.push_back(p.template cast<U>());
    return out;
  }
  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params) n += static_cast<std::size_t>(p.size());
    return n;
  }
  const Matrix<T>* fusion_logits() const {
    const ParamLayout layout(config);
    return layout.fusion == ParamLayout::kNone ? nullptr : &params[layout.fusion];
  }
  bool operator==(const ModelState& o) const {
    if (!(config == o.config) || params.size() != o.params.size()) return false;
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (params[i].rows() != o.params[i].rows() || params[i].cols() != o.params[i].cols() ||
          params[i] != o.params[i]) {
        return false;
      }
    }
    return true;
  }
};

// Weights and biases ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)); norms start at identity,
// fusion logits at zero.
template <typename T = float>
ModelState<T> init_model(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  const ParamLayout layout(config);
  Rng rng(seed);
  ModelState<T> state;
  state.config = config;
  for (const auto& s : layout.shapes) {
    Matrix<T> m(s.rows, s.cols);
    switch (s.init) {
      case ParamLayout::Shape::Init::kOnes:
        m.setOnes();
        break;
      case ParamLayout::Shape::Init::kZeros:
        m.setZero();
        break;
      case ParamLayout::Shape::Init::kUniform: {
        const double bound = 1.0 / std::sqrt(static_cast<double>(s.fan_in));
        for (Eigen::Index i = 0; i < m.size(); ++i) {
          m.data()[i] = static_cast<T>(uniform_real(rng, -bound, bound));
        }
        break;
      }
    }
    state.params.push_back(std::move(m));
  }
  return state;
}

template <typename T>
Matrix<T> sinusoidal_positions(Eigen::Index frames, Eigen::Index width) {
  Matrix<T> pe(frames, width);
  for (Eigen::Index t = 0; t < frames; ++t) {
    for (Eigen::Index c = 0; c < width; ++c) {
      const double freq = std::pow(10000.0, -static_cast<double>(c - c % 2) / static_cast<double>(width));
      const double a = static_cast<double>(t) * freq;
      pe(t, c) = static_cast<T>(c % 2 == 0 ? std::sin(a) : std::cos(a));
    }
  }
  return pe;
}

// Tape handles produced by one forward pass.
struct ForwardVars {
  Var fused;                // T x D
  std::vector<Var> hidden;  // N handles, T x H each (post block layer norm)
  Var prediction;           // T x 1, inside (0, 1)
};

// softmax(logits) weighted sum of the stack layers; returns the single layer when L = 1.
template <typename T>
Var fuse(Tape<T>& tape, std::span<const Var> layers, Var logits) {
  if (layers.empty()) throw ShapeError("fuse: no layers");
  if (layers.size() == 1) return layers[0];
  const Var w = ops::softmax_rows(tape, logits);
  return ops::weighted_sum(tape, layers, w);
}

namespace detail {

template <typename T>
Var linear(Tape<T>& tape, Var x, Var w, Var b) {
  return ops::add_row(tape, ops::matmul(tape, x, w), b);
}

template <typename T>
Var feed_forward(Tape<T>& tape, Var x, const std::vector<Var>& p, const ParamLayout::Ffn& f) {
  Var h = ops::layer_norm(tape, x, p[f.ln_g], p[f.ln_b]);
  h = ops::swish(tape, linear(tape, h, p[f.w1], p[f.b1]));
  h = linear(tape, h, p[f.w2], p[f.b2]);
  return ops::add(tape, x, ops::scale(tape, h, T(0.5)));
}

}  // namespace detail

// `params` are tape handles for ModelState::params in declaration order;
// `layers` are the L input feature matrices (T x D each).
template <typename T>
ForwardVars forward(Tape<T>& tape, const ModelConfig& config, const std::vector<Var>& params,
                    std::span<const Var> layers) {
  const ParamLayout layout(config);
  if (params.size() != layout.shapes.size()) {
    throw ShapeError("forward: expected " + std::to_string(layout.shapes.size()) +
                     " parameters, got " + std::to_string(params.size()));
  }
  if (static_cast<std::int64_t>(layers.size()) != config.layers) {
    throw ShapeError("forward: model expects " + std::to_string(config.layers) +
                     " feature layers, got " + std::to_string(layers.size()));
  }
  const auto& first = tape.value(layers[0]);
  if (first.cols() != config.input_dim) {
    throw ShapeError("forward: feature dim " + std::to_string(first.cols()) +
                     " does not match model input dim " + std::to_string(config.input_dim));
  }
  const auto& p = params;
  ForwardVars out;
  out.fused = config.has_fusion() ? fuse(tape, layers, p[layout.fusion]) : layers[0];
  const Eigen::Index frames = tape.value(out.fused).rows();

  Var x = detail::linear(tape, out.fused, p[layout.in_w], p[layout.in_b]);
  // Scaled by sqrt(H) so the positional code does not drown the projected features.
  x = ops::scale(tape, x, static_cast<T>(std::sqrt(static_cast<double>(config.hidden))));
  x = ops::add(tape, x, tape.constant(sinusoidal_positions<T>(frames, config.hidden)));

  const Eigen::Index H = config.hidden;
  for (std::size_t j = 0; j < layout.blocks.size(); ++j) {
    const auto& b = layout.blocks[j];
    x = detail::feed_forward(tape, x, p, b.ff1);

    Var a = ops::layer_norm(tape, x, p[b.att_ln_g], p[b.att_ln_b]);
    Var q = detail::linear(tape, a, p[b.wq], p[b.bq]);
    Var k = detail::linear(tape, a, p[b.wk], p[b.bk]);
    Var v = detail::linear(tape, a, p[b.wv], p[b.bv]);
    a = ops::attention(tape, q, k, v, static_cast<int>(config.heads));
    x = ops::add(tape, x, detail::linear(tape, a, p[b.wo], p[b.bo]));

    Var c = ops::layer_norm(tape, x, p[b.conv_ln_g], p[b.conv_ln_b]);
    c = detail::linear(tape, c, p[b.pw1_w], p[b.pw1_b]);
    c = ops::mul(tape, ops::slice_cols(tape, c, 0, H),
                 ops::sigmoid(tape, ops::slice_cols(tape, c, H, H)));
    c = ops::swish(tape, ops::depthwise_conv1d(tape, c, p[b.dw_w], p[b.dw_b]));
    c = detail::linear(tape, c, p[b.pw2_w], p[b.pw2_b]);
    x = ops::add(tape, x, c);

    x = detail::feed_forward(tape, x, p, b.ff2);
    x = ops::layer_norm(tape, x, p[b.out_ln_g], p[b.out_ln_b]);
    if (!all_finite(tape.value(x))) {
      throw NumericError("non-finite activations after block " + std::to_string(j));
    }
    out.hidden.push_back(x);
  }
  out.prediction = ops::sigmoid(tape, detail::linear(tape, x, p[layout.dec_w], p[layout.dec_b]));
  return out;
}

// Values of one forward pass.
template <typename T>
struct ForwardCache {
  std::vector<Matrix<T>> hidden;
  std::vector<double> prediction;
};

template <typename T>
std::vector<Var> bind_parameters(Tape<T>& tape, const ModelState<T>& state, bool trainable) {
  std::vector<Var> vars;
  vars.reserve(state.params.size());
  for (const auto& m : state.params) vars.push_back(trainable ? tape.parameter(m) : tape.constant(m));
  return vars;
}

template <typename T>
std::vector<Var> bind_layers(Tape<T>& tape, const LayerStack& stack) {
  std::vector<Var> vars;
  vars.reserve(stack.layers.size());
  for (const auto& l : stack.layers) vars.push_back(tape.constant(l.template cast<T>()));
  return vars;
}

// Inference-only forward pass.
template <typename T>
ForwardCache<T> run_model(const ModelState<T>& state, const LayerStack& stack) {
  stack.validate();
  Tape<T> tape;
  const auto params = bind_parameters(tape, state, false);
  const auto layers = bind_layers(tape, stack);
  const ForwardVars fv = forward(tape, state.config, params, std::span<const Var>(layers));
  ForwardCache<T> cache;
  for (Var h : fv.hidden) cache.hidden.push_back(tape.value(h));
  const auto& pred = tape.value(fv.prediction);
  cache.prediction.assign(pred.data(), pred.data() + pred.size());
  return cache;
}

// Value-level fusion of a stack with the given logits (length L).
template <typename T>
Matrix<T> fuse_stack(const LayerStack& stack, const Matrix<T>& logits) {
  stack.validate();
  if (logits.size() != static_cast<Eigen::Index>(stack.num_layers())) {
    throw ShapeError("fuse: " + std::to_string(logits.size()) + " logits for " +
                     std::to_string(stack.num_layers()) + " layers");
  }
  Tape<T> tape;
  const auto layers = bind_layers(tape, stack);
  const Matrix<T> row = Eigen::Map<const Matrix<T>>(logits.data(), 1, logits.size());
  return tape.value(fuse(tape, std::span<const Var>(layers), tape.constant(row)));
}

// softmax of the fusion logits; {1} when the model has no fusion head.
template <typename T>
std::vector<double> fusion_weights(const ModelState<T>& state) {
  const Matrix<T>* logits = state.fusion_logits();
  if (logits == nullptr) return {1.0};
  const auto l = logits->template cast<double>();
  const double m = l.maxCoeff();
  Eigen::Matrix<double, 1, Eigen::Dynamic> e = (l.array() - m).exp().matrix();
  e /= e.sum();
  return std::vector<double>(e.data(), e.data() + e.size());
}

}  // namespace scdnet
