#pragma once

#include <array>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "cgp/autodiff.hpp"
#include "cgp/data.hpp"
#include "cgp/rng.hpp"

// The recurrent feature extractor: three LSTM layers with skip connections.
// Layers above the first receive the raw input concatenated with the previous
// layer's output, and the feature vector presented to the heads is the
// concatenation of all three layer outputs. The coordinate head emits
// K*M*6 raw mixture parameters, the class head K raw logits; both are plain
// affine maps.
namespace cgp {

struct NetConfig {
  int num_classes = 10;  // K
  int components = 4;    // M, per class
  int hidden = 128;      // H, per LSTM layer
  int input_dim = 2;

  int coord_width() const { return num_classes * components * 6; }
  int feature_width() const { return 3 * hidden; }
};

// Raw coordinate-head layout, per class block of 6*M values:
//   [pi_raw x M][mu1 x M][mu2 x M][sigma1_raw x M][sigma2_raw x M][rho_raw x M]
enum GmmField { kPi = 0, kMu1 = 1, kMu2 = 2, kSigma1 = 3, kSigma2 = 4, kRho = 5 };

inline std::size_t gmm_offset(int components, int cls, GmmField field) {
  return static_cast<std::size_t>(cls) * 6 * components +
         static_cast<std::size_t>(field) * components;
}

// Gate blocks within the 4H gate vector: input, forget, cell, output.
enum GateBlock { kGateIn = 0, kGateForget = 1, kGateCell = 2, kGateOut = 3 };

struct LstmLayer {
  ad::Parameter w_ih;  // in_dim x 4H
  ad::Parameter w_hh;  // H x 4H
  ad::Parameter b;     // 1 x 4H
  int in_dim = 0;
  int hidden = 0;
};

struct LstmStack {
  std::array<LstmLayer, 3> layers;
  int hidden = 0;
  int input_dim = 0;
};

struct CgpModel {
  NetConfig cfg;
  LstmStack stack;
  ad::Parameter coord_w, coord_b;  // 3H x K*M*6, 1 x K*M*6
  ad::Parameter class_w, class_b;  // 3H x K, 1 x K

  std::vector<ad::Parameter> parameters() const {
    std::vector<ad::Parameter> out;
    for (const auto& l : stack.layers) {
      out.push_back(l.w_ih);
      out.push_back(l.w_hh);
      out.push_back(l.b);
    }
    out.push_back(coord_w);
    out.push_back(coord_b);
    out.push_back(class_w);
    out.push_back(class_b);
    return out;
  }
};

// ---------------------------------------------------------------------------
// initialization
// ---------------------------------------------------------------------------

namespace detail {

inline Tensor uniform_tensor(std::size_t rows, std::size_t cols, Rng& rng, double bound = 0.1) {
  Tensor t(rows, cols);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(-bound, bound);
  return t;
}

inline ad::Parameter make_param(const std::string& name, Tensor value) {
  return {name, ad::leaf(std::move(value))};
}

}  // namespace detail

// Weights uniform in [-0.1, 0.1]; forget-gate biases set to 1.0 afterwards.
inline LstmStack init_lstm_stack(int hidden, int input_dim, Rng& rng) {
  if (hidden < 1) throw std::invalid_argument("init_lstm_stack: hidden must be >= 1");
  LstmStack stack;
  stack.hidden = hidden;
  stack.input_dim = input_dim;
  for (int l = 0; l < 3; ++l) {
    LstmLayer& layer = stack.layers[l];
    layer.hidden = hidden;
    layer.in_dim = l == 0 ? input_dim : input_dim + hidden;
    const std::string prefix = "lstm." + std::to_string(l) + ".";
    layer.w_ih = detail::make_param(prefix + "w_ih",
                                    detail::uniform_tensor(layer.in_dim, 4 * hidden, rng));
    layer.w_hh =
        detail::make_param(prefix + "w_hh", detail::uniform_tensor(hidden, 4 * hidden, rng));
    Tensor bias = detail::uniform_tensor(1, 4 * hidden, rng);
    for (int j = 0; j < hidden; ++j) bias[kGateForget * hidden + j] = 1.0;
    layer.b = detail::make_param(prefix + "b", std::move(bias));
  }
  return stack;
}

inline CgpModel init_model(const NetConfig& cfg, std::uint64_t seed) {
  if (cfg.num_classes < 2 || cfg.components < 1 || cfg.hidden < 1 || cfg.input_dim < 1)
    throw std::invalid_argument("init_model: invalid dimensions (K=" +
                                std::to_string(cfg.num_classes) + ", M=" +
                                std::to_string(cfg.components) + ", H=" +
                                std::to_string(cfg.hidden) + ")");
  Rng rng(seed);
  CgpModel m;
  m.cfg = cfg;
  m.stack = init_lstm_stack(cfg.hidden, cfg.input_dim, rng);
  const int f = cfg.feature_width();
  m.coord_w = detail::make_param("coord_head.w", detail::uniform_tensor(f, cfg.coord_width(), rng));
  m.coord_b = detail::make_param("coord_head.b", detail::uniform_tensor(1, cfg.coord_width(), rng));
  m.class_w = detail::make_param("class_head.w", detail::uniform_tensor(f, cfg.num_classes, rng));
  m.class_b = detail::make_param("class_head.b", detail::uniform_tensor(1, cfg.num_classes, rng));
  return m;
}

// Sum over all weights; cheap fingerprint for purity checks.
inline double weight_checksum(const std::vector<ad::Parameter>& params) {
  double s = 0.0;
  for (const auto& p : params)
    for (std::size_t i = 0; i < p.node->value.size(); ++i) s += p.node->value[i];
  return s;
}

// ---------------------------------------------------------------------------
// graph forward (training path)
// ---------------------------------------------------------------------------

struct GraphState {
  std::array<ad::NodePtr, 3> h, c;
};

inline GraphState initial_graph_state(const LstmStack& stack, std::size_t batch) {
  GraphState st;
  for (int l = 0; l < 3; ++l) {
    st.h[l] = ad::constant(Tensor(batch, stack.hidden));
    st.c[l] = ad::constant(Tensor(batch, stack.hidden));
  }
  return st;
}

// One step through the stack; x is the batch of current input deltas (B x 2).
// Returns the concatenated per-layer outputs (B x 3H) and advances the state.
inline ad::NodePtr stack_step(const LstmStack& stack, const ad::NodePtr& x, GraphState& state) {
  const int h = stack.hidden;
  std::vector<ad::NodePtr> outputs;
  ad::NodePtr below;  // previous layer's output
  for (int l = 0; l < 3; ++l) {
    const LstmLayer& layer = stack.layers[l];
    const ad::NodePtr input = l == 0 ? x : ad::concat({x, below});
    ad::NodePtr gates = ad::add(
        ad::add(ad::matmul(input, layer.w_ih.node), ad::matmul(state.h[l], layer.w_hh.node)),
        layer.b.node);
    const ad::NodePtr gi = ad::sigmoid(ad::slice(gates, kGateIn * h, h));
    const ad::NodePtr gf = ad::sigmoid(ad::slice(gates, kGateForget * h, h));
    const ad::NodePtr gg = ad::tanh(ad::slice(gates, kGateCell * h, h));
    const ad::NodePtr go = ad::sigmoid(ad::slice(gates, kGateOut * h, h));
    state.c[l] = ad::add(ad::mul(gf, state.c[l]), ad::mul(gi, gg));
    state.h[l] = ad::mul(go, ad::tanh(state.c[l]));
    below = state.h[l];
    outputs.push_back(below);
  }
  return ad::concat(outputs);
}

inline ad::NodePtr affine(const ad::NodePtr& x, const ad::Parameter& w, const ad::Parameter& b) {
  return ad::add(ad::matmul(x, w.node), b.node);
}

struct StepRaw {
  ad::NodePtr coord;  // B x K*M*6
  ad::NodePtr cls;    // B x K
};

// Feeds a batch of equal-length input sequences (steps x B x 2, passed as one
// constant per step) and returns the raw head outputs per step. States thread
// through time; weights are never mutated.
inline std::vector<StepRaw> forward_sequence(const CgpModel& model,
                                             const std::vector<ad::NodePtr>& inputs) {
  if (inputs.empty()) throw std::invalid_argument("forward_sequence: empty input sequence");
  GraphState state = initial_graph_state(model.stack, inputs[0]->value.rows());
  std::vector<StepRaw> out;
  out.reserve(inputs.size());
  for (const auto& x : inputs) {
    const ad::NodePtr features = stack_step(model.stack, x, state);
    out.push_back({affine(features, model.coord_w, model.coord_b),
                   affine(features, model.class_w, model.class_b)});
  }
  return out;
}

// ---------------------------------------------------------------------------
// value forward (sampling / evaluation path)
//
// Same recurrence on plain doubles, bypassing graph construction. Kept in
// exact agreement with the graph path by test.
// ---------------------------------------------------------------------------

struct ValueState {
  std::array<std::vector<double>, 3> h, c;
};

inline ValueState initial_value_state(const LstmStack& stack) {
  ValueState st;
  for (int l = 0; l < 3; ++l) {
    st.h[l].assign(stack.hidden, 0.0);
    st.c[l].assign(stack.hidden, 0.0);
  }
  return st;
}

inline std::vector<double> stack_step_value(const LstmStack& stack, const Point& x,
                                            ValueState& state) {
  const int h = stack.hidden;
  std::vector<double> features;
  features.reserve(3 * h);
  std::vector<double> input;
  std::vector<double> gates;
  for (int l = 0; l < 3; ++l) {
    const LstmLayer& layer = stack.layers[l];
    input.assign(x.begin(), x.end());
    if (l > 0) {
      const std::vector<double>& below = state.h[l - 1];
      input.insert(input.end(), below.begin(), below.end());
    }
    const Tensor& w_ih = layer.w_ih.node->value;
    const Tensor& w_hh = layer.w_hh.node->value;
    const Tensor& b = layer.b.node->value;
    gates.assign(4 * static_cast<std::size_t>(h), 0.0);
    for (std::size_t k = 0; k < input.size(); ++k) {
      const double xv = input[k];
      const double* row = w_ih.data() + k * w_ih.cols();
      for (int j = 0; j < 4 * h; ++j) gates[j] += xv * row[j];
    }
    for (int k = 0; k < h; ++k) {
      const double hv = state.h[l][k];
      const double* row = w_hh.data() + static_cast<std::size_t>(k) * w_hh.cols();
      for (int j = 0; j < 4 * h; ++j) gates[j] += hv * row[j];
    }
    for (int j = 0; j < 4 * h; ++j) gates[j] += b[j];
    for (int j = 0; j < h; ++j) {
      const double gi = ad::sigmoid_scalar(gates[kGateIn * h + j]);
      const double gf = ad::sigmoid_scalar(gates[kGateForget * h + j]);
      const double gg = std::tanh(gates[kGateCell * h + j]);
      const double go = ad::sigmoid_scalar(gates[kGateOut * h + j]);
      state.c[l][j] = gf * state.c[l][j] + gi * gg;
      state.h[l][j] = go * std::tanh(state.c[l][j]);
    }
    features.insert(features.end(), state.h[l].begin(), state.h[l].end());
  }
  return features;
}

inline std::vector<double> affine_value(const std::vector<double>& x, const ad::Parameter& w,
                                        const ad::Parameter& b) {
  const Tensor& W = w.node->value;
  const Tensor& B = b.node->value;
  std::vector<double> out(B.vec());
  for (std::size_t k = 0; k < x.size(); ++k) {
    const double xv = x[k];
    const double* row = W.data() + k * W.cols();
    for (std::size_t j = 0; j < W.cols(); ++j) out[j] += xv * row[j];
  }
  return out;
}

// Model inputs for a sequence observed through `t` absolute points: a zero
// delta first (no prior motion), then the first t-1 observed deltas. Heads
// after input s parameterize the distribution of delta s+1.
inline std::vector<Point> model_inputs(const RelativeSequence& rel, std::size_t prefix_points) {
  if (prefix_points < 1 || prefix_points > rel.deltas.size() + 1)
    throw std::invalid_argument("model_inputs: prefix of " + std::to_string(prefix_points) +
                                " points out of range");
  std::vector<Point> inputs;
  inputs.reserve(prefix_points);
  inputs.push_back({0.0, 0.0});
  for (std::size_t i = 0; i + 1 < prefix_points; ++i) inputs.push_back(rel.deltas[i]);
  return inputs;
}

}  // namespace cgp
