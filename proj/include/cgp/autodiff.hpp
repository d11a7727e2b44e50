#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "cgp/rng.hpp"
#include "cgp/tensor.hpp"

// Reverse-mode automatic differentiation over dense double matrices.
// Graphs are built define-by-run and discarded after use; backward() walks the
// recorded graph once and accumulates d(root)/d(node) into every reachable
// node. All math is in 64-bit precision with a fixed summation order, so
// repeated forward passes over identical inputs are bit-identical.
namespace cgp::ad {

struct Node;
using NodePtr = std::shared_ptr<Node>;

struct Node {
  Tensor value;
  Tensor grad;  // same shape as value once backward() has run
  std::vector<NodePtr> parents;
  std::function<void(Node&)> backprop;  // accumulates this->grad into parents
  const char* op = "leaf";
};

inline NodePtr leaf(Tensor value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  return n;
}

inline NodePtr constant(Tensor value) { return leaf(std::move(value)); }

inline NodePtr make_node(Tensor value, std::vector<NodePtr> parents, const char* op,
                         std::function<void(Node&)> backprop) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->parents = std::move(parents);
  n->backprop = std::move(backprop);
  n->op = op;
  return n;
}

// A leaf flagged trainable. Names must be unique within a model; they key the
// checkpoint arrays and the gradient-check report.
struct Parameter {
  std::string name;
  NodePtr node;
};

[[noreturn]] inline void shape_error(const char* op, const Tensor& a, const Tensor& b) {
  throw std::invalid_argument(std::string(op) + ": shape mismatch " + a.shape_str() + " vs " +
                              b.shape_str());
}

// ---------------------------------------------------------------------------
// ops
// ---------------------------------------------------------------------------

inline NodePtr matmul(const NodePtr& a, const NodePtr& b) {
  const Tensor& A = a->value;
  const Tensor& B = b->value;
  if (A.cols() != B.rows()) shape_error("matmul", A, B);
  Tensor C(A.rows(), B.cols());
  const std::size_t m = A.rows(), k = A.cols(), n = B.cols();
  for (std::size_t i = 0; i < m; ++i) {
    double* ci = C.data() + i * n;
    const double* ai = A.data() + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = ai[p];
      const double* bp = B.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += aip * bp[j];
    }
  }
  return make_node(std::move(C), {a, b}, "matmul", [a, b](Node& self) {
    const Tensor& G = self.grad;
    const Tensor& A = a->value;
    const Tensor& B = b->value;
    const std::size_t m = A.rows(), k = A.cols(), n = B.cols();
    // dA += G * B^T
    for (std::size_t i = 0; i < m; ++i) {
      const double* gi = G.data() + i * n;
      double* dai = a->grad.data() + i * k;
      for (std::size_t p = 0; p < k; ++p) {
        const double* bp = B.data() + p * n;
        double acc = 0.0;
        for (std::size_t j = 0; j < n; ++j) acc += gi[j] * bp[j];
        dai[p] += acc;
      }
    }
    // dB += A^T * G
    for (std::size_t p = 0; p < k; ++p) {
      double* dbp = b->grad.data() + p * n;
      for (std::size_t i = 0; i < m; ++i) {
        const double aip = A(i, p);
        const double* gi = G.data() + i * n;
        for (std::size_t j = 0; j < n; ++j) dbp[j] += aip * gi[j];
      }
    }
  });
}

// add: same shape, or b a 1xN row vector broadcast over the rows of a.
inline NodePtr add(const NodePtr& a, const NodePtr& b) {
  const Tensor& A = a->value;
  const Tensor& B = b->value;
  const bool row_broadcast = B.rows() == 1 && A.cols() == B.cols() && A.rows() != 1;
  if (!A.same_shape(B) && !row_broadcast) shape_error("add", A, B);
  Tensor C(A.rows(), A.cols());
  if (row_broadcast) {
    for (std::size_t i = 0; i < A.rows(); ++i)
      for (std::size_t j = 0; j < A.cols(); ++j) C(i, j) = A(i, j) + B(0, j);
  } else {
    for (std::size_t i = 0; i < A.size(); ++i) C[i] = A[i] + B[i];
  }
  return make_node(std::move(C), {a, b}, "add", [a, b, row_broadcast](Node& self) {
    const Tensor& G = self.grad;
    for (std::size_t i = 0; i < G.size(); ++i) a->grad[i] += G[i];
    if (row_broadcast) {
      for (std::size_t i = 0; i < G.rows(); ++i)
        for (std::size_t j = 0; j < G.cols(); ++j) b->grad(0, j) += G(i, j);
    } else {
      for (std::size_t i = 0; i < G.size(); ++i) b->grad[i] += G[i];
    }
  });
}

inline NodePtr sub(const NodePtr& a, const NodePtr& b) {
  const Tensor& A = a->value;
  const Tensor& B = b->value;
  if (!A.same_shape(B)) shape_error("sub", A, B);
  Tensor C(A.rows(), A.cols());
  for (std::size_t i = 0; i < A.size(); ++i) C[i] = A[i] - B[i];
  return make_node(std::move(C), {a, b}, "sub", [a, b](Node& self) {
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      a->grad[i] += self.grad[i];
      b->grad[i] -= self.grad[i];
    }
  });
}

inline NodePtr mul(const NodePtr& a, const NodePtr& b) {
  const Tensor& A = a->value;
  const Tensor& B = b->value;
  if (!A.same_shape(B)) shape_error("mul", A, B);
  Tensor C(A.rows(), A.cols());
  for (std::size_t i = 0; i < A.size(); ++i) C[i] = A[i] * B[i];
  return make_node(std::move(C), {a, b}, "mul", [a, b](Node& self) {
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      a->grad[i] += self.grad[i] * b->value[i];
      b->grad[i] += self.grad[i] * a->value[i];
    }
  });
}

inline NodePtr div(const NodePtr& a, const NodePtr& b) {
  const Tensor& A = a->value;
  const Tensor& B = b->value;
  if (!A.same_shape(B)) shape_error("div", A, B);
  Tensor C(A.rows(), A.cols());
  for (std::size_t i = 0; i < A.size(); ++i) C[i] = A[i] / B[i];
  return make_node(std::move(C), {a, b}, "div", [a, b](Node& self) {
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      const double inv = 1.0 / b->value[i];
      a->grad[i] += self.grad[i] * inv;
      b->grad[i] -= self.grad[i] * a->value[i] * inv * inv;
    }
  });
}

inline NodePtr scale(const NodePtr& a, double s) {
  Tensor C(a->value.rows(), a->value.cols());
  for (std::size_t i = 0; i < C.size(); ++i) C[i] = a->value[i] * s;
  return make_node(std::move(C), {a}, "scale", [a, s](Node& self) {
    for (std::size_t i = 0; i < self.grad.size(); ++i) a->grad[i] += self.grad[i] * s;
  });
}

inline NodePtr add_scalar(const NodePtr& a, double s) {
  Tensor C(a->value.rows(), a->value.cols());
  for (std::size_t i = 0; i < C.size(); ++i) C[i] = a->value[i] + s;
  return make_node(std::move(C), {a}, "add_scalar", [a](Node& self) {
    for (std::size_t i = 0; i < self.grad.size(); ++i) a->grad[i] += self.grad[i];
  });
}

inline NodePtr tanh(const NodePtr& a) {
  Tensor C(a->value.rows(), a->value.cols());
  for (std::size_t i = 0; i < C.size(); ++i) C[i] = std::tanh(a->value[i]);
  return make_node(std::move(C), {a}, "tanh", [a](Node& self) {
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      const double y = self.value[i];
      a->grad[i] += self.grad[i] * (1.0 - y * y);
    }
  });
}

inline double sigmoid_scalar(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline NodePtr sigmoid(const NodePtr& a) {
  Tensor C(a->value.rows(), a->value.cols());
  for (std::size_t i = 0; i < C.size(); ++i) C[i] = sigmoid_scalar(a->value[i]);
  return make_node(std::move(C), {a}, "sigmoid", [a](Node& self) {
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      const double y = self.value[i];
      a->grad[i] += self.grad[i] * y * (1.0 - y);
    }
  });
}

inline NodePtr exp(const NodePtr& a) {
  Tensor C(a->value.rows(), a->value.cols());
  for (std::size_t i = 0; i < C.size(); ++i) C[i] = std::exp(a->value[i]);
  return make_node(std::move(C), {a}, "exp", [a](Node& self) {
    for (std::size_t i = 0; i < self.grad.size(); ++i)
      a->grad[i] += self.grad[i] * self.value[i];
  });
}

inline NodePtr log(const NodePtr& a) {
  Tensor C(a->value.rows(), a->value.cols());
  for (std::size_t i = 0; i < C.size(); ++i) C[i] = std::log(a->value[i]);
  return make_node(std::move(C), {a}, "log", [a](Node& self) {
    for (std::size_t i = 0; i < self.grad.size(); ++i)
      a->grad[i] += self.grad[i] / a->value[i];
  });
}

// Gradient passes through inside [lo, hi] (boundary inclusive), zero outside.
inline NodePtr clamp(const NodePtr& a, double lo, double hi) {
  Tensor C(a->value.rows(), a->value.cols());
  for (std::size_t i = 0; i < C.size(); ++i) C[i] = std::min(hi, std::max(lo, a->value[i]));
  return make_node(std::move(C), {a}, "clamp", [a, lo, hi](Node& self) {
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      const double x = a->value[i];
      if (x >= lo && x <= hi) a->grad[i] += self.grad[i];
    }
  });
}

// softmax over the last axis (per row), max-subtracted.
inline NodePtr softmax(const NodePtr& a) {
  const Tensor& A = a->value;
  Tensor C(A.rows(), A.cols());
  for (std::size_t i = 0; i < A.rows(); ++i) {
    double mx = A(i, 0);
    for (std::size_t j = 1; j < A.cols(); ++j) mx = std::max(mx, A(i, j));
    double sum = 0.0;
    for (std::size_t j = 0; j < A.cols(); ++j) sum += (C(i, j) = std::exp(A(i, j) - mx));
    for (std::size_t j = 0; j < A.cols(); ++j) C(i, j) /= sum;
  }
  return make_node(std::move(C), {a}, "softmax", [a](Node& self) {
    const Tensor& Y = self.value;
    const Tensor& G = self.grad;
    for (std::size_t i = 0; i < Y.rows(); ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < Y.cols(); ++j) dot += G(i, j) * Y(i, j);
      for (std::size_t j = 0; j < Y.cols(); ++j)
        a->grad(i, j) += Y(i, j) * (G(i, j) - dot);
    }
  });
}

// log softmax over the last axis, with the fused gradient rule
// dx = g - softmax(x) * rowsum(g).
inline NodePtr log_softmax(const NodePtr& a) {
  const Tensor& A = a->value;
  Tensor C(A.rows(), A.cols());
  for (std::size_t i = 0; i < A.rows(); ++i) {
    double mx = A(i, 0);
    for (std::size_t j = 1; j < A.cols(); ++j) mx = std::max(mx, A(i, j));
    double sum = 0.0;
    for (std::size_t j = 0; j < A.cols(); ++j) sum += std::exp(A(i, j) - mx);
    const double lse = mx + std::log(sum);
    for (std::size_t j = 0; j < A.cols(); ++j) C(i, j) = A(i, j) - lse;
  }
  return make_node(std::move(C), {a}, "log_softmax", [a](Node& self) {
    const Tensor& Y = self.value;
    const Tensor& G = self.grad;
    for (std::size_t i = 0; i < Y.rows(); ++i) {
      double gsum = 0.0;
      for (std::size_t j = 0; j < Y.cols(); ++j) gsum += G(i, j);
      for (std::size_t j = 0; j < Y.cols(); ++j)
        a->grad(i, j) += G(i, j) - std::exp(Y(i, j)) * gsum;
    }
  });
}

// log(sum(exp(row))) per row -> Nx1; dx = g * softmax(x).
inline NodePtr logsumexp(const NodePtr& a) {
  const Tensor& A = a->value;
  Tensor C(A.rows(), 1);
  for (std::size_t i = 0; i < A.rows(); ++i) {
    double mx = A(i, 0);
    for (std::size_t j = 1; j < A.cols(); ++j) mx = std::max(mx, A(i, j));
    double sum = 0.0;
    for (std::size_t j = 0; j < A.cols(); ++j) sum += std::exp(A(i, j) - mx);
    C(i, 0) = mx + std::log(sum);
  }
  return make_node(std::move(C), {a}, "logsumexp", [a](Node& self) {
    const Tensor& A = a->value;
    for (std::size_t i = 0; i < A.rows(); ++i) {
      const double g = self.grad(i, 0);
      const double lse = self.value(i, 0);
      for (std::size_t j = 0; j < A.cols(); ++j)
        a->grad(i, j) += g * std::exp(A(i, j) - lse);
    }
  });
}

// concat along the last axis.
inline NodePtr concat(const std::vector<NodePtr>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat: no operands");
  const std::size_t rows = parts[0]->value.rows();
  std::size_t cols = 0;
  for (const auto& p : parts) {
    if (p->value.rows() != rows) shape_error("concat", parts[0]->value, p->value);
    cols += p->value.cols();
  }
  Tensor C(rows, cols);
  std::size_t off = 0;
  for (const auto& p : parts) {
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < p->value.cols(); ++j) C(i, off + j) = p->value(i, j);
    off += p->value.cols();
  }
  return make_node(std::move(C), parts, "concat", [parts](Node& self) {
    std::size_t off = 0;
    for (const auto& p : parts) {
      for (std::size_t i = 0; i < p->grad.rows(); ++i)
        for (std::size_t j = 0; j < p->grad.cols(); ++j)
          p->grad(i, j) += self.grad(i, off + j);
      off += p->value.cols();
    }
  });
}

// slice of [begin, begin+width) columns.
inline NodePtr slice(const NodePtr& a, std::size_t begin, std::size_t width) {
  const Tensor& A = a->value;
  if (begin + width > A.cols())
    throw std::invalid_argument("slice: [" + std::to_string(begin) + ", " +
                                std::to_string(begin + width) + ") out of range for " +
                                A.shape_str());
  Tensor C(A.rows(), width);
  for (std::size_t i = 0; i < A.rows(); ++i)
    for (std::size_t j = 0; j < width; ++j) C(i, j) = A(i, begin + j);
  return make_node(std::move(C), {a}, "slice", [a, begin, width](Node& self) {
    for (std::size_t i = 0; i < self.grad.rows(); ++i)
      for (std::size_t j = 0; j < width; ++j) a->grad(i, begin + j) += self.grad(i, j);
  });
}

// sum of all elements -> 1x1.
inline NodePtr sum(const NodePtr& a) {
  double s = 0.0;
  for (std::size_t i = 0; i < a->value.size(); ++i) s += a->value[i];
  return make_node(Tensor::scalar(s), {a}, "sum", [a](Node& self) {
    const double g = self.grad[0];
    for (std::size_t i = 0; i < a->grad.size(); ++i) a->grad[i] += g;
  });
}

// ---------------------------------------------------------------------------
// backward
// ---------------------------------------------------------------------------

// Post-order over the DAG (every parent before its consumers), iterative to
// keep deep recurrent graphs off the call stack.
inline std::vector<Node*> topo_order(const NodePtr& root) {
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(root.get(), 0);
  seen.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next++].get();
      if (seen.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  return order;
}

// Accumulates d(root)/d(node) into node.grad for every node reachable from
// root. Nodes feeding several consumers receive the sum over paths. Grads are
// zeroed at entry, so each call reports exactly this root's gradient.
inline void backward(const NodePtr& root) {
  if (root->value.size() != 1)
    throw std::invalid_argument("backward: root must be scalar, got " + root->value.shape_str());
  std::vector<Node*> order = topo_order(root);
  for (Node* n : order) {
    n->grad = Tensor(n->value.rows(), n->value.cols());
  }
  root->grad[0] = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backprop) n->backprop(*n);
  }
}

// ---------------------------------------------------------------------------
// gradient check
// ---------------------------------------------------------------------------

struct GradCheckEntry {
  std::string param;
  std::size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_err = 0.0;
};

struct GradCheckReport {
  double max_rel_err = 0.0;
  bool pass = false;
  std::size_t checked = 0;
  GradCheckEntry worst;
};

// Compares analytic gradients against central finite differences on a random
// subsample of coordinates (at least `per_param` per named parameter, or all
// of them when the parameter is smaller). The relative error denominator is
// floored to keep finite-difference cancellation noise on near-zero
// coordinates from registering as disagreement.
template <class LossFn>
GradCheckReport gradient_check(const std::vector<Parameter>& params, LossFn&& make_loss,
                               double step, double tol, Rng& rng, std::size_t per_param = 32) {
  constexpr double kDenomFloor = 1e-4;

  NodePtr root = make_loss();
  if (!std::isfinite(root->value.item()))
    throw std::runtime_error("gradient_check: loss is not finite");
  backward(root);
  std::vector<Tensor> analytic;
  analytic.reserve(params.size());
  for (const auto& p : params) analytic.push_back(p.node->grad);
  root.reset();

  GradCheckReport report;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    const Parameter& p = params[pi];
    std::vector<std::size_t> idx(p.node->value.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    if (idx.size() > per_param) {
      rng.shuffle(idx);
      idx.resize(per_param);
    }
    for (std::size_t i : idx) {
      double& w = p.node->value[i];
      const double saved = w;
      w = saved + step;
      const double f_plus = make_loss()->value.item();
      w = saved - step;
      const double f_minus = make_loss()->value.item();
      w = saved;
      const double numeric = (f_plus - f_minus) / (2.0 * step);
      const double a = analytic[pi][i];
      const double denom = std::max({std::fabs(a), std::fabs(numeric), kDenomFloor});
      const double rel = std::fabs(a - numeric) / denom;
      ++report.checked;
      if (rel > report.max_rel_err) {
        report.max_rel_err = rel;
        report.worst = {p.name, i, a, numeric, rel};
      }
    }
  }
  report.pass = report.max_rel_err < tol;
  return report;
}

}  // namespace cgp::ad
