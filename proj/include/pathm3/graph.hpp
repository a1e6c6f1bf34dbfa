#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <limits>
#include <span>
#include <vector>

#include "pathm3/parameter.hpp"
#include "pathm3/tensor.hpp"

namespace pathm3 {

enum class OpTag : std::uint8_t {
  Constant,
  Input,
  Param,
  MatMul,
  MatMulNT,
  Transpose,
  Add,
  Sub,
  Mul,
  Scale,
  AddBias,
  IdentityMinus,
  DivScalar,
  MaxAbsColSum,
  MaxAbsRowSum,
  Softmax,
  CausalSoftmax,
  LayerNorm,
  Gelu,
  CrossEntropy,
  TokenCrossEntropy,
  Sum,
  Mean,
  MeanRows,
  SliceRows,
  SliceCols,
  ConcatRows,
  ConcatCols,
  Embedding,
  SegmentMean,
};

template <typename Real>
class Graph;

// Handle to a node of a Graph. Cheap to copy; valid while its graph lives.
template <typename Real>
struct Var {
  Graph<Real>* graph = nullptr;
  std::size_t id = std::numeric_limits<std::size_t>::max();

  bool valid() const { return graph != nullptr; }
  const Tensor<Real>& value() const { return graph->value(id); }
  const Shape& shape() const { return value().shape(); }
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
};

// Tape of executed operations (reverse-mode). Nodes are appended in
// execution order, so every node's inputs precede it. Single-threaded.
template <typename Real>
class Graph {
 public:
  // Receives the graph and the id of the node whose gradient is ready; adds
  // contributions into the gradients of that node's inputs.
  using BackwardFn = std::function<void(Graph&, std::size_t)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var<Real> constant(Tensor<Real> value);
  // Leaf that participates in differentiation iff value.requires_grad().
  Var<Real> input(Tensor<Real> value);
  // Leaf bound to a parameter; backward() accumulates into its grad.
  Var<Real> param(Parameter<Real>& p);

  Var<Real> record(OpTag tag, std::vector<std::size_t> inputs, Tensor<Real> value, BackwardFn backward);

  // Seeds d(root)/d(root) = 1 and propagates. Leaf gradients accumulate
  // across calls; intermediate gradients are recomputed each time.
  void backward(Var<Real> root);

  const Tensor<Real>& value(std::size_t id) const { return nodes_.at(id).value; }
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
  OpTag tag(std::size_t id) const { return nodes_.at(id).tag; }
  const std::vector<std::size_t>& inputs(std::size_t id) const { return nodes_.at(id).inputs; }
  std::size_t size() const { return nodes_.size(); }

  // Gradient buffer of a node, allocated on first use.
  std::vector<Real>& grad_buffer(std::size_t id);
  std::span<const Real> grad_of(std::size_t id) const { return nodes_.at(id).grad; }
  std::span<const Real> grad(Var<Real> v) const { return grad_of(v.id); }

  // True when gradient flow into `id` is needed.
  bool wants_grad(std::size_t id) const { return nodes_[id].requires_grad; }

 private:
  struct Node {
    OpTag tag;
    std::vector<std::size_t> inputs;
    Tensor<Real> value;
    std::vector<Real> grad;
    BackwardFn backward;
    Parameter<Real>* param = nullptr;
    bool requires_grad = false;
  };

  std::deque<Node> nodes_;  // stable addresses: callers hold value references across records
};

// ---- differentiable operations -------------------------------------------

template <typename Real>
Var<Real> matmul(Var<Real> a, Var<Real> b);
// a · bᵀ without materialising the transpose.
template <typename Real>
Var<Real> matmul_nt(Var<Real> a, Var<Real> b);
template <typename Real>
Var<Real> transpose(Var<Real> a);

template <typename Real>
Var<Real> add(Var<Real> a, Var<Real> b);
template <typename Real>
Var<Real> sub(Var<Real> a, Var<Real> b);
template <typename Real>
Var<Real> mul(Var<Real> a, Var<Real> b);
template <typename Real>
Var<Real> scale(Var<Real> a, Real factor);
// x[m×n] + b[n] broadcast over rows.
template <typename Real>
Var<Real> add_bias(Var<Real> x, Var<Real> bias);
// c·I − x for square x.
template <typename Real>
Var<Real> identity_minus(Var<Real> x, Real c);
// x / s for a scalar node s.
template <typename Real>
Var<Real> div_scalar(Var<Real> x, Var<Real> s);
// max_j Σ_i |x_ij| (induced 1-norm).
template <typename Real>
Var<Real> max_abs_col_sum(Var<Real> x);
// max_i Σ_j |x_ij| (induced ∞-norm).
template <typename Real>
Var<Real> max_abs_row_sum(Var<Real> x);

template <typename Real>
Var<Real> softmax_rows(Var<Real> x);
// Row t only sees columns ≤ t; masked entries are exactly zero.
template <typename Real>
Var<Real> causal_softmax_rows(Var<Real> x);
template <typename Real>
Var<Real> layer_norm(Var<Real> x, Var<Real> gamma, Var<Real> beta, Real eps = Real(1e-5));
template <typename Real>
Var<Real> gelu(Var<Real> x);

template <typename Real>
Var<Real> cross_entropy_from_logits(Var<Real> logits, int label);
// Mean cross-entropy of each logits row against its target id; rows whose
// target equals ignore_id do not contribute.
template <typename Real>
Var<Real> token_cross_entropy(Var<Real> logits, std::span<const int> targets, int ignore_id);

template <typename Real>
Var<Real> sum(Var<Real> x);
template <typename Real>
Var<Real> mean(Var<Real> x);
// Column means, [m×n] → [1×n].
template <typename Real>
Var<Real> mean_rows(Var<Real> x);

template <typename Real>
Var<Real> slice_rows(Var<Real> x, std::size_t begin, std::size_t count);
template <typename Real>
Var<Real> slice_cols(Var<Real> x, std::size_t begin, std::size_t count);
template <typename Real>
Var<Real> concat_rows(std::span<const Var<Real>> parts);
template <typename Real>
Var<Real> concat_cols(std::span<const Var<Real>> parts);

// Gathers rows of table[V×d] by id.
template <typename Real>
Var<Real> embedding(Var<Real> table, std::span<const int> ids);

// Half-open row ranges [first, second).
using SegmentBounds = std::vector<std::pair<std::size_t, std::size_t>>;
template <typename Real>
Var<Real> segment_mean_rows(Var<Real> x, const SegmentBounds& segments);

template <typename Real>
Var<Real> affine(Var<Real> x, Var<Real> w, Var<Real> b) {
  return add_bias(matmul(x, w), b);
}

}  // namespace pathm3
