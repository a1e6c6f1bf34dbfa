#include "pathm3/graph.hpp"

#include <algorithm>

namespace pathm3 {

template <typename Real>
Var<Real> Graph<Real>::constant(Tensor<Real> value) {
  if (!value.all_finite()) fail(ErrorKind::NonFinite, "constant contains NaN/Inf");
  value.set_requires_grad(false);
  nodes_.push_back(Node{OpTag::Constant, {}, std::move(value), {}, {}, nullptr, false});
  return Var<Real>{this, nodes_.size() - 1};
}

template <typename Real>
Var<Real> Graph<Real>::input(Tensor<Real> value) {
  if (!value.all_finite()) fail(ErrorKind::NonFinite, "input contains NaN/Inf");
  const bool rg = value.requires_grad();
  nodes_.push_back(Node{OpTag::Input, {}, std::move(value), {}, {}, nullptr, rg});
  return Var<Real>{this, nodes_.size() - 1};
}

template <typename Real>
Var<Real> Graph<Real>::param(Parameter<Real>& p) {
  if (!p.tensor.all_finite()) fail(ErrorKind::NonFinite, "parameter '" + p.name + "' contains NaN/Inf");
  nodes_.push_back(Node{OpTag::Param, {}, Tensor<Real>(p.tensor.shape(), p.tensor.storage()), {}, {}, &p, true});
  return Var<Real>{this, nodes_.size() - 1};
}

template <typename Real>
Var<Real> Graph<Real>::record(OpTag tag, std::vector<std::size_t> inputs, Tensor<Real> value, BackwardFn backward) {
  if (!value.all_finite()) {
    fail(ErrorKind::NonFinite, "operation " + std::to_string(static_cast<int>(tag)) + " produced NaN/Inf");
  }
  bool rg = false;
  for (std::size_t in : inputs) {
    if (in >= nodes_.size()) fail(ErrorKind::DetachedRoot, "operation input is not on this graph");
    rg = rg || nodes_[in].requires_grad;
  }
  value.set_requires_grad(rg);
  nodes_.push_back(Node{tag, std::move(inputs), std::move(value), {}, rg ? std::move(backward) : BackwardFn{}, nullptr, rg});
  return Var<Real>{this, nodes_.size() - 1};
}

template <typename Real>
std::vector<Real>& Graph<Real>::grad_buffer(std::size_t id) {
  Node& n = nodes_.at(id);
  if (n.grad.size() != n.value.size()) n.grad.assign(n.value.size(), Real(0));
  return n.grad;
}

template <typename Real>
void Graph<Real>::backward(Var<Real> root) {
  if (root.graph != this || root.id >= nodes_.size()) fail(ErrorKind::DetachedRoot, "root does not belong to this graph");
  Node& r = nodes_[root.id];
  if (r.value.size() != 1) fail(ErrorKind::NotScalar, "backward root has shape " + shape_string(r.value.shape()));
  if (!r.requires_grad) fail(ErrorKind::DetachedRoot, "root does not depend on any differentiable leaf");

  // Intermediate gradients restart from zero; leaf gradients accumulate.
  for (std::size_t i = 0; i <= root.id; ++i) {
    Node& n = nodes_[i];
    const bool leaf = n.tag == OpTag::Input || n.tag == OpTag::Param;
    if (!leaf || n.tag == OpTag::Param) n.grad.clear();
  }
  grad_buffer(root.id)[0] = Real(1);

  for (std::size_t i = root.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || n.grad.empty()) continue;
    if (n.tag == OpTag::Param) {
      n.param->tensor.accumulate_grad(n.grad);
    } else if (n.backward) {
      n.backward(*this, i);
    }
  }
}

template class Graph<float>;
template class Graph<double>;

}  // namespace pathm3
