#pragma once

#include <random>
#include <string>
#include <unordered_map>

#include "pathm3/graph.hpp"
#include "pathm3/parameter.hpp"

namespace pathm3 {

using Rng = std::mt19937_64;

template <typename Real>
Tensor<Real> normal_tensor(Shape shape, double stddev, Rng& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  Tensor<Real> out(std::move(shape));
  for (auto& v : out.values()) v = static_cast<Real>(dist(rng));
  return out;
}

// Binds store parameters onto a graph, once per parameter per graph.
template <typename Real>
class Binder {
 public:
  Binder(Graph<Real>& graph, ParameterStore<Real>& store) : graph_(graph), store_(store) {}

  Var<Real> operator()(ParamId id) {
    auto it = bound_.find(id.index);
    if (it != bound_.end()) return it->second;
    Var<Real> v = graph_.param(store_[id]);
    bound_.emplace(id.index, v);
    return v;
  }

  Graph<Real>& graph() { return graph_; }
  ParameterStore<Real>& store() { return store_; }

 private:
  Graph<Real>& graph_;
  ParameterStore<Real>& store_;
  std::unordered_map<std::size_t, Var<Real>> bound_;
};

struct LayerNormWeights {
  ParamId gamma;
  ParamId beta;
};

template <typename Real>
LayerNormWeights add_layer_norm(ParameterStore<Real>& store, const std::string& prefix, std::size_t dim) {
  return {store.add(prefix + ".gamma", Tensor<Real>({dim}, Real(1))), store.add(prefix + ".beta", Tensor<Real>({dim}))};
}

template <typename Real>
Var<Real> apply_layer_norm(Binder<Real>& bind, Var<Real> x, const LayerNormWeights& w, Real eps) {
  return layer_norm(x, bind(w.gamma), bind(w.beta), eps);
}

// Two affine maps with GELU in between.
struct FeedForwardWeights {
  ParamId w1, b1, w2, b2;
};

template <typename Real>
FeedForwardWeights add_feed_forward(ParameterStore<Real>& store, const std::string& prefix, std::size_t dim,
                                    std::size_t hidden, double init_std, Rng& rng) {
  FeedForwardWeights w;
  w.w1 = store.add(prefix + ".w1", normal_tensor<Real>({dim, hidden}, init_std, rng));
  w.b1 = store.add(prefix + ".b1", Tensor<Real>({hidden}));
  w.w2 = store.add(prefix + ".w2", normal_tensor<Real>({hidden, dim}, init_std, rng));
  w.b2 = store.add(prefix + ".b2", Tensor<Real>({dim}));
  return w;
}

template <typename Real>
Var<Real> apply_feed_forward(Binder<Real>& bind, Var<Real> x, const FeedForwardWeights& w) {
  Var<Real> h = gelu(affine(x, bind(w.w1), bind(w.b1)));
  return affine(h, bind(w.w2), bind(w.b2));
}

}  // namespace pathm3
