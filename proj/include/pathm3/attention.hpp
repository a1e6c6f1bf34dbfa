#pragma once

#include <cstddef>
#include <string>

#include "pathm3/graph.hpp"
#include "pathm3/layers.hpp"

namespace pathm3 {

struct AttentionConfig {
  std::size_t model_dim = 1408;
  std::size_t num_heads = 8;
  std::size_t landmark_count = 64;
  std::size_t pinv_iterations = 6;
  // Sequences longer than this use the Nyström path in the correlation block.
  std::size_t nystrom_threshold = 256;

  std::size_t head_dim() const { return model_dim / num_heads; }
  void validate() const;
};

enum class AttentionKind { Exact, Nystrom };

template <typename Real>
struct LandmarkSet {
  Tensor<Real> q_landmarks;
  Tensor<Real> k_landmarks;
  SegmentBounds segments;
};

// m contiguous segments over [0, rows); the first rows % m segments are one
// row longer than the rest.
SegmentBounds landmark_segments(std::size_t rows, std::size_t m);

// softmax(q·kᵀ/√d_q)·v
template <typename Real>
Var<Real> exact_attention(Var<Real> q, Var<Real> k, Var<Real> v, bool causal = false);

template <typename Real>
Var<Real> segment_mean_landmarks(Var<Real> x, std::size_t m);

template <typename Real>
struct PinvResult {
  Var<Real> value;
  bool zero_matrix = false;
};

// Newton–Schulz iteration Z₀ = aᵀ/(‖a‖₁‖a‖∞),
// Z ← ¼·Z(13I − aZ(15I − aZ(7I − aZ))). Differentiable.
template <typename Real>
PinvResult<Real> moore_penrose_pinv(Var<Real> a, std::size_t iterations);

// F₁·F₂⁺·(F₃·v) with F₁ = softmax(q·K̃ᵀ/√d), F₂ = softmax(Q̃·K̃ᵀ/√d),
// F₃ = softmax(Q̃·kᵀ/√d) and segment-mean landmarks Q̃, K̃.
template <typename Real>
Var<Real> nystrom_attention(Var<Real> q, Var<Real> k, Var<Real> v, const AttentionConfig& cfg);

// Tensor-level entry points; they run on a private graph without gradients.
template <typename Real>
Tensor<Real> exact_attention(const Tensor<Real>& q, const Tensor<Real>& k, const Tensor<Real>& v);
template <typename Real>
Tensor<Real> nystrom_attention(const Tensor<Real>& q, const Tensor<Real>& k, const Tensor<Real>& v,
                               const AttentionConfig& cfg);
template <typename Real>
LandmarkSet<Real> compute_landmarks(const Tensor<Real>& q, const Tensor<Real>& k, std::size_t m);

template <typename Real>
struct PinvTensor {
  Tensor<Real> value;
  bool zero_matrix = false;
};
template <typename Real>
PinvTensor<Real> moore_penrose_pinv(const Tensor<Real>& a, std::size_t iterations);

struct MultiHeadWeights {
  ParamId wq, wk, wv, wo;
};

template <typename Real>
MultiHeadWeights add_multi_head(ParameterStore<Real>& store, const std::string& prefix, std::size_t dim,
                                double init_std, Rng& rng) {
  MultiHeadWeights w;
  w.wq = store.add(prefix + ".wq", normal_tensor<Real>({dim, dim}, init_std, rng));
  w.wk = store.add(prefix + ".wk", normal_tensor<Real>({dim, dim}, init_std, rng));
  w.wv = store.add(prefix + ".wv", normal_tensor<Real>({dim, dim}, init_std, rng));
  w.wo = store.add(prefix + ".wo", normal_tensor<Real>({dim, dim}, init_std, rng));
  return w;
}

template <typename Real>
struct MultiHeadVars {
  Var<Real> wq, wk, wv, wo;
};

// Projects, splits into heads, attends per head, concatenates, projects out.
// `causal` applies only to the exact path.
template <typename Real>
Var<Real> multi_head(AttentionKind kind, Var<Real> x_q, Var<Real> x_kv, const MultiHeadVars<Real>& w,
                     const AttentionConfig& cfg, bool causal = false);

template <typename Real>
Var<Real> multi_head(Binder<Real>& bind, AttentionKind kind, Var<Real> x_q, Var<Real> x_kv, const MultiHeadWeights& w,
                     const AttentionConfig& cfg, bool causal = false) {
  return multi_head(kind, x_q, x_kv, MultiHeadVars<Real>{bind(w.wq), bind(w.wk), bind(w.wv), bind(w.wo)}, cfg, causal);
}

struct CorrelationLayer {
  LayerNormWeights norm;
  MultiHeadWeights attention;
};

template <typename Real>
CorrelationLayer add_correlation_layer(ParameterStore<Real>& store, const std::string& prefix, std::size_t dim,
                                       double init_std, Rng& rng) {
  CorrelationLayer layer;
  layer.norm = add_layer_norm(store, prefix + ".ln", dim);
  layer.attention = add_multi_head(store, prefix + ".attn", dim, init_std, rng);
  return layer;
}

inline AttentionKind correlation_kind(std::size_t instances, const AttentionConfig& cfg) {
  return instances > cfg.nystrom_threshold ? AttentionKind::Nystrom : AttentionKind::Exact;
}

// E ← MSA(LN(E)) + E; Nyström attention once the bag exceeds the threshold.
template <typename Real>
Var<Real> correlation_block(Binder<Real>& bind, Var<Real> e, const CorrelationLayer& layer, const AttentionConfig& cfg,
                            Real eps = Real(1e-5)) {
  Var<Real> normed = apply_layer_norm(bind, e, layer.norm, eps);
  Var<Real> mixed = multi_head(bind, correlation_kind(e.rows(), cfg), normed, normed, layer.attention, cfg);
  return add(mixed, e);
}

}  // namespace pathm3
