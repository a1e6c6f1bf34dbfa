#include "pathm3/attention.hpp"

#include <cmath>
#include <vector>

namespace pathm3 {

void AttentionConfig::validate() const {
  if (model_dim == 0 || num_heads == 0) fail(ErrorKind::RangeError, "attention: model_dim and num_heads must be positive");
  if (model_dim % num_heads != 0) {
    fail(ErrorKind::RangeError, "attention: model_dim " + std::to_string(model_dim) + " is not divisible by num_heads " +
                                    std::to_string(num_heads));
  }
  if (landmark_count == 0) fail(ErrorKind::InvalidLandmarkCount, "attention: landmark_count must be positive");
  if (pinv_iterations == 0) fail(ErrorKind::RangeError, "attention: pinv_iterations must be positive");
  if (nystrom_threshold < landmark_count) {
    fail(ErrorKind::RangeError, "attention: nystrom_threshold must be at least landmark_count");
  }
}

SegmentBounds landmark_segments(std::size_t rows, std::size_t m) {
  if (m < 1 || m > rows) {
    fail(ErrorKind::InvalidLandmarkCount,
         "landmark count " + std::to_string(m) + " outside [1, " + std::to_string(rows) + "]");
  }
  const std::size_t base = rows / m, extra = rows % m;
  SegmentBounds out;
  out.reserve(m);
  std::size_t begin = 0;
  for (std::size_t s = 0; s < m; ++s) {
    const std::size_t len = base + (s < extra ? 1 : 0);
    out.emplace_back(begin, begin + len);
    begin += len;
  }
  return out;
}

template <typename Real>
Var<Real> exact_attention(Var<Real> q, Var<Real> k, Var<Real> v, bool causal) {
  if (q.cols() != k.cols()) fail(ErrorKind::ShapeMismatch, "exact_attention: q and k widths differ");
  if (k.rows() != v.rows()) fail(ErrorKind::ShapeMismatch, "exact_attention: k and v lengths differ");
  const Real inv_sqrt_d = static_cast<Real>(1.0 / std::sqrt(static_cast<double>(q.cols())));
  Var<Real> scores = scale(matmul_nt(q, k), inv_sqrt_d);
  Var<Real> weights = causal ? causal_softmax_rows(scores) : softmax_rows(scores);
  return matmul(weights, v);
}

template <typename Real>
Var<Real> segment_mean_landmarks(Var<Real> x, std::size_t m) {
  return segment_mean_rows(x, landmark_segments(x.rows(), m));
}

template <typename Real>
PinvResult<Real> moore_penrose_pinv(Var<Real> a, std::size_t iterations) {
  const Tensor<Real>& av = a.value();
  if (av.rank() != 2 || av.rows() != av.cols()) {
    fail(ErrorKind::ShapeMismatch, "moore_penrose_pinv: expected a square matrix, got " + shape_string(av.shape()));
  }
  if (iterations < 1) fail(ErrorKind::RangeError, "moore_penrose_pinv: iterations must be at least 1");
  Var<Real> norm1 = max_abs_col_sum(a);
  Var<Real> norm_inf = max_abs_row_sum(a);
  if (norm1.value()[0] == Real(0) || norm_inf.value()[0] == Real(0)) {
    return {a.graph->constant(Tensor<Real>(av.shape())), true};
  }
  Var<Real> z = div_scalar(transpose(a), mul(norm1, norm_inf));
  for (std::size_t it = 0; it < iterations; ++it) {
    Var<Real> az = matmul(a, z);
    Var<Real> inner = matmul(az, identity_minus(az, Real(7)));
    Var<Real> middle = matmul(az, identity_minus(inner, Real(15)));
    z = scale(matmul(z, identity_minus(middle, Real(13))), Real(0.25));
  }
  return {z, false};
}

template <typename Real>
Var<Real> nystrom_attention(Var<Real> q, Var<Real> k, Var<Real> v, const AttentionConfig& cfg) {
  if (q.cols() != k.cols()) fail(ErrorKind::ShapeMismatch, "nystrom_attention: q and k widths differ");
  if (q.rows() != k.rows() || k.rows() != v.rows()) {
    fail(ErrorKind::ShapeMismatch, "nystrom_attention: q, k, v must have the same number of rows");
  }
  const std::size_t m = cfg.landmark_count;
  const SegmentBounds segments = landmark_segments(q.rows(), m);
  const Real inv_sqrt_d = static_cast<Real>(1.0 / std::sqrt(static_cast<double>(q.cols())));
  Var<Real> q_land = segment_mean_rows(q, segments);
  Var<Real> k_land = segment_mean_rows(k, segments);
  Var<Real> f1 = softmax_rows(scale(matmul_nt(q, k_land), inv_sqrt_d));       // M×m
  Var<Real> f2 = softmax_rows(scale(matmul_nt(q_land, k_land), inv_sqrt_d));  // m×m
  Var<Real> f3 = softmax_rows(scale(matmul_nt(q_land, k), inv_sqrt_d));       // m×M
  Var<Real> f2_pinv = moore_penrose_pinv(f2, cfg.pinv_iterations).value;
  // Right-to-left keeps every product at O(M·m·d).
  return matmul(f1, matmul(f2_pinv, matmul(f3, v)));
}

template <typename Real>
Tensor<Real> exact_attention(const Tensor<Real>& q, const Tensor<Real>& k, const Tensor<Real>& v) {
  Graph<Real> g;
  return exact_attention(g.constant(q), g.constant(k), g.constant(v)).value();
}

template <typename Real>
Tensor<Real> nystrom_attention(const Tensor<Real>& q, const Tensor<Real>& k, const Tensor<Real>& v,
                               const AttentionConfig& cfg) {
  Graph<Real> g;
  return nystrom_attention(g.constant(q), g.constant(k), g.constant(v), cfg).value();
}

template <typename Real>
LandmarkSet<Real> compute_landmarks(const Tensor<Real>& q, const Tensor<Real>& k, std::size_t m) {
  if (q.rows() != k.rows()) fail(ErrorKind::ShapeMismatch, "compute_landmarks: q and k lengths differ");
  Graph<Real> g;
  LandmarkSet<Real> out;
  out.segments = landmark_segments(q.rows(), m);
  out.q_landmarks = segment_mean_rows(g.constant(q), out.segments).value();
  out.k_landmarks = segment_mean_rows(g.constant(k), out.segments).value();
  return out;
}

template <typename Real>
PinvTensor<Real> moore_penrose_pinv(const Tensor<Real>& a, std::size_t iterations) {
  Graph<Real> g;
  PinvResult<Real> r = moore_penrose_pinv(g.constant(a), iterations);
  return {r.value.value(), r.zero_matrix};
}

template <typename Real>
Var<Real> multi_head(AttentionKind kind, Var<Real> x_q, Var<Real> x_kv, const MultiHeadVars<Real>& w,
                     const AttentionConfig& cfg, bool causal) {
  const std::size_t d = cfg.model_dim;
  if (cfg.num_heads == 0 || d % cfg.num_heads != 0) {
    fail(ErrorKind::ShapeMismatch, "multi_head: model_dim must be divisible by num_heads");
  }
  if (x_q.cols() != d || x_kv.cols() != d) {
    fail(ErrorKind::ShapeMismatch, "multi_head: inputs must have " + std::to_string(d) + " columns");
  }
  if (causal && kind != AttentionKind::Exact) fail(ErrorKind::InvalidSpec, "multi_head: causal masking needs exact attention");
  Var<Real> q = matmul(x_q, w.wq);
  Var<Real> k = matmul(x_kv, w.wk);
  Var<Real> v = matmul(x_kv, w.wv);

  auto attend = [&](Var<Real> qh, Var<Real> kh, Var<Real> vh) {
    return kind == AttentionKind::Exact ? exact_attention(qh, kh, vh, causal) : nystrom_attention(qh, kh, vh, cfg);
  };

  Var<Real> merged;
  if (cfg.num_heads == 1) {
    merged = attend(q, k, v);
  } else {
    const std::size_t dh = cfg.head_dim();
    std::vector<Var<Real>> heads;
    heads.reserve(cfg.num_heads);
    for (std::size_t h = 0; h < cfg.num_heads; ++h) {
      heads.push_back(attend(slice_cols(q, h * dh, dh), slice_cols(k, h * dh, dh), slice_cols(v, h * dh, dh)));
    }
    merged = concat_cols<Real>(heads);
  }
  return matmul(merged, w.wo);
}

#define PATHM3_INSTANTIATE_ATTENTION(Real)                                                                       \
  template Var<Real> exact_attention(Var<Real>, Var<Real>, Var<Real>, bool);                                     \
  template Var<Real> segment_mean_landmarks(Var<Real>, std::size_t);                                            \
  template PinvResult<Real> moore_penrose_pinv(Var<Real>, std::size_t);                                          \
  template Var<Real> nystrom_attention(Var<Real>, Var<Real>, Var<Real>, const AttentionConfig&);                 \
  template Tensor<Real> exact_attention(const Tensor<Real>&, const Tensor<Real>&, const Tensor<Real>&);          \
  template Tensor<Real> nystrom_attention(const Tensor<Real>&, const Tensor<Real>&, const Tensor<Real>&,         \
                                          const AttentionConfig&);                                               \
  template LandmarkSet<Real> compute_landmarks(const Tensor<Real>&, const Tensor<Real>&, std::size_t);           \
  template PinvTensor<Real> moore_penrose_pinv(const Tensor<Real>&, std::size_t);                                \
  template Var<Real> multi_head(AttentionKind, Var<Real>, Var<Real>, const MultiHeadVars<Real>&,                 \
                                const AttentionConfig&, bool);

PATHM3_INSTANTIATE_ATTENTION(float)
PATHM3_INSTANTIATE_ATTENTION(double)

#undef PATHM3_INSTANTIATE_ATTENTION

}  // namespace pathm3
