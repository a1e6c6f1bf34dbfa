#include <cmath>
#include <numbers>
#include <string>

#include "pathm3/graph.hpp"
#include "pathm3/kernels.hpp"

namespace pathm3 {

namespace {

template <typename Real>
void require_same_graph(Var<Real> a, Var<Real> b, const char* op) {
  if (a.graph != b.graph) fail(ErrorKind::DetachedRoot, std::string(op) + ": operands live on different graphs");
}

template <typename Real>
void require_matrix(const Tensor<Real>& t, const char* op) {
  if (t.rank() > 2) fail(ErrorKind::ShapeMismatch, std::string(op) + ": expected a matrix, got " + shape_string(t.shape()));
}

template <typename Real>
void require_same_shape(Var<Real> a, Var<Real> b, const char* op) {
  if (a.shape() != b.shape()) {
    fail(ErrorKind::ShapeMismatch,
         std::string(op) + ": shapes " + shape_string(a.shape()) + " and " + shape_string(b.shape()) + " differ");
  }
}

template <typename Real>
void require_scalar(Var<Real> s, const char* op) {
  if (s.value().size() != 1) fail(ErrorKind::NotScalar, std::string(op) + ": expected a scalar operand");
}

}  // namespace

template <typename Real>
Var<Real> matmul(Var<Real> a, Var<Real> b) {
  require_same_graph(a, b, "matmul");
  const Tensor<Real>& av = a.value();
  const Tensor<Real>& bv = b.value();
  require_matrix(av, "matmul");
  require_matrix(bv, "matmul");
  const std::size_t m = av.rows(), k = av.cols(), n = bv.cols();
  if (bv.rows() != k) {
    fail(ErrorKind::ShapeMismatch, "matmul: " + shape_string(av.shape()) + " x " + shape_string(bv.shape()));
  }
  Tensor<Real> out({m, n});
  kernels::gemm_nn<Real>(m, k, n, av.values(), bv.values(), out.values(), false);
  return a.graph->record(OpTag::MatMul, {a.id, b.id}, std::move(out), [m, k, n](Graph<Real>& g, std::size_t self) {
    const auto ia = g.inputs(self)[0], ib = g.inputs(self)[1];
    std::span<const Real> dc = g.grad_of(self);
    if (g.wants_grad(ia)) kernels::gemm_nt<Real>(m, n, k, dc, g.value(ib).values(), g.grad_buffer(ia), true);
    if (g.wants_grad(ib)) kernels::gemm_tn<Real>(k, m, n, g.value(ia).values(), dc, g.grad_buffer(ib), true);
  });
}

template <typename Real>
Var<Real> matmul_nt(Var<Real> a, Var<Real> b) {
  require_same_graph(a, b, "matmul_nt");
  const Tensor<Real>& av = a.value();
  const Tensor<Real>& bv = b.value();
  require_matrix(av, "matmul_nt");
  require_matrix(bv, "matmul_nt");
  const std::size_t m = av.rows(), k = av.cols(), n = bv.rows();
  if (bv.cols() != k) {
    fail(ErrorKind::ShapeMismatch, "matmul_nt: " + shape_string(av.shape()) + " x T" + shape_string(bv.shape()));
  }
  Tensor<Real> out({m, n});
  kernels::gemm_nt<Real>(m, k, n, av.values(), bv.values(), out.values(), false);
  return a.graph->record(OpTag::MatMulNT, {a.id, b.id}, std::move(out), [m, k, n](Graph<Real>& g, std::size_t self) {
    const auto ia = g.inputs(self)[0], ib = g.inputs(self)[1];
    std::span<const Real> dc = g.grad_of(self);
    // C = A·Bᵀ: dA = dC·B, dB = dCᵀ·A
    if (g.wants_grad(ia)) kernels::gemm_nn<Real>(m, n, k, dc, g.value(ib).values(), g.grad_buffer(ia), true);
    if (g.wants_grad(ib)) kernels::gemm_tn<Real>(n, m, k, dc, g.value(ia).values(), g.grad_buffer(ib), true);
  });
}

template <typename Real>
Var<Real> transpose(Var<Real> a) {
  const Tensor<Real>& av = a.value();
  require_matrix(av, "transpose");
  const std::size_t m = av.rows(), n = av.cols();
  Tensor<Real> out({n, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out(j, i) = av[i * n + j];
  return a.graph->record(OpTag::Transpose, {a.id}, std::move(out), [m, n](Graph<Real>& g, std::size_t self) {
    const auto ia = g.inputs(self)[0];
    std::span<const Real> dy = g.grad_of(self);
    auto& dx = g.grad_buffer(ia);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) dx[i * n + j] += dy[j * m + i];
  });
}

template <typename Real>
Var<Real> add(Var<Real> a, Var<Real> b) {
  require_same_graph(a, b, "add");
  require_same_shape(a, b, "add");
  Tensor<Real> out = a.value();
  const auto bv = b.value().values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return a.graph->record(OpTag::Add, {a.id, b.id}, std::move(out), [](Graph<Real>& g, std::size_t self) {
    std::span<const Real> dy = g.grad_of(self);
    for (std::size_t in : g.inputs(self)) {
      if (!g.wants_grad(in)) continue;
      auto& dx = g.grad_buffer(in);
      for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i];
    }
  });
}

template <typename Real>
Var<Real> sub(Var<Real> a, Var<Real> b) {
  require_same_graph(a, b, "sub");
  require_same_shape(a, b, "sub");
  Tensor<Real> out = a.value();
  const auto bv = b.value().values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  return a.graph->record(OpTag::Sub, {a.id, b.id}, std::move(out), [](Graph<Real>& g, std::size_t self) {
    std::span<const Real> dy = g.grad_of(self);
    const auto ia = g.inputs(self)[0], ib = g.inputs(self)[1];
    if (g.wants_grad(ia)) {
      auto& dx = g.grad_buffer(ia);
      for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i];
    }
    if (g.wants_grad(ib)) {
      auto& dx = g.grad_buffer(ib);
      for (std::size_t i = 0; i < dy.size(); ++i) dx[i] -= dy[i];
    }
  });
}

template <typename Real>
Var<Real> mul(Var<Real> a, Var<Real> b) {
  require_same_graph(a, b, "mul");
  require_same_shape(a, b, "mul");
  Tensor<Real> out = a.value();
  const auto bv = b.value().values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  return a.graph->record(OpTag::Mul, {a.id, b.id}, std::move(out), [](Graph<Real>& g, std::size_t self) {
    std::span<const Real> dy = g.grad_of(self);
    const auto ia = g.inputs(self)[0], ib = g.inputs(self)[1];
    if (g.wants_grad(ia)) {
      auto& dx = g.grad_buffer(ia);
      const auto other = g.value(ib).values();
      for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i] * other[i];
    }
    if (g.wants_grad(ib)) {
      auto& dx = g.grad_buffer(ib);
      const auto other = g.value(ia).values();
      for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i] * other[i];
    }
  });
}

template <typename Real>
Var<Real> scale(Var<Real> a, Real factor) {
  Tensor<Real> out = a.value();
  for (auto& v : out.values()) v *= factor;
  return a.graph->record(OpTag::Scale, {a.id}, std::move(out), [factor](Graph<Real>& g, std::size_t self) {
    std::span<const Real> dy = g.grad_of(self);
    auto& dx = g.grad_buffer(g.inputs(self)[0]);
    for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i] * factor;
  });
}

template <typename Real>
Var<Real> add_bias(Var<Real> x, Var<Real> bias) {
  require_same_graph(x, bias, "add_bias");
  const Tensor<Real>& xv = x.value();
  require_matrix(xv, "add_bias");
  const std::size_t m = xv.rows(), n = xv.cols();
  if (bias.value().size() != n) {
    fail(ErrorKind::ShapeMismatch, "add_bias: bias " + shape_string(bias.shape()) + " for " + shape_string(xv.shape()));
  }
  Tensor<Real> out = xv;
  const auto bv = bias.value().values();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] += bv[j];
  return x.graph->record(OpTag::AddBias, {x.id, bias.id}, std::move(out), [m, n](Graph<Real>& g, std::size_t self) {
    std::span<const Real> dy = g.grad_of(self);
    const auto ix = g.inputs(self)[0], ib = g.inputs(self)[1];
    if (g.wants_grad(ix)) {
      auto& dx = g.grad_buffer(ix);
      for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i];
    }
    if (g.wants_grad(ib)) {
      auto& db = g.grad_buffer(ib);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) db[j] += dy[i * n + j];
    }
  });
}

template <typename Real>
Var<Real> identity_minus(Var<Real> x, Real c) {
  const Tensor<Real>& xv = x.value();
  if (xv.rank() != 2 || xv.rows() != xv.cols()) {
    fail(ErrorKind::ShapeMismatch, "identity_minus: expected a square matrix, got " + shape_string(xv.shape()));
  }
  const std::size_t n = xv.rows();
  Tensor<Real> out({n, n});
  for (std::size_t i = 0; i < n * n; ++i) out[i] = -xv[i];
  for (std::size_t i = 0; i < n; ++i) out(i, i) += c;
  return x.graph->record(OpTag::IdentityMinus, {x.id}, std::move(out), [](Graph<Real>& g, std::size_t self) {
    std::span<const Real> dy = g.grad_of(self);
    auto& dx = g.grad_buffer(g.inputs(self)[0]);
    for (std::size_t i = 0; i < dy.size(); ++i) dx[i] -= dy[i];
  });
}

template <typename Real>
Var<Real> div_scalar(Var<Real> x, Var<Real> s) {
  require_same_graph(x, s, "div_scalar");
  require_scalar(s, "div_scalar");
  const Real denom = s.value()[0];
  Tensor<Real> out = x.value();
  for (auto& v : out.values()) v /= denom;
  return x.graph->record(OpTag::DivScalar, {x.id, s.id}, std::move(out), [](Graph<Real>& g, std::size_t self) {
    std::span<const Real> dy = g.grad_of(self);
    const auto ix = g.inputs(self)[0], is = g.inputs(self)[1];
    const Real denom = g.value(is)[0];
    if (g.wants_grad(ix)) {
      auto& dx = g.grad_buffer(ix);
      for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i] / denom;
    }
    if (g.wants_grad(is)) {
      const auto xv = g.value(ix).values();
      double acc = 0.0;
      for (std::size_t i = 0; i < dy.size(); ++i) acc += static_cast<double>(dy[i]) * xv[i];
      g.grad_buffer(is)[0] += static_cast<Real>(-acc / (static_cast<double>(denom) * denom));
    }
  });
}

namespace {

// Index of the column (or row) with the largest absolute sum; first wins ties.
template <typename Real>
std::pair<std::size_t, double> max_abs_line(const Tensor<Real>& x, bool columns) {
  const std::size_t m = x.rows(), n = x.cols();
  const std::size_t lines = columns ? n : m;
  std::size_t best = 0;
  double best_sum = -1.0;
  for (std::size_t l = 0; l < lines; ++l) {
    double s = 0.0;
    const std::size_t len = columns ? m : n;
    for (std::size_t t = 0; t < len; ++t) s += std::abs(static_cast<double>(columns ? x[t * n + l] : x[l * n + t]));
    if (s > best_sum) {
      best_sum = s;
      best = l;
    }
  }
  return {best, best_sum};
}

template <typename Real>
Var<Real> max_abs_line_sum(Var<Real> x, bool columns) {
  const Tensor<Real>& xv = x.value();
  require_matrix(xv, "max_abs_sum");
  const auto [line, total] = max_abs_line(xv, columns);
  const std::size_t m = xv.rows(), n = xv.cols();
  return x.graph->record(columns ? OpTag::MaxAbsColSum : OpTag::MaxAbsRowSum, {x.id},
                         Tensor<Real>::scalar(static_cast<Real>(total)),
                         [line, columns, m, n](Graph<Real>& g, std::size_t self) {
                           const Real dy = g.grad_of(self)[0];
                           const auto ix = g.inputs(self)[0];
                           const auto xv = g.value(ix).values();
                           auto& dx = g.grad_buffer(ix);
                           const std::size_t len = columns ? m : n;
                           for (std::size_t t = 0; t < len; ++t) {
                             const std::size_t idx = columns ? t * n + line : line * n + t;
                             const Real sgn = xv[idx] > 0 ? Real(1) : (xv[idx] < 0 ? Real(-1) : Real(0));
                             dx[idx] += dy * sgn;
                           }
                         });
}

template <typename Real>
void softmax_row_inplace(std::span<Real> row, std::size_t valid) {
  double mx = row[0];
  for (std::size_t j = 1; j < valid; ++j) mx = std::max(mx, static_cast<double>(row[j]));
  double z = 0.0;
  for (std::size_t j = 0; j < valid; ++j) z += std::exp(static_cast<double>(row[j]) - mx);
  for (std::size_t j = 0; j < valid; ++j) row[j] = static_cast<Real>(std::exp(static_cast<double>(row[j]) - mx) / z);
  for (std::size_t j = valid; j < row.size(); ++j) row[j] = Real(0);
}

template <typename Real>
Var<Real> softmax_impl(Var<Real> x, bool causal) {
  const Tensor<Real>& xv = x.value();
  require_matrix(xv, "softmax_rows");
  const std::size_t m = xv.rows(), n = xv.cols();
  if (causal && m > n) fail(ErrorKind::ShapeMismatch, "causal_softmax_rows: more rows than columns");
  Tensor<Real> out = xv;
  for (std::size_t i = 0; i < m; ++i) {
    softmax_row_inplace(out.values().subspan(i * n, n), causal ? i + 1 : n);
  }
  return x.graph->record(causal ? OpTag::CausalSoftmax : OpTag::Softmax, {x.id}, std::move(out),
                         [m, n](Graph<Real>& g, std::size_t self) {
                           std::span<const Real> dy = g.grad_of(self);
                           const auto y = g.value(self).values();
                           auto& dx = g.grad_buffer(g.inputs(self)[0]);
                           for (std::size_t i = 0; i < m; ++i) {
                             double dot = 0.0;
                             for (std::size_t j = 0; j < n; ++j) dot += static_cast<double>(dy[i * n + j]) * y[i * n + j];
                             for (std::size_t j = 0; j < n; ++j) {
                               dx[i * n + j] += static_cast<Real>((dy[i * n + j] - dot) * y[i * n + j]);
                             }
                           }
                         });
}

}  // namespace

template <typename Real>
Var<Real> max_abs_col_sum(Var<Real> x) {
  return max_abs_line_sum(x, true);
}

template <typename Real>
Var<Real> max_abs_row_sum(Var<Real> x) {
  return max_abs_line_sum(x, false);
}

template <typename Real>
Var<Real> softmax_rows(Var<Real> x) {
  return softmax_impl(x, false);
}

template <typename Real>
Var<Real> causal_softmax_rows(Var<Real> x) {
  return softmax_impl(x, true);
}

template <typename Real>
Var<Real> layer_norm(Var<Real> x, Var<Real> gamma, Var<Real> beta, Real eps) {
  require_same_graph(x, gamma, "layer_norm");
  require_same_graph(x, beta, "layer_norm");
  const Tensor<Real>& xv = x.value();
  require_matrix(xv, "layer_norm");
  if (!(eps > Real(0))) fail(ErrorKind::ShapeMismatch, "layer_norm: eps must be positive");
  const std::size_t m = xv.rows(), d = xv.cols();
  if (gamma.value().size() != d || beta.value().size() != d) {
    fail(ErrorKind::ShapeMismatch, "layer_norm: gamma/beta length must equal " + std::to_string(d));
  }
  const auto gv = gamma.value().values();
  const auto bv = beta.value().values();
  // Saved per row: normalised values and reciprocal standard deviation.
  std::vector<double> xhat(m * d), rstd(m);
  Tensor<Real> out({m, d});
  if (xv.rank() == 1) out = Tensor<Real>(xv.shape());
  for (std::size_t i = 0; i < m; ++i) {
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += xv[i * d + j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double c = xv[i * d + j] - mu;
      var += c * c;
    }
    var /= static_cast<double>(d);
    rstd[i] = 1.0 / std::sqrt(var + static_cast<double>(eps));
    for (std::size_t j = 0; j < d; ++j) {
      xhat[i * d + j] = (xv[i * d + j] - mu) * rstd[i];
      out[i * d + j] = static_cast<Real>(xhat[i * d + j] * gv[j] + bv[j]);
    }
  }
  return x.graph->record(
      OpTag::LayerNorm, {x.id, gamma.id, beta.id}, std::move(out),
      [m, d, xhat = std::move(xhat), rstd = std::move(rstd)](Graph<Real>& g, std::size_t self) {
        std::span<const Real> dy = g.grad_of(self);
        const auto ix = g.inputs(self)[0], ig = g.inputs(self)[1], ib = g.inputs(self)[2];
        const auto gv = g.value(ig).values();
        if (g.wants_grad(ig)) {
          auto& dg = g.grad_buffer(ig);
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < d; ++j) dg[j] += static_cast<Real>(dy[i * d + j] * xhat[i * d + j]);
        }
        if (g.wants_grad(ib)) {
          auto& db = g.grad_buffer(ib);
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < d; ++j) db[j] += dy[i * d + j];
        }
        if (g.wants_grad(ix)) {
          auto& dx = g.grad_buffer(ix);
          for (std::size_t i = 0; i < m; ++i) {
            double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
              const double dxh = static_cast<double>(dy[i * d + j]) * gv[j];
              mean_dxhat += dxh;
              mean_dxhat_xhat += dxh * xhat[i * d + j];
            }
            mean_dxhat /= static_cast<double>(d);
            mean_dxhat_xhat /= static_cast<double>(d);
            for (std::size_t j = 0; j < d; ++j) {
              const double dxh = static_cast<double>(dy[i * d + j]) * gv[j];
              dx[i * d + j] +=
                  static_cast<Real>(rstd[i] * (dxh - mean_dxhat - xhat[i * d + j] * mean_dxhat_xhat));
            }
          }
        }
      });
}

template <typename Real>
Var<Real> gelu(Var<Real> x) {
  Tensor<Real> out = x.value();
  for (auto& v : out.values()) {
    const double z = v;
    v = static_cast<Real>(0.5 * z * (1.0 + std::erf(z / std::numbers::sqrt2)));
  }
  return x.graph->record(OpTag::Gelu, {x.id}, std::move(out), [](Graph<Real>& g, std::size_t self) {
    std::span<const Real> dy = g.grad_of(self);
    const auto ix = g.inputs(self)[0];
    const auto xv = g.value(ix).values();
    auto& dx = g.grad_buffer(ix);
    const double inv_sqrt_2pi = 0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2;
    for (std::size_t i = 0; i < dy.size(); ++i) {
      const double z = xv[i];
      const double cdf = 0.5 * (1.0 + std::erf(z / std::numbers::sqrt2));
      const double pdf = inv_sqrt_2pi * std::exp(-0.5 * z * z);
      dx[i] += static_cast<Real>(dy[i] * (cdf + z * pdf));
    }
  });
}

template <typename Real>
Var<Real> cross_entropy_from_logits(Var<Real> logits, int label) {
  const Tensor<Real>& lv = logits.value();
  if (lv.rows() != 1) fail(ErrorKind::ShapeMismatch, "cross_entropy: logits must be a single row");
  const std::size_t c = lv.cols();
  if (label < 0 || static_cast<std::size_t>(label) >= c) {
    fail(ErrorKind::LabelOutOfRange, "label " + std::to_string(label) + " outside [0, " + std::to_string(c) + ")");
  }
  double mx = lv[0];
  for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, static_cast<double>(lv[j]));
  double z = 0.0;
  for (std::size_t j = 0; j < c; ++j) z += std::exp(lv[j] - mx);
  const double lse = mx + std::log(z);
  const double loss = lse - lv[static_cast<std::size_t>(label)];
  return logits.graph->record(OpTag::CrossEntropy, {logits.id}, Tensor<Real>::scalar(static_cast<Real>(loss)),
                              [c, label, lse](Graph<Real>& g, std::size_t self) {
                                const double dy = g.grad_of(self)[0];
                                const auto il = g.inputs(self)[0];
                                const auto lv = g.value(il).values();
                                auto& dl = g.grad_buffer(il);
                                for (std::size_t j = 0; j < c; ++j) {
                                  const double p = std::exp(lv[j] - lse);
                                  const double onehot = j == static_cast<std::size_t>(label) ? 1.0 : 0.0;
                                  dl[j] += static_cast<Real>(dy * (p - onehot));
                                }
                              });
}

template <typename Real>
Var<Real> token_cross_entropy(Var<Real> logits, std::span<const int> targets, int ignore_id) {
  const Tensor<Real>& lv = logits.value();
  require_matrix(lv, "token_cross_entropy");
  const std::size_t rows = lv.rows(), v = lv.cols();
  if (targets.size() != rows) {
    fail(ErrorKind::ShapeMismatch, "token_cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                                       std::to_string(rows) + " rows");
  }
  std::vector<int> tgt(targets.begin(), targets.end());
  std::vector<double> lse(rows, 0.0);
  double total = 0.0;
  std::size_t counted = 0;
  for (std::size_t i = 0; i < rows; ++i) {
    if (tgt[i] == ignore_id) continue;
    if (tgt[i] < 0 || static_cast<std::size_t>(tgt[i]) >= v) {
      fail(ErrorKind::TokenOutOfVocab, "target id " + std::to_string(tgt[i]) + " outside vocabulary");
    }
    double mx = lv[i * v];
    for (std::size_t j = 1; j < v; ++j) mx = std::max(mx, static_cast<double>(lv[i * v + j]));
    double z = 0.0;
    for (std::size_t j = 0; j < v; ++j) z += std::exp(lv[i * v + j] - mx);
    lse[i] = mx + std::log(z);
    total += lse[i] - lv[i * v + static_cast<std::size_t>(tgt[i])];
    ++counted;
  }
  const double loss = counted ? total / static_cast<double>(counted) : 0.0;
  return logits.graph->record(
      OpTag::TokenCrossEntropy, {logits.id}, Tensor<Real>::scalar(static_cast<Real>(loss)),
      [rows, v, counted, ignore_id, tgt = std::move(tgt), lse = std::move(lse)](Graph<Real>& g, std::size_t self) {
        if (counted == 0) return;
        const double dy = g.grad_of(self)[0] / static_cast<double>(counted);
        const auto il = g.inputs(self)[0];
        const auto lv = g.value(il).values();
        auto& dl = g.grad_buffer(il);
        for (std::size_t i = 0; i < rows; ++i) {
          if (tgt[i] == ignore_id) continue;
          for (std::size_t j = 0; j < v; ++j) {
            const double p = std::exp(lv[i * v + j] - lse[i]);
            const double onehot = j == static_cast<std::size_t>(tgt[i]) ? 1.0 : 0.0;
            dl[i * v + j] += static_cast<Real>(dy * (p - onehot));
          }
        }
      });
}

template <typename Real>
Var<Real> sum(Var<Real> x) {
  double acc = 0.0;
  for (Real v : x.value().values()) acc += v;
  return x.graph->record(OpTag::Sum, {x.id}, Tensor<Real>::scalar(static_cast<Real>(acc)),
                         [](Graph<Real>& g, std::size_t self) {
                           const Real dy = g.grad_of(self)[0];
                           for (auto& d : g.grad_buffer(g.inputs(self)[0])) d += dy;
                         });
}

template <typename Real>
Var<Real> mean(Var<Real> x) {
  const std::size_t n = x.value().size();
  double acc = 0.0;
  for (Real v : x.value().values()) acc += v;
  return x.graph->record(OpTag::Mean, {x.id}, Tensor<Real>::scalar(static_cast<Real>(acc / static_cast<double>(n))),
                         [n](Graph<Real>& g, std::size_t self) {
                           const Real dy = g.grad_of(self)[0] / static_cast<Real>(n);
                           for (auto& d : g.grad_buffer(g.inputs(self)[0])) d += dy;
                         });
}

template <typename Real>
Var<Real> mean_rows(Var<Real> x) {
  const Tensor<Real>& xv = x.value();
  require_matrix(xv, "mean_rows");
  const std::size_t m = xv.rows(), n = xv.cols();
  std::vector<double> acc(n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) acc[j] += xv[i * n + j];
  Tensor<Real> out({1, n});
  for (std::size_t j = 0; j < n; ++j) out[j] = static_cast<Real>(acc[j] / static_cast<double>(m));
  return x.graph->record(OpTag::MeanRows, {x.id}, std::move(out), [m, n](Graph<Real>& g, std::size_t self) {
    std::span<const Real> dy = g.grad_of(self);
    auto& dx = g.grad_buffer(g.inputs(self)[0]);
    const Real inv = Real(1) / static_cast<Real>(m);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) dx[i * n + j] += dy[j] * inv;
  });
}

template <typename Real>
Var<Real> slice_rows(Var<Real> x, std::size_t begin, std::size_t count) {
  const Tensor<Real>& xv = x.value();
  require_matrix(xv, "slice_rows");
  const std::size_t n = xv.cols();
  if (count == 0 || begin + count > xv.rows()) fail(ErrorKind::ShapeMismatch, "slice_rows: range out of bounds");
  const auto src = xv.values().subspan(begin * n, count * n);
  Tensor<Real> out({count, n}, std::vector<Real>(src.begin(), src.end()));
  return x.graph->record(OpTag::SliceRows, {x.id}, std::move(out), [begin, n](Graph<Real>& g, std::size_t self) {
    std::span<const Real> dy = g.grad_of(self);
    auto& dx = g.grad_buffer(g.inputs(self)[0]);
    for (std::size_t i = 0; i < dy.size(); ++i) dx[begin * n + i] += dy[i];
  });
}

template <typename Real>
Var<Real> slice_cols(Var<Real> x, std::size_t begin, std::size_t count) {
  const Tensor<Real>& xv = x.value();
  require_matrix(xv, "slice_cols");
  const std::size_t m = xv.rows(), n = xv.cols();
  if (count == 0 || begin + count > n) fail(ErrorKind::ShapeMismatch, "slice_cols: range out of bounds");
  Tensor<Real> out({m, count});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < count; ++j) out[i * count + j] = xv[i * n + begin + j];
  return x.graph->record(OpTag::SliceCols, {x.id}, std::move(out), [m, n, begin, count](Graph<Real>& g, std::size_t self) {
    std::span<const Real> dy = g.grad_of(self);
    auto& dx = g.grad_buffer(g.inputs(self)[0]);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < count; ++j) dx[i * n + begin + j] += dy[i * count + j];
  });
}

template <typename Real>
Var<Real> concat_rows(std::span<const Var<Real>> parts) {
  if (parts.empty()) fail(ErrorKind::ShapeMismatch, "concat_rows: no operands");
  const std::size_t n = parts[0].cols();
  std::size_t rows = 0;
  std::vector<std::size_t> ids;
  for (const auto& p : parts) {
    require_same_graph(parts[0], p, "concat_rows");
    require_matrix(p.value(), "concat_rows");
    if (p.cols() != n) fail(ErrorKind::ShapeMismatch, "concat_rows: column counts differ");
    rows += p.rows();
    ids.push_back(p.id);
  }
  std::vector<Real> data;
  data.reserve(rows * n);
  for (const auto& p : parts) data.insert(data.end(), p.value().values().begin(), p.value().values().end());
  return parts[0].graph->record(OpTag::ConcatRows, std::move(ids), Tensor<Real>({rows, n}, std::move(data)),
                                [](Graph<Real>& g, std::size_t self) {
                                  std::span<const Real> dy = g.grad_of(self);
                                  std::size_t offset = 0;
                                  for (std::size_t in : g.inputs(self)) {
                                    const std::size_t len = g.value(in).size();
                                    if (g.wants_grad(in)) {
                                      auto& dx = g.grad_buffer(in);
                                      for (std::size_t i = 0; i < len; ++i) dx[i] += dy[offset + i];
                                    }
                                    offset += len;
                                  }
                                });
}

template <typename Real>
Var<Real> concat_cols(std::span<const Var<Real>> parts) {
  if (parts.empty()) fail(ErrorKind::ShapeMismatch, "concat_cols: no operands");
  const std::size_t m = parts[0].rows();
  std::size_t total = 0;
  std::vector<std::size_t> ids;
  for (const auto& p : parts) {
    require_same_graph(parts[0], p, "concat_cols");
    require_matrix(p.value(), "concat_cols");
    if (p.rows() != m) fail(ErrorKind::ShapeMismatch, "concat_cols: row counts differ");
    total += p.cols();
    ids.push_back(p.id);
  }
  Tensor<Real> out({m, total});
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const std::size_t w = p.cols();
    const auto& v = p.value();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < w; ++j) out[i * total + offset + j] = v[i * w + j];
    offset += w;
  }
  return parts[0].graph->record(OpTag::ConcatCols, std::move(ids), std::move(out),
                                [m, total](Graph<Real>& g, std::size_t self) {
                                  std::span<const Real> dy = g.grad_of(self);
                                  std::size_t offset = 0;
                                  for (std::size_t in : g.inputs(self)) {
                                    const std::size_t w = g.value(in).cols();
                                    if (g.wants_grad(in)) {
                                      auto& dx = g.grad_buffer(in);
                                      for (std::size_t i = 0; i < m; ++i)
                                        for (std::size_t j = 0; j < w; ++j) dx[i * w + j] += dy[i * total + offset + j];
                                    }
                                    offset += w;
                                  }
                                });
}

template <typename Real>
Var<Real> embedding(Var<Real> table, std::span<const int> ids) {
  const Tensor<Real>& tv = table.value();
  require_matrix(tv, "embedding");
  const std::size_t vocab = tv.rows(), d = tv.cols();
  if (ids.empty()) fail(ErrorKind::ShapeMismatch, "embedding: empty id list");
  std::vector<int> idx(ids.begin(), ids.end());
  Tensor<Real> out({idx.size(), d});
  for (std::size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] < 0 || static_cast<std::size_t>(idx[r]) >= vocab) {
      fail(ErrorKind::TokenOutOfVocab, "token id " + std::to_string(idx[r]) + " outside [0, " + std::to_string(vocab) + ")");
    }
    for (std::size_t j = 0; j < d; ++j) out[r * d + j] = tv[static_cast<std::size_t>(idx[r]) * d + j];
  }
  return table.graph->record(OpTag::Embedding, {table.id}, std::move(out),
                             [d, idx = std::move(idx)](Graph<Real>& g, std::size_t self) {
                               std::span<const Real> dy = g.grad_of(self);
                               auto& dt = g.grad_buffer(g.inputs(self)[0]);
                               for (std::size_t r = 0; r < idx.size(); ++r)
                                 for (std::size_t j = 0; j < d; ++j)
                                   dt[static_cast<std::size_t>(idx[r]) * d + j] += dy[r * d + j];
                             });
}

template <typename Real>
Var<Real> segment_mean_rows(Var<Real> x, const SegmentBounds& segments) {
  const Tensor<Real>& xv = x.value();
  require_matrix(xv, "segment_mean_rows");
  const std::size_t n = xv.cols();
  if (segments.empty()) fail(ErrorKind::ShapeMismatch, "segment_mean_rows: no segments");
  Tensor<Real> out({segments.size(), n});
  for (std::size_t s = 0; s < segments.size(); ++s) {
    const auto [b, e] = segments[s];
    if (b >= e || e > xv.rows()) fail(ErrorKind::ShapeMismatch, "segment_mean_rows: invalid segment");
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t i = b; i < e; ++i) acc += xv[i * n + j];
      out[s * n + j] = static_cast<Real>(acc / static_cast<double>(e - b));
    }
  }
  return x.graph->record(OpTag::SegmentMean, {x.id}, std::move(out), [n, segments](Graph<Real>& g, std::size_t self) {
    std::span<const Real> dy = g.grad_of(self);
    auto& dx = g.grad_buffer(g.inputs(self)[0]);
    for (std::size_t s = 0; s < segments.size(); ++s) {
      const auto [b, e] = segments[s];
      const Real inv = Real(1) / static_cast<Real>(e - b);
      for (std::size_t i = b; i < e; ++i)
        for (std::size_t j = 0; j < n; ++j) dx[i * n + j] += dy[s * n + j] * inv;
    }
  });
}

#define PATHM3_INSTANTIATE_OPS(Real)                                                          \
  template Var<Real> matmul(Var<Real>, Var<Real>);                                            \
  template Var<Real> matmul_nt(Var<Real>, Var<Real>);                                         \
  template Var<Real> transpose(Var<Real>);                                                    \
  template Var<Real> add(Var<Real>, Var<Real>);                                               \
  template Var<Real> sub(Var<Real>, Var<Real>);                                               \
  template Var<Real> mul(Var<Real>, Var<Real>);                                               \
  template Var<Real> scale(Var<Real>, Real);                                                  \
  template Var<Real> add_bias(Var<Real>, Var<Real>);                                          \
  template Var<Real> identity_minus(Var<Real>, Real);                                         \
  template Var<Real> div_scalar(Var<Real>, Var<Real>);                                        \
  template Var<Real> max_abs_col_sum(Var<Real>);                                              \
  template Var<Real> max_abs_row_sum(Var<Real>);                                              \
  template Var<Real> softmax_rows(Var<Real>);                                                 \
  template Var<Real> causal_softmax_rows(Var<Real>);                                          \
  template Var<Real> layer_norm(Var<Real>, Var<Real>, Var<Real>, Real);                       \
  template Var<Real> gelu(Var<Real>);                                                         \
  template Var<Real> cross_entropy_from_logits(Var<Real>, int);                               \
  template Var<Real> token_cross_entropy(Var<Real>, std::span<const int>, int);               \
  template Var<Real> sum(Var<Real>);                                                          \
  template Var<Real> mean(Var<Real>);                                                         \
  template Var<Real> mean_rows(Var<Real>);                                                    \
  template Var<Real> slice_rows(Var<Real>, std::size_t, std::size_t);                         \
  template Var<Real> slice_cols(Var<Real>, std::size_t, std::size_t);                         \
  template Var<Real> concat_rows(std::span<const Var<Real>>);                                 \
  template Var<Real> concat_cols(std::span<const Var<Real>>);                                 \
  template Var<Real> embedding(Var<Real>, std::span<const int>);                              \
  template Var<Real> segment_mean_rows(Var<Real>, const SegmentBounds&);

PATHM3_INSTANTIATE_OPS(float)
PATHM3_INSTANTIATE_OPS(double)

#undef PATHM3_INSTANTIATE_OPS

}  // namespace pathm3
