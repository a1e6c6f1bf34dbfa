#pragma once

#include <algorithm>
#include <cstddef>
#include <span>

// Dense row-major GEMM kernels. Every output entry is a sequential sum over
// the inner dimension in double, rounded to Real once, so results do not
// depend on the tiling below.
namespace pathm3::kernels {

namespace detail {

// C(i,j) (+)= Σ_t A(i,t)·B(t,j) with A(i,t) = a[i*ars + t*acs] and
// B(t,j) = b[t*brs + j*bcs]. 4×4 register tiles, scalar edges.
template <typename Real>
void gemm_strided(std::size_t m, std::size_t k, std::size_t n, const Real* a, std::size_t ars, std::size_t acs,
                  const Real* b, std::size_t brs, std::size_t bcs, Real* c, bool accumulate) {
  constexpr std::size_t T = 4;
  auto store = [&](std::size_t i, std::size_t j, double v) {
    Real& out = c[i * n + j];
    out = accumulate ? static_cast<Real>(out + v) : static_cast<Real>(v);
  };
  const std::size_t m4 = m - m % T, n4 = n - n % T;
  for (std::size_t i = 0; i < m4; i += T) {
    for (std::size_t j = 0; j < n4; j += T) {
      double acc[T][T] = {};
      for (std::size_t t = 0; t < k; ++t) {
        double av[T], bv[T];
        for (std::size_t r = 0; r < T; ++r) av[r] = a[(i + r) * ars + t * acs];
        for (std::size_t s = 0; s < T; ++s) bv[s] = b[t * brs + (j + s) * bcs];
        for (std::size_t r = 0; r < T; ++r)
          for (std::size_t s = 0; s < T; ++s) acc[r][s] += av[r] * bv[s];
      }
      for (std::size_t r = 0; r < T; ++r)
        for (std::size_t s = 0; s < T; ++s) store(i + r, j + s, acc[r][s]);
    }
  }
  auto scalar = [&](std::size_t i, std::size_t j) {
    double acc = 0.0;
    for (std::size_t t = 0; t < k; ++t) acc += static_cast<double>(a[i * ars + t * acs]) * b[t * brs + j * bcs];
    store(i, j, acc);
  };
  for (std::size_t i = 0; i < m4; ++i)
    for (std::size_t j = n4; j < n; ++j) scalar(i, j);
  for (std::size_t i = m4; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) scalar(i, j);
}

}  // namespace detail

// C[m×n] (+)= A[m×k] · B[k×n]
template <typename Real>
void gemm_nn(std::size_t m, std::size_t k, std::size_t n, std::span<const Real> a, std::span<const Real> b,
             std::span<Real> c, bool accumulate) {
  detail::gemm_strided(m, k, n, a.data(), k, 1, b.data(), n, 1, c.data(), accumulate);
}

// C[m×n] (+)= A[m×k] · B[n×k]ᵀ
template <typename Real>
void gemm_nt(std::size_t m, std::size_t k, std::size_t n, std::span<const Real> a, std::span<const Real> b,
             std::span<Real> c, bool accumulate) {
  detail::gemm_strided(m, k, n, a.data(), k, 1, b.data(), 1, k, c.data(), accumulate);
}

// C[m×n] (+)= A[k×m]ᵀ · B[k×n]
template <typename Real>
void gemm_tn(std::size_t m, std::size_t k, std::size_t n, std::span<const Real> a, std::span<const Real> b,
             std::span<Real> c, bool accumulate) {
  detail::gemm_strided(m, k, n, a.data(), 1, m, b.data(), n, 1, c.data(), accumulate);
}

}  // namespace pathm3::kernels
