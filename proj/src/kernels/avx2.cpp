// Compiled with -mavx2 -mfma. Only called after a runtime CPU check.

#include "cgl/kernels.hpp"

#if CGL_HAVE_AVX2_KERNELS

#include <immintrin.h>

#include <cmath>

namespace cgl::kernels::avx2 {
namespace {

struct F32 {
  using T = float;
  using V = __m256;
  static constexpr std::size_t lanes = 8;
  static V load(const T* p) { return _mm256_loadu_ps(p); }
  static void store(T* p, V v) { _mm256_storeu_ps(p, v); }
  static V set1(T x) { return _mm256_set1_ps(x); }
  static V fmadd(V a, V b, V c) { return _mm256_fmadd_ps(a, b, c); }
  static V mul(V a, V b) { return _mm256_mul_ps(a, b); }
  static V sub(V a, V b) { return _mm256_sub_ps(a, b); }
};

struct F64 {
  using T = double;
  using V = __m256d;
  static constexpr std::size_t lanes = 4;
  static V load(const T* p) { return _mm256_loadu_pd(p); }
  static void store(T* p, V v) { _mm256_storeu_pd(p, v); }
  static V set1(T x) { return _mm256_set1_pd(x); }
  static V fmadd(V a, V b, V c) { return _mm256_fmadd_pd(a, b, c); }
  static V mul(V a, V b) { return _mm256_mul_pd(a, b); }
  static V sub(V a, V b) { return _mm256_sub_pd(a, b); }
};

// 4 x (2 * lanes) register tile, k ascending.
template <typename S>
inline void tile_4x2(std::size_t k, const typename S::T* a, std::size_t lda,
                     const typename S::T* b, std::size_t ldb, typename S::T* c,
                     std::size_t ldc) {
  using V = typename S::V;
  constexpr std::size_t L = S::lanes;
  V c00 = S::load(c), c01 = S::load(c + L);
  V c10 = S::load(c + ldc), c11 = S::load(c + ldc + L);
  V c20 = S::load(c + 2 * ldc), c21 = S::load(c + 2 * ldc + L);
  V c30 = S::load(c + 3 * ldc), c31 = S::load(c + 3 * ldc + L);
  for (std::size_t p = 0; p < k; ++p) {
    const V b0 = S::load(b + p * ldb);
    const V b1 = S::load(b + p * ldb + L);
    V av = S::set1(a[p]);
    c00 = S::fmadd(av, b0, c00);
    c01 = S::fmadd(av, b1, c01);
    av = S::set1(a[lda + p]);
    c10 = S::fmadd(av, b0, c10);
    c11 = S::fmadd(av, b1, c11);
    av = S::set1(a[2 * lda + p]);
    c20 = S::fmadd(av, b0, c20);
    c21 = S::fmadd(av, b1, c21);
    av = S::set1(a[3 * lda + p]);
    c30 = S::fmadd(av, b0, c30);
    c31 = S::fmadd(av, b1, c31);
  }
  S::store(c, c00);
  S::store(c + L, c01);
  S::store(c + ldc, c10);
  S::store(c + ldc + L, c11);
  S::store(c + 2 * ldc, c20);
  S::store(c + 2 * ldc + L, c21);
  S::store(c + 3 * ldc, c30);
  S::store(c + 3 * ldc + L, c31);
}

// 1 x lanes tile.
template <typename S>
inline void tile_1x1(std::size_t k, const typename S::T* a, const typename S::T* b,
                     std::size_t ldb, typename S::T* c) {
  auto acc = S::load(c);
  for (std::size_t p = 0; p < k; ++p) acc = S::fmadd(S::set1(a[p]), S::load(b + p * ldb), acc);
  S::store(c, acc);
}

template <typename S>
void gemm_impl(std::size_t m, std::size_t n, std::size_t k, const typename S::T* a,
               std::size_t lda, const typename S::T* b, std::size_t ldb, typename S::T* c,
               std::size_t ldc) {
  constexpr std::size_t L = S::lanes;
  const std::size_t n_wide = n - n % (2 * L);
  const std::size_t n_vec = n - n % L;
  const std::size_t m4 = m - m % 4;
  for (std::size_t i = 0; i < m4; i += 4) {
    for (std::size_t j = 0; j < n_wide; j += 2 * L) {
      tile_4x2<S>(k, a + i * lda, lda, b + j, ldb, c + i * ldc + j, ldc);
    }
  }
  for (std::size_t i = m4; i < m; ++i) {
    for (std::size_t j = 0; j < n_wide; j += L) {
      tile_1x1<S>(k, a + i * lda, b + j, ldb, c + i * ldc + j);
    }
  }
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = n_wide; j < n_vec; j += L) {
      tile_1x1<S>(k, a + i * lda, b + j, ldb, c + i * ldc + j);
    }
    for (std::size_t j = n_vec; j < n; ++j) {
      auto acc = c[i * ldc + j];
      for (std::size_t p = 0; p < k; ++p) acc = std::fma(a[i * lda + p], b[p * ldb + j], acc);
      c[i * ldc + j] = acc;
    }
  }
}

template <typename S>
void axpy_impl(std::size_t n, typename S::T alpha, const typename S::T* x, typename S::T* y) {
  constexpr std::size_t L = S::lanes;
  const auto av = S::set1(alpha);
  std::size_t i = 0;
  for (; i + L <= n; i += L) S::store(y + i, S::fmadd(av, S::load(x + i), S::load(y + i)));
  for (; i < n; ++i) y[i] = std::fma(alpha, x[i], y[i]);
}

template <typename S>
void momentum_impl(std::size_t n, typename S::T lr, typename S::T momentum, typename S::T* p,
                   typename S::T* v, const typename S::T* g) {
  constexpr std::size_t L = S::lanes;
  const auto mv = S::set1(momentum);
  const auto lv = S::set1(lr);
  std::size_t i = 0;
  for (; i + L <= n; i += L) {
    const auto vn = S::fmadd(mv, S::load(v + i), S::load(g + i));
    S::store(v + i, vn);
    S::store(p + i, S::sub(S::load(p + i), S::mul(lv, vn)));
  }
  for (; i < n; ++i) {
    v[i] = std::fma(momentum, v[i], g[i]);
    p[i] = p[i] - lr * v[i];
  }
}

}  // namespace

void gemm(std::size_t m, std::size_t n, std::size_t k, const float* a, std::size_t lda,
          const float* b, std::size_t ldb, float* c, std::size_t ldc) {
  gemm_impl<F32>(m, n, k, a, lda, b, ldb, c, ldc);
}
void gemm(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda,
          const double* b, std::size_t ldb, double* c, std::size_t ldc) {
  gemm_impl<F64>(m, n, k, a, lda, b, ldb, c, ldc);
}
void axpy(std::size_t n, float alpha, const float* x, float* y) { axpy_impl<F32>(n, alpha, x, y); }
void axpy(std::size_t n, double alpha, const double* x, double* y) {
  axpy_impl<F64>(n, alpha, x, y);
}
void momentum_update(std::size_t n, float lr, float momentum, float* p, float* v, const float* g) {
  momentum_impl<F32>(n, lr, momentum, p, v, g);
}
void momentum_update(std::size_t n, double lr, double momentum, double* p, double* v,
                     const double* g) {
  momentum_impl<F64>(n, lr, momentum, p, v, g);
}

}  // namespace cgl::kernels::avx2

#endif
