#include "cgl/kernels.hpp"

namespace cgl::kernels::scalar {
namespace {

// i-k-j loop order: each C element sums its k terms in ascending order, the
// same order the vector kernels use per lane.
template <typename T>
void gemm_impl(std::size_t m, std::size_t n, std::size_t k, const T* a, std::size_t lda,
               const T* b, std::size_t ldb, T* c, std::size_t ldc) {
  for (std::size_t i = 0; i < m; ++i) {
    T* crow = c + i * ldc;
    const T* arow = a + i * lda;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = arow[p];
      const T* brow = b + p * ldb;
      for (std::size_t j = 0; j < n; ++j) {
        crow[j] = crow[j] + av * brow[j];
      }
    }
  }
}

template <typename T>
void axpy_impl(std::size_t n, T alpha, const T* x, T* y) {
  for (std::size_t i = 0; i < n; ++i) y[i] = y[i] + alpha * x[i];
}

template <typename T>
void momentum_impl(std::size_t n, T lr, T momentum, T* p, T* v, const T* g) {
  for (std::size_t i = 0; i < n; ++i) {
    v[i] = momentum * v[i] + g[i];
    p[i] = p[i] - lr * v[i];
  }
}

}  // namespace

void gemm(std::size_t m, std::size_t n, std::size_t k, const float* a, std::size_t lda,
          const float* b, std::size_t ldb, float* c, std::size_t ldc) {
  gemm_impl(m, n, k, a, lda, b, ldb, c, ldc);
}
void gemm(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda,
          const double* b, std::size_t ldb, double* c, std::size_t ldc) {
  gemm_impl(m, n, k, a, lda, b, ldb, c, ldc);
}
void axpy(std::size_t n, float alpha, const float* x, float* y) { axpy_impl(n, alpha, x, y); }
void axpy(std::size_t n, double alpha, const double* x, double* y) { axpy_impl(n, alpha, x, y); }
void momentum_update(std::size_t n, float lr, float momentum, float* p, float* v, const float* g) {
  momentum_impl(n, lr, momentum, p, v, g);
}
void momentum_update(std::size_t n, double lr, double momentum, double* p, double* v,
                     const double* g) {
  momentum_impl(n, lr, momentum, p, v, g);
}

}  // namespace cgl::kernels::scalar
