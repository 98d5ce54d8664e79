#pragma once

// Dense arithmetic kernels behind the tensor engine.
//
// Every kernel has a portable scalar reference in namespace `scalar` and, on
// x86-64, an AVX2+FMA variant in namespace `avx2`. The free functions in
// `cgl::kernels` forward to whichever variant was selected at startup.
//
// Both variants accumulate every output element in the same order (ascending
// reduction index); they differ only in that the AVX2 path fuses multiply and
// add. Within one process the selection never changes, so results are
// bit-reproducible run to run.

#include <cstddef>
#include <string_view>

namespace cgl::kernels {

enum class Isa { scalar, avx2 };

/// Variant currently used by the dispatching entry points.
Isa active_isa();

/// True when the CPU (and the build) can run the AVX2 variants.
bool avx2_available();

/// Overrides the automatic choice. Requesting avx2 on a machine without it
/// throws std::runtime_error. Intended for tests and benchmarking.
void set_isa(Isa isa);

std::string_view isa_name(Isa isa);

// C[m x n] += A[m x k] * B[k x n], all row-major with explicit leading dims.
void gemm(std::size_t m, std::size_t n, std::size_t k, const float* a, std::size_t lda,
          const float* b, std::size_t ldb, float* c, std::size_t ldc);
void gemm(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda,
          const double* b, std::size_t ldb, double* c, std::size_t ldc);

// y += alpha * x
void axpy(std::size_t n, float alpha, const float* x, float* y);
void axpy(std::size_t n, double alpha, const double* x, double* y);

// v = momentum * v + g;  p -= lr * v
void momentum_update(std::size_t n, float lr, float momentum, float* p, float* v, const float* g);
void momentum_update(std::size_t n, double lr, double momentum, double* p, double* v,
                     const double* g);

namespace scalar {
void gemm(std::size_t m, std::size_t n, std::size_t k, const float* a, std::size_t lda,
          const float* b, std::size_t ldb, float* c, std::size_t ldc);
void gemm(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda,
          const double* b, std::size_t ldb, double* c, std::size_t ldc);
void axpy(std::size_t n, float alpha, const float* x, float* y);
void axpy(std::size_t n, double alpha, const double* x, double* y);
void momentum_update(std::size_t n, float lr, float momentum, float* p, float* v, const float* g);
void momentum_update(std::size_t n, double lr, double momentum, double* p, double* v,
                     const double* g);
}  // namespace scalar

#if defined(__x86_64__) || defined(_M_X64)
#define CGL_HAVE_AVX2_KERNELS 1
namespace avx2 {
void gemm(std::size_t m, std::size_t n, std::size_t k, const float* a, std::size_t lda,
          const float* b, std::size_t ldb, float* c, std::size_t ldc);
void gemm(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda,
          const double* b, std::size_t ldb, double* c, std::size_t ldc);
void axpy(std::size_t n, float alpha, const float* x, float* y);
void axpy(std::size_t n, double alpha, const double* x, double* y);
void momentum_update(std::size_t n, float lr, float momentum, float* p, float* v, const float* g);
void momentum_update(std::size_t n, double lr, double momentum, double* p, double* v,
                     const double* g);
}  // namespace avx2
#else
#define CGL_HAVE_AVX2_KERNELS 0
#endif

}  // namespace cgl::kernels
