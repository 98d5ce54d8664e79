#include <atomic>
#include <cstdlib>
#include <stdexcept>
#include <string>

#include "cgl/kernels.hpp"

namespace cgl::kernels {
namespace {

bool cpu_has_avx2() {
#if CGL_HAVE_AVX2_KERNELS && (defined(__GNUC__) || defined(__clang__))
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

// CGL_SIMD=scalar|avx2|auto picks the variant for the whole process.
Isa initial_isa() {
  const bool has = cpu_has_avx2();
  if (const char* env = std::getenv("CGL_SIMD")) {
    const std::string v = env;
    if (v == "scalar") return Isa::scalar;
    if (v == "avx2" && has) return Isa::avx2;
  }
  return has ? Isa::avx2 : Isa::scalar;
}

std::atomic<Isa>& current() {
  static std::atomic<Isa> isa{initial_isa()};
  return isa;
}

}  // namespace

Isa active_isa() { return current().load(std::memory_order_relaxed); }

bool avx2_available() {
  static const bool has = cpu_has_avx2();
  return has;
}

void set_isa(Isa isa) {
  if (isa == Isa::avx2 && !avx2_available()) {
    throw std::runtime_error("AVX2 kernels requested but not supported on this CPU");
  }
  current().store(isa, std::memory_order_relaxed);
}

std::string_view isa_name(Isa isa) { return isa == Isa::avx2 ? "avx2" : "scalar"; }

#if CGL_HAVE_AVX2_KERNELS
#define CGL_DISPATCH(fn, ...)                                            \
  do {                                                                   \
    if (active_isa() == Isa::avx2) return avx2::fn(__VA_ARGS__);         \
    return scalar::fn(__VA_ARGS__);                                      \
  } while (0)
#else
#define CGL_DISPATCH(fn, ...) return scalar::fn(__VA_ARGS__)
#endif

void gemm(std::size_t m, std::size_t n, std::size_t k, const float* a, std::size_t lda,
          const float* b, std::size_t ldb, float* c, std::size_t ldc) {
  CGL_DISPATCH(gemm, m, n, k, a, lda, b, ldb, c, ldc);
}
void gemm(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda,
          const double* b, std::size_t ldb, double* c, std::size_t ldc) {
  CGL_DISPATCH(gemm, m, n, k, a, lda, b, ldb, c, ldc);
}
void axpy(std::size_t n, float alpha, const float* x, float* y) { CGL_DISPATCH(axpy, n, alpha, x, y); }
void axpy(std::size_t n, double alpha, const double* x, double* y) {
  CGL_DISPATCH(axpy, n, alpha, x, y);
}
void momentum_update(std::size_t n, float lr, float momentum, float* p, float* v, const float* g) {
  CGL_DISPATCH(momentum_update, n, lr, momentum, p, v, g);
}
void momentum_update(std::size_t n, double lr, double momentum, double* p, double* v,
                     const double* g) {
  CGL_DISPATCH(momentum_update, n, lr, momentum, p, v, g);
}

#undef CGL_DISPATCH

}  // namespace cgl::kernels
