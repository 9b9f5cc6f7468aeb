#include <atomic>
#include <cstdlib>
#include <stdexcept>
#include <string>

#include "s3ta/kernels.hpp"

namespace s3ta::kernels {
namespace {

Isa initial_isa() {
  Isa isa = detected_isa();
  if (const char* env = std::getenv("S3TA_ISA")) {
    const std::string v(env);
    if (v == "scalar") isa = Isa::kScalar;
    else if (v == "avx2" && isa_supported(Isa::kAvx2)) isa = Isa::kAvx2;
  }
  return isa;
}

std::atomic<Isa>& active() {
  static std::atomic<Isa> isa{initial_isa()};
  return isa;
}

}  // namespace

std::string_view isa_name(Isa isa) { return isa == Isa::kAvx2 ? "avx2" : "scalar"; }

bool isa_supported(Isa isa) {
  if (isa == Isa::kScalar) return true;
#if S3TA_HAVE_AVX2
  static const bool ok = __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
  return ok;
#else
  return false;
#endif
}

Isa detected_isa() { return isa_supported(Isa::kAvx2) ? Isa::kAvx2 : Isa::kScalar; }

Isa active_isa() { return active().load(std::memory_order_relaxed); }

void set_active_isa(Isa isa) {
  if (!isa_supported(isa))
    throw std::invalid_argument("ISA not supported on this machine: " + std::string(isa_name(isa)));
  active().store(isa, std::memory_order_relaxed);
}

template <typename T>
T dot(std::span<const T> x, std::span<const T> y) {
  if (x.size() != y.size()) throw std::invalid_argument("dot: length mismatch");
#if S3TA_HAVE_AVX2
  if (active_isa() == Isa::kAvx2) return avx2::dot(x.data(), y.data(), x.size());
#endif
  return scalar::dot(x.data(), y.data(), x.size());
}

template <typename T>
void axpy(T alpha, std::span<const T> x, std::span<T> y) {
  if (x.size() != y.size()) throw std::invalid_argument("axpy: length mismatch");
#if S3TA_HAVE_AVX2
  if (active_isa() == Isa::kAvx2) return avx2::axpy(alpha, x.data(), y.data(), x.size());
#endif
  scalar::axpy(alpha, x.data(), y.data(), x.size());
}

template <typename T>
void gemv(Trans trans, int m, int n, T alpha, const T* a, int lda, const T* x, T beta, T* y) {
  const auto cols = static_cast<std::size_t>(n);
  if (trans == Trans::kNo) {
    for (int i = 0; i < m; ++i) {
      const T v = alpha * dot(std::span<const T>(a + static_cast<std::ptrdiff_t>(i) * lda, cols),
                              std::span<const T>(x, cols));
      y[i] = beta == T(0) ? v : v + beta * y[i];
    }
    return;
  }
  for (int j = 0; j < n; ++j) y[j] = beta == T(0) ? T(0) : beta * y[j];
  for (int i = 0; i < m; ++i)
    axpy(alpha * x[i], std::span<const T>(a + static_cast<std::ptrdiff_t>(i) * lda, cols),
         std::span<T>(y, cols));
}

template <typename T>
void ger(int m, int n, T alpha, const T* x, const T* y, T* a, int lda) {
  const auto cols = static_cast<std::size_t>(n);
  for (int i = 0; i < m; ++i)
    axpy(alpha * x[i], std::span<const T>(y, cols),
         std::span<T>(a + static_cast<std::ptrdiff_t>(i) * lda, cols));
}

template <typename T>
void gemm(Trans ta, Trans tb, int m, int n, int k, T alpha, const T* a, int lda, const T* b, int ldb,
          T beta, T* c, int ldc) {
#if S3TA_HAVE_AVX2
  if (active_isa() == Isa::kAvx2) return avx2::gemm(ta, tb, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
#endif
  scalar::gemm(ta, tb, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}

template float dot<float>(std::span<const float>, std::span<const float>);
template double dot<double>(std::span<const double>, std::span<const double>);
template void axpy<float>(float, std::span<const float>, std::span<float>);
template void axpy<double>(double, std::span<const double>, std::span<double>);
template void gemv<float>(Trans, int, int, float, const float*, int, const float*, float, float*);
template void gemv<double>(Trans, int, int, double, const double*, int, const double*, double, double*);
template void ger<float>(int, int, float, const float*, const float*, float*, int);
template void ger<double>(int, int, double, const double*, const double*, double*, int);
template void gemm<float>(Trans, Trans, int, int, int, float, const float*, int, const float*, int,
                          float, float*, int);
template void gemm<double>(Trans, Trans, int, int, int, double, const double*, int, const double*,
                           int, double, double*, int);

}  // namespace s3ta::kernels
