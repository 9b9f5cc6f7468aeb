#pragma once

// Dense linear-algebra kernels used by every layer of the network.
//
// Each kernel has a portable scalar reference and an AVX2/FMA variant. The
// variant is chosen once at startup from the CPU feature bits and can be
// overridden with S3TA_ISA=scalar|avx2 or set_active_isa(). Matrices are
// row-major with explicit leading dimensions, BLAS style.

#include <cstddef>
#include <span>
#include <string_view>

namespace s3ta::kernels {

enum class Isa { kScalar, kAvx2 };
enum class Trans { kNo, kYes };

std::string_view isa_name(Isa isa);

/// Best ISA this CPU (and this build) supports.
Isa detected_isa();
/// ISA used by the dispatching entry points below.
Isa active_isa();
/// Throws std::invalid_argument if `isa` is not supported here.
void set_active_isa(Isa isa);
bool isa_supported(Isa isa);

template <typename T>
T dot(std::span<const T> x, std::span<const T> y);

// y += alpha * x
template <typename T>
void axpy(T alpha, std::span<const T> x, std::span<T> y);

// y = alpha * op(A) x + beta * y, A is m x n.
template <typename T>
void gemv(Trans trans, int m, int n, T alpha, const T* a, int lda, const T* x, T beta, T* y);

// A += alpha * x y^T, A is m x n.
template <typename T>
void ger(int m, int n, T alpha, const T* x, const T* y, T* a, int lda);

// C = alpha * op(A) op(B) + beta * C, C is m x n, the inner dimension is k.
template <typename T>
void gemm(Trans ta, Trans tb, int m, int n, int k, T alpha, const T* a, int lda, const T* b, int ldb,
          T beta, T* c, int ldc);

// Per-ISA entry points, exposed for equivalence testing.
namespace scalar {
template <typename T>
T dot(const T* x, const T* y, std::size_t n);
template <typename T>
void axpy(T alpha, const T* x, T* y, std::size_t n);
template <typename T>
void gemm(Trans ta, Trans tb, int m, int n, int k, T alpha, const T* a, int lda, const T* b, int ldb,
          T beta, T* c, int ldc);
}  // namespace scalar

#if S3TA_HAVE_AVX2
namespace avx2 {
template <typename T>
T dot(const T* x, const T* y, std::size_t n);
template <typename T>
void axpy(T alpha, const T* x, T* y, std::size_t n);
template <typename T>
void gemm(Trans ta, Trans tb, int m, int n, int k, T alpha, const T* a, int lda, const T* b, int ldb,
          T beta, T* c, int ldc);
}  // namespace avx2
#endif

}  // namespace s3ta::kernels
