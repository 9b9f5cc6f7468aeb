// AVX2/FMA kernels. This translation unit is compiled with -mavx2 -mfma and
// must only be entered after dispatch.cpp has confirmed CPU support.

#include <immintrin.h>

#include <memory>

#include "s3ta/kernels.hpp"

namespace s3ta::kernels::avx2 {
namespace {

template <typename T>
struct Vec;

template <>
struct Vec<float> {
  using Reg = __m256;
  static constexpr int kWidth = 8;
  static Reg zero() { return _mm256_setzero_ps(); }
  static Reg set1(float v) { return _mm256_set1_ps(v); }
  static Reg load(const float* p) { return _mm256_loadu_ps(p); }
  static void store(float* p, Reg v) { _mm256_storeu_ps(p, v); }
  static Reg fmadd(Reg a, Reg b, Reg c) { return _mm256_fmadd_ps(a, b, c); }
  static Reg add(Reg a, Reg b) { return _mm256_add_ps(a, b); }
  static float hsum(Reg v) {
    __m128 lo = _mm256_castps256_ps128(v);
    __m128 hi = _mm256_extractf128_ps(v, 1);
    lo = _mm_add_ps(lo, hi);
    __m128 shuf = _mm_movehdup_ps(lo);
    __m128 sums = _mm_add_ps(lo, shuf);
    shuf = _mm_movehl_ps(shuf, sums);
    sums = _mm_add_ss(sums, shuf);
    return _mm_cvtss_f32(sums);
  }
};

template <>
struct Vec<double> {
  using Reg = __m256d;
  static constexpr int kWidth = 4;
  static Reg zero() { return _mm256_setzero_pd(); }
  static Reg set1(double v) { return _mm256_set1_pd(v); }
  static Reg load(const double* p) { return _mm256_loadu_pd(p); }
  static void store(double* p, Reg v) { _mm256_storeu_pd(p, v); }
  static Reg fmadd(Reg a, Reg b, Reg c) { return _mm256_fmadd_pd(a, b, c); }
  static Reg add(Reg a, Reg b) { return _mm256_add_pd(a, b); }
  static double hsum(Reg v) {
    __m128d lo = _mm256_castpd256_pd128(v);
    __m128d hi = _mm256_extractf128_pd(v, 1);
    lo = _mm_add_pd(lo, hi);
    __m128d hi64 = _mm_unpackhi_pd(lo, lo);
    return _mm_cvtsd_f64(_mm_add_sd(lo, hi64));
  }
};

// C[i, j0:j0+2W] (rows i..i+R) += alpha * sum_p opA(i, p) * B[p, j0:...]
// opA(i, p) = a[i * ars + p * acs]; B rows are contiguous with stride ldb.
template <typename T, int R>
void tile(int k, T alpha, const T* a, int ars, int acs, const T* b, int ldb, T* c, int ldc) {
  using V = Vec<T>;
  typename V::Reg acc[R][2];
  for (int r = 0; r < R; ++r) acc[r][0] = acc[r][1] = V::zero();
  for (int p = 0; p < k; ++p) {
    const T* brow = b + static_cast<std::ptrdiff_t>(p) * ldb;
    const auto b0 = V::load(brow);
    const auto b1 = V::load(brow + V::kWidth);
    for (int r = 0; r < R; ++r) {
      const auto av = V::set1(a[r * ars + p * acs]);
      acc[r][0] = V::fmadd(av, b0, acc[r][0]);
      acc[r][1] = V::fmadd(av, b1, acc[r][1]);
    }
  }
  const auto va = V::set1(alpha);
  for (int r = 0; r < R; ++r) {
    T* crow = c + static_cast<std::ptrdiff_t>(r) * ldc;
    V::store(crow, V::fmadd(va, acc[r][0], V::load(crow)));
    V::store(crow + V::kWidth, V::fmadd(va, acc[r][1], V::load(crow + V::kWidth)));
  }
}

// Column remainder: plain loops, C already scaled by beta.
template <typename T>
void edge(int rows, int cols, int k, T alpha, const T* a, int ars, int acs, const T* b, int ldb, T* c,
          int ldc) {
  for (int r = 0; r < rows; ++r) {
    for (int j = 0; j < cols; ++j) {
      T acc = 0;
      for (int p = 0; p < k; ++p) acc += a[r * ars + p * acs] * b[p * ldb + j];
      c[r * ldc + j] += alpha * acc;
    }
  }
}

template <typename T>
void gemm_impl(Trans ta, Trans tb, int m, int n, int k, T alpha, const T* a, int lda, const T* b,
               int ldb, T beta, T* c, int ldc) {
  using V = Vec<T>;
  for (int i = 0; i < m; ++i) {
    T* crow = c + static_cast<std::ptrdiff_t>(i) * ldc;
    if (beta == T(0)) {
      for (int j = 0; j < n; ++j) crow[j] = 0;
    } else if (beta != T(1)) {
      for (int j = 0; j < n; ++j) crow[j] *= beta;
    }
  }
  if (k == 0 || alpha == T(0)) return;

  // The micro-kernel wants op(B) rows contiguous; pack B^T when needed.
  // Raw array rather than std::vector: library templates instantiated here
  // would be compiled with AVX2 and could be picked by the linker elsewhere.
  std::unique_ptr<T[]> packed;
  if (tb == Trans::kYes) {
    packed.reset(new T[static_cast<std::size_t>(k) * n]);
    for (int j = 0; j < n; ++j)
      for (int p = 0; p < k; ++p) packed[static_cast<std::size_t>(p) * n + j] = b[j * ldb + p];
    b = packed.get();
    ldb = n;
  }
  const int ars = ta == Trans::kNo ? lda : 1;
  const int acs = ta == Trans::kNo ? 1 : lda;

  constexpr int kRows = 4;
  constexpr int kCols = 2 * V::kWidth;
  const int n_main = n - n % kCols;
  int i = 0;
  for (; i + kRows <= m; i += kRows) {
    const T* ai = a + static_cast<std::ptrdiff_t>(i) * ars;
    T* ci = c + static_cast<std::ptrdiff_t>(i) * ldc;
    for (int j = 0; j < n_main; j += kCols) tile<T, kRows>(k, alpha, ai, ars, acs, b + j, ldb, ci + j, ldc);
    if (n_main < n) edge(kRows, n - n_main, k, alpha, ai, ars, acs, b + n_main, ldb, ci + n_main, ldc);
  }
  for (; i < m; ++i) {
    const T* ai = a + static_cast<std::ptrdiff_t>(i) * ars;
    T* ci = c + static_cast<std::ptrdiff_t>(i) * ldc;
    for (int j = 0; j < n_main; j += kCols) tile<T, 1>(k, alpha, ai, ars, acs, b + j, ldb, ci + j, ldc);
    if (n_main < n) edge(1, n - n_main, k, alpha, ai, ars, acs, b + n_main, ldb, ci + n_main, ldc);
  }
}

}  // namespace

template <typename T>
T dot(const T* x, const T* y, std::size_t n) {
  using V = Vec<T>;
  constexpr std::size_t w = V::kWidth;
  auto a0 = V::zero(), a1 = V::zero(), a2 = V::zero(), a3 = V::zero();
  std::size_t i = 0;
  for (; i + 4 * w <= n; i += 4 * w) {
    a0 = V::fmadd(V::load(x + i), V::load(y + i), a0);
    a1 = V::fmadd(V::load(x + i + w), V::load(y + i + w), a1);
    a2 = V::fmadd(V::load(x + i + 2 * w), V::load(y + i + 2 * w), a2);
    a3 = V::fmadd(V::load(x + i + 3 * w), V::load(y + i + 3 * w), a3);
  }
  for (; i + w <= n; i += w) a0 = V::fmadd(V::load(x + i), V::load(y + i), a0);
  T acc = V::hsum(V::add(V::add(a0, a1), V::add(a2, a3)));
  for (; i < n; ++i) acc += x[i] * y[i];
  return acc;
}

template <typename T>
void axpy(T alpha, const T* x, T* y, std::size_t n) {
  using V = Vec<T>;
  constexpr std::size_t w = V::kWidth;
  const auto va = V::set1(alpha);
  std::size_t i = 0;
  for (; i + 2 * w <= n; i += 2 * w) {
    V::store(y + i, V::fmadd(va, V::load(x + i), V::load(y + i)));
    V::store(y + i + w, V::fmadd(va, V::load(x + i + w), V::load(y + i + w)));
  }
  for (; i + w <= n; i += w) V::store(y + i, V::fmadd(va, V::load(x + i), V::load(y + i)));
  for (; i < n; ++i) y[i] += alpha * x[i];
}

template <typename T>
void gemm(Trans ta, Trans tb, int m, int n, int k, T alpha, const T* a, int lda, const T* b, int ldb,
          T beta, T* c, int ldc) {
  gemm_impl(ta, tb, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}

template float dot<float>(const float*, const float*, std::size_t);
template double dot<double>(const double*, const double*, std::size_t);
template void axpy<float>(float, const float*, float*, std::size_t);
template void axpy<double>(double, const double*, double*, std::size_t);
template void gemm<float>(Trans, Trans, int, int, int, float, const float*, int, const float*, int,
                          float, float*, int);
template void gemm<double>(Trans, Trans, int, int, int, double, const double*, int, const double*,
                           int, double, double*, int);

}  // namespace s3ta::kernels::avx2
