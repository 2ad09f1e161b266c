// AVX2 + FMA kernel variants. This translation unit is compiled with
// -mavx2 -mfma and must only be entered after the runtime CPUID check.

#include "chartnet/simd/kernels.hpp"

#if defined(__AVX2__) && defined(__FMA__)

#include <immintrin.h>

#include <cmath>
#include <vector>

namespace chartnet::simd {
namespace {

template <class T>
struct Vec;

template <>
struct Vec<float> {
  using reg = __m256;
  static constexpr int width = 8;
  static reg zero() { return _mm256_setzero_ps(); }
  static reg set1(float x) { return _mm256_set1_ps(x); }
  static reg load(const float* p) { return _mm256_loadu_ps(p); }
  static void store(float* p, reg v) { _mm256_storeu_ps(p, v); }
  static reg add(reg a, reg b) { return _mm256_add_ps(a, b); }
  static reg mul(reg a, reg b) { return _mm256_mul_ps(a, b); }
  static reg div(reg a, reg b) { return _mm256_div_ps(a, b); }
  static reg sqrt(reg a) { return _mm256_sqrt_ps(a); }
  static reg fmadd(reg a, reg b, reg c) { return _mm256_fmadd_ps(a, b, c); }
  static float hsum(reg x) {
    __m128 s = _mm_add_ps(_mm256_castps256_ps128(x), _mm256_extractf128_ps(x, 1));
    s = _mm_add_ps(s, _mm_movehl_ps(s, s));
    s = _mm_add_ss(s, _mm_movehdup_ps(s));
    return _mm_cvtss_f32(s);
  }
};

template <>
struct Vec<double> {
  using reg = __m256d;
  static constexpr int width = 4;
  static reg zero() { return _mm256_setzero_pd(); }
  static reg set1(double x) { return _mm256_set1_pd(x); }
  static reg load(const double* p) { return _mm256_loadu_pd(p); }
  static void store(double* p, reg v) { _mm256_storeu_pd(p, v); }
  static reg add(reg a, reg b) { return _mm256_add_pd(a, b); }
  static reg mul(reg a, reg b) { return _mm256_mul_pd(a, b); }
  static reg div(reg a, reg b) { return _mm256_div_pd(a, b); }
  static reg sqrt(reg a) { return _mm256_sqrt_pd(a); }
  static reg fmadd(reg a, reg b, reg c) { return _mm256_fmadd_pd(a, b, c); }
  static double hsum(reg x) {
    __m128d s = _mm_add_pd(_mm256_castpd256_pd128(x), _mm256_extractf128_pd(x, 1));
    s = _mm_add_sd(s, _mm_unpackhi_pd(s, s));
    return _mm_cvtsd_f64(s);
  }
};

// MR rows x NV vectors register tile over the full K extent.
template <class T, int MR, int NV>
inline void tile_nn(int K, const T* A, int lda, const T* B, int ldb, T* C, int ldc) {
  using V = Vec<T>;
  typename V::reg acc[MR][NV];
  for (int r = 0; r < MR; ++r)
    for (int v = 0; v < NV; ++v) acc[r][v] = V::zero();
  for (int k = 0; k < K; ++k) {
    const T* b = B + static_cast<std::size_t>(k) * ldb;
    typename V::reg bv[NV];
    for (int v = 0; v < NV; ++v) bv[v] = V::load(b + v * V::width);
    for (int r = 0; r < MR; ++r) {
      const typename V::reg a = V::set1(A[static_cast<std::size_t>(r) * lda + k]);
      for (int v = 0; v < NV; ++v) acc[r][v] = V::fmadd(a, bv[v], acc[r][v]);
    }
  }
  for (int r = 0; r < MR; ++r) {
    T* c = C + static_cast<std::size_t>(r) * ldc;
    for (int v = 0; v < NV; ++v)
      V::store(c + v * V::width, V::add(V::load(c + v * V::width), acc[r][v]));
  }
}

template <class T, int NV>
inline void rows_nn(int M, int K, const T* A, int lda, const T* B, int ldb, T* C, int ldc) {
  int i = 0;
  for (; i + 4 <= M; i += 4)
    tile_nn<T, 4, NV>(K, A + static_cast<std::size_t>(i) * lda, lda, B, ldb,
                      C + static_cast<std::size_t>(i) * ldc, ldc);
  const T* a = A + static_cast<std::size_t>(i) * lda;
  T* c = C + static_cast<std::size_t>(i) * ldc;
  switch (M - i) {
    case 3: tile_nn<T, 3, NV>(K, a, lda, B, ldb, c, ldc); break;
    case 2: tile_nn<T, 2, NV>(K, a, lda, B, ldb, c, ldc); break;
    case 1: tile_nn<T, 1, NV>(K, a, lda, B, ldb, c, ldc); break;
    default: break;
  }
}

template <class T>
void gemm_nn(int M, int N, int K, const T* A, int lda, const T* B, int ldb, T* C, int ldc) {
  constexpr int W = Vec<T>::width;
  int j = 0;
  for (; j + 3 * W <= N; j += 3 * W) rows_nn<T, 3>(M, K, A, lda, B + j, ldb, C + j, ldc);
  for (; j + W <= N; j += W) rows_nn<T, 1>(M, K, A, lda, B + j, ldb, C + j, ldc);
  if (j < N) {
    for (int i = 0; i < M; ++i) {
      const T* a = A + static_cast<std::size_t>(i) * lda;
      T* c = C + static_cast<std::size_t>(i) * ldc;
      for (int k = 0; k < K; ++k) {
        const T aik = a[k];
        const T* b = B + static_cast<std::size_t>(k) * ldb;
        for (int jj = j; jj < N; ++jj) c[jj] += aik * b[jj];
      }
    }
  }
}

template <class T>
T dot(const T* x, const T* y, std::size_t n) {
  using V = Vec<T>;
  constexpr std::size_t W = V::width;
  typename V::reg s0 = V::zero(), s1 = V::zero(), s2 = V::zero(), s3 = V::zero();
  std::size_t i = 0;
  for (; i + 4 * W <= n; i += 4 * W) {
    s0 = V::fmadd(V::load(x + i), V::load(y + i), s0);
    s1 = V::fmadd(V::load(x + i + W), V::load(y + i + W), s1);
    s2 = V::fmadd(V::load(x + i + 2 * W), V::load(y + i + 2 * W), s2);
    s3 = V::fmadd(V::load(x + i + 3 * W), V::load(y + i + 3 * W), s3);
  }
  for (; i + W <= n; i += W) s0 = V::fmadd(V::load(x + i), V::load(y + i), s0);
  T s = V::hsum(V::add(V::add(s0, s1), V::add(s2, s3)));
  for (; i < n; ++i) s += x[i] * y[i];
  return s;
}

template <class T>
void axpy(T a, const T* x, T* y, std::size_t n) {
  using V = Vec<T>;
  constexpr std::size_t W = V::width;
  const typename V::reg av = V::set1(a);
  std::size_t i = 0;
  for (; i + 2 * W <= n; i += 2 * W) {
    V::store(y + i, V::fmadd(av, V::load(x + i), V::load(y + i)));
    V::store(y + i + W, V::fmadd(av, V::load(x + i + W), V::load(y + i + W)));
  }
  for (; i + W <= n; i += W) V::store(y + i, V::fmadd(av, V::load(x + i), V::load(y + i)));
  for (; i < n; ++i) y[i] += a * x[i];
}

template <class T>
void fma_acc(const T* x, const T* z, T* y, std::size_t n) {
  using V = Vec<T>;
  constexpr std::size_t W = V::width;
  std::size_t i = 0;
  for (; i + W <= n; i += W) V::store(y + i, V::fmadd(V::load(x + i), V::load(z + i), V::load(y + i)));
  for (; i < n; ++i) y[i] += x[i] * z[i];
}

template <class T>
std::vector<T>& scratch() {
  thread_local std::vector<T> buf;
  return buf;
}

template <class T>
void gemm_nt(int M, int N, int K, const T* A, int lda, const T* B, int ldb, T* C, int ldc) {
  if (K < 16) {
    // Short inner dimension: per-element dots are mostly overhead, so
    // transpose B and run the row-streaming kernel instead.
    auto& bt = scratch<T>();
    bt.assign(static_cast<std::size_t>(K) * N, T(0));
    for (int j = 0; j < N; ++j)
      for (int k = 0; k < K; ++k) bt[static_cast<std::size_t>(k) * N + j] = B[static_cast<std::size_t>(j) * ldb + k];
    gemm_nn<T>(M, N, K, A, lda, bt.data(), N, C, ldc);
    return;
  }
  for (int i = 0; i < M; ++i) {
    const T* a = A + static_cast<std::size_t>(i) * lda;
    T* c = C + static_cast<std::size_t>(i) * ldc;
    for (int j = 0; j < N; ++j) c[j] += dot<T>(a, B + static_cast<std::size_t>(j) * ldb, K);
  }
}

template <class T>
void gemm_tn(int M, int N, int K, const T* A, int lda, const T* B, int ldb, T* C, int ldc) {
  if (N < Vec<T>::width) {
    // Narrow output: accumulate each output column along the rows of A.
    auto& col = scratch<T>();
    for (int j = 0; j < N; ++j) {
      col.assign(static_cast<std::size_t>(M), T(0));
      for (int k = 0; k < K; ++k) {
        const T bkj = B[static_cast<std::size_t>(k) * ldb + j];
        if (bkj != T(0)) axpy<T>(bkj, A + static_cast<std::size_t>(k) * lda, col.data(), static_cast<std::size_t>(M));
      }
      for (int i = 0; i < M; ++i) C[static_cast<std::size_t>(i) * ldc + j] += col[static_cast<std::size_t>(i)];
    }
    return;
  }
  for (int k = 0; k < K; ++k) {
    const T* a = A + static_cast<std::size_t>(k) * lda;
    const T* b = B + static_cast<std::size_t>(k) * ldb;
    for (int i = 0; i < M; ++i) {
      if (a[i] != T(0)) axpy<T>(a[i], b, C + static_cast<std::size_t>(i) * ldc, N);
    }
  }
}

template <class T>
void adam_step(T* w, const T* g, T* m, T* v, std::size_t n, T lr, T beta1, T beta2, T eps,
               T bias1, T bias2) {
  using V = Vec<T>;
  constexpr std::size_t W = V::width;
  const auto b1 = V::set1(beta1), b2 = V::set1(beta2);
  const auto omb1 = V::set1(1 - beta1), omb2 = V::set1(1 - beta2);
  const auto inv_bias1 = V::set1(1 / bias1), inv_bias2 = V::set1(1 / bias2);
  const auto vlr = V::set1(lr), veps = V::set1(eps);
  std::size_t i = 0;
  for (; i + W <= n; i += W) {
    const auto gv = V::load(g + i);
    const auto mv = V::fmadd(b1, V::load(m + i), V::mul(omb1, gv));
    const auto vv = V::fmadd(b2, V::load(v + i), V::mul(omb2, V::mul(gv, gv)));
    V::store(m + i, mv);
    V::store(v + i, vv);
    const auto denom = V::add(V::sqrt(V::mul(vv, inv_bias2)), veps);
    const auto step = V::div(V::mul(vlr, V::mul(mv, inv_bias1)), denom);
    V::store(w + i, V::add(V::load(w + i), V::mul(V::set1(T(-1)), step)));
  }
  for (; i < n; ++i) {
    m[i] = beta1 * m[i] + (1 - beta1) * g[i];
    v[i] = beta2 * v[i] + (1 - beta2) * g[i] * g[i];
    w[i] -= lr * (m[i] / bias1) / (std::sqrt(v[i] / bias2) + eps);
  }
}

template <class T>
KernelTable<T> make_table() {
  return KernelTable<T>{"avx2",   &gemm_nn<T>, &gemm_nt<T>, &gemm_tn<T>,
                        &dot<T>,  &axpy<T>,    &fma_acc<T>, &adam_step<T>};
}

}  // namespace

namespace detail {
template <class T>
const KernelTable<T>* avx2_table_if_compiled() {
  static const KernelTable<T> table = make_table<T>();
  return &table;
}
template const KernelTable<float>* avx2_table_if_compiled<float>();
template const KernelTable<double>* avx2_table_if_compiled<double>();
}  // namespace detail

}  // namespace chartnet::simd

#else

namespace chartnet::simd::detail {
template <class T>
const KernelTable<T>* avx2_table_if_compiled() {
  return nullptr;
}
template const KernelTable<float>* avx2_table_if_compiled<float>();
template const KernelTable<double>* avx2_table_if_compiled<double>();
}  // namespace chartnet::simd::detail

#endif
