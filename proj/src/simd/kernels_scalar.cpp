#include "chartnet/simd/kernels.hpp"

#include <cmath>

namespace chartnet::simd {
namespace {

template <class T>
void gemm_nn(int M, int N, int K, const T* A, int lda, const T* B, int ldb, T* C, int ldc) {
  for (int i = 0; i < M; ++i) {
    T* c = C + static_cast<std::size_t>(i) * ldc;
    const T* a = A + static_cast<std::size_t>(i) * lda;
    for (int k = 0; k < K; ++k) {
      const T aik = a[k];
      const T* b = B + static_cast<std::size_t>(k) * ldb;
      for (int j = 0; j < N; ++j) c[j] += aik * b[j];
    }
  }
}

template <class T>
void gemm_nt(int M, int N, int K, const T* A, int lda, const T* B, int ldb, T* C, int ldc) {
  for (int i = 0; i < M; ++i) {
    const T* a = A + static_cast<std::size_t>(i) * lda;
    for (int j = 0; j < N; ++j) {
      const T* b = B + static_cast<std::size_t>(j) * ldb;
      T s = 0;
      for (int k = 0; k < K; ++k) s += a[k] * b[k];
      C[static_cast<std::size_t>(i) * ldc + j] += s;
    }
  }
}

template <class T>
void gemm_tn(int M, int N, int K, const T* A, int lda, const T* B, int ldb, T* C, int ldc) {
  for (int k = 0; k < K; ++k) {
    const T* a = A + static_cast<std::size_t>(k) * lda;
    const T* b = B + static_cast<std::size_t>(k) * ldb;
    for (int i = 0; i < M; ++i) {
      const T aki = a[i];
      T* c = C + static_cast<std::size_t>(i) * ldc;
      for (int j = 0; j < N; ++j) c[j] += aki * b[j];
    }
  }
}

template <class T>
T dot(const T* x, const T* y, std::size_t n) {
  T s = 0;
  for (std::size_t i = 0; i < n; ++i) s += x[i] * y[i];
  return s;
}

template <class T>
void axpy(T a, const T* x, T* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

template <class T>
void fma_acc(const T* x, const T* z, T* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += x[i] * z[i];
}

template <class T>
void adam_step(T* w, const T* g, T* m, T* v, std::size_t n, T lr, T beta1, T beta2, T eps,
               T bias1, T bias2) {
  for (std::size_t i = 0; i < n; ++i) {
    m[i] = beta1 * m[i] + (1 - beta1) * g[i];
    v[i] = beta2 * v[i] + (1 - beta2) * g[i] * g[i];
    const T mhat = m[i] / bias1;
    const T vhat = v[i] / bias2;
    w[i] -= lr * mhat / (std::sqrt(vhat) + eps);
  }
}

template <class T>
KernelTable<T> make_table() {
  return KernelTable<T>{"scalar",      &gemm_nn<T>, &gemm_nt<T>, &gemm_tn<T>,
                        &dot<T>,       &axpy<T>,    &fma_acc<T>, &adam_step<T>};
}

}  // namespace

template <class T>
const KernelTable<T>& scalar_kernels() {
  static const KernelTable<T> table = make_table<T>();
  return table;
}

template const KernelTable<float>& scalar_kernels<float>();
template const KernelTable<double>& scalar_kernels<double>();

}  // namespace chartnet::simd
