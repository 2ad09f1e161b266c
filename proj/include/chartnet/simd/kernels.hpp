#pragma once

// Dense arithmetic kernels used by the tensor ops.
//
// Every kernel exists as a portable scalar reference and, where the target
// supports it, an AVX2+FMA variant. The active table is chosen once at
// startup from CPUID; setting CHARTNET_SIMD=scalar in the environment forces
// the reference path. All matrices are row-major with explicit leading
// dimensions, and every gemm variant ACCUMULATES into C.

#include <cstddef>
#include <string_view>

namespace chartnet::simd {

template <class T>
struct KernelTable {
  std::string_view name;

  // C[M x N] += A[M x K] * B[K x N]
  void (*gemm_nn)(int M, int N, int K, const T* A, int lda, const T* B, int ldb, T* C, int ldc);
  // C[M x N] += A[M x K] * B[N x K]^T
  void (*gemm_nt)(int M, int N, int K, const T* A, int lda, const T* B, int ldb, T* C, int ldc);
  // C[M x N] += A[K x M]^T * B[K x N]
  void (*gemm_tn)(int M, int N, int K, const T* A, int lda, const T* B, int ldb, T* C, int ldc);

  T (*dot)(const T* x, const T* y, std::size_t n);
  // y += a * x
  void (*axpy)(T a, const T* x, T* y, std::size_t n);
  // y += x * z (elementwise)
  void (*fma_acc)(const T* x, const T* z, T* y, std::size_t n);

  // One Adam step over n parameters; bias corrections precomputed by the caller.
  void (*adam_step)(T* w, const T* g, T* m, T* v, std::size_t n, T lr, T beta1, T beta2,
                    T eps, T bias1, T bias2);
};

template <class T>
const KernelTable<T>& scalar_kernels();

// nullptr when the AVX2 variant was not compiled in or the CPU lacks AVX2/FMA.
template <class T>
const KernelTable<T>* avx2_kernels();

// The runtime-selected table.
template <class T>
const KernelTable<T>& kernels();

bool cpu_has_avx2_fma();

}  // namespace chartnet::simd
