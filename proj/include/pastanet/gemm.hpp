#pragma once

#include <algorithm>
#include <cstddef>
#include <vector>

#if defined(__AVX512F__)
#include <immintrin.h>
#endif

namespace pastanet::diff {

// Row-major matrix kernels for the training core. The float paths carry the
// MNIST-Action convolution workload, so they use register-tiled micro-kernels
// when AVX-512 is available; everything else falls back to blocked scalar
// loops. All functions accumulate into C; callers zero C first when needed.
//
//   gemm_nn: C[M,N] += A[M,K] * B[K,N]
//   gemm_nt: C[M,N] += A[M,K] * B[N,K]^T   (dot-product form)
//   gemm_tn: C[M,N] += A[K,M]^T * B[K,N]   (outer-product form)

template <typename T>
inline void gemm_nn(std::size_t M, std::size_t N, std::size_t K, const T* A, std::size_t lda,
                    const T* B, std::size_t ldb, T* C, std::size_t ldc) {
  for (std::size_t i = 0; i < M; ++i) {
    const T* a = A + i * lda;
    T* c = C + i * ldc;
    for (std::size_t k = 0; k < K; ++k) {
      T aik = a[k];
      const T* b = B + k * ldb;
      for (std::size_t j = 0; j < N; ++j) c[j] += aik * b[j];
    }
  }
}

template <typename T>
inline void gemm_nn_assign(std::size_t M, std::size_t N, std::size_t K, const T* A,
                           std::size_t lda, const T* B, std::size_t ldb, T* C, std::size_t ldc) {
  for (std::size_t i = 0; i < M; ++i) std::fill(C + i * ldc, C + i * ldc + N, T(0));
  gemm_nn(M, N, K, A, lda, B, ldb, C, ldc);
}

template <typename T>
inline void gemm_nn_bias(std::size_t M, std::size_t N, std::size_t K, const T* A, std::size_t lda,
                         const T* B, std::size_t ldb, T* C, std::size_t ldc, const T* bias,
                         bool relu) {
  for (std::size_t i = 0; i < M; ++i)
    for (std::size_t j = 0; j < N; ++j) C[i * ldc + j] = bias ? bias[j] : T(0);
  gemm_nn(M, N, K, A, lda, B, ldb, C, ldc);
  if (relu)
    for (std::size_t i = 0; i < M; ++i) {
      T* c = C + i * ldc;
      for (std::size_t j = 0; j < N; ++j) c[j] = c[j] > T(0) ? c[j] : T(0);
    }
}

template <typename T>
inline void gemm_nt(std::size_t M, std::size_t N, std::size_t K, const T* A, std::size_t lda,
                    const T* B, std::size_t ldb, T* C, std::size_t ldc) {
  for (std::size_t i = 0; i < M; ++i) {
    const T* a = A + i * lda;
    for (std::size_t j = 0; j < N; ++j) {
      const T* b = B + j * ldb;
      T s = 0;
      for (std::size_t k = 0; k < K; ++k) s += a[k] * b[k];
      C[i * ldc + j] += s;
    }
  }
}

template <typename T>
inline void gemm_tn(std::size_t M, std::size_t N, std::size_t K, const T* A, std::size_t lda,
                    const T* B, std::size_t ldb, T* C, std::size_t ldc) {
  for (std::size_t k = 0; k < K; ++k) {
    const T* a = A + k * lda;
    const T* b = B + k * ldb;
    for (std::size_t i = 0; i < M; ++i) {
      T aki = a[i];
      T* c = C + i * ldc;
      for (std::size_t j = 0; j < N; ++j) c[j] += aki * b[j];
    }
  }
}

#if defined(__AVX512F__)

namespace detail {

// Store policies for the nn kernels: accumulate into C, overwrite C, or
// overwrite with a per-column bias (optionally rectified) on the way out.
enum class NnMode { Accumulate, Assign, AssignBias, AssignBiasRelu };

// MR x (16*NV) micro-kernel. Accumulators live in zmm registers for the whole
// K loop; B rows are streamed once per MR-row block of A.
template <int MR, int NV, NnMode MODE>
inline void kernel_nn(std::size_t K, const float* A, std::size_t lda, const float* B,
                      std::size_t ldb, float* C, std::size_t ldc, const float* bias) {
  __m512 acc[MR][NV];
  for (int r = 0; r < MR; ++r)
    for (int v = 0; v < NV; ++v)
      acc[r][v] = MODE == NnMode::Accumulate ? _mm512_loadu_ps(C + r * ldc + 16 * v)
                                             : _mm512_setzero_ps();
  for (std::size_t k = 0; k < K; ++k) {
    __m512 bv[NV];
    const float* b = B + k * ldb;
    for (int v = 0; v < NV; ++v) bv[v] = _mm512_loadu_ps(b + 16 * v);
    for (int r = 0; r < MR; ++r) {
      __m512 ar = _mm512_set1_ps(A[r * lda + k]);
      for (int v = 0; v < NV; ++v) acc[r][v] = _mm512_fmadd_ps(ar, bv[v], acc[r][v]);
    }
  }
  if (MODE == NnMode::AssignBias || MODE == NnMode::AssignBiasRelu) {
    __m512 bias_v[NV];
    for (int v = 0; v < NV; ++v) bias_v[v] = _mm512_loadu_ps(bias + 16 * v);
    const __m512 zero = _mm512_setzero_ps();
    for (int r = 0; r < MR; ++r)
      for (int v = 0; v < NV; ++v) {
        __m512 y = _mm512_add_ps(acc[r][v], bias_v[v]);
        if (MODE == NnMode::AssignBiasRelu) y = _mm512_max_ps(y, zero);
        _mm512_storeu_ps(C + r * ldc + 16 * v, y);
      }
  } else {
    for (int r = 0; r < MR; ++r)
      for (int v = 0; v < NV; ++v) _mm512_storeu_ps(C + r * ldc + 16 * v, acc[r][v]);
  }
}

template <int NV, NnMode MODE>
inline void gemm_nn_cols(std::size_t M, std::size_t K, const float* A, std::size_t lda,
                         const float* B, std::size_t ldb, float* C, std::size_t ldc,
                         const float* bias) {
  std::size_t i = 0;
  for (; i + 4 <= M; i += 4)
    kernel_nn<4, NV, MODE>(K, A + i * lda, lda, B, ldb, C + i * ldc, ldc, bias);
  for (; i < M; ++i) kernel_nn<1, NV, MODE>(K, A + i * lda, lda, B, ldb, C + i * ldc, ldc, bias);
}

template <int MR, NnMode MODE>
inline void kernel_nn_masked(__mmask16 m, std::size_t K, const float* A, std::size_t lda,
                             const float* B, std::size_t ldb, float* C, std::size_t ldc,
                             const float* bias) {
  __m512 acc[MR];
  for (int r = 0; r < MR; ++r)
    acc[r] = MODE == NnMode::Accumulate ? _mm512_maskz_loadu_ps(m, C + r * ldc)
                                        : _mm512_setzero_ps();
  for (std::size_t k = 0; k < K; ++k) {
    __m512 bv = _mm512_maskz_loadu_ps(m, B + k * ldb);
    for (int r = 0; r < MR; ++r)
      acc[r] = _mm512_fmadd_ps(_mm512_set1_ps(A[r * lda + k]), bv, acc[r]);
  }
  const __m512 zero = _mm512_setzero_ps();
  for (int r = 0; r < MR; ++r) {
    __m512 y = acc[r];
    if (MODE == NnMode::AssignBias || MODE == NnMode::AssignBiasRelu)
      y = _mm512_add_ps(y, _mm512_maskz_loadu_ps(m, bias));
    if (MODE == NnMode::AssignBiasRelu) y = _mm512_max_ps(y, zero);
    _mm512_mask_storeu_ps(C + r * ldc, m, y);
  }
}

template <NnMode MODE>
inline void gemm_nn_tail(std::size_t M, std::size_t N, std::size_t K, const float* A,
                         std::size_t lda, const float* B, std::size_t ldb, float* C,
                         std::size_t ldc, const float* bias) {
  if (N == 0) return;
  __mmask16 m = static_cast<__mmask16>((1u << N) - 1u);
  std::size_t i = 0;
  for (; i + 8 <= M; i += 8)
    kernel_nn_masked<8, MODE>(m, K, A + i * lda, lda, B, ldb, C + i * ldc, ldc, bias);
  for (; i < M; ++i)
    kernel_nn_masked<1, MODE>(m, K, A + i * lda, lda, B, ldb, C + i * ldc, ldc, bias);
}

// Register-tiled strip for the outer-product (tn) form.
template <int MR, int NV>
inline void kernel_tn(std::size_t i, std::size_t j, std::size_t k0, std::size_t k1, const float* A,
                      std::size_t lda, const float* B, std::size_t ldb, float* C, std::size_t ldc) {
  __m512 acc[MR][NV];
  for (int r = 0; r < MR; ++r)
    for (int v = 0; v < NV; ++v) acc[r][v] = _mm512_loadu_ps(C + (i + r) * ldc + j + 16 * v);
  for (std::size_t k = k0; k < k1; ++k) {
    __m512 bv[NV];
    const float* b = B + k * ldb + j;
    for (int v = 0; v < NV; ++v) bv[v] = _mm512_loadu_ps(b + 16 * v);
    const float* a = A + k * lda + i;
    for (int r = 0; r < MR; ++r) {
      __m512 ar = _mm512_set1_ps(a[r]);
      for (int v = 0; v < NV; ++v) acc[r][v] = _mm512_fmadd_ps(ar, bv[v], acc[r][v]);
    }
  }
  for (int r = 0; r < MR; ++r)
    for (int v = 0; v < NV; ++v) _mm512_storeu_ps(C + (i + r) * ldc + j + 16 * v, acc[r][v]);
}

template <int NV>
inline void gemm_tn_cols(std::size_t M, std::size_t j, std::size_t K, const float* A,
                         std::size_t lda, const float* B, std::size_t ldb, float* C,
                         std::size_t ldc) {
  // K-blocked so the streamed B panel stays in L2 across the row strips.
  constexpr std::size_t KB = 2048;
  for (std::size_t k0 = 0; k0 < K; k0 += KB) {
    std::size_t k1 = k0 + KB < K ? k0 + KB : K;
    std::size_t i = 0;
    for (; i + 4 <= M; i += 4) kernel_tn<4, NV>(i, j, k0, k1, A, lda, B, ldb, C, ldc);
    for (; i < M; ++i) kernel_tn<1, NV>(i, j, k0, k1, A, lda, B, ldb, C, ldc);
  }
}

}  // namespace detail

template <detail::NnMode MODE>
inline void gemm_nn_impl(std::size_t M, std::size_t N, std::size_t K, const float* A,
                         std::size_t lda, const float* B, std::size_t ldb, float* C,
                         std::size_t ldc, const float* bias) {
  std::size_t j = 0;
  for (; j + 64 <= N; j += 64)
    detail::gemm_nn_cols<4, MODE>(M, K, A, lda, B + j, ldb, C + j, ldc, bias ? bias + j : bias);
  if (j + 48 <= N) {
    detail::gemm_nn_cols<3, MODE>(M, K, A, lda, B + j, ldb, C + j, ldc, bias ? bias + j : bias);
    j += 48;
  }
  if (j + 32 <= N) {
    detail::gemm_nn_cols<2, MODE>(M, K, A, lda, B + j, ldb, C + j, ldc, bias ? bias + j : bias);
    j += 32;
  }
  if (j + 16 <= N) {
    detail::gemm_nn_cols<1, MODE>(M, K, A, lda, B + j, ldb, C + j, ldc, bias ? bias + j : bias);
    j += 16;
  }
  detail::gemm_nn_tail<MODE>(M, N - j, K, A, lda, B + j, ldb, C + j, ldc, bias ? bias + j : bias);
}

inline void gemm_nn(std::size_t M, std::size_t N, std::size_t K, const float* A, std::size_t lda,
                    const float* B, std::size_t ldb, float* C, std::size_t ldc) {
  gemm_nn_impl<detail::NnMode::Accumulate>(M, N, K, A, lda, B, ldb, C, ldc, nullptr);
}

/// C = A*B (C overwritten; no pre-zeroing needed).
inline void gemm_nn_assign(std::size_t M, std::size_t N, std::size_t K, const float* A,
                           std::size_t lda, const float* B, std::size_t ldb, float* C,
                           std::size_t ldc) {
  gemm_nn_impl<detail::NnMode::Assign>(M, N, K, A, lda, B, ldb, C, ldc, nullptr);
}

/// C = A*B + bias, optionally rectified; the fused conv/fc forward.
inline void gemm_nn_bias(std::size_t M, std::size_t N, std::size_t K, const float* A,
                         std::size_t lda, const float* B, std::size_t ldb, float* C,
                         std::size_t ldc, const float* bias, bool relu) {
  if (relu)
    gemm_nn_impl<detail::NnMode::AssignBiasRelu>(M, N, K, A, lda, B, ldb, C, ldc, bias);
  else
    gemm_nn_impl<detail::NnMode::AssignBias>(M, N, K, A, lda, B, ldb, C, ldc, bias);
}

inline void gemm_nt(std::size_t M, std::size_t N, std::size_t K, const float* A, std::size_t lda,
                    const float* B, std::size_t ldb, float* C, std::size_t ldc) {
  for (std::size_t i = 0; i < M; ++i) {
    const float* a = A + i * lda;
    for (std::size_t j = 0; j < N; ++j) {
      const float* b = B + j * ldb;
      __m512 acc = _mm512_setzero_ps();
      std::size_t k = 0;
      for (; k + 16 <= K; k += 16)
        acc = _mm512_fmadd_ps(_mm512_loadu_ps(a + k), _mm512_loadu_ps(b + k), acc);
      float s = _mm512_reduce_add_ps(acc);
      for (; k < K; ++k) s += a[k] * b[k];
      C[i * ldc + j] += s;
    }
  }
}

inline void gemm_tn(std::size_t M, std::size_t N, std::size_t K, const float* A, std::size_t lda,
                    const float* B, std::size_t ldb, float* C, std::size_t ldc) {
  // Big-K form (conv dW): pack transposed panels of A so the inner kernels
  // stream contiguous rows instead of lda-strided columns.
  if (K >= 2048 && M >= 8) {
    constexpr std::size_t KB = 1024;
    std::vector<float> panel(M * std::min(KB, K));
    for (std::size_t k0 = 0; k0 < K; k0 += KB) {
      std::size_t kb = std::min(KB, K - k0);
      for (std::size_t k = 0; k < kb; ++k) {
        const float* a = A + (k0 + k) * lda;
        for (std::size_t i = 0; i < M; ++i) panel[i * kb + k] = a[i];
      }
      gemm_nn(M, N, kb, panel.data(), kb, B + k0 * ldb, ldb, C, ldc);
    }
    return;
  }
  // Outer-product accumulation; used where the C tile stays cache-hot while
  // the big axis K is streamed.
  std::size_t j = 0;
  for (; j + 64 <= N; j += 64) detail::gemm_tn_cols<4>(M, j, K, A, lda, B, ldb, C, ldc);
  if (j + 48 <= N) {
    detail::gemm_tn_cols<3>(M, j, K, A, lda, B, ldb, C, ldc);
    j += 48;
  }
  if (j + 32 <= N) {
    detail::gemm_tn_cols<2>(M, j, K, A, lda, B, ldb, C, ldc);
    j += 32;
  }
  if (j + 16 <= N) {
    detail::gemm_tn_cols<1>(M, j, K, A, lda, B, ldb, C, ldc);
    j += 16;
  }
  for (; j < N; ++j) {
    for (std::size_t k = 0; k < K; ++k) {
      const float* a = A + k * lda;
      float bkj = B[k * ldb + j];
      for (std::size_t i = 0; i < M; ++i) C[i * ldc + j] += a[i] * bkj;
    }
  }
}

#endif  // __AVX512F__

}  // namespace pastanet::diff
