// SPDX-License-Identifier: Apache-2.0
#pragma once

// Data-parallel inner loops used by the tensor layer. Every entry point has a
// scalar reference implementation; on x86-64 an AVX2+FMA variant is selected
// at runtime when the CPU supports it. The two backends are equivalence-tested
// against each other and against a double-precision oracle.
//
// Set ATMV_KERNELS=scalar (or =avx2) in the environment to force a backend.

#include <cstddef>

namespace atmv {

#if defined(ATMV_REAL_IS_DOUBLE)
using real = double;
#else
using real = float;
#endif

namespace kern {

// All gemm variants accumulate into C (C += op(A)·op(B)); callers zero C for
// a plain product. Row-major storage throughout.
struct Kernels {
    const char* name;

    // out[i] = a[i] (+|-|*) b[i]
    void (*add)(std::size_t n, const real* a, const real* b, real* out);
    void (*sub)(std::size_t n, const real* a, const real* b, real* out);
    void (*mul)(std::size_t n, const real* a, const real* b, real* out);

    // y[i] += alpha * x[i]
    void (*axpy)(std::size_t n, real alpha, const real* x, real* y);
    // x[i] *= alpha
    void (*scale)(std::size_t n, real alpha, real* x);
    // out[i] = alpha * x[i] + beta * y[i]
    void (*lincomb)(std::size_t n, real alpha, const real* x, real beta, const real* y, real* out);

    real (*dot)(std::size_t n, const real* a, const real* b);
    real (*sum)(std::size_t n, const real* x);
    real (*reduce_max)(std::size_t n, const real* x);

    // out[i] = x[i] * sigmoid(x[i]);  dx[i] += dy[i] * d/dx silu(x[i])
    void (*silu)(std::size_t n, const real* x, real* out);
    void (*silu_bwd)(std::size_t n, const real* x, const real* dy, real* dx);

    // C[m x n] += A[m x k] · B[k x n]
    void (*gemm_nn)(std::size_t m, std::size_t n, std::size_t k,
                    const real* A, const real* B, real* C);
    // C[m x n] += A[m x k] · B^T, B stored [n x k]
    void (*gemm_nt)(std::size_t m, std::size_t n, std::size_t k,
                    const real* A, const real* B, real* C);
    // C[m x n] += A^T · B, A stored [k x m], B stored [k x n]
    void (*gemm_tn)(std::size_t m, std::size_t n, std::size_t k,
                    const real* A, const real* B, real* C);
};

// Backend selected at process start: AVX2 when compiled for x86-64, the CPU
// reports AVX2+FMA, and ATMV_KERNELS does not say otherwise.
const Kernels& active();

const Kernels& scalar();

// nullptr when this build/CPU has no vector backend.
const Kernels* avx2();

}  // namespace kern
}  // namespace atmv
