// SPDX-License-Identifier: Apache-2.0

// Reference kernels. Straightforward loops, no reassociation tricks: these
// define the semantics the vector backends are tested against.

#include <cmath>

#include "atmv/kernels.hpp"

namespace atmv::kern {
namespace {

void s_add(std::size_t n, const real* a, const real* b, real* out) {
    for (std::size_t i = 0; i < n; ++i) out[i] = a[i] + b[i];
}

void s_sub(std::size_t n, const real* a, const real* b, real* out) {
    for (std::size_t i = 0; i < n; ++i) out[i] = a[i] - b[i];
}

void s_mul(std::size_t n, const real* a, const real* b, real* out) {
    for (std::size_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
}

void s_axpy(std::size_t n, real alpha, const real* x, real* y) {
    for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void s_scale(std::size_t n, real alpha, real* x) {
    for (std::size_t i = 0; i < n; ++i) x[i] *= alpha;
}

void s_lincomb(std::size_t n, real alpha, const real* x, real beta, const real* y, real* out) {
    for (std::size_t i = 0; i < n; ++i) out[i] = alpha * x[i] + beta * y[i];
}

real s_dot(std::size_t n, const real* a, const real* b) {
    real acc = 0;
    for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
    return acc;
}

real s_sum(std::size_t n, const real* x) {
    real acc = 0;
    for (std::size_t i = 0; i < n; ++i) acc += x[i];
    return acc;
}

real s_reduce_max(std::size_t n, const real* x) {
    real m = x[0];
    for (std::size_t i = 1; i < n; ++i) m = x[i] > m ? x[i] : m;
    return m;
}

void s_silu(std::size_t n, const real* x, real* out) {
    for (std::size_t i = 0; i < n; ++i) {
        const real s = real(1) / (real(1) + std::exp(-x[i]));
        out[i] = x[i] * s;
    }
}

void s_silu_bwd(std::size_t n, const real* x, const real* dy, real* dx) {
    for (std::size_t i = 0; i < n; ++i) {
        const real s = real(1) / (real(1) + std::exp(-x[i]));
        dx[i] += dy[i] * (s * (real(1) + x[i] * (real(1) - s)));
    }
}

void s_gemm_nn(std::size_t m, std::size_t n, std::size_t k,
               const real* A, const real* B, real* C) {
    for (std::size_t i = 0; i < m; ++i) {
        real* c = C + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const real a = A[i * k + p];
            const real* b = B + p * n;
            for (std::size_t j = 0; j < n; ++j) c[j] += a * b[j];
        }
    }
}

void s_gemm_nt(std::size_t m, std::size_t n, std::size_t k,
               const real* A, const real* B, real* C) {
    for (std::size_t i = 0; i < m; ++i) {
        const real* a = A + i * k;
        for (std::size_t j = 0; j < n; ++j) {
            const real* b = B + j * k;
            real acc = 0;
            for (std::size_t p = 0; p < k; ++p) acc += a[p] * b[p];
            C[i * n + j] += acc;
        }
    }
}

void s_gemm_tn(std::size_t m, std::size_t n, std::size_t k,
               const real* A, const real* B, real* C) {
    for (std::size_t p = 0; p < k; ++p) {
        const real* b = B + p * n;
        for (std::size_t i = 0; i < m; ++i) {
            const real a = A[p * m + i];
            real* c = C + i * n;
            for (std::size_t j = 0; j < n; ++j) c[j] += a * b[j];
        }
    }
}

}  // namespace

const Kernels& scalar() {
    static const Kernels table = {
        "scalar",
        s_add, s_sub, s_mul,
        s_axpy, s_scale, s_lincomb,
        s_dot, s_sum, s_reduce_max,
        s_silu, s_silu_bwd,
        s_gemm_nn, s_gemm_nt, s_gemm_tn,
    };
    return table;
}

}  // namespace atmv::kern
