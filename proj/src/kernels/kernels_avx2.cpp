// SPDX-License-Identifier: Apache-2.0

// AVX2+FMA variants of the float kernels. Nothing in this translation unit
// may run before the dispatcher has checked cpuid, so it exports only the
// table getter. The double build carries no vector backend.

#include "atmv/kernels.hpp"

#if !defined(ATMV_REAL_IS_DOUBLE) && (defined(__x86_64__) || defined(_M_X64))

#include <immintrin.h>

#include <cmath>

namespace atmv::kern {
namespace {

inline float hsum256(__m256 v) {
    __m128 lo = _mm256_castps256_ps128(v);
    __m128 hi = _mm256_extractf128_ps(v, 1);
    lo = _mm_add_ps(lo, hi);
    lo = _mm_add_ps(lo, _mm_movehl_ps(lo, lo));
    lo = _mm_add_ss(lo, _mm_shuffle_ps(lo, lo, 1));
    return _mm_cvtss_f32(lo);
}

inline float hmax256(__m256 v) {
    __m128 lo = _mm256_castps256_ps128(v);
    __m128 hi = _mm256_extractf128_ps(v, 1);
    lo = _mm_max_ps(lo, hi);
    lo = _mm_max_ps(lo, _mm_movehl_ps(lo, lo));
    lo = _mm_max_ss(lo, _mm_shuffle_ps(lo, lo, 1));
    return _mm_cvtss_f32(lo);
}

// exp(x) via the usual Cephes split: x = n·ln2 + r, exp(r) by degree-5
// polynomial, scale by 2^n through the exponent field. ~2 ulp over the
// clamped range, which the equivalence tests budget for.
inline __m256 exp256(__m256 x) {
    const __m256 hi = _mm256_set1_ps(88.3762626647949f);
    const __m256 lo = _mm256_set1_ps(-88.3762626647949f);
    const __m256 log2e = _mm256_set1_ps(1.44269504088896341f);
    const __m256 ln2_hi = _mm256_set1_ps(0.693359375f);
    const __m256 ln2_lo = _mm256_set1_ps(-2.12194440e-4f);
    const __m256 c1 = _mm256_set1_ps(1.9875691500e-4f);
    const __m256 c2 = _mm256_set1_ps(1.3981999507e-3f);
    const __m256 c3 = _mm256_set1_ps(8.3334519073e-3f);
    const __m256 c4 = _mm256_set1_ps(4.1665795894e-2f);
    const __m256 c5 = _mm256_set1_ps(1.6666665459e-1f);
    const __m256 c6 = _mm256_set1_ps(5.0000001201e-1f);
    const __m256 one = _mm256_set1_ps(1.0f);

    x = _mm256_min_ps(x, hi);
    x = _mm256_max_ps(x, lo);

    __m256 fx = _mm256_round_ps(_mm256_mul_ps(x, log2e),
                                _MM_FROUND_TO_NEAREST_INT | _MM_FROUND_NO_EXC);
    __m256 r = _mm256_fnmadd_ps(fx, ln2_hi, x);
    r = _mm256_fnmadd_ps(fx, ln2_lo, r);

    __m256 p = c1;
    p = _mm256_fmadd_ps(p, r, c2);
    p = _mm256_fmadd_ps(p, r, c3);
    p = _mm256_fmadd_ps(p, r, c4);
    p = _mm256_fmadd_ps(p, r, c5);
    p = _mm256_fmadd_ps(p, r, c6);
    p = _mm256_fmadd_ps(p, _mm256_mul_ps(r, r), _mm256_add_ps(r, one));

    __m256i n = _mm256_cvtps_epi32(fx);
    n = _mm256_add_epi32(n, _mm256_set1_epi32(127));
    n = _mm256_slli_epi32(n, 23);
    return _mm256_mul_ps(p, _mm256_castsi256_ps(n));
}

inline __m256 sigmoid256(__m256 x) {
    const __m256 one = _mm256_set1_ps(1.0f);
    __m256 e = exp256(_mm256_sub_ps(_mm256_setzero_ps(), x));
    return _mm256_div_ps(one, _mm256_add_ps(one, e));
}

void v_add(std::size_t n, const float* a, const float* b, float* out) {
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8)
        _mm256_storeu_ps(out + i, _mm256_add_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i)));
    for (; i < n; ++i) out[i] = a[i] + b[i];
}

void v_sub(std::size_t n, const float* a, const float* b, float* out) {
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8)
        _mm256_storeu_ps(out + i, _mm256_sub_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i)));
    for (; i < n; ++i) out[i] = a[i] - b[i];
}

void v_mul(std::size_t n, const float* a, const float* b, float* out) {
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8)
        _mm256_storeu_ps(out + i, _mm256_mul_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i)));
    for (; i < n; ++i) out[i] = a[i] * b[i];
}

void v_axpy(std::size_t n, float alpha, const float* x, float* y) {
    const __m256 va = _mm256_set1_ps(alpha);
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8)
        _mm256_storeu_ps(y + i, _mm256_fmadd_ps(va, _mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i)));
    for (; i < n; ++i) y[i] += alpha * x[i];
}

void v_scale(std::size_t n, float alpha, float* x) {
    const __m256 va = _mm256_set1_ps(alpha);
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8)
        _mm256_storeu_ps(x + i, _mm256_mul_ps(va, _mm256_loadu_ps(x + i)));
    for (; i < n; ++i) x[i] *= alpha;
}

void v_lincomb(std::size_t n, float alpha, const float* x, float beta, const float* y, float* out) {
    const __m256 va = _mm256_set1_ps(alpha);
    const __m256 vb = _mm256_set1_ps(beta);
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        __m256 t = _mm256_mul_ps(vb, _mm256_loadu_ps(y + i));
        _mm256_storeu_ps(out + i, _mm256_fmadd_ps(va, _mm256_loadu_ps(x + i), t));
    }
    for (; i < n; ++i) out[i] = alpha * x[i] + beta * y[i];
}

float v_dot(std::size_t n, const float* a, const float* b) {
    __m256 acc0 = _mm256_setzero_ps();
    __m256 acc1 = _mm256_setzero_ps();
    std::size_t i = 0;
    for (; i + 16 <= n; i += 16) {
        acc0 = _mm256_fmadd_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i), acc0);
        acc1 = _mm256_fmadd_ps(_mm256_loadu_ps(a + i + 8), _mm256_loadu_ps(b + i + 8), acc1);
    }
    for (; i + 8 <= n; i += 8)
        acc0 = _mm256_fmadd_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i), acc0);
    float acc = hsum256(_mm256_add_ps(acc0, acc1));
    for (; i < n; ++i) acc += a[i] * b[i];
    return acc;
}

float v_sum(std::size_t n, const float* x) {
    __m256 acc = _mm256_setzero_ps();
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) acc = _mm256_add_ps(acc, _mm256_loadu_ps(x + i));
    float s = hsum256(acc);
    for (; i < n; ++i) s += x[i];
    return s;
}

float v_reduce_max(std::size_t n, const float* x) {
    if (n < 8) {
        float m = x[0];
        for (std::size_t i = 1; i < n; ++i) m = x[i] > m ? x[i] : m;
        return m;
    }
    __m256 acc = _mm256_loadu_ps(x);
    std::size_t i = 8;
    for (; i + 8 <= n; i += 8) acc = _mm256_max_ps(acc, _mm256_loadu_ps(x + i));
    float m = hmax256(acc);
    for (; i < n; ++i) m = x[i] > m ? x[i] : m;
    return m;
}

void v_silu(std::size_t n, const float* x, float* out) {
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        __m256 vx = _mm256_loadu_ps(x + i);
        _mm256_storeu_ps(out + i, _mm256_mul_ps(vx, sigmoid256(vx)));
    }
    for (; i < n; ++i) {
        const float s = 1.0f / (1.0f + std::exp(-x[i]));
        out[i] = x[i] * s;
    }
}

void v_silu_bwd(std::size_t n, const float* x, const float* dy, float* dx) {
    const __m256 one = _mm256_set1_ps(1.0f);
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        __m256 vx = _mm256_loadu_ps(x + i);
        __m256 s = sigmoid256(vx);
        __m256 g = _mm256_mul_ps(s, _mm256_fmadd_ps(vx, _mm256_sub_ps(one, s), one));
        _mm256_storeu_ps(dx + i, _mm256_fmadd_ps(_mm256_loadu_ps(dy + i), g, _mm256_loadu_ps(dx + i)));
    }
    for (; i < n; ++i) {
        const float s = 1.0f / (1.0f + std::exp(-x[i]));
        dx[i] += dy[i] * (s * (1.0f + x[i] * (1.0f - s)));
    }
}

// Row-register blocking: each 16-wide strip of a C row stays in two ymm
// accumulators across the whole k loop.
void v_gemm_nn(std::size_t m, std::size_t n, std::size_t k,
               const float* A, const float* B, float* C) {
    for (std::size_t i = 0; i < m; ++i) {
        const float* a = A + i * k;
        float* c = C + i * n;
        std::size_t j = 0;
        for (; j + 16 <= n; j += 16) {
            __m256 acc0 = _mm256_loadu_ps(c + j);
            __m256 acc1 = _mm256_loadu_ps(c + j + 8);
            for (std::size_t p = 0; p < k; ++p) {
                const __m256 va = _mm256_set1_ps(a[p]);
                const float* b = B + p * n + j;
                acc0 = _mm256_fmadd_ps(va, _mm256_loadu_ps(b), acc0);
                acc1 = _mm256_fmadd_ps(va, _mm256_loadu_ps(b + 8), acc1);
            }
            _mm256_storeu_ps(c + j, acc0);
            _mm256_storeu_ps(c + j + 8, acc1);
        }
        for (; j + 8 <= n; j += 8) {
            __m256 acc = _mm256_loadu_ps(c + j);
            for (std::size_t p = 0; p < k; ++p)
                acc = _mm256_fmadd_ps(_mm256_set1_ps(a[p]), _mm256_loadu_ps(B + p * n + j), acc);
            _mm256_storeu_ps(c + j, acc);
        }
        for (; j < n; ++j) {
            float acc = c[j];
            for (std::size_t p = 0; p < k; ++p) acc += a[p] * B[p * n + j];
            c[j] = acc;
        }
    }
}

void v_gemm_nt(std::size_t m, std::size_t n, std::size_t k,
               const float* A, const float* B, float* C) {
    for (std::size_t i = 0; i < m; ++i) {
        const float* a = A + i * k;
        for (std::size_t j = 0; j < n; ++j)
            C[i * n + j] += v_dot(k, a, B + j * k);
    }
}

void v_gemm_tn(std::size_t m, std::size_t n, std::size_t k,
               const float* A, const float* B, float* C) {
    for (std::size_t i = 0; i < m; ++i) {
        float* c = C + i * n;
        std::size_t j = 0;
        for (; j + 16 <= n; j += 16) {
            __m256 acc0 = _mm256_loadu_ps(c + j);
            __m256 acc1 = _mm256_loadu_ps(c + j + 8);
            for (std::size_t p = 0; p < k; ++p) {
                const __m256 va = _mm256_set1_ps(A[p * m + i]);
                const float* b = B + p * n + j;
                acc0 = _mm256_fmadd_ps(va, _mm256_loadu_ps(b), acc0);
                acc1 = _mm256_fmadd_ps(va, _mm256_loadu_ps(b + 8), acc1);
            }
            _mm256_storeu_ps(c + j, acc0);
            _mm256_storeu_ps(c + j + 8, acc1);
        }
        for (; j + 8 <= n; j += 8) {
            __m256 acc = _mm256_loadu_ps(c + j);
            for (std::size_t p = 0; p < k; ++p)
                acc = _mm256_fmadd_ps(_mm256_set1_ps(A[p * m + i]), _mm256_loadu_ps(B + p * n + j), acc);
            _mm256_storeu_ps(c + j, acc);
        }
        for (; j < n; ++j) {
            float acc = c[j];
            for (std::size_t p = 0; p < k; ++p) acc += A[p * m + i] * B[p * n + j];
            c[j] = acc;
        }
    }
}

}  // namespace

const Kernels* avx2() {
    static const Kernels table = {
        "avx2",
        v_add, v_sub, v_mul,
        v_axpy, v_scale, v_lincomb,
        v_dot, v_sum, v_reduce_max,
        v_silu, v_silu_bwd,
        v_gemm_nn, v_gemm_nt, v_gemm_tn,
    };
    return &table;
}

}  // namespace atmv::kern

#else

namespace atmv::kern {
const Kernels* avx2() { return nullptr; }
}  // namespace atmv::kern

#endif
