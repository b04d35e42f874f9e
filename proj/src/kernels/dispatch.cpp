// SPDX-License-Identifier: Apache-2.0

#include <cstdlib>
#include <cstring>

#include "atmv/kernels.hpp"

namespace atmv::kern {
namespace {

const Kernels& pick() {
    const char* force = std::getenv("ATMV_KERNELS");
    if (force && std::strcmp(force, "scalar") == 0) return scalar();
    const Kernels* vec = avx2();
#if defined(__x86_64__) || defined(_M_X64)
    if (vec && __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma")) {
        if (!force || std::strcmp(force, "avx2") == 0) return *vec;
    }
#else
    (void)vec;
#endif
    return scalar();
}

}  // namespace

const Kernels& active() {
    static const Kernels& k = pick();
    return k;
}

}  // namespace atmv::kern
