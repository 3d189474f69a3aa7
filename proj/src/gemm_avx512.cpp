#include <immintrin.h>

#include <cstddef>

#include "gemm_detail.hpp"

// Compiled with -mavx512f; must only be reached through the dispatcher.

namespace clvae::kernels::detail {

namespace {

void tile_avx512(const double* Ap, const double* Bp, double* C, std::size_t ldc,
                 std::size_t kc, std::size_t m, std::size_t n) {
    const bool full = (m == 8 && n == 16);
    alignas(64) double buf[128];
    __m512d acc[8][2];
    if (full) {
        for (std::size_t ii = 0; ii < 8; ++ii) {
            acc[ii][0] = _mm512_loadu_pd(C + ii * ldc);
            acc[ii][1] = _mm512_loadu_pd(C + ii * ldc + 8);
        }
    } else {
        for (std::size_t i = 0; i < 128; ++i) buf[i] = 0.0;
        for (std::size_t ii = 0; ii < m; ++ii)
            for (std::size_t jj = 0; jj < n; ++jj) buf[ii * 16 + jj] = C[ii * ldc + jj];
        for (std::size_t ii = 0; ii < 8; ++ii) {
            acc[ii][0] = _mm512_load_pd(buf + ii * 16);
            acc[ii][1] = _mm512_load_pd(buf + ii * 16 + 8);
        }
    }

    for (std::size_t k = 0; k < kc; ++k) {
        const __m512d b0 = _mm512_loadu_pd(Bp + k * 16);
        const __m512d b1 = _mm512_loadu_pd(Bp + k * 16 + 8);
        const double* a = Ap + k * 8;
        for (std::size_t ii = 0; ii < 8; ++ii) {
            const __m512d av = _mm512_set1_pd(a[ii]);
            acc[ii][0] = _mm512_fmadd_pd(av, b0, acc[ii][0]);
            acc[ii][1] = _mm512_fmadd_pd(av, b1, acc[ii][1]);
        }
    }

    if (full) {
        for (std::size_t ii = 0; ii < 8; ++ii) {
            _mm512_storeu_pd(C + ii * ldc, acc[ii][0]);
            _mm512_storeu_pd(C + ii * ldc + 8, acc[ii][1]);
        }
    } else {
        for (std::size_t ii = 0; ii < 8; ++ii) {
            _mm512_store_pd(buf + ii * 16, acc[ii][0]);
            _mm512_store_pd(buf + ii * 16 + 8, acc[ii][1]);
        }
        for (std::size_t ii = 0; ii < m; ++ii)
            for (std::size_t jj = 0; jj < n; ++jj) C[ii * ldc + jj] = buf[ii * 16 + jj];
    }
}

}  // namespace

const MicroKernel avx512_kernel = {8, 16, tile_avx512};

}  // namespace clvae::kernels::detail
