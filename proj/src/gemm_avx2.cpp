#include <immintrin.h>

#include <cstddef>

#include "gemm_detail.hpp"

// Compiled with -mavx2 -mfma; must only be reached through the dispatcher.

namespace clvae::kernels::detail {

namespace {

void tile_avx2(const double* Ap, const double* Bp, double* C, std::size_t ldc,
               std::size_t kc, std::size_t m, std::size_t n) {
    const bool full = (m == 4 && n == 8);
    alignas(32) double buf[32];
    __m256d acc[4][2];
    if (full) {
        for (std::size_t ii = 0; ii < 4; ++ii) {
            acc[ii][0] = _mm256_loadu_pd(C + ii * ldc);
            acc[ii][1] = _mm256_loadu_pd(C + ii * ldc + 4);
        }
    } else {
        for (std::size_t i = 0; i < 32; ++i) buf[i] = 0.0;
        for (std::size_t ii = 0; ii < m; ++ii)
            for (std::size_t jj = 0; jj < n; ++jj) buf[ii * 8 + jj] = C[ii * ldc + jj];
        for (std::size_t ii = 0; ii < 4; ++ii) {
            acc[ii][0] = _mm256_load_pd(buf + ii * 8);
            acc[ii][1] = _mm256_load_pd(buf + ii * 8 + 4);
        }
    }

    for (std::size_t k = 0; k < kc; ++k) {
        const __m256d b0 = _mm256_loadu_pd(Bp + k * 8);
        const __m256d b1 = _mm256_loadu_pd(Bp + k * 8 + 4);
        const double* a = Ap + k * 4;
        for (std::size_t ii = 0; ii < 4; ++ii) {
            const __m256d av = _mm256_broadcast_sd(a + ii);
            acc[ii][0] = _mm256_fmadd_pd(av, b0, acc[ii][0]);
            acc[ii][1] = _mm256_fmadd_pd(av, b1, acc[ii][1]);
        }
    }

    if (full) {
        for (std::size_t ii = 0; ii < 4; ++ii) {
            _mm256_storeu_pd(C + ii * ldc, acc[ii][0]);
            _mm256_storeu_pd(C + ii * ldc + 4, acc[ii][1]);
        }
    } else {
        for (std::size_t ii = 0; ii < 4; ++ii) {
            _mm256_store_pd(buf + ii * 8, acc[ii][0]);
            _mm256_store_pd(buf + ii * 8 + 4, acc[ii][1]);
        }
        for (std::size_t ii = 0; ii < m; ++ii)
            for (std::size_t jj = 0; jj < n; ++jj) C[ii * ldc + jj] = buf[ii * 8 + jj];
    }
}

}  // namespace

const MicroKernel avx2_kernel = {4, 8, tile_avx2};

}  // namespace clvae::kernels::detail
