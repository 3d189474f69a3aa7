#pragma once

#include <cstddef>

namespace clvae::kernels::detail {

// One register-tile kernel. Ap is [kc x mr] (k-major, zero-padded rows),
// Bp is [kc x nr] (k-major, zero-padded columns). The kernel loads the valid
// m x n region of C, runs the k-ascending accumulation, and stores it back.
// m <= mr, n <= nr.
struct MicroKernel {
    std::size_t mr;
    std::size_t nr;
    void (*tile)(const double* Ap, const double* Bp, double* C, std::size_t ldc,
                 std::size_t kc, std::size_t m, std::size_t n);
};

extern const MicroKernel scalar_kernel;
extern const MicroKernel avx2_kernel;
extern const MicroKernel avx512_kernel;

}  // namespace clvae::kernels::detail
