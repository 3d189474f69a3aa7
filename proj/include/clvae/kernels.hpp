#pragma once

#include <cstddef>
#include <string>

namespace clvae::kernels {

// Which matrix-multiply implementation runs. `automatic` resolves to the
// widest instruction set the CPU supports. All backends produce the same
// mathematical result; bit patterns differ between backends (FMA vs mul+add)
// but are stable within one backend regardless of how callers batch rows.
enum class Backend { scalar, avx2, avx512, automatic };

// Resolved backend for subsequent gemm calls. Resolution order: explicit
// set_backend() > CLVAE_BACKEND environment variable > CPU detection.
Backend active_backend();
void set_backend(Backend b);
Backend parse_backend(const std::string& name);
const char* backend_name(Backend b);
bool cpu_supports(Backend b);

// C[MxN] = A[MxK] * B[KxN], all row-major. accumulate adds onto existing C.
// Each output element is one k-ascending accumulation chain, so computing a
// subset of rows yields bit-identical values to computing all rows at once.
void gemm_nn(const double* A, const double* B, double* C,
             std::size_t M, std::size_t K, std::size_t N, bool accumulate = false);

// C[MxN] = A[MxK] * B^T with B stored [NxK] row-major.
void gemm_nt(const double* A, const double* B, double* C,
             std::size_t M, std::size_t K, std::size_t N, bool accumulate = false);

// C[MxN] = A^T * B with A stored [KxM] row-major.
void gemm_tn(const double* A, const double* B, double* C,
             std::size_t M, std::size_t K, std::size_t N, bool accumulate = false);

}  // namespace clvae::kernels
