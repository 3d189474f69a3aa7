#include "clvae/kernels.hpp"

#include <algorithm>
#include <cstdlib>
#include <stdexcept>
#include <vector>

#include "gemm_detail.hpp"

namespace clvae::kernels {

namespace {

Backend g_override = Backend::automatic;

Backend detect_cpu() {
    if (__builtin_cpu_supports("avx512f")) return Backend::avx512;
    if (__builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma")) return Backend::avx2;
    return Backend::scalar;
}

Backend resolve() {
    Backend b = g_override;
    if (b == Backend::automatic) {
        if (const char* env = std::getenv("CLVAE_BACKEND"))
            b = parse_backend(env);
        else
            b = detect_cpu();
    }
    if (!cpu_supports(b))
        throw std::runtime_error(std::string("kernel backend '") + backend_name(b) +
                                 "' is not supported by this CPU");
    return b;
}

}  // namespace

bool cpu_supports(Backend b) {
    switch (b) {
        case Backend::scalar: return true;
        case Backend::avx2: return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
        case Backend::avx512: return __builtin_cpu_supports("avx512f");
        case Backend::automatic: return true;
    }
    return false;
}

Backend active_backend() { return resolve(); }

void set_backend(Backend b) {
    if (b != Backend::automatic && !cpu_supports(b))
        throw std::runtime_error(std::string("kernel backend '") + backend_name(b) +
                                 "' is not supported by this CPU");
    g_override = b;
}

Backend parse_backend(const std::string& name) {
    if (name == "scalar") return Backend::scalar;
    if (name == "avx2") return Backend::avx2;
    if (name == "avx512") return Backend::avx512;
    if (name == "auto" || name == "automatic") return Backend::automatic;
    throw std::runtime_error("unknown kernel backend '" + name +
                             "' (expected scalar|avx2|avx512|auto)");
}

const char* backend_name(Backend b) {
    switch (b) {
        case Backend::scalar: return "scalar";
        case Backend::avx2: return "avx2";
        case Backend::avx512: return "avx512";
        case Backend::automatic: return "auto";
    }
    return "?";
}

namespace {

using detail::MicroKernel;

const MicroKernel& select_kernel() {
    switch (resolve()) {
        case Backend::avx512: return detail::avx512_kernel;
        case Backend::avx2: return detail::avx2_kernel;
        default: return detail::scalar_kernel;
    }
}

enum class Layout { nn, nt, tn };

// Packs rows [i0, i0+m) of the logical A for k in [kb, kb+kc) into Ap,
// k-major with row stride mr; rows past m are zero so the microkernel can
// always run the full register tile.
void pack_a(Layout lay, const double* A, std::size_t M, std::size_t K,
            std::size_t i0, std::size_t m, std::size_t kb, std::size_t kc,
            std::size_t mr, double* Ap) {
    if (lay == Layout::tn) {
        // A stored [K x M]; logical rows are columns, so each k reads a
        // contiguous run of m doubles.
        for (std::size_t k = 0; k < kc; ++k) {
            const double* src = A + (kb + k) * M + i0;
            double* dst = Ap + k * mr;
            std::size_t ii = 0;
            for (; ii < m; ++ii) dst[ii] = src[ii];
            for (; ii < mr; ++ii) dst[ii] = 0.0;
        }
        return;
    }
    for (std::size_t ii = 0; ii < m; ++ii) {
        const double* src = A + (i0 + ii) * K + kb;
        for (std::size_t k = 0; k < kc; ++k) Ap[k * mr + ii] = src[k];
    }
    for (std::size_t ii = m; ii < mr; ++ii)
        for (std::size_t k = 0; k < kc; ++k) Ap[k * mr + ii] = 0.0;
}

// Packs every nr-wide column panel of the logical B for k in [kb, kb+kc).
// Panel p occupies Bp[p*kc*nr ..), k-major; columns past N are zero.
void pack_b(Layout lay, const double* B, std::size_t K, std::size_t N,
            std::size_t kb, std::size_t kc, std::size_t nr, double* Bp) {
    const std::size_t panels = (N + nr - 1) / nr;
    for (std::size_t p = 0; p < panels; ++p) {
        const std::size_t j0 = p * nr;
        const std::size_t n = std::min(nr, N - j0);
        double* dst = Bp + p * kc * nr;
        if (lay == Layout::nt) {
            // B stored [N x K]; logical column j is row j of storage.
            for (std::size_t jj = 0; jj < n; ++jj) {
                const double* src = B + (j0 + jj) * K + kb;
                for (std::size_t k = 0; k < kc; ++k) dst[k * nr + jj] = src[k];
            }
            for (std::size_t jj = n; jj < nr; ++jj)
                for (std::size_t k = 0; k < kc; ++k) dst[k * nr + jj] = 0.0;
        } else {
            for (std::size_t k = 0; k < kc; ++k) {
                const double* src = B + (kb + k) * N + j0;
                double* d = dst + k * nr;
                std::size_t jj = 0;
                for (; jj < n; ++jj) d[jj] = src[jj];
                for (; jj < nr; ++jj) d[jj] = 0.0;
            }
        }
    }
}

// K is split into fixed blocks; the microkernel reloads the C tile between
// blocks, so each element still sees one uninterrupted k-ascending chain and
// results do not depend on M, N, or how callers chunk rows.
constexpr std::size_t KC = 256;

void gemm_driver(Layout lay, const double* A, const double* B, double* C,
                 std::size_t M, std::size_t K, std::size_t N, bool accumulate) {
    if (M == 0 || N == 0) return;
    if (!accumulate) std::fill(C, C + M * N, 0.0);
    if (K == 0) return;

    const MicroKernel& mk = select_kernel();
    const std::size_t panels = (N + mk.nr - 1) / mk.nr;

    thread_local std::vector<double> a_buf, b_buf;
    if (a_buf.size() < KC * mk.mr) a_buf.resize(KC * mk.mr);
    if (b_buf.size() < KC * panels * mk.nr) b_buf.resize(KC * panels * mk.nr);

    for (std::size_t kb = 0; kb < K; kb += KC) {
        const std::size_t kc = std::min(KC, K - kb);
        pack_b(lay, B, K, N, kb, kc, mk.nr, b_buf.data());
        for (std::size_t i0 = 0; i0 < M; i0 += mk.mr) {
            const std::size_t m = std::min(mk.mr, M - i0);
            pack_a(lay, A, M, K, i0, m, kb, kc, mk.mr, a_buf.data());
            for (std::size_t p = 0; p < panels; ++p) {
                const std::size_t j0 = p * mk.nr;
                const std::size_t n = std::min(mk.nr, N - j0);
                mk.tile(a_buf.data(), b_buf.data() + p * kc * mk.nr,
                        C + i0 * N + j0, N, kc, m, n);
            }
        }
    }
}

}  // namespace

void gemm_nn(const double* A, const double* B, double* C,
             std::size_t M, std::size_t K, std::size_t N, bool accumulate) {
    gemm_driver(Layout::nn, A, B, C, M, K, N, accumulate);
}

void gemm_nt(const double* A, const double* B, double* C,
             std::size_t M, std::size_t K, std::size_t N, bool accumulate) {
    gemm_driver(Layout::nt, A, B, C, M, K, N, accumulate);
}

void gemm_tn(const double* A, const double* B, double* C,
             std::size_t M, std::size_t K, std::size_t N, bool accumulate) {
    gemm_driver(Layout::tn, A, B, C, M, K, N, accumulate);
}

namespace detail {

namespace {

// Reference tile: same blocking contract as the SIMD kernels but plain
// mul+add (the build disables fp contraction, so this never becomes an FMA).
void tile_scalar(const double* Ap, const double* Bp, double* C, std::size_t ldc,
                 std::size_t kc, std::size_t m, std::size_t n) {
    double acc[4][8];
    for (std::size_t ii = 0; ii < 4; ++ii)
        for (std::size_t jj = 0; jj < 8; ++jj)
            acc[ii][jj] = (ii < m && jj < n) ? C[ii * ldc + jj] : 0.0;
    for (std::size_t k = 0; k < kc; ++k) {
        const double* a = Ap + k * 4;
        const double* b = Bp + k * 8;
        for (std::size_t ii = 0; ii < 4; ++ii) {
            const double av = a[ii];
            for (std::size_t jj = 0; jj < 8; ++jj) acc[ii][jj] += av * b[jj];
        }
    }
    for (std::size_t ii = 0; ii < m; ++ii)
        for (std::size_t jj = 0; jj < n; ++jj) C[ii * ldc + jj] = acc[ii][jj];
}

}  // namespace

const MicroKernel scalar_kernel = {4, 8, tile_scalar};

}  // namespace detail

}  // namespace clvae::kernels
