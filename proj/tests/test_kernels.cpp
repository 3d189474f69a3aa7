#include <doctest.h>

#include <cstring>
#include <vector>

#include "clvae/kernels.hpp"
#include "clvae/rng.hpp"

using namespace clvae;
using kernels::Backend;

namespace {

// Plain triple-loop oracle, kept independent of the packed implementation.
void naive_nn(const double* A, const double* B, double* C,
              std::size_t M, std::size_t K, std::size_t N) {
    for (std::size_t i = 0; i < M; ++i)
        for (std::size_t j = 0; j < N; ++j) {
            double s = 0.0;
            for (std::size_t k = 0; k < K; ++k) s += A[i * K + k] * B[k * N + j];
            C[i * N + j] = s;
        }
}

std::vector<double> random_matrix(std::size_t n, Rng& rng) {
    std::vector<double> v(n);
    for (double& x : v) x = rng.uniform(-1.0, 1.0);
    return v;
}

std::vector<Backend> available_backends() {
    std::vector<Backend> out = {Backend::scalar};
    if (kernels::cpu_supports(Backend::avx2)) out.push_back(Backend::avx2);
    if (kernels::cpu_supports(Backend::avx512)) out.push_back(Backend::avx512);
    return out;
}

struct BackendGuard {
    ~BackendGuard() { kernels::set_backend(Backend::automatic); }
};

bool close(double a, double b, double tol) {
    double scale = std::max({1.0, std::abs(a), std::abs(b)});
    return std::abs(a - b) <= tol * scale;
}

}  // namespace

TEST_SUITE("kernels") {

TEST_CASE("every backend matches the naive oracle across edge shapes") {
    BackendGuard guard;
    Rng rng(42);
    // Shapes straddle the register tiles (4/8/16) and the 256-wide k blocking.
    const std::size_t shapes[][3] = {
        {1, 1, 1},   {1, 7, 1},    {3, 5, 2},   {4, 8, 8},    {5, 9, 17},
        {8, 16, 16}, {13, 300, 6}, {16, 257, 33}, {33, 31, 15}, {64, 171, 64},
    };
    for (const auto& s : shapes) {
        const std::size_t M = s[0], K = s[1], N = s[2];
        auto A = random_matrix(M * K, rng);
        auto B = random_matrix(K * N, rng);
        std::vector<double> want(M * N);
        naive_nn(A.data(), B.data(), want.data(), M, K, N);
        for (Backend b : available_backends()) {
            kernels::set_backend(b);
            std::vector<double> got(M * N, -7.0);
            kernels::gemm_nn(A.data(), B.data(), got.data(), M, K, N);
            for (std::size_t i = 0; i < want.size(); ++i) {
                if (!close(got[i], want[i], 1e-12)) {
                    CAPTURE(kernels::backend_name(b));
                    CAPTURE(M); CAPTURE(K); CAPTURE(N); CAPTURE(i);
                    REQUIRE(close(got[i], want[i], 1e-12));
                }
            }
        }
    }
}

TEST_CASE("gemm_nt and gemm_tn agree with explicit transposes") {
    BackendGuard guard;
    Rng rng(7);
    const std::size_t M = 11, K = 270, N = 19;
    auto A = random_matrix(M * K, rng);
    auto Bt = random_matrix(N * K, rng);   // stored [N x K]
    auto At = random_matrix(K * M, rng);   // stored [K x M]
    auto B = random_matrix(K * N, rng);

    // Oracle inputs laid out plainly.
    std::vector<double> B_plain(K * N), A_plain(M * K);
    for (std::size_t k = 0; k < K; ++k)
        for (std::size_t j = 0; j < N; ++j) B_plain[k * N + j] = Bt[j * K + k];
    for (std::size_t i = 0; i < M; ++i)
        for (std::size_t k = 0; k < K; ++k) A_plain[i * K + k] = At[k * M + i];

    std::vector<double> want_nt(M * N), want_tn(M * N);
    naive_nn(A.data(), B_plain.data(), want_nt.data(), M, K, N);
    naive_nn(A_plain.data(), B.data(), want_tn.data(), M, K, N);

    for (Backend b : available_backends()) {
        kernels::set_backend(b);
        std::vector<double> got_nt(M * N), got_tn(M * N);
        kernels::gemm_nt(A.data(), Bt.data(), got_nt.data(), M, K, N);
        kernels::gemm_tn(At.data(), B.data(), got_tn.data(), M, K, N);
        for (std::size_t i = 0; i < M * N; ++i) {
            REQUIRE(close(got_nt[i], want_nt[i], 1e-12));
            REQUIRE(close(got_tn[i], want_tn[i], 1e-12));
        }
    }
}

TEST_CASE("accumulate adds onto the existing output") {
    BackendGuard guard;
    Rng rng(3);
    const std::size_t M = 9, K = 40, N = 12;
    auto A = random_matrix(M * K, rng);
    auto B = random_matrix(K * N, rng);
    auto C0 = random_matrix(M * N, rng);
    for (Backend b : available_backends()) {
        kernels::set_backend(b);
        std::vector<double> prod(M * N);
        kernels::gemm_nn(A.data(), B.data(), prod.data(), M, K, N);
        std::vector<double> got = C0;
        kernels::gemm_nn(A.data(), B.data(), got.data(), M, K, N, /*accumulate=*/true);
        for (std::size_t i = 0; i < M * N; ++i)
            CHECK(got[i] == doctest::Approx(C0[i] + prod[i]).epsilon(1e-12));
    }
}

TEST_CASE("row subsets are bit-identical to the full product") {
    // This property is what makes inference independent of batch size: a row
    // of C depends only on the matching row of A, never on its neighbours.
    BackendGuard guard;
    Rng rng(11);
    const std::size_t M = 37, K = 333, N = 21;
    auto A = random_matrix(M * K, rng);
    auto B = random_matrix(K * N, rng);
    for (Backend b : available_backends()) {
        kernels::set_backend(b);
        std::vector<double> full(M * N);
        kernels::gemm_nn(A.data(), B.data(), full.data(), M, K, N);
        // Sweep a few subset splits, including single rows.
        for (std::size_t i0 : {std::size_t{0}, std::size_t{5}, std::size_t{17}, std::size_t{36}}) {
            for (std::size_t rows : {std::size_t{1}, std::size_t{3}, std::size_t{13}}) {
                if (i0 + rows > M) continue;
                std::vector<double> part(rows * N);
                kernels::gemm_nn(A.data() + i0 * K, B.data(), part.data(), rows, K, N);
                REQUIRE(std::memcmp(part.data(), full.data() + i0 * N,
                                    rows * N * sizeof(double)) == 0);
            }
        }
    }
}

TEST_CASE("backends agree with each other to near machine precision") {
    BackendGuard guard;
    auto backends = available_backends();
    if (backends.size() < 2) return;
    Rng rng(19);
    const std::size_t M = 24, K = 500, N = 24;
    auto A = random_matrix(M * K, rng);
    auto B = random_matrix(K * N, rng);
    kernels::set_backend(backends[0]);
    std::vector<double> ref(M * N);
    kernels::gemm_nn(A.data(), B.data(), ref.data(), M, K, N);
    for (std::size_t bi = 1; bi < backends.size(); ++bi) {
        kernels::set_backend(backends[bi]);
        std::vector<double> got(M * N);
        kernels::gemm_nn(A.data(), B.data(), got.data(), M, K, N);
        for (std::size_t i = 0; i < M * N; ++i) REQUIRE(close(got[i], ref[i], 1e-12));
    }
}

TEST_CASE("backend names parse and unsupported requests are rejected") {
    CHECK(kernels::parse_backend("scalar") == Backend::scalar);
    CHECK(kernels::parse_backend("avx2") == Backend::avx2);
    CHECK(kernels::parse_backend("avx512") == Backend::avx512);
    CHECK(kernels::parse_backend("auto") == Backend::automatic);
    CHECK_THROWS(kernels::parse_backend("neon"));
    CHECK(kernels::cpu_supports(Backend::scalar));
    // active_backend always resolves to something the CPU can run.
    Backend b = kernels::active_backend();
    CHECK(b != Backend::automatic);
    CHECK(kernels::cpu_supports(b));
}

}  // TEST_SUITE
