#include <cmath>
#include <vector>

#include <doctest.h>

#include "clvae/divergence.hpp"
#include "clvae/rng.hpp"

using clvae::DivergenceKind;
using clvae::LatentDistribution;
using clvae::Rng;

namespace {

LatentDistribution dist(std::vector<double> mu, std::vector<double> lv) {
    return LatentDistribution{std::move(mu), std::move(lv)};
}

LatentDistribution random_dist(Rng& rng, std::size_t dims, double lv_spread) {
    LatentDistribution d;
    d.mean.resize(dims);
    d.log_variance.resize(dims);
    for (std::size_t i = 0; i < dims; ++i) {
        d.mean[i] = rng.normal();
        d.log_variance[i] = lv_spread * rng.normal();
    }
    return d;
}

}  // namespace

TEST_SUITE_BEGIN("divergence");

TEST_CASE("kind names round-trip and carry their default thresholds") {
    for (auto kind : {DivergenceKind::KLD, DivergenceKind::JSD, DivergenceKind::ED,
                      DivergenceKind::CosD}) {
        CHECK(clvae::divergence_kind_from_string(clvae::to_string(kind)) == kind);
    }
    CHECK(clvae::default_threshold(DivergenceKind::CosD) == -0.9);
    CHECK(clvae::default_threshold(DivergenceKind::KLD) == 0.0);
    CHECK(clvae::default_threshold(DivergenceKind::JSD) == 0.0);
    CHECK(clvae::default_threshold(DivergenceKind::ED) == 0.0);
    CHECK_THROWS_AS(clvae::divergence_kind_from_string("euclid"), std::invalid_argument);
}

TEST_CASE("kld matches closed-form values and is asymmetric") {
    auto a = dist({0.0}, {0.0});
    auto b = dist({1.0}, {2.0 * std::log(2.0)});  // sigma 2
    CHECK(clvae::kld(a, a) == doctest::Approx(0.0));
    CHECK(clvae::kld(a, b) == doctest::Approx(0.4431471805599453).epsilon(1e-12));
    CHECK(clvae::kld(b, a) == doctest::Approx(1.3068528194400546).epsilon(1e-12));
    CHECK(clvae::kld(a, b) != clvae::kld(b, a));

    SUBCASE("unit variance reduces to half the squared mean gap") {
        Rng rng(11);
        for (int i = 0; i < 50; ++i) {
            auto d1 = random_dist(rng, 16, 0.0);
            auto d2 = random_dist(rng, 16, 0.0);
            double gap = 0.0;
            for (std::size_t k = 0; k < 16; ++k) {
                const double dm = d1.mean[k] - d2.mean[k];
                gap += dm * dm;
            }
            CHECK(clvae::kld(d1, d2) == doctest::Approx(0.5 * gap).epsilon(1e-12));
        }
    }
}

TEST_CASE("jsd is symmetric, nonnegative, and matches hand values") {
    auto a = dist({0.0, 0.0}, {0.0, 0.0});
    auto b = dist({1.0, 0.0}, {0.0, 0.0});
    CHECK(clvae::jsd(a, a) == doctest::Approx(0.0));
    CHECK(clvae::jsd(a, b) == doctest::Approx(0.125).epsilon(1e-12));

    Rng rng(12);
    for (int i = 0; i < 100; ++i) {
        auto d1 = random_dist(rng, 8, 0.5);
        auto d2 = random_dist(rng, 8, 0.5);
        const double fwd = clvae::jsd(d1, d2);
        CHECK(fwd >= 0.0);
        CHECK(clvae::jsd(d2, d1) == fwd);
    }
}

TEST_CASE("general three-dimensional values match an independent evaluation") {
    auto d1 = dist({0.3, -0.7, 1.2}, {0.2, -0.4, 0.0});
    auto d2 = dist({-0.1, 0.5, 0.9}, {-0.3, 0.6, 0.1});
    CHECK(clvae::kld(d1, d2) == doctest::Approx(0.8045698313591626).epsilon(1e-12));
    CHECK(clvae::kld(d2, d1) == doctest::Approx(1.5996039456716167).epsilon(1e-12));
    CHECK(clvae::jsd(d1, d2) == doctest::Approx(0.2615671371602439).epsilon(1e-12));
    CHECK(clvae::ed(d1, d2) == doctest::Approx(1.3).epsilon(1e-12));
    CHECK(clvae::cosd(d1, d2) == doctest::Approx(-0.4761353940655982).epsilon(1e-12));
}

TEST_CASE("ed is a metric on the means") {
    auto a = dist({1.0, 2.0}, {0.3, -0.3});
    CHECK(clvae::ed(a, a) == 0.0);
    auto e1 = dist({1.0, 0.0}, {0.0, 0.0});
    auto zero = dist({0.0, 0.0}, {0.0, 0.0});
    CHECK(clvae::ed(e1, zero) == doctest::Approx(1.0));

    Rng rng(13);
    for (int i = 0; i < 200; ++i) {
        auto x = random_dist(rng, 6, 0.4);
        auto y = random_dist(rng, 6, 0.4);
        auto z = random_dist(rng, 6, 0.4);
        CHECK(clvae::ed(x, y) == clvae::ed(y, x));
        CHECK(clvae::ed(x, z) <= clvae::ed(x, y) + clvae::ed(y, z) + 1e-12);
    }
}

TEST_CASE("cosd hits its landmark values and stays within bounds") {
    auto u = dist({2.0, 0.0}, {0.0, 0.0});
    auto v = dist({0.0, 3.0}, {0.0, 0.0});
    auto w = dist({-5.0, 0.0}, {0.0, 0.0});
    CHECK(clvae::cosd(u, u) == doctest::Approx(-1.0));
    CHECK(clvae::cosd(u, v) == doctest::Approx(0.0));
    CHECK(clvae::cosd(u, w) == doctest::Approx(1.0));

    Rng rng(14);
    for (int i = 0; i < 300; ++i) {
        auto x = random_dist(rng, 10, 0.2);
        auto y = random_dist(rng, 10, 0.2);
        const double c = clvae::cosd(x, y);
        CHECK(c >= -1.0);
        CHECK(c <= 1.0);
    }

    SUBCASE("scale invariance in both arguments") {
        Rng r2(15);
        for (int i = 0; i < 100; ++i) {
            auto x = random_dist(r2, 7, 0.0);
            auto y = random_dist(r2, 7, 0.0);
            const double base = clvae::cosd(x, y);
            auto xs = x;
            auto ys = y;
            const double c1 = r2.uniform(0.1, 10.0);
            const double c2 = r2.uniform(0.1, 10.0);
            for (auto& m : xs.mean) m *= c1;
            for (auto& m : ys.mean) m *= c2;
            CHECK(clvae::cosd(xs, ys) == doctest::Approx(base).epsilon(1e-12));
        }
    }
    SUBCASE("zero-norm means are rejected") {
        auto zero = dist({0.0, 0.0}, {0.0, 0.0});
        CHECK_THROWS_AS(clvae::cosd(zero, u), std::invalid_argument);
        CHECK_THROWS_AS(clvae::cosd(u, zero), std::invalid_argument);
    }
}

TEST_CASE("unit-variance regime collapses kld, jsd, ed to one binary decision") {
    // With all log-variances exactly 0, kld equals ed squared over two, and
    // all three nonnegative measures agree on "is there any change" at
    // threshold 0.
    Rng rng(16);
    for (int i = 0; i < 100; ++i) {
        auto d1 = random_dist(rng, 12, 0.0);
        auto d2 = (i % 10 == 0) ? d1 : random_dist(rng, 12, 0.0);
        const double k = clvae::kld(d1, d2);
        const double e = clvae::ed(d1, d2);
        const double j = clvae::jsd(d1, d2);
        CHECK(std::abs(k - 0.5 * e * e) < 1e-9);
        const bool bk = k > 0.0;
        const bool bj = j > 0.0;
        const bool be = e > 0.0;
        CHECK(bk == be);
        CHECK(bj == be);
    }
}

TEST_CASE("dimension mismatches are rejected") {
    auto a = dist({1.0, 2.0}, {0.0, 0.0});
    auto b = dist({1.0}, {0.0});
    auto lopsided = dist({1.0, 2.0}, {0.0});
    for (auto kind : {DivergenceKind::KLD, DivergenceKind::JSD, DivergenceKind::ED,
                      DivergenceKind::CosD}) {
        CHECK_THROWS_AS(clvae::divergence(kind, a, b), std::invalid_argument);
        CHECK_THROWS_AS(clvae::divergence(kind, a, lopsided), std::invalid_argument);
    }
    CHECK(clvae::divergence(DivergenceKind::ED, a, a) == 0.0);
}

TEST_SUITE_END();
